//! Parallel same-length 1-D convolutions over token representations, one
//! filter bank per window size, concatenated position-wise.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, Matrix, Nonlinearity};
use crate::error::{Error, Result};

/// Filter bank for one window size `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvWindow {
    pub window: usize,
    /// `F × (n·e)`: row `f` is filter `f` flattened offset-major, so element
    /// `j·e + k` weighs dimension `k` of the `j`-th token in the window.
    pub kernels: Matrix,
    /// `1 × F`
    pub bias: Matrix,
}

impl ConvWindow {
    pub fn random<R: Rng>(rng: &mut R, window: usize, embed_dim: usize, filters: usize) -> Self {
        ConvWindow {
            window,
            kernels: glorot(rng, filters, window * embed_dim),
            bias: Array2::zeros((1, filters)),
        }
    }

    pub fn filters(&self) -> usize {
        self.kernels.nrows()
    }

    /// Left and right zero padding giving one output per input position;
    /// even windows put the extra pad on the right.
    pub fn padding(&self) -> (usize, usize) {
        let left = (self.window - 1) / 2;
        (left, self.window - 1 - left)
    }

    /// `l × (n·e)` matrix whose row `i` is the flattened window starting at
    /// padded position `i`.
    fn unfold(&self, h: &Matrix) -> Matrix {
        let (l, e) = h.dim();
        let (left, _) = self.padding();
        let n = self.window;
        let mut cols = Array2::zeros((l, n * e));
        for i in 0..l {
            for j in 0..n {
                // padded index i + j corresponds to token i + j - left
                let src = (i + j).checked_sub(left).filter(|&t| t < l);
                if let Some(t) = src {
                    cols.slice_mut(s![i, j * e..(j + 1) * e]).assign(&h.row(t));
                }
            }
        }
        cols
    }

    fn fold_grad(&self, d_cols: &Matrix, l: usize, e: usize) -> Matrix {
        let (left, _) = self.padding();
        let mut d_h = Array2::zeros((l, e));
        for i in 0..l {
            for j in 0..self.window {
                if let Some(t) = (i + j).checked_sub(left).filter(|&t| t < l) {
                    let mut row = d_h.row_mut(t);
                    row += &d_cols.slice(s![i, j * e..(j + 1) * e]);
                }
            }
        }
        d_h
    }
}

/// Window banks plus the shared activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlockParams {
    pub windows: Vec<ConvWindow>,
    pub nonlinearity: Nonlinearity,
}

impl ConvBlockParams {
    pub fn random<R: Rng>(
        rng: &mut R,
        windows: &[usize],
        embed_dim: usize,
        filters: usize,
        nonlinearity: Nonlinearity,
    ) -> Self {
        ConvBlockParams {
            windows: windows
                .iter()
                .map(|&n| ConvWindow::random(rng, n, embed_dim, filters))
                .collect(),
            nonlinearity,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.windows.iter().map(ConvWindow::filters).sum()
    }

    fn check(&self, h: &Matrix) -> Result<()> {
        let e = h.ncols();
        if h.nrows() == 0 {
            return Err(Error::Shape("empty input to convolution".into()));
        }
        for w in &self.windows {
            if w.kernels.ncols() != w.window * e {
                return Err(Error::Shape(format!(
                    "window {} kernels have width {}, expected {}",
                    w.window,
                    w.kernels.ncols(),
                    w.window * e
                )));
            }
            if w.bias.dim() != (1, w.filters()) {
                return Err(Error::Shape(format!("window {} bias shape", w.window)));
            }
            if w.window == 0 {
                return Err(Error::Shape("window size 0".into()));
            }
        }
        Ok(())
    }
}

/// Intermediate values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<Matrix>,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    input_dim: (usize, usize),
}

/// `H (l×e) -> C (l × Σ F)`, row `i` = `[c_i^{n0} ⊕ c_i^{n1} ⊕ …]`.
pub fn multiscale_conv(params: &ConvBlockParams, h: &Matrix) -> Result<Matrix> {
    Ok(conv_forward(params, h)?.0)
}

pub(crate) fn conv_forward(params: &ConvBlockParams, h: &Matrix) -> Result<(Matrix, ConvCache)> {
    params.check(h)?;
    let l = h.nrows();
    let f = params.nonlinearity;
    let mut out = Array2::zeros((l, params.output_dim()));
    let mut cache = ConvCache {
        cols: Vec::new(),
        pre: Vec::new(),
        post: Vec::new(),
        input_dim: h.dim(),
    };
    let mut offset = 0;
    for w in &params.windows {
        let cols = w.unfold(h);
        let pre = cols.dot(&w.kernels.t()) + &w.bias;
        let post = pre.mapv(|x| f.apply(x));
        out.slice_mut(s![.., offset..offset + w.filters()])
            .assign(&post);
        offset += w.filters();
        cache.cols.push(cols);
        cache.pre.push(pre);
        cache.post.push(post);
    }
    Ok((out, cache))
}

/// Accumulates kernel/bias gradients into `grad` and returns `dL/dH`.
pub(crate) fn conv_backward(
    params: &ConvBlockParams,
    cache: &ConvCache,
    d_out: &Matrix,
    grad: &mut ConvBlockParams,
) -> Matrix {
    let (l, e) = cache.input_dim;
    let f = params.nonlinearity;
    let mut d_h = Array2::zeros((l, e));
    let mut offset = 0;
    for (k, w) in params.windows.iter().enumerate() {
        let width = w.filters();
        let mut d_pre = d_out.slice(s![.., offset..offset + width]).to_owned();
        ndarray::Zip::from(&mut d_pre)
            .and(&cache.pre[k])
            .and(&cache.post[k])
            .for_each(|d, &x, &y| *d *= f.derivative(x, y));
        let g = &mut grad.windows[k];
        g.kernels += &d_pre.t().dot(&cache.cols[k]);
        g.bias += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_cols = d_pre.dot(&w.kernels);
        d_h += &w.fold_grad(&d_cols, l, e);
        offset += width;
    }
    d_h
}
