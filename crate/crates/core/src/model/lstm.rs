//! Single-layer LSTM and its bidirectional wrapper.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::sigmoid;
use super::{glorot, Matrix};
use crate::error::{Error, Result};

/// Gate blocks are laid out `[input, forget, cell, output]` along the columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    /// `z × 4H`
    pub input_weights: Matrix,
    /// `H × 4H`
    pub recurrent_weights: Matrix,
    /// `1 × 4H`
    pub bias: Matrix,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    xs: Matrix,
    /// activated gates, `l × 4H`
    gates: Matrix,
    cells: Matrix,
    hidden: Matrix,
}

impl Lstm {
    pub fn random<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        let mut bias = Array2::zeros((1, 4 * hidden));
        bias.slice_mut(s![0, hidden..2 * hidden]).fill(1.0);
        Lstm {
            input_weights: glorot(rng, input, 4 * hidden),
            recurrent_weights: glorot(rng, hidden, 4 * hidden),
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Lstm {
            input_weights: Array2::zeros((input, 4 * hidden)),
            recurrent_weights: Array2::zeros((hidden, 4 * hidden)),
            bias: Array2::zeros((1, 4 * hidden)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.recurrent_weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights.nrows()
    }

    pub(crate) fn forward(&self, xs: &Matrix) -> (Matrix, LstmCache) {
        let l = xs.nrows();
        let hd = self.hidden();
        let projected = xs.dot(&self.input_weights) + &self.bias;
        let mut gates = Array2::zeros((l, 4 * hd));
        let mut cells = Array2::zeros((l, hd));
        let mut hidden = Array2::zeros((l, hd));
        let mut h_prev = Array1::zeros(hd);
        let mut c_prev = Array1::zeros(hd);
        for t in 0..l {
            let pre = &projected.row(t) + &h_prev.dot(&self.recurrent_weights);
            let mut g = gates.row_mut(t);
            for j in 0..hd {
                g[j] = sigmoid(pre[j]);
                g[hd + j] = sigmoid(pre[hd + j]);
                g[2 * hd + j] = pre[2 * hd + j].tanh();
                g[3 * hd + j] = sigmoid(pre[3 * hd + j]);
            }
            for j in 0..hd {
                let c: f64 = g[hd + j] * c_prev[j] + g[j] * g[2 * hd + j];
                cells[[t, j]] = c;
                hidden[[t, j]] = g[3 * hd + j] * c.tanh();
            }
            h_prev = hidden.row(t).to_owned();
            c_prev = cells.row(t).to_owned();
        }
        let out = hidden.clone();
        (
            out,
            LstmCache {
                xs: xs.clone(),
                gates,
                cells,
                hidden,
            },
        )
    }

    /// Backpropagation through time. Accumulates into `grad`, returns `dL/dxs`.
    pub(crate) fn backward(&self, cache: &LstmCache, d_hidden: &Matrix, grad: &mut Lstm) -> Matrix {
        let l = cache.xs.nrows();
        let hd = self.hidden();
        let mut d_pre = Array2::zeros((l, 4 * hd));
        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);
        for t in (0..l).rev() {
            let g = cache.gates.row(t);
            let dh = &d_hidden.row(t) + &dh_next;
            let mut dc = Array1::zeros(hd);
            let mut dp = d_pre.row_mut(t);
            for j in 0..hd {
                let c = cache.cells[[t, j]];
                let tc = c.tanh();
                let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let c_prev = if t > 0 { cache.cells[[t - 1, j]] } else { 0.0 };
                let dcj = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
                dc[j] = dcj;
                dp[j] = dcj * gg * i * (1.0 - i);
                dp[hd + j] = dcj * c_prev * f * (1.0 - f);
                dp[2 * hd + j] = dcj * i * (1.0 - gg * gg);
                dp[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
            }
            dh_next = dp.dot(&self.recurrent_weights.t());
            dc_next = &dc * &g.slice(s![hd..2 * hd]);
        }
        grad.input_weights += &cache.xs.t().dot(&d_pre);
        grad.bias += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        if l > 1 {
            let h_prev = cache.hidden.slice(s![..l - 1, ..]);
            grad.recurrent_weights += &h_prev.t().dot(&d_pre.slice(s![1.., ..]));
        }
        d_pre.dot(&self.input_weights.t())
    }
}

fn reversed_rows(m: &Matrix) -> Matrix {
    m.slice(s![..;-1, ..]).to_owned()
}

/// Forward and backward LSTMs; output row `i` is `[h_fwd_i ⊕ h_bwd_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone)]
pub(crate) struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

impl BiLstm {
    pub fn random<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        BiLstm {
            forward: Lstm::random(rng, input, hidden),
            backward: Lstm::random(rng, input, hidden),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden()
    }

    fn check(&self, z: &Matrix) -> Result<()> {
        if z.nrows() == 0 {
            return Err(Error::Shape("empty input to recurrent layer".into()));
        }
        for lstm in [&self.forward, &self.backward] {
            if lstm.input_dim() != z.ncols() {
                return Err(Error::Shape(format!(
                    "LSTM expects width {}, got {}",
                    lstm.input_dim(),
                    z.ncols()
                )));
            }
        }
        Ok(())
    }

    /// `Z (l×z) -> R (l × 2H)`.
    pub fn recurrent_context(&self, z: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(z)?.0)
    }

    pub(crate) fn forward_cached(&self, z: &Matrix) -> Result<(Matrix, BiLstmCache)> {
        self.check(z)?;
        let hd = self.forward.hidden();
        let (hf, fwd) = self.forward.forward(z);
        let (hb_rev, bwd) = self.backward.forward(&reversed_rows(z));
        let mut out = Array2::zeros((z.nrows(), 2 * hd));
        out.slice_mut(s![.., ..hd]).assign(&hf);
        out.slice_mut(s![.., hd..])
            .assign(&hb_rev.slice(s![..;-1, ..]));
        Ok((out, BiLstmCache { fwd, bwd }))
    }

    pub(crate) fn backward_cached(
        &self,
        cache: &BiLstmCache,
        d_out: &Matrix,
        grad: &mut BiLstm,
    ) -> Matrix {
        let hd = self.forward.hidden();
        let d_f = d_out.slice(s![.., ..hd]).to_owned();
        let d_b_rev = reversed_rows(&d_out.slice(s![.., hd..]).to_owned());
        let dz_f = self.forward.backward(&cache.fwd, &d_f, &mut grad.forward);
        let dz_b_rev = self
            .backward
            .backward(&cache.bwd, &d_b_rev, &mut grad.backward);
        dz_f + reversed_rows(&dz_b_rev)
    }
}
