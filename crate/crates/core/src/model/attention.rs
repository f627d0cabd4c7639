//! Multi-head scaled dot-product self-attention.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, glorot, Matrix};
use crate::error::{Error, Result};

/// Projections for `h` heads over width `d`. Head `i` owns columns
/// `i·d/h .. (i+1)·d/h` of the query, key and value matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub heads: usize,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// `d × d` projection applied to the concatenated heads.
    pub output: Matrix,
}

impl AttentionParams {
    pub fn random<R: Rng>(rng: &mut R, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidInput(format!(
                "model width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(AttentionParams {
            heads,
            query: glorot(rng, dim, dim),
            key: glorot(rng, dim, dim),
            value: glorot(rng, dim, dim),
            output: glorot(rng, dim, dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.query.ncols()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        let d = self.dim();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Shape(format!(
                "width {d} not divisible by {} heads",
                self.heads
            )));
        }
        for (name, m) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
        ] {
            if m.nrows() != x.ncols() || m.ncols() != d {
                return Err(Error::Shape(format!(
                    "{name} projection is {:?}, input width {}",
                    m.dim(),
                    x.ncols()
                )));
            }
        }
        if self.output.dim() != (d, d) {
            return Err(Error::Shape(format!(
                "output projection is {:?}",
                self.output.dim()
            )));
        }
        check_finite(x, "attention input")
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Softmax weights per head, each `l × l`.
    pub weights: Vec<Matrix>,
    concat: Matrix,
}

fn softmax_rows(m: &mut Matrix) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// `X (l×d) -> (l×d)`: per head `softmax(Q Kᵀ / √(d/h)) V`, heads
/// concatenated and multiplied by the output projection.
pub fn multihead_attention(params: &AttentionParams, x: &Matrix) -> Result<Matrix> {
    Ok(attention_forward(params, x)?.0)
}

pub(crate) fn attention_forward(
    params: &AttentionParams,
    x: &Matrix,
) -> Result<(Matrix, AttentionCache)> {
    params.check(x)?;
    let l = x.nrows();
    let dk = params.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let q = x.dot(&params.query);
    let k = x.dot(&params.key);
    let v = x.dot(&params.value);
    let mut concat = Array2::zeros((l, params.dim()));
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut w = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut w);
        concat.slice_mut(cols).assign(&w.dot(&v.slice(cols)));
        weights.push(w);
    }
    let out = concat.dot(&params.output);
    Ok((
        out,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            weights,
            concat,
        },
    ))
}

/// Accumulates projection gradients into `grad` and returns `dL/dX`.
pub(crate) fn attention_backward(
    params: &AttentionParams,
    cache: &AttentionCache,
    d_out: &Matrix,
    grad: &mut AttentionParams,
) -> Matrix {
    let dk = params.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    grad.output += &cache.concat.t().dot(d_out);
    let d_concat = d_out.dot(&params.output.t());

    let mut d_q = Array2::zeros(cache.q.dim());
    let mut d_k = Array2::zeros(cache.k.dim());
    let mut d_v = Array2::zeros(cache.v.dim());
    for h in 0..params.heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let w = &cache.weights[h];
        let d_head = d_concat.slice(cols);
        d_v.slice_mut(cols).assign(&w.t().dot(&d_head));
        let d_w = d_head.dot(&cache.v.slice(cols).t());
        let row_dot = (&d_w * w).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_scores = w * &(d_w - &row_dot) * scale;
        d_q.slice_mut(cols)
            .assign(&d_scores.dot(&cache.k.slice(cols)));
        d_k.slice_mut(cols)
            .assign(&d_scores.t().dot(&cache.q.slice(cols)));
    }
    let xt = cache.x.t();
    grad.query += &xt.dot(&d_q);
    grad.key += &xt.dot(&d_k);
    grad.value += &xt.dot(&d_v);
    d_q.dot(&params.query.t()) + d_k.dot(&params.key.t()) + d_v.dot(&params.value.t())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_x(rng: &mut ChaCha8Rng, l: usize, d: usize) -> Matrix {
        Array2::from_shape_fn((l, d), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let l = rng.random_range(1..12);
            let p = AttentionParams::random(&mut rng, 8, 4).unwrap();
            let x = random_x(&mut rng, l, 8) * 5.0;
            let (_, cache) = attention_forward(&p, &x).unwrap();
            for w in &cache.weights {
                for row in w.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_position_returns_projected_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AttentionParams::random(&mut rng, 4, 2).unwrap();
        let x = random_x(&mut rng, 1, 4);
        let out = multihead_attention(&p, &x).unwrap();
        let expected = x.dot(&p.value).dot(&p.output);
        assert!((out - expected).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_queries_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = AttentionParams::random(&mut rng, 6, 3).unwrap();
        p.query.fill(0.0);
        p.output = Array2::eye(6);
        let x = random_x(&mut rng, 5, 6);
        let out = multihead_attention(&p, &x).unwrap();
        let mean = x.dot(&p.value).mean_axis(Axis(0)).unwrap();
        for row in out.rows() {
            for (a, b) in row.iter().zip(mean.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        // l = 2, d = 2, h = 1
        let p = AttentionParams {
            heads: 1,
            query: array![[1.0, 0.0], [0.0, 1.0]],
            key: array![[1.0, 1.0], [0.0, 1.0]],
            value: array![[2.0, 0.0], [1.0, -1.0]],
            output: array![[1.0, 0.0], [1.0, 1.0]],
        };
        let x = array![[1.0, 0.0], [0.0, 2.0]];

        // Q = X Wq, K = X Wk, V = X Wv computed by hand.
        let q = [[1.0, 0.0], [0.0, 2.0]];
        let k = [[1.0, 1.0], [0.0, 2.0]];
        let v = [[2.0, 0.0], [2.0, -2.0]];
        let scale = 1.0 / 2f64.sqrt();
        let mut expected = [[0.0; 2]; 2];
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) * scale)
                .collect();
            let z = s[0].exp() + s[1].exp();
            let w = [s[0].exp() / z, s[1].exp() / z];
            let head = [
                w[0] * v[0][0] + w[1] * v[1][0],
                w[0] * v[0][1] + w[1] * v[1][1],
            ];
            // output projection [[1,0],[1,1]]
            expected[i] = [head[0] + head[1], head[1]];
        }
        let out = multihead_attention(&p, &x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((out[[i, j]] - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_nonfinite_and_bad_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(AttentionParams::random(&mut rng, 6, 4).is_err());
        let p = AttentionParams::random(&mut rng, 4, 2).unwrap();
        assert!(multihead_attention(&p, &array![[f64::NAN, 0.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = AttentionParams::random(&mut rng, 4, 2).unwrap();
        let x = random_x(&mut rng, 3, 4);
        let target = random_x(&mut rng, 3, 4);
        let loss =
            |p: &AttentionParams, x: &Matrix| (multihead_attention(p, x).unwrap() * &target).sum();
        let (_, cache) = attention_forward(&p, &x).unwrap();
        let mut grad = p.clone();
        for m in [
            &mut grad.query,
            &mut grad.key,
            &mut grad.value,
            &mut grad.output,
        ] {
            m.fill(0.0);
        }
        let d_x = attention_backward(&p, &cache, &target, &mut grad);
        let eps = 1e-6;
        for idx in [(0, 0), (1, 3), (2, 1)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * eps);
            assert!((fd - d_x[idx]).abs() < 1e-6, "dx{idx:?}");
        }
        type Pick = fn(&mut AttentionParams) -> &mut Matrix;
        let picks: [(Pick, &Matrix); 4] = [
            (|p| &mut p.query, &grad.query),
            (|p| &mut p.key, &grad.key),
            (|p| &mut p.value, &grad.value),
            (|p| &mut p.output, &grad.output),
        ];
        for (pick, g) in picks {
            for idx in [(0, 1), (3, 2)] {
                let mut pp = p.clone();
                pick(&mut pp)[idx] += eps;
                let mut pm = p.clone();
                pick(&mut pm)[idx] -= eps;
                let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * eps);
                assert!((fd - g[idx]).abs() < 1e-6);
            }
        }
    }
}
