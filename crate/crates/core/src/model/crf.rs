//! Linear-chain CRF over `T` tags with explicit START and STOP states.
//!
//! A path `y_1..y_l` scores
//! `A[START, y_1] + Σ A[y_{i-1}, y_i] + A[y_l, STOP] + Σ P[i, y_i]`.
//! Transitions into START and out of STOP are masked to `-inf`.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub num_tags: usize,
    /// `(T + 2) × (T + 2)` scores indexed `[from, to]`; masked cells are ignored.
    pub transitions: Matrix,
}

impl CrfParams {
    pub fn zeros(num_tags: usize) -> Self {
        CrfParams {
            num_tags,
            transitions: Array2::zeros((num_tags + 2, num_tags + 2)),
        }
    }

    pub fn random<R: Rng>(num_tags: usize, rng: &mut R, limit: f64) -> Self {
        let mut p = Self::zeros(num_tags);
        p.transitions
            .mapv_inplace(|_| rng.random_range(-limit..limit));
        p.clear_masked();
        p
    }

    pub fn from_transitions(transitions: Matrix) -> Result<Self> {
        let (r, c) = transitions.dim();
        if r != c || r < 3 {
            return Err(Error::Shape(format!(
                "transition matrix must be square with at least 3 states, got {r}x{c}"
            )));
        }
        let mut p = CrfParams {
            num_tags: r - 2,
            transitions,
        };
        p.clear_masked();
        Ok(p)
    }

    pub fn start(&self) -> usize {
        self.num_tags
    }

    pub fn stop(&self) -> usize {
        self.num_tags + 1
    }

    pub fn is_masked(&self, from: usize, to: usize) -> bool {
        to == self.start() || from == self.stop()
    }

    /// Effective transition score, `-inf` for masked cells.
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        if self.is_masked(from, to) {
            f64::NEG_INFINITY
        } else {
            self.transitions[[from, to]]
        }
    }

    /// Zeroes the stored value of masked cells so they stay finite on disk.
    pub fn clear_masked(&mut self) {
        let n = self.num_tags + 2;
        for i in 0..n {
            for j in 0..n {
                if self.is_masked(i, j) {
                    self.transitions[[i, j]] = 0.0;
                }
            }
        }
    }

    fn check_emissions(&self, emissions: &Matrix) -> Result<()> {
        let (l, t) = emissions.dim();
        if l == 0 {
            return Err(Error::Shape("emission matrix has no rows".into()));
        }
        if t != self.num_tags {
            return Err(Error::Shape(format!(
                "emissions have {t} columns, CRF has {} tags",
                self.num_tags
            )));
        }
        check_finite(emissions, "CRF emissions")?;
        check_finite(&self.transitions, "CRF transitions")
    }

    fn check_path(&self, emissions: &Matrix, tags: &[usize]) -> Result<()> {
        if tags.len() != emissions.nrows() {
            return Err(Error::Shape(format!(
                "path length {} does not match {} emission rows",
                tags.len(),
                emissions.nrows()
            )));
        }
        if let Some(&bad) = tags.iter().find(|&&t| t >= self.num_tags) {
            return Err(Error::InvalidInput(format!(
                "tag index {bad} outside tag set of size {}",
                self.num_tags
            )));
        }
        Ok(())
    }
}

/// Gradient of the CRF loss with respect to emissions and transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGrad {
    pub emissions: Matrix,
    pub transitions: Matrix,
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Path score including START and STOP transitions.
pub fn crf_score(params: &CrfParams, emissions: &Matrix, tags: &[usize]) -> Result<f64> {
    params.check_emissions(emissions)?;
    params.check_path(emissions, tags)?;
    Ok(path_score(params, emissions, tags))
}

fn path_score(params: &CrfParams, emissions: &Matrix, tags: &[usize]) -> f64 {
    let mut score = params.transition(params.start(), tags[0]);
    for (i, &t) in tags.iter().enumerate() {
        score += emissions[[i, t]];
        if i > 0 {
            score += params.transition(tags[i - 1], t);
        }
    }
    score + params.transition(tags[tags.len() - 1], params.stop())
}

/// Forward log-scores `alpha[i, t]` for paths ending in `t` at position `i`.
fn forward(params: &CrfParams, emissions: &Matrix) -> Matrix {
    let (l, nt) = emissions.dim();
    let mut alpha = Array2::zeros((l, nt));
    for t in 0..nt {
        alpha[[0, t]] = params.transition(params.start(), t) + emissions[[0, t]];
    }
    for i in 1..l {
        for t in 0..nt {
            let lse = log_sum_exp((0..nt).map(|s| alpha[[i - 1, s]] + params.transition(s, t)));
            alpha[[i, t]] = lse + emissions[[i, t]];
        }
    }
    alpha
}

/// Backward log-scores `beta[i, t]` of the suffix after position `i` given tag `t`.
fn backward(params: &CrfParams, emissions: &Matrix) -> Matrix {
    let (l, nt) = emissions.dim();
    let mut beta = Array2::zeros((l, nt));
    for t in 0..nt {
        beta[[l - 1, t]] = params.transition(t, params.stop());
    }
    for i in (0..l - 1).rev() {
        for s in 0..nt {
            beta[[i, s]] = log_sum_exp(
                (0..nt).map(|t| params.transition(s, t) + emissions[[i + 1, t]] + beta[[i + 1, t]]),
            );
        }
    }
    beta
}

fn partition_from_alpha(params: &CrfParams, alpha: &Matrix) -> f64 {
    let l = alpha.nrows();
    log_sum_exp(
        (0..params.num_tags).map(|t| alpha[[l - 1, t]] + params.transition(t, params.stop())),
    )
}

/// `log Σ_y exp(score(y))` via the forward recursion.
pub fn crf_log_partition(params: &CrfParams, emissions: &Matrix) -> Result<f64> {
    params.check_emissions(emissions)?;
    let alpha = forward(params, emissions);
    Ok(partition_from_alpha(params, &alpha))
}

/// Negative log-likelihood of the gold path.
pub fn crf_nll(params: &CrfParams, emissions: &Matrix, gold: &[usize]) -> Result<f64> {
    let log_z = crf_log_partition(params, emissions)?;
    let gold_score = crf_score(params, emissions, gold)?;
    Ok(log_z - gold_score)
}

/// Negative log-likelihood and its gradient (marginals minus gold indicators).
pub fn crf_nll_with_grad(
    params: &CrfParams,
    emissions: &Matrix,
    gold: &[usize],
) -> Result<(f64, CrfGrad)> {
    params.check_emissions(emissions)?;
    params.check_path(emissions, gold)?;
    let (l, nt) = emissions.dim();
    let alpha = forward(params, emissions);
    let beta = backward(params, emissions);
    let log_z = partition_from_alpha(params, &alpha);
    let loss = log_z - path_score(params, emissions, gold);

    let mut d_emit = Array2::zeros((l, nt));
    let mut d_trans = Array2::zeros(params.transitions.dim());
    for i in 0..l {
        for t in 0..nt {
            d_emit[[i, t]] = (alpha[[i, t]] + beta[[i, t]] - log_z).exp();
        }
    }
    for t in 0..nt {
        d_trans[[params.start(), t]] += d_emit[[0, t]];
        d_trans[[t, params.stop()]] += d_emit[[l - 1, t]];
    }
    for i in 1..l {
        for s in 0..nt {
            for t in 0..nt {
                let log_xi =
                    alpha[[i - 1, s]] + params.transition(s, t) + emissions[[i, t]] + beta[[i, t]]
                        - log_z;
                d_trans[[s, t]] += log_xi.exp();
            }
        }
    }

    d_trans[[params.start(), gold[0]]] -= 1.0;
    d_trans[[gold[l - 1], params.stop()]] -= 1.0;
    for (i, &t) in gold.iter().enumerate() {
        d_emit[[i, t]] -= 1.0;
        if i > 0 {
            d_trans[[gold[i - 1], t]] -= 1.0;
        }
    }
    Ok((
        loss,
        CrfGrad {
            emissions: d_emit,
            transitions: d_trans,
        },
    ))
}

/// Highest-scoring path and its score. Among equally scoring paths the one
/// with the lowest tag index at the earliest differing position wins.
///
/// Best suffix scores are computed right to left, then the path is read off
/// left to right taking the first maximizing tag at each step.
pub fn viterbi_decode(params: &CrfParams, emissions: &Matrix) -> Result<(Vec<usize>, f64)> {
    params.check_emissions(emissions)?;
    let (l, nt) = emissions.dim();
    // best[i][t]: max score of positions i..l (emissions, transitions, STOP) given y_i = t
    let mut best = Array2::<f64>::zeros((l, nt));
    for t in 0..nt {
        best[[l - 1, t]] = emissions[[l - 1, t]] + params.transition(t, params.stop());
    }
    for i in (0..l - 1).rev() {
        for s in 0..nt {
            let tail = (0..nt)
                .map(|t| params.transition(s, t) + best[[i + 1, t]])
                .fold(f64::NEG_INFINITY, f64::max);
            best[[i, s]] = emissions[[i, s]] + tail;
        }
    }

    let first_argmax = |scores: &mut dyn Iterator<Item = f64>| -> usize {
        let mut arg = 0;
        let mut max = f64::NEG_INFINITY;
        for (t, v) in scores.enumerate() {
            if v > max {
                max = v;
                arg = t;
            }
        }
        arg
    };

    let mut path = Vec::with_capacity(l);
    let mut prev = params.start();
    for i in 0..l {
        let tag = first_argmax(&mut (0..nt).map(|t| params.transition(prev, t) + best[[i, t]]));
        path.push(tag);
        prev = tag;
    }
    let score = path_score(params, emissions, &path);
    Ok((path, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Enumerates all `T^l` paths in lexicographic order.
    fn all_paths(l: usize, nt: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..l {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..nt).map(move |t| {
                        let mut q = p.clone();
                        q.push(t);
                        q
                    })
                })
                .collect();
        }
        out
    }

    /// Scores a path by summing the formula term by term, independent of `path_score`.
    fn oracle_score(trans: &Matrix, emissions: &Matrix, path: &[usize]) -> f64 {
        let nt = emissions.ncols();
        let (start, stop) = (nt, nt + 1);
        let mut states = vec![start];
        states.extend_from_slice(path);
        states.push(stop);
        let transitions: f64 = states.windows(2).map(|w| trans[[w[0], w[1]]]).sum();
        let emits: f64 = path
            .iter()
            .enumerate()
            .map(|(i, &t)| emissions[[i, t]])
            .sum();
        transitions + emits
    }

    fn oracle_log_z(trans: &Matrix, emissions: &Matrix) -> f64 {
        let scores: Vec<f64> = all_paths(emissions.nrows(), emissions.ncols())
            .iter()
            .map(|p| oracle_score(trans, emissions, p))
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
    }

    fn random_instance(rng: &mut ChaCha8Rng, l: usize, nt: usize) -> (CrfParams, Matrix) {
        let params = CrfParams::random(nt, rng, 2.0);
        let emissions = Array2::from_shape_fn((l, nt), |_| rng.random_range(-3.0..3.0));
        (params, emissions)
    }

    #[test]
    fn single_term_score() {
        let params = CrfParams::zeros(5);
        let mut p = Array2::zeros((1, 5));
        p[[0, 2]] = 2.5;
        assert_eq!(crf_score(&params, &p, &[2]).unwrap(), 2.5);
    }

    #[test]
    fn zero_scores() {
        let params = CrfParams::zeros(5);
        let p = Array2::zeros((1, 5));
        assert!((crf_log_partition(&params, &p).unwrap() - 5f64.ln()).abs() < 1e-12);
        let p2 = Array2::zeros((2, 5));
        for path in all_paths(2, 5) {
            assert_eq!(crf_score(&params, &p2, &path).unwrap(), 0.0);
        }
        assert!((crf_nll(&params, &p2, &[0, 3]).unwrap() - 25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn integer_instance_matches_enumeration() {
        // l = 3, T = 2, start/stop at indices 2/3.
        let trans = array![
            [1.0, -2.0, 0.0, 3.0],
            [0.0, 2.0, 0.0, -1.0],
            [2.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ];
        let params = CrfParams::from_transitions(trans.clone()).unwrap();
        let p = array![[1.0, 0.0], [-1.0, 2.0], [3.0, 1.0]];
        // [1,1,0]: A[S,1]=1 + P0=0 + A[1,1]=2 + P1=2 + A[1,0]=0 + P2=3 + A[0,T]=3 => 11
        assert_eq!(crf_score(&params, &p, &[1, 1, 0]).unwrap(), 11.0);
        for path in all_paths(3, 2) {
            assert_eq!(
                crf_score(&params, &p, &path).unwrap(),
                oracle_score(&trans, &p, &path)
            );
        }
        let p2 = array![[1.0, -2.0], [0.0, 3.0]];
        let z = crf_log_partition(&params, &p2).unwrap();
        assert!((z - oracle_log_z(&trans, &p2)).abs() < 1e-9);
    }

    #[test]
    fn log_partition_dominates_every_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let l = rng.random_range(1..5);
            let (params, p) = random_instance(&mut rng, l, 3);
            let z = crf_log_partition(&params, &p).unwrap();
            for path in all_paths(l, 3) {
                assert!(z >= crf_score(&params, &p, &path).unwrap());
            }
        }
    }

    #[test]
    fn nll_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (params, p) = random_instance(&mut rng, 3, 3);
        let gold = [2, 0, 1];
        let expected =
            oracle_log_z(&params.transitions, &p) - oracle_score(&params.transitions, &p, &gold);
        let got = crf_nll(&params, &p, &gold).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!(got >= 0.0);
    }

    #[test]
    fn confident_gold_has_near_zero_loss() {
        let params = CrfParams::zeros(5);
        let gold = [1, 2, 0, 3];
        let p = Array2::from_shape_fn((4, 5), |(i, t)| if gold[i] == t { 10.0 } else { -10.0 });
        assert!(crf_nll(&params, &p, &gold).unwrap() < 0.01);
    }

    #[test]
    fn zero_transitions_decode_per_position_argmax() {
        let params = CrfParams::zeros(3);
        let p = array![[0.0, 2.0, 1.0], [3.0, 0.0, 0.0], [0.0, 0.0, 0.5]];
        assert_eq!(viterbi_decode(&params, &p).unwrap().0, vec![1, 0, 2]);
    }

    #[test]
    fn single_position_includes_start_and_stop() {
        let mut params = CrfParams::zeros(2);
        params.transitions[[2, 0]] = 1.0; // START -> 0
        params.transitions[[1, 3]] = 2.5; // 1 -> STOP
        let p = array![[1.0, 0.0]];
        let (path, score) = viterbi_decode(&params, &p).unwrap();
        assert_eq!(path, vec![1]);
        assert_eq!(score, 2.5);
    }

    #[test]
    fn viterbi_matches_brute_force_on_integer_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let nt = 3;
            let trans =
                Array2::from_shape_fn((nt + 2, nt + 2), |_| rng.random_range(-2..=2) as f64);
            let params = CrfParams::from_transitions(trans).unwrap();
            let p = Array2::from_shape_fn((4, nt), |_| rng.random_range(-3..=3) as f64);
            let paths = all_paths(4, nt);
            let (mut best, mut best_score) = (None, f64::NEG_INFINITY);
            for path in &paths {
                let s = oracle_score(&params.transitions, &p, path);
                if s > best_score {
                    best_score = s;
                    best = Some(path.clone());
                }
            }
            let (path, score) = viterbi_decode(&params, &p).unwrap();
            assert_eq!(Some(path), best);
            assert_eq!(score, best_score);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = CrfParams::zeros(2);
        let p = array![[1.0, 0.0]];
        assert!(crf_score(&params, &p, &[2]).is_err());
        assert!(crf_score(&params, &p, &[0, 1]).is_err());
        assert!(crf_log_partition(&params, &array![[f64::NAN, 0.0]]).is_err());
        assert!(crf_log_partition(&params, &array![[1.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (params, p) = random_instance(&mut rng, 4, 3);
        let gold = [0, 2, 2, 1];
        let (_, grad) = crf_nll_with_grad(&params, &p, &gold).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            for t in 0..3 {
                let mut plus = p.clone();
                plus[[i, t]] += h;
                let mut minus = p.clone();
                minus[[i, t]] -= h;
                let fd = (crf_nll(&params, &plus, &gold).unwrap()
                    - crf_nll(&params, &minus, &gold).unwrap())
                    / (2.0 * h);
                assert!((fd - grad.emissions[[i, t]]).abs() < 1e-6);
            }
        }
        for a in 0..5 {
            for b in 0..5 {
                if params.is_masked(a, b) {
                    assert_eq!(grad.transitions[[a, b]], 0.0);
                    continue;
                }
                let mut plus = params.clone();
                plus.transitions[[a, b]] += h;
                let mut minus = params.clone();
                minus.transitions[[a, b]] -= h;
                let fd = (crf_nll(&plus, &p, &gold).unwrap() - crf_nll(&minus, &p, &gold).unwrap())
                    / (2.0 * h);
                assert!((fd - grad.transitions[[a, b]]).abs() < 1e-6, "({a},{b})");
            }
        }
    }
}
