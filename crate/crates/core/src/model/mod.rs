//! The neural tagger: token encoder, multi-window convolution, multi-head
//! attention, bidirectional LSTM and a linear-chain CRF.
//!
//! Every layer is written as an explicit forward pass returning a cache and a
//! backward pass consuming it, all in `f64`, so gradients can be checked
//! against finite differences end to end.

mod attention;
mod checkpoint;
mod config;
mod conv;
pub mod crf;
mod encoder;
mod linear;
mod lstm;
mod params;
mod tagger;

use ndarray::Array2;
use rand::Rng;

pub use attention::{multihead_attention, AttentionCache, AttentionParams};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Nonlinearity};
pub use conv::{multiscale_conv, ConvBlockParams, ConvCache, ConvWindow};
pub use crf::{
    crf_log_partition, crf_nll, crf_nll_with_grad, crf_score, viterbi_decode, CrfGrad, CrfParams,
};
pub use encoder::{
    Encoder, EncoderKind, EncoderView, PretrainedEmbeddings, TokenEncoder, Vocab, CLS, SEP, UNK,
};
pub use linear::Linear;
pub use lstm::{BiLstm, Lstm};
pub use params::TaggerParams;
pub use tagger::{fuse, Extraction, Mode, Tagger};

pub type Matrix = Array2<f64>;

/// Uniform Glorot initialization for a `rows × cols` weight matrix.
pub(crate) fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

pub(crate) fn check_finite(m: &Matrix, what: &str) -> crate::Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::NonFinite(what.to_string()))
    }
}
