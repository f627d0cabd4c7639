//! Joint cause/effect event span extraction.
//!
//! - [`corpus`]: annotated sentences, BIO tags, file formats, statistics.
//! - [`knowledge`]: n-gram ranking, clustering and filter initialization plans.
//! - [`model`]: the tagger and its layers.
//! - [`harness`]: training, evaluation, ablation and synthetic data.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod knowledge;
pub mod model;

pub use error::{Error, Result};
