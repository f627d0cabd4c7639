use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation applied to convolution responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Sigmoid => sigmoid(x),
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Sigmoid => y * (1.0 - y),
            Nonlinearity::Tanh => 1.0 - y * y,
            Nonlinearity::Identity => 1.0,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Architecture hyperparameters of the tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Encoder output width `e`.
    pub embed_dim: usize,
    /// Attention width `d`; the convolution output is projected to this width.
    pub model_dim: usize,
    pub windows: Vec<usize>,
    /// Filters per window size.
    pub filters: usize,
    /// Fraction of filters per window initialized from n-gram centroids.
    pub infusion: f64,
    /// Keep infused filters fixed during training.
    pub freeze_infused: bool,
    /// Rescale each infused kernel to the norm of the random kernel it
    /// replaces. The direction is the centroid's either way.
    pub rescale_infused: bool,
    pub heads: usize,
    pub use_attention: bool,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub nonlinearity: Nonlinearity,
    /// Amplitude of the sinusoidal position signal added by the encoder.
    pub position_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            model_dim: 64,
            windows: vec![2, 3, 4],
            filters: 100,
            infusion: 0.5,
            freeze_infused: false,
            rescale_infused: true,
            heads: 4,
            use_attention: true,
            hidden: 128,
            dropout: 0.5,
            max_len: 100,
            nonlinearity: Nonlinearity::Relu,
            position_scale: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width of the concatenated convolution output.
    pub fn conv_dim(&self) -> usize {
        self.filters * self.windows.len()
    }

    /// Width of the fused representation fed to the LSTM.
    pub fn fused_dim(&self) -> usize {
        if self.use_attention {
            2 * self.model_dim
        } else {
            self.model_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("model_dim", self.model_dim),
            ("filters", self.filters),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            problems.push("windows must be a non-empty list of positive sizes".into());
        }
        if self.heads > 0 && !self.model_dim.is_multiple_of(self.heads) {
            problems.push(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.infusion) {
            problems.push(format!("infusion {} outside [0, 1]", self.infusion));
        }
        if !self.position_scale.is_finite() {
            problems.push("position_scale must be finite".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}
