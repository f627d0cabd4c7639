use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tagger;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: configuration, encoder vocabulary, every parameter
/// matrix, the filter-plan hash and the seed. Floats are written with
/// round-trip precision so a reload reproduces inference bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub plan_hash: Option<String>,
    /// Epoch the weights were taken from, when produced by training.
    pub epoch: Option<usize>,
    pub tagger: Tagger,
}

impl Checkpoint {
    pub fn new(tagger: Tagger, epoch: Option<usize>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            seed: tagger.config.seed,
            plan_hash: tagger.plan_hash.clone(),
            epoch,
            tagger,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("unreadable: {e}")))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "version {v} not supported (expected {CHECKPOINT_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing version field".into())),
        }
        let ckpt: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.check()?;
        Ok(ckpt)
    }

    /// Structural consistency between the configuration and the stored tensors.
    pub fn check(&self) -> Result<()> {
        let t = &self.tagger;
        let c = &t.config;
        c.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let p = &t.params;
        let mut problems = Vec::new();
        if t.encoder.dim != c.embed_dim {
            problems.push(format!(
                "encoder width {} vs embed_dim {}",
                t.encoder.dim, c.embed_dim
            ));
        }
        if p.embedding.dim() != (t.encoder.vocab.len(), c.embed_dim) {
            problems.push(format!("embedding table {:?}", p.embedding.dim()));
        }
        let windows: Vec<usize> = p.conv.windows.iter().map(|w| w.window).collect();
        if windows != c.windows {
            problems.push(format!("conv windows {windows:?} vs {:?}", c.windows));
        }
        for w in &p.conv.windows {
            if w.kernels.dim() != (c.filters, w.window * c.embed_dim) {
                problems.push(format!("conv.{} kernels {:?}", w.window, w.kernels.dim()));
            }
        }
        if p.projection.weight.dim() != (c.conv_dim(), c.model_dim) {
            problems.push(format!("projection {:?}", p.projection.weight.dim()));
        }
        if p.attention.is_some() != c.use_attention {
            problems.push("attention parameters do not match use_attention".into());
        }
        if p.recurrent.forward.input_dim() != c.fused_dim()
            || p.recurrent.forward.hidden() != c.hidden
        {
            problems.push("recurrent layer shape".into());
        }
        if p.emission.weight.dim() != (2 * c.hidden, crate::corpus::Tag::COUNT) {
            problems.push(format!("emission {:?}", p.emission.weight.dim()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(problems.join("; ")))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
