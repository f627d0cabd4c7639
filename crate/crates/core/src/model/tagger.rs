use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{attention_backward, attention_forward, AttentionCache};
use super::conv::{conv_backward, conv_forward, ConvCache};
use super::crf::{crf_nll_with_grad, viterbi_decode, CrfParams};
use super::encoder::EncodeCache;
use super::lstm::BiLstmCache;
use super::{
    AttentionParams, BiLstm, ConvBlockParams, EncoderView, Linear, Matrix, ModelConfig,
    TaggerParams, TokenEncoder,
};
use crate::corpus::{decode_bio, Repair, Span, Tag, TagSequence};
use crate::error::{Error, Result};

/// Dropout is active only in training mode, with masks drawn from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Training { dropout_seed: u64 },
}

/// Row-wise concatenation `[C ⊕ A]`.
pub fn fuse(c: &Matrix, a: &Matrix) -> Result<Matrix> {
    if c.nrows() != a.nrows() {
        return Err(Error::Shape(format!(
            "cannot fuse {} rows with {} rows",
            c.nrows(),
            a.nrows()
        )));
    }
    let mut z = Array2::zeros((c.nrows(), c.ncols() + a.ncols()));
    z.slice_mut(s![.., ..c.ncols()]).assign(c);
    z.slice_mut(s![.., c.ncols()..]).assign(a);
    Ok(z)
}

/// Decoded output for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub cause_spans: Vec<Span>,
    pub effect_spans: Vec<Span>,
    pub tags: TagSequence,
    pub score: f64,
}

/// Intermediate matrices of one forward pass, in pipeline order.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoded: Matrix,
    pub conv: Matrix,
    pub projected: Matrix,
    pub attention: Option<Matrix>,
    pub fused: Matrix,
    pub recurrent: Matrix,
    pub emissions: Matrix,
}

struct Cache {
    encode: EncodeCache,
    conv: ConvCache,
    conv_out: Matrix,
    attention: Option<AttentionCache>,
    fused_mask: Option<Matrix>,
    recurrent: BiLstmCache,
    recurrent_mask: Option<Matrix>,
    recurrent_out: Matrix,
}

/// The complete sequence tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tagger {
    pub config: ModelConfig,
    pub encoder: TokenEncoder,
    pub params: TaggerParams,
    /// `(window position, filter index)` pairs excluded from updates.
    #[serde(default)]
    pub frozen_filters: Vec<(usize, usize)>,
    /// Hash of the filter-initialization plan this model was built from.
    #[serde(default)]
    pub plan_hash: Option<String>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Matrix {
    let keep = 1.0 - rate;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

impl Tagger {
    /// Randomly initialized tagger around an encoder and its embedding table.
    pub fn random(config: ModelConfig, encoder: TokenEncoder, embedding: Matrix) -> Result<Self> {
        config.validate()?;
        if encoder.dim != config.embed_dim {
            return Err(Error::InvalidInput(format!(
                "encoder width {} differs from configured embed_dim {}",
                encoder.dim, config.embed_dim
            )));
        }
        if embedding.dim() != (encoder.vocab.len(), encoder.dim) {
            return Err(Error::Shape(format!(
                "embedding table {:?} does not match vocabulary of {}",
                embedding.dim(),
                encoder.vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let conv = ConvBlockParams::random(
            &mut rng,
            &config.windows,
            config.embed_dim,
            config.filters,
            config.nonlinearity,
        );
        let projection = Linear::new(&mut rng, config.conv_dim(), config.model_dim);
        let attention = if config.use_attention {
            Some(AttentionParams::random(
                &mut rng,
                config.model_dim,
                config.heads,
            )?)
        } else {
            None
        };
        let recurrent = BiLstm::random(&mut rng, config.fused_dim(), config.hidden);
        let emission = Linear::new(&mut rng, 2 * config.hidden, Tag::COUNT);
        let crf = CrfParams::random(Tag::COUNT, &mut rng, 0.1);
        Ok(Tagger {
            config,
            encoder,
            params: TaggerParams {
                embedding,
                conv,
                projection,
                attention,
                recurrent,
                emission,
                crf,
            },
            frozen_filters: Vec::new(),
            plan_hash: None,
        })
    }

    pub fn encoder_view(&self) -> EncoderView<'_> {
        self.encoder.view(&self.params.embedding)
    }

    fn forward(&self, tokens: &[String], mode: Mode) -> Result<(Matrix, Cache)> {
        let p = &self.params;
        let (h, encode) = self
            .encoder
            .forward(&p.embedding, tokens)
            .map_err(|e| e.in_stage("encode"))?;
        let (c, conv) = conv_forward(&p.conv, &h).map_err(|e| e.in_stage("convolution"))?;
        let x = p.projection.forward(&c);
        let (mut z, attention) = match &p.attention {
            Some(att) => {
                let (a, cache) = attention_forward(att, &x).map_err(|e| e.in_stage("attention"))?;
                (fuse(&x, &a)?, Some(cache))
            }
            None => (x, None),
        };

        let mut rng = match mode {
            Mode::Training { dropout_seed } if self.config.dropout > 0.0 => {
                Some(ChaCha8Rng::seed_from_u64(dropout_seed))
            }
            _ => None,
        };
        let fused_mask = rng
            .as_mut()
            .map(|r| dropout_mask(r, z.nrows(), z.ncols(), self.config.dropout));
        if let Some(m) = &fused_mask {
            z *= m;
        }
        let (mut r, recurrent) = p
            .recurrent
            .forward_cached(&z)
            .map_err(|e| e.in_stage("recurrent"))?;
        let recurrent_mask = rng
            .as_mut()
            .map(|g| dropout_mask(g, r.nrows(), r.ncols(), self.config.dropout));
        if let Some(m) = &recurrent_mask {
            r *= m;
        }
        let emissions = p.emission.forward(&r);
        Ok((
            emissions,
            Cache {
                encode,
                conv,
                conv_out: c,
                attention,
                fused_mask,
                recurrent,
                recurrent_mask,
                recurrent_out: r,
            },
        ))
    }

    /// Per-token tag scores `l × |T|`.
    pub fn emissions(&self, tokens: &[String]) -> Result<Matrix> {
        Ok(self.forward(tokens, Mode::Inference)?.0)
    }

    /// Inference-mode intermediate matrices, for shape and wiring checks.
    pub fn trace(&self, tokens: &[String]) -> Result<ForwardTrace> {
        let p = &self.params;
        let encoded = self.encoder_view_forward(tokens)?;
        let conv = super::multiscale_conv(&p.conv, &encoded)?;
        let projected = p.projection.forward(&conv);
        let attention = match &p.attention {
            Some(att) => Some(super::multihead_attention(att, &projected)?),
            None => None,
        };
        let fused = match &attention {
            Some(a) => fuse(&projected, a)?,
            None => projected.clone(),
        };
        let recurrent = p.recurrent.recurrent_context(&fused)?;
        let emissions = p.emission.forward(&recurrent);
        Ok(ForwardTrace {
            encoded,
            conv,
            projected,
            attention,
            fused,
            recurrent,
            emissions,
        })
    }

    fn encoder_view_forward(&self, tokens: &[String]) -> Result<Matrix> {
        use super::Encoder;
        self.encoder_view().encode(tokens)
    }

    /// Encode, convolve, attend, fuse, recur, project, Viterbi-decode and
    /// read spans off the tags (orphaned `I-*` tags are coerced to `B-*`).
    pub fn extract(&self, tokens: &[String]) -> Result<Extraction> {
        let emissions = self.emissions(tokens)?;
        let (path, score) =
            viterbi_decode(&self.params.crf, &emissions).map_err(|e| e.in_stage("decode"))?;
        let tags: Vec<Tag> = path
            .into_iter()
            .map(|i| Tag::from_index(i).expect("CRF has five tags"))
            .collect();
        let (cause_spans, effect_spans) = decode_bio(&tags, Repair::Coerce)?;
        Ok(Extraction {
            cause_spans,
            effect_spans,
            tags: TagSequence(tags),
            score,
        })
    }

    /// CRF negative log-likelihood of `gold` (tag indices).
    pub fn loss(&self, tokens: &[String], gold: &[usize], mode: Mode) -> Result<f64> {
        let (emissions, _) = self.forward(tokens, mode)?;
        super::crf_nll(&self.params.crf, &emissions, gold)
    }

    /// Loss and gradient for one sentence.
    pub fn loss_and_grad(
        &self,
        tokens: &[String],
        gold: &[usize],
        mode: Mode,
    ) -> Result<(f64, TaggerParams)> {
        let mut grad = self.params.zeros_like();
        let loss = self.accumulate_grad(tokens, gold, mode, &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds this sentence's gradient into `grad` and returns its loss.
    pub fn accumulate_grad(
        &self,
        tokens: &[String],
        gold: &[usize],
        mode: Mode,
        grad: &mut TaggerParams,
    ) -> Result<f64> {
        let p = &self.params;
        let (emissions, cache) = self.forward(tokens, mode)?;
        let (loss, crf_grad) =
            crf_nll_with_grad(&p.crf, &emissions, gold).map_err(|e| e.in_stage("crf"))?;
        grad.crf.transitions += &crf_grad.transitions;

        let mut d_r = p.emission.backward(
            &cache.recurrent_out,
            &crf_grad.emissions,
            &mut grad.emission,
        );
        if let Some(m) = &cache.recurrent_mask {
            d_r *= m;
        }
        let mut d_z = p
            .recurrent
            .backward_cached(&cache.recurrent, &d_r, &mut grad.recurrent);
        if let Some(m) = &cache.fused_mask {
            d_z *= m;
        }
        let d = self.config.model_dim;
        let mut d_x = d_z.slice(s![.., ..d]).to_owned();
        if let (Some(att), Some(att_cache)) = (&p.attention, &cache.attention) {
            let d_a = d_z.slice(s![.., d..]).to_owned();
            let g = grad
                .attention
                .as_mut()
                .expect("gradient mirrors parameters");
            d_x += &attention_backward(att, att_cache, &d_a, g);
        }
        let d_c = p
            .projection
            .backward(&cache.conv_out, &d_x, &mut grad.projection);
        let d_h = conv_backward(&p.conv, &cache.conv, &d_c, &mut grad.conv);
        if self.encoder.trainable {
            self.encoder
                .backward(&cache.encode, &d_h, &mut grad.embedding);
        }
        Ok(loss)
    }

    /// Zeroes gradient entries of parameters that must not move.
    pub fn mask_frozen(&self, grad: &mut TaggerParams) {
        for &(w, f) in &self.frozen_filters {
            grad.conv.windows[w].kernels.row_mut(f).fill(0.0);
        }
        if !self.encoder.trainable {
            grad.embedding.fill(0.0);
        }
        grad.crf.clear_masked();
    }
}
