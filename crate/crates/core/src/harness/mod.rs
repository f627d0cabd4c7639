//! Training, evaluation, ablation runs and the synthetic corpus generator.

mod ablation;
mod metrics;
mod optim;
mod synthetic;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AnnotatedSentence, Span, Splits};
use crate::error::{Error, Result};
use crate::knowledge::{mine, FilterInitPlan, MiningConfig, MiningOutput};
use crate::model::{EncoderKind, ModelConfig, PretrainedEmbeddings, Tagger, TokenEncoder, Vocab};

pub use ablation::{ablate, AblationRow, AblationTable, Variant, VariantSummary};
pub use metrics::{evaluate, predict, score_predictions, EvalReport, Prediction, SpanScores};
pub use optim::Adam;
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};
pub use train::{
    convergence_row, train, train_with_observer, write_convergence, EpochRecord, TrainOutcome,
    CONVERGENCE_HEADER,
};

/// Stage seed derived from the top-level seed and a stage label.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Optimization settings and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Adam step size. When unset: 1e-5 for the pretrained adapter and 1e-3
    /// for the trainable embedder.
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub use_pretrained_encoder: bool,
    pub use_infusion: bool,
    pub use_attention: bool,
    /// Fine-tune the pretrained table along with the rest of the model.
    pub fine_tune_encoder: bool,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: Option<f64>,
    /// Record wall-clock seconds per epoch (makes the convergence log
    /// run-dependent).
    pub log_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: None,
            batch_size: 8,
            epochs: 100,
            seed: 0,
            use_pretrained_encoder: true,
            use_infusion: true,
            use_attention: true,
            fine_tune_encoder: true,
            clip_norm: Some(5.0),
            log_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn effective_learning_rate(&self, kind: EncoderKind) -> f64 {
        self.learning_rate.unwrap_or(match kind {
            EncoderKind::PretrainedAdapter => 1e-5,
            EncoderKind::TrainableEmbedder => 1e-3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                problems.push(format!("learning_rate must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                problems.push(format!("clip_norm must be positive, got {c}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

/// Tokens cut to `max_len`, with a warning when anything is dropped.
pub fn truncate_tokens<'a>(tokens: &'a [String], max_len: usize, id: &str) -> &'a [String] {
    if tokens.len() > max_len {
        log::warn!(
            "sentence {id}: {} tokens truncated to {max_len}",
            tokens.len()
        );
        &tokens[..max_len]
    } else {
        tokens
    }
}

/// Sentence cut to `max_len` tokens; spans past the cut are dropped and
/// spans crossing it are shortened.
pub fn truncate_sentence(s: &AnnotatedSentence, max_len: usize) -> AnnotatedSentence {
    if s.tokens.len() <= max_len {
        return s.clone();
    }
    let tokens = truncate_tokens(&s.tokens, max_len, &s.id).to_vec();
    let cut = |spans: &[Span]| -> Vec<Span> {
        spans
            .iter()
            .filter(|sp| sp.start < max_len)
            .map(|sp| Span::new(sp.start, sp.end.min(max_len)))
            .collect()
    };
    AnnotatedSentence {
        id: s.id.clone(),
        tokens,
        cause_spans: cut(&s.cause_spans),
        effect_spans: cut(&s.effect_spans),
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Ranking and clustering settings; windows, filters and the infusion
    /// fraction are taken from the model configuration.
    pub mining: MiningConfig,
}

impl Experiment {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    /// Model configuration after applying the ablation switches and the
    /// derived model seed.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.use_attention = m.use_attention && self.train.use_attention;
        if !self.train.use_infusion {
            m.infusion = 0.0;
        }
        m.seed = derive_seed(self.train.seed, "model");
        m
    }

    pub fn effective_mining(&self) -> MiningConfig {
        let m = self.effective_model();
        MiningConfig {
            windows: m.windows.clone(),
            filters: m.filters,
            rho: m.infusion,
            seed: derive_seed(self.train.seed, "mining"),
            ..self.mining.clone()
        }
    }
}

/// A freshly initialized (and, when enabled, infused) tagger.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub tagger: Tagger,
    pub mining: Option<MiningOutput>,
}

/// Builds the encoder (pretrained table or seeded trainable embedder over the
/// training vocabulary), the random tagger, and applies the mined filter plan.
pub fn build_model(
    exp: &Experiment,
    train_set: &[AnnotatedSentence],
    pretrained: Option<&PretrainedEmbeddings>,
) -> Result<BuiltModel> {
    build(exp, train_set, pretrained, None)
}

/// As [`build_model`], infusing from a previously mined plan instead of
/// mining one.
pub fn build_model_with_plan(
    exp: &Experiment,
    train_set: &[AnnotatedSentence],
    pretrained: Option<&PretrainedEmbeddings>,
    plan: &FilterInitPlan,
) -> Result<BuiltModel> {
    build(exp, train_set, pretrained, Some(plan))
}

fn build(
    exp: &Experiment,
    train_set: &[AnnotatedSentence],
    pretrained: Option<&PretrainedEmbeddings>,
    plan: Option<&FilterInitPlan>,
) -> Result<BuiltModel> {
    let config = exp.effective_model();
    let (encoder, table) = if exp.train.use_pretrained_encoder {
        let emb = pretrained.ok_or_else(|| {
            Error::InvalidInput(
                "use_pretrained_encoder is set but no pretrained embeddings were given".into(),
            )
        })?;
        if emb.dim() != config.embed_dim {
            return Err(Error::InvalidInput(format!(
                "pretrained width {} differs from embed_dim {}",
                emb.dim(),
                config.embed_dim
            )));
        }
        let enc = TokenEncoder::pretrained(
            emb,
            config.max_len,
            config.position_scale,
            exp.train.fine_tune_encoder,
        );
        (enc, emb.table.clone())
    } else {
        let vocab = Vocab::from_corpus(train_set.iter().map(|s| s.tokens.as_slice()));
        let enc = TokenEncoder::trainable(
            vocab,
            config.embed_dim,
            config.max_len,
            config.position_scale,
        );
        let table = enc.init_table(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            exp.train.seed,
            "embedding",
        )));
        (enc, table)
    };
    config.validate()?;
    let mut tagger = Tagger::random(config, encoder, table)?;
    if let Some(plan) = plan {
        if tagger.config.infusion > 0.0 {
            plan.materialize(&mut tagger)?;
        }
        return Ok(BuiltModel {
            tagger,
            mining: None,
        });
    }
    let mining = if tagger.config.infusion > 0.0 {
        let truncated: Vec<AnnotatedSentence> = train_set
            .iter()
            .map(|s| truncate_sentence(s, tagger.config.max_len))
            .collect();
        let out = mine(&truncated, &tagger.encoder_view(), &exp.effective_mining())
            .map_err(|e| e.in_stage("mining"))?;
        out.plan.materialize(&mut tagger)?;
        Some(out)
    } else {
        None
    };
    Ok(BuiltModel { tagger, mining })
}

/// Result of building, training and testing one configuration.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub initial: Tagger,
    pub outcome: TrainOutcome,
    pub test: EvalReport,
    pub mining: Option<MiningOutput>,
}

pub fn run_experiment(
    exp: &Experiment,
    splits: &Splits,
    pretrained: Option<&PretrainedEmbeddings>,
) -> Result<RunResult> {
    let built = build_model(exp, &splits.train, pretrained)?;
    let outcome = train(&built.tagger, &splits.train, &splits.dev, &exp.train)?;
    let test = evaluate(&outcome.best, &splits.test)?;
    Ok(RunResult {
        initial: built.tagger,
        outcome,
        test,
        mining: built.mining,
    })
}

/// Trains a trainable-embedder tagger (no infusion) on `corpus` and exports
/// its embedding table in the pretrained-embeddings format, for use as a
/// stand-in pretrained encoder on data it was not trained on.
pub fn pretrain_embeddings(
    exp: &Experiment,
    corpus: &[AnnotatedSentence],
) -> Result<PretrainedEmbeddings> {
    let mut exp = exp.clone();
    exp.train.use_pretrained_encoder = false;
    exp.train.use_infusion = false;
    if corpus.len() < 2 {
        return Err(Error::InvalidInput(
            "pretraining needs at least two sentences".into(),
        ));
    }
    let cut = (corpus.len() * 9 / 10).max(1);
    let (train_part, dev_part) = corpus.split_at(cut);
    let built = build_model(&exp, train_part, None)?;
    let outcome = train(&built.tagger, train_part, dev_part, &exp.train)?;
    Ok(PretrainedEmbeddings {
        vocab: outcome.best.encoder.vocab.clone(),
        table: outcome.best.params.embedding.clone(),
    })
}
