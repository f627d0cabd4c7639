use serde::{Deserialize, Serialize};

use super::metrics::EvalReport;
use super::{run_experiment, Experiment};
use crate::corpus::Splits;
use crate::error::Result;
use crate::model::PretrainedEmbeddings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPretrainedEncoder,
    NoInfusion,
    NoAttention,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoPretrainedEncoder,
        Variant::NoInfusion,
        Variant::NoAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPretrainedEncoder => "no_pretrained_encoder",
            Variant::NoInfusion => "no_infusion",
            Variant::NoAttention => "no_attention",
        }
    }

    /// The experiment with this variant's switch turned off.
    pub fn apply(self, base: &Experiment) -> Experiment {
        let mut exp = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoPretrainedEncoder => exp.train.use_pretrained_encoder = false,
            Variant::NoInfusion => exp.train.use_infusion = false,
            Variant::NoAttention => exp.train.use_attention = false,
        }
        exp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub best_dev_f1: Option<f64>,
    pub test: Option<EvalReport>,
    /// Set when the run failed; the row then has no scores.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub mean_test_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
    /// True when any run failed.
    pub partial: bool,
}

impl AblationTable {
    pub fn mean_f1(&self, variant: Variant) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.variant == variant)
            .and_then(|s| s.mean_test_f1)
    }
}

/// Trains the full model and each single-switch-off variant for every seed.
/// Variants sharing a seed see the same data order and initial weights
/// wherever their shapes agree.
pub fn ablate(
    base: &Experiment,
    splits: &Splits,
    seeds: &[u64],
    pretrained: Option<&PretrainedEmbeddings>,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for variant in Variant::ALL {
            let exp = variant.apply(&base.clone().with_seed(seed));
            log::info!("ablation run {} seed {seed}", variant.name());
            let row = match run_experiment(&exp, splits, pretrained) {
                Ok(run) => AblationRow {
                    variant,
                    seed,
                    best_epoch: run.outcome.best_epoch,
                    best_dev_f1: run.outcome.best_dev().map(|r| r.f1),
                    test: Some(run.test),
                    error: None,
                },
                Err(e) => {
                    log::error!("ablation run {} seed {seed} failed: {e}", variant.name());
                    AblationRow {
                        variant,
                        seed,
                        best_epoch: None,
                        best_dev_f1: None,
                        test: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            rows.push(row);
        }
    }
    let summary = Variant::ALL
        .iter()
        .map(|&v| {
            let f1s: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == v)
                .filter_map(|r| r.test.as_ref().map(|t| t.f1))
                .collect();
            VariantSummary {
                variant: v,
                runs: f1s.len(),
                mean_test_f1: if f1s.is_empty() {
                    None
                } else {
                    Some(f1s.iter().sum::<f64>() / f1s.len() as f64)
                },
            }
        })
        .collect();
    let partial = rows.iter().any(|r| r.error.is_some());
    Ok(AblationTable {
        rows,
        summary,
        partial,
    })
}
