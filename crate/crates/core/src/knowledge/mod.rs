//! Cause/effect n-gram mining: counting, ranking, embedding, clustering and
//! the plan that places cluster centroids into convolution filters.

mod kmeans;
mod ngram;
mod plan;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Role};
use crate::error::{Error, Result};
use crate::model::Encoder;

pub use kmeans::{cluster_ngrams, Clustering};
pub use ngram::{
    count_ngrams, extract_ngrams, ranking_ratio, score_ngram, select_top, Ngram, NgramCounts,
    NgramTable, RankedNgram, RankedNgrams,
};
pub use plan::{
    build_filter_init, infused_count, CentroidRef, ClusterBank, ClusterPool, FilterAssignment,
    FilterInitPlan, PlanHeader, WindowPlan, PLAN_FORMAT_VERSION,
};

/// Flattened `n·e` vector per n-gram: the rows of the encoder output for the
/// n-gram encoded on its own.
pub fn embed_ngrams(ngrams: &[Ngram], encoder: &(dyn Encoder + Sync)) -> Result<Vec<Vec<f64>>> {
    let n = match ngrams.first() {
        Some(g) => g.len(),
        None => return Ok(Vec::new()),
    };
    if let Some(g) = ngrams.iter().find(|g| g.len() != n) {
        return Err(Error::InvalidInput(format!(
            "n-gram {:?} has length {}, expected {n}",
            g,
            g.len()
        )));
    }
    ngrams
        .par_iter()
        .map(|g| {
            let h = encoder
                .encode(g)
                .map_err(|e| Error::Knowledge(format!("embedding n-gram {}: {e}", g.join(" "))))?;
            Ok(h.iter().copied().collect())
        })
        .collect()
}

/// Parameters of the mining pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub windows: Vec<usize>,
    /// Fraction of ranked n-grams kept per role.
    pub fraction: f64,
    /// Smoothing added to both counts of the ranking ratio.
    pub smoothing: f64,
    /// Clusters per (window, role) pool.
    pub clusters: usize,
    pub rho: f64,
    pub filters: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            windows: vec![2, 3, 4],
            fraction: 0.10,
            smoothing: 1.0,
            clusters: 100,
            rho: 0.5,
            filters: 100,
            max_iter: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Per-pool summary of a mining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub window: usize,
    pub role: Role,
    pub distinct_ngrams: usize,
    pub selected: usize,
    pub clusters: usize,
    pub top: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningOutput {
    pub plan: FilterInitPlan,
    pub pools: Vec<PoolSummary>,
}

/// count → score → select → embed → cluster → plan, over training data only.
pub fn mine(
    corpus: &[AnnotatedSentence],
    encoder: &(dyn Encoder + Sync),
    cfg: &MiningConfig,
) -> Result<MiningOutput> {
    let e = encoder.width();
    let mut bank = ClusterBank::default();
    let mut pools = Vec::new();
    if infused_count(cfg.filters, cfg.rho) > 0 {
        for (wi, &n) in cfg.windows.iter().enumerate() {
            let table = count_ngrams(corpus, n)?;
            for (ri, role) in Role::ALL.into_iter().enumerate() {
                let ranked = select_top(&table, role, cfg.fraction, cfg.smoothing)
                    .map_err(|err| pool_error(n, role, err))?;
                let grams = ranked.ngrams();
                if grams.len() < cfg.clusters {
                    return Err(Error::Knowledge(format!(
                        "window {n} {role} pool: {} selected n-grams, fewer than k={}",
                        grams.len(),
                        cfg.clusters
                    )));
                }
                let vectors = embed_ngrams(&grams, encoder)?;
                let seed = cfg.seed.wrapping_add((wi * 2 + ri) as u64 + 1);
                let c = cluster_ngrams(&vectors, cfg.clusters, seed, cfg.max_iter, cfg.tol)
                    .map_err(|err| pool_error(n, role, err))?;
                let mut members = vec![Vec::new(); cfg.clusters];
                for (g, &a) in grams.iter().zip(&c.assignments) {
                    members[a].push(g.clone());
                }
                pools.push(PoolSummary {
                    window: n,
                    role,
                    distinct_ngrams: table.len(),
                    selected: grams.len(),
                    clusters: cfg.clusters,
                    top: grams.iter().take(5).map(|g| g.join(" ")).collect(),
                });
                bank.insert(ClusterPool {
                    window: n,
                    role,
                    inertia: c.inertia(),
                    centroids: c.centroids,
                    sizes: c.sizes,
                    members,
                });
            }
        }
    }
    let plan = build_filter_init(&bank, &cfg.windows, e, cfg.filters, cfg.rho, cfg.seed)?;
    Ok(MiningOutput { plan, pools })
}

fn pool_error(n: usize, role: Role, err: Error) -> Error {
    Error::Knowledge(format!("window {n} {role} pool: {err}"))
}
