use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ngram::Ngram;
use crate::corpus::Role;
use crate::error::{Error, Result};
use crate::model::{ConvBlockParams, Tagger};

pub const PLAN_FORMAT_VERSION: u32 = 1;

/// Clusters of selected n-gram embeddings for one (window, role) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPool {
    pub window: usize,
    pub role: Role,
    /// Each of length `window · e`.
    pub centroids: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    /// Member n-grams of each cluster.
    pub members: Vec<Vec<Ngram>>,
    pub inertia: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterBank {
    pub pools: Vec<ClusterPool>,
}

impl ClusterBank {
    pub fn pool(&self, window: usize, role: Role) -> Option<&ClusterPool> {
        self.pools
            .iter()
            .find(|p| p.window == window && p.role == role)
    }

    pub fn insert(&mut self, pool: ClusterPool) {
        self.pools
            .retain(|p| !(p.window == pool.window && p.role == pool.role));
        self.pools.push(pool);
        self.pools.sort_by_key(|p| (p.window, p.role));
    }

    pub fn windows(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.pools.iter().map(|p| p.window).collect();
        w.dedup();
        w
    }
}

/// Source centroid of one infused filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CentroidRef {
    pub role: Role,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterAssignment {
    pub filter: usize,
    pub source: CentroidRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window: usize,
    pub assignments: Vec<FilterAssignment>,
}

/// Versioned header of a plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanHeader {
    pub format_version: u32,
    pub embed_dim: usize,
    pub filters: usize,
    pub rho: f64,
    pub seed: u64,
    pub windows: Vec<usize>,
}

/// Which filters take which centroids; all other filters keep their seeded
/// random initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterInitPlan {
    pub header: PlanHeader,
    pub windows: Vec<WindowPlan>,
    pub bank: ClusterBank,
}

/// Number of infused filters for `filters` and fraction `rho`.
pub fn infused_count(filters: usize, rho: f64) -> usize {
    (rho * filters as f64).round() as usize
}

/// Assigns `round(ρF)` distinct filters per window, alternating cause and
/// effect pools (cause first) and taking each pool's largest clusters first.
/// Filter indices come from a seeded permutation.
pub fn build_filter_init(
    bank: &ClusterBank,
    windows: &[usize],
    embed_dim: usize,
    filters: usize,
    rho: f64,
    seed: u64,
) -> Result<FilterInitPlan> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!(
            "infusion fraction must be in [0, 1], got {rho}"
        )));
    }
    let m = infused_count(filters, rho);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plans = Vec::with_capacity(windows.len());
    for &n in windows {
        let mut order: Vec<usize> = (0..filters).collect();
        order.shuffle(&mut rng);
        if m == 0 {
            plans.push(WindowPlan {
                window: n,
                assignments: Vec::new(),
            });
            continue;
        }
        let need = [(Role::Cause, m.div_ceil(2)), (Role::Effect, m / 2)];
        let mut ranked = Vec::new();
        for (role, count) in need {
            if count == 0 {
                ranked.push(Vec::new());
                continue;
            }
            let pool = bank
                .pool(n, role)
                .ok_or_else(|| Error::Knowledge(format!("no {role} clusters for window {n}")))?;
            if pool.centroids.len() < count {
                return Err(Error::Knowledge(format!(
                    "window {n} {role} pool has {} centroids, {count} needed",
                    pool.centroids.len()
                )));
            }
            if let Some(c) = pool.centroids.iter().find(|c| c.len() != n * embed_dim) {
                return Err(Error::Shape(format!(
                    "window {n} {role} centroid has length {}, expected {}",
                    c.len(),
                    n * embed_dim
                )));
            }
            let mut idx: Vec<usize> = (0..pool.centroids.len()).collect();
            idx.sort_by(|&a, &b| pool.sizes[b].cmp(&pool.sizes[a]).then(a.cmp(&b)));
            ranked.push(idx);
        }
        let mut used = [0usize; 2];
        let assignments = order[..m]
            .iter()
            .enumerate()
            .map(|(slot, &filter)| {
                let r = slot % 2;
                let cluster = ranked[r][used[r]];
                used[r] += 1;
                FilterAssignment {
                    filter,
                    source: CentroidRef {
                        role: Role::ALL[r],
                        cluster,
                    },
                }
            })
            .collect();
        plans.push(WindowPlan {
            window: n,
            assignments,
        });
    }
    Ok(FilterInitPlan {
        header: PlanHeader {
            format_version: PLAN_FORMAT_VERSION,
            embed_dim,
            filters,
            rho,
            seed,
            windows: windows.to_vec(),
        },
        windows: plans,
        bank: bank.clone(),
    })
}

impl FilterInitPlan {
    pub fn centroid(&self, window: usize, source: CentroidRef) -> Option<&[f64]> {
        self.bank
            .pool(window, source.role)
            .and_then(|p| p.centroids.get(source.cluster))
            .map(|c| c.as_slice())
    }

    pub fn infused_total(&self) -> usize {
        self.windows.iter().map(|w| w.assignments.len()).sum()
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: FilterInitPlan = serde_json::from_str(&text)?;
        if plan.header.format_version != PLAN_FORMAT_VERSION {
            return Err(Error::Knowledge(format!(
                "plan format {} not supported (expected {PLAN_FORMAT_VERSION})",
                plan.header.format_version
            )));
        }
        Ok(plan)
    }

    /// Writes centroids into the matching kernels, optionally rescaled to the
    /// norm of the kernel they replace. Returns the infused
    /// `(window position, filter)` pairs.
    pub fn apply(&self, conv: &mut ConvBlockParams, rescale: bool) -> Result<Vec<(usize, usize)>> {
        let mut infused = Vec::new();
        for wp in &self.windows {
            let pos = conv
                .windows
                .iter()
                .position(|w| w.window == wp.window)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("model has no convolution window {}", wp.window))
                })?;
            let kernels = &mut conv.windows[pos].kernels;
            for a in &wp.assignments {
                let centroid = self.centroid(wp.window, a.source).ok_or_else(|| {
                    Error::Knowledge(format!(
                        "plan references missing {} cluster {} for window {}",
                        a.source.role, a.source.cluster, wp.window
                    ))
                })?;
                if a.filter >= kernels.nrows() || centroid.len() != kernels.ncols() {
                    return Err(Error::Shape(format!(
                        "filter {} with centroid length {} does not fit kernels {:?}",
                        a.filter,
                        centroid.len(),
                        kernels.dim()
                    )));
                }
                let mut row = kernels.row_mut(a.filter);
                let factor = if rescale {
                    let old = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let new = centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if new > 0.0 {
                        old / new
                    } else {
                        1.0
                    }
                } else {
                    1.0
                };
                for (k, v) in row.iter_mut().zip(centroid) {
                    *k = factor * v;
                }
                infused.push((pos, a.filter));
            }
        }
        Ok(infused)
    }

    /// Infuses a tagger, recording the plan hash and, when configured,
    /// freezing the infused filters.
    pub fn materialize(&self, tagger: &mut Tagger) -> Result<()> {
        let c = &tagger.config;
        if self.header.embed_dim != c.embed_dim || self.header.filters != c.filters {
            return Err(Error::InvalidInput(format!(
                "plan built for e={}, F={} but model has e={}, F={}",
                self.header.embed_dim, self.header.filters, c.embed_dim, c.filters
            )));
        }
        let infused = self.apply(&mut tagger.params.conv, tagger.config.rescale_infused)?;
        tagger.frozen_filters = if tagger.config.freeze_infused {
            infused
        } else {
            Vec::new()
        };
        tagger.plan_hash = Some(self.hash());
        Ok(())
    }
}
