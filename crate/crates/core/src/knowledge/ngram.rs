use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Role};
use crate::error::{Error, Result};

pub type Ngram = Vec<String>;

/// Contiguous windows of `n` tokens taken every `step` tokens.
pub fn extract_ngrams(tokens: &[String], n: usize, step: usize) -> Result<Vec<Ngram>> {
    if n == 0 || step == 0 {
        return Err(Error::InvalidInput(format!(
            "n-gram size and step must be positive (n={n}, step={step})"
        )));
    }
    if tokens.len() < n {
        return Ok(Vec::new());
    }
    Ok((0..=tokens.len() - n)
        .step_by(step)
        .map(|i| tokens[i..i + n].to_vec())
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramCounts {
    pub cause: usize,
    pub effect: usize,
}

impl NgramCounts {
    pub fn get(&self, role: Role) -> usize {
        match role {
            Role::Cause => self.cause,
            Role::Effect => self.effect,
        }
    }
}

/// Sentence-level counts of n-grams lying wholly inside cause or effect spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramTable {
    pub window: usize,
    pub entries: BTreeMap<Ngram, NgramCounts>,
    pub cause_total: usize,
    pub effect_total: usize,
}

impl NgramTable {
    pub fn new(window: usize) -> Self {
        NgramTable {
            window,
            entries: BTreeMap::new(),
            cause_total: 0,
            effect_total: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self, role: Role) -> usize {
        match role {
            Role::Cause => self.cause_total,
            Role::Effect => self.effect_total,
        }
    }

    /// Adds one sentence's contribution; each n-gram counts at most once
    /// per role per sentence.
    pub fn add_sentence(&mut self, sentence: &AnnotatedSentence) {
        let n = self.window;
        for role in Role::ALL {
            let mut seen = BTreeSet::new();
            for span in sentence.spans(role) {
                if span.len() < n {
                    continue;
                }
                for start in span.start..=span.end - n {
                    seen.insert(&sentence.tokens[start..start + n]);
                }
            }
            for gram in seen {
                let counts = self.entries.entry(gram.to_vec()).or_default();
                match role {
                    Role::Cause => {
                        counts.cause += 1;
                        self.cause_total += 1;
                    }
                    Role::Effect => {
                        counts.effect += 1;
                        self.effect_total += 1;
                    }
                }
            }
        }
    }

    /// Merges counts from a table over a disjoint set of sentences.
    pub fn merge(&mut self, other: NgramTable) {
        for (gram, c) in other.entries {
            let e = self.entries.entry(gram).or_default();
            e.cause += c.cause;
            e.effect += c.effect;
        }
        self.cause_total += other.cause_total;
        self.effect_total += other.effect_total;
    }
}

pub fn count_ngrams(corpus: &[AnnotatedSentence], n: usize) -> Result<NgramTable> {
    if n == 0 {
        return Err(Error::InvalidInput("n-gram size must be positive".into()));
    }
    let mut table = NgramTable::new(n);
    for s in corpus {
        table.add_sentence(s);
    }
    Ok(table)
}

/// `((p_c + b) / ‖p_c‖₁) / ((p_e + b) / ‖p_e‖₁)` from raw counts.
pub fn ranking_ratio(
    cause: usize,
    effect: usize,
    cause_total: usize,
    effect_total: usize,
    b: f64,
) -> Result<f64> {
    if cause_total == 0 || effect_total == 0 {
        return Err(Error::Knowledge(format!(
            "ranking needs positive totals (cause {cause_total}, effect {effect_total})"
        )));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "smoothing must be positive, got {b}"
        )));
    }
    let num = (cause as f64 + b) / cause_total as f64;
    let den = (effect as f64 + b) / effect_total as f64;
    Ok(num / den)
}

/// Ranking score of `gram`; n-grams absent from the table have zero counts.
pub fn score_ngram(table: &NgramTable, gram: &[String], b: f64) -> Result<f64> {
    let c = table.entries.get(gram).copied().unwrap_or_default();
    ranking_ratio(c.cause, c.effect, table.cause_total, table.effect_total, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedNgram {
    pub ngram: Ngram,
    pub score: f64,
    pub counts: NgramCounts,
}

/// Selected n-grams for one role, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedNgrams {
    pub window: usize,
    pub role: Role,
    pub smoothing: f64,
    pub items: Vec<RankedNgram>,
}

impl RankedNgrams {
    pub fn ngrams(&self) -> Vec<Ngram> {
        self.items.iter().map(|i| i.ngram.clone()).collect()
    }
}

/// Compares `(c1+b)/(e1+b)` with `(c2+b)/(e2+b)` by cross-multiplication, so
/// equal ratios from different counts tie exactly.
fn ratio_cmp(a: &NgramCounts, z: &NgramCounts, b: f64) -> Ordering {
    let lhs = (a.cause as f64 + b) * (z.effect as f64 + b);
    let rhs = (z.cause as f64 + b) * (a.effect as f64 + b);
    lhs.partial_cmp(&rhs).unwrap_or(Ordering::Equal)
}

/// Top `ceil(fraction·|entries|)` n-grams: cause by descending score,
/// effect by ascending score. Ties go to the higher role count, then to the
/// lexicographically smaller n-gram.
pub fn select_top(table: &NgramTable, role: Role, fraction: f64, b: f64) -> Result<RankedNgrams> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "selection fraction must be in (0, 1], got {fraction}"
        )));
    }
    if table.is_empty() {
        return Err(Error::Knowledge(format!(
            "no n-grams of size {} to rank",
            table.window
        )));
    }
    let mut items = Vec::with_capacity(table.len());
    for (gram, counts) in &table.entries {
        let score = ranking_ratio(
            counts.cause,
            counts.effect,
            table.cause_total,
            table.effect_total,
            b,
        )?;
        items.push(RankedNgram {
            ngram: gram.clone(),
            score,
            counts: *counts,
        });
    }
    items.sort_by(|x, y| {
        let by_ratio = match role {
            Role::Cause => ratio_cmp(&y.counts, &x.counts, b),
            Role::Effect => ratio_cmp(&x.counts, &y.counts, b),
        };
        by_ratio
            .then_with(|| y.counts.get(role).cmp(&x.counts.get(role)))
            .then_with(|| x.ngram.cmp(&y.ngram))
    });
    let keep = ((fraction * table.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    items.truncate(keep.min(table.len()));
    Ok(RankedNgrams {
        window: table.window,
        role,
        smoothing: b,
        items,
    })
}
