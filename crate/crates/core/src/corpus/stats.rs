use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, Role};
use crate::error::{Error, Result};

/// Most frequent span length and the share of spans that have it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthMode {
    pub length: usize,
    pub proportion: f64,
}

/// Dataset summary statistics (sentence length, cause/effect spacing and
/// span length distributions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub avg_sentence_length: f64,
    /// Mean over sentences of the token gap between the closest cause/effect pair.
    pub mean_causal_distance: f64,
    pub cause_length_mode: LengthMode,
    pub effect_length_mode: LengthMode,
    pub avg_cause_length: f64,
    pub avg_effect_length: f64,
}

/// Mode of a length histogram; ties go to the shorter length.
fn length_mode(lengths: &[usize]) -> LengthMode {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in lengths {
        *counts.entry(l).or_default() += 1;
    }
    let (length, count) = counts.into_iter().fold(
        (0, 0),
        |best, (l, c)| if c > best.1 { (l, c) } else { best },
    );
    LengthMode {
        length,
        proportion: count as f64 / lengths.len() as f64,
    }
}

fn mean(values: impl ExactSizeIterator<Item = usize>) -> f64 {
    let n = values.len();
    values.sum::<usize>() as f64 / n as f64
}

pub fn compute_stats(corpus: &[AnnotatedSentence]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput(
            "cannot summarize an empty corpus".into(),
        ));
    }
    if let Some(s) = corpus.iter().find(|s| !s.has_causal_pair()) {
        return Err(Error::InvalidInput(format!(
            "sentence {} lacks a cause or effect span",
            s.id
        )));
    }

    let distances: Vec<usize> = corpus
        .iter()
        .map(|s| {
            s.cause_spans
                .iter()
                .flat_map(|c| s.effect_spans.iter().map(move |e| c.gap(e)))
                .min()
                .expect("sentence has a causal pair")
        })
        .collect();

    let lengths = |role: Role| -> Vec<usize> {
        corpus
            .iter()
            .flat_map(|s| s.spans(role).iter().map(|sp| sp.len()))
            .collect()
    };
    let cause = lengths(Role::Cause);
    let effect = lengths(Role::Effect);

    Ok(CorpusStats {
        sentences: corpus.len(),
        avg_sentence_length: mean(corpus.iter().map(|s| s.len())),
        mean_causal_distance: mean(distances.into_iter()),
        cause_length_mode: length_mode(&cause),
        effect_length_mode: length_mode(&effect),
        avg_cause_length: mean(cause.iter().copied()),
        avg_effect_length: mean(effect.iter().copied()),
    })
}
