use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::truncate_tokens;
use crate::corpus::{AnnotatedSentence, Role, Span};
use crate::error::{Error, Result};
use crate::model::Tagger;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanScores {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        SpanScores {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            gold,
        }
    }
}

/// Micro-averaged exact-match span scores over both roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cause: SpanScores,
    pub effect: SpanScores,
    pub sentences: usize,
    pub epoch: Option<usize>,
    pub seconds: Option<f64>,
}

/// Predicted spans per sentence: `(cause, effect)`.
pub type Prediction = (Vec<Span>, Vec<Span>);

/// Counts predicted spans equal to a not-yet-matched gold span.
fn matches(gold: &[Span], predicted: &[Span]) -> usize {
    let mut used = vec![false; gold.len()];
    let mut hits = 0;
    for p in predicted {
        if let Some(i) = (0..gold.len()).find(|&i| !used[i] && gold[i] == *p) {
            used[i] = true;
            hits += 1;
        }
    }
    hits
}

pub fn score_predictions(
    gold: &[AnnotatedSentence],
    predicted: &[Prediction],
) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate an empty corpus".into(),
        ));
    }
    if gold.len() != predicted.len() {
        return Err(Error::InvalidInput(format!(
            "{} gold sentences but {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    let mut counts = [[0usize; 3]; 2];
    for (g, (pc, pe)) in gold.iter().zip(predicted) {
        for (r, (role, pred)) in [(Role::Cause, pc), (Role::Effect, pe)]
            .into_iter()
            .enumerate()
        {
            let gs = g.spans(role);
            counts[r][0] += matches(gs, pred);
            counts[r][1] += pred.len();
            counts[r][2] += gs.len();
        }
    }
    let cause = SpanScores::from_counts(counts[0][0], counts[0][1], counts[0][2]);
    let effect = SpanScores::from_counts(counts[1][0], counts[1][1], counts[1][2]);
    let all = SpanScores::from_counts(
        counts[0][0] + counts[1][0],
        counts[0][1] + counts[1][1],
        counts[0][2] + counts[1][2],
    );
    Ok(EvalReport {
        precision: all.precision,
        recall: all.recall,
        f1: all.f1,
        cause,
        effect,
        sentences: gold.len(),
        epoch: None,
        seconds: None,
    })
}

/// Runs the tagger over every sentence (truncating over-length input) and
/// scores against the gold spans.
pub fn evaluate(tagger: &Tagger, corpus: &[AnnotatedSentence]) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate an empty corpus".into(),
        ));
    }
    let predicted = predict(tagger, corpus)?;
    score_predictions(corpus, &predicted)
}

pub fn predict(tagger: &Tagger, corpus: &[AnnotatedSentence]) -> Result<Vec<Prediction>> {
    corpus
        .par_iter()
        .map(|s| {
            let tokens = truncate_tokens(&s.tokens, tagger.config.max_len, &s.id);
            let x = tagger.extract(tokens)?;
            Ok((x.cause_spans, x.effect_spans))
        })
        .collect()
}
