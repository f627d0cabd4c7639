use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Span};
use crate::error::{Error, Result};

/// Template description for a generated causality corpus. Sentences read
/// `filler* cause connective effect filler*`, or `effect connective cause`
/// for the reversed connectives. Cause and effect phrases are drawn from a
/// fixed inventory built from their own vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub cause_vocab: Vec<String>,
    pub effect_vocab: Vec<String>,
    pub filler_vocab: Vec<String>,
    /// Connectives placed between a leading cause and a trailing effect.
    pub forward_connectives: Vec<Vec<String>>,
    /// Connectives placed between a leading effect and a trailing cause.
    pub backward_connectives: Vec<Vec<String>>,
    /// Phrase lengths, sampled uniformly.
    pub cause_lengths: Vec<usize>,
    pub effect_lengths: Vec<usize>,
    /// Distinct phrases per role and length.
    pub phrases_per_length: usize,
    /// Inclusive bounds on filler tokens before and after the clause.
    pub filler_range: (usize, usize),
    /// Probability that a filler position holds a cause or effect vocabulary
    /// token instead, so single tokens no longer reveal span membership.
    pub distractor_rate: f64,
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn phrase(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            cause_vocab: words("cz", 30),
            effect_vocab: words("ef", 30),
            filler_vocab: words("w", 40),
            forward_connectives: vec![phrase("leads to"), phrase("caused"), phrase("results in")],
            backward_connectives: vec![phrase("because of"), phrase("due to")],
            cause_lengths: vec![2, 3, 4],
            effect_lengths: vec![2, 3, 4],
            phrases_per_length: 12,
            filler_range: (0, 4),
            distractor_rate: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let cause: BTreeSet<&String> = self.cause_vocab.iter().collect();
        let effect: BTreeSet<&String> = self.effect_vocab.iter().collect();
        let shared: Vec<&&String> = cause.intersection(&effect).collect();
        if !shared.is_empty() {
            return Err(Error::InvalidInput(format!(
                "cause and effect vocabularies overlap: {shared:?}"
            )));
        }
        let mut problems = Vec::new();
        if self.cause_vocab.is_empty() || self.effect_vocab.is_empty() {
            problems.push("cause and effect vocabularies must be non-empty".to_string());
        }
        if self.cause_lengths.is_empty() || self.cause_lengths.contains(&0) {
            problems.push("cause_lengths must be non-empty and positive".into());
        }
        if self.effect_lengths.is_empty() || self.effect_lengths.contains(&0) {
            problems.push("effect_lengths must be non-empty and positive".into());
        }
        if self.forward_connectives.is_empty() && self.backward_connectives.is_empty() {
            problems.push("at least one connective is required".into());
        }
        if self.phrases_per_length == 0 {
            problems.push("phrases_per_length must be positive".into());
        }
        if self.filler_range.0 > self.filler_range.1
            || (self.filler_range.1 > 0 && self.filler_vocab.is_empty())
        {
            problems.push("filler_range needs min <= max and a filler vocabulary".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            problems.push(format!(
                "distractor_rate {} outside [0, 1]",
                self.distractor_rate
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    /// The phrase inventory for one role, generated from `seed`.
    pub fn phrases(&self, cause: bool, seed: u64) -> Vec<Vec<String>> {
        let (vocab, lengths, salt) = if cause {
            (&self.cause_vocab, &self.cause_lengths, 1)
        } else {
            (&self.effect_vocab, &self.effect_lengths, 2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(salt));
        let mut out = Vec::new();
        for &len in lengths {
            let mut seen = BTreeSet::new();
            let mut attempts = 0;
            while seen.len() < self.phrases_per_length && attempts < 100 * self.phrases_per_length {
                attempts += 1;
                let p: Vec<String> = (0..len)
                    .map(|_| vocab.choose(&mut rng).unwrap().clone())
                    .collect();
                if seen.insert(p.clone()) {
                    out.push(p);
                }
            }
        }
        out
    }
}

/// `size` sentences, each with exactly one cause and one effect span.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
    size: usize,
    seed: u64,
) -> Result<Vec<AnnotatedSentence>> {
    spec.validate()?;
    let causes = spec.phrases(true, seed);
    let effects = spec.phrases(false, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_fwd = spec.forward_connectives.len();
    let n_all = n_fwd + spec.backward_connectives.len();
    let filler = |rng: &mut ChaCha8Rng, out: &mut Vec<String>| {
        let k = rng.random_range(spec.filler_range.0..=spec.filler_range.1);
        for _ in 0..k {
            let vocab = if spec.distractor_rate > 0.0 && rng.random_bool(spec.distractor_rate) {
                if rng.random_bool(0.5) {
                    &spec.cause_vocab
                } else {
                    &spec.effect_vocab
                }
            } else {
                &spec.filler_vocab
            };
            out.push(vocab.choose(rng).unwrap().clone());
        }
    };
    let mut corpus = Vec::with_capacity(size);
    for i in 0..size {
        let cause = causes.choose(&mut rng).unwrap();
        let effect = effects.choose(&mut rng).unwrap();
        let c = rng.random_range(0..n_all);
        let mut tokens = Vec::new();
        filler(&mut rng, &mut tokens);
        let (first, conn, second, forward) = if c < n_fwd {
            (cause, &spec.forward_connectives[c], effect, true)
        } else {
            (effect, &spec.backward_connectives[c - n_fwd], cause, false)
        };
        let a = Span::new(tokens.len(), tokens.len() + first.len());
        tokens.extend(first.iter().cloned());
        tokens.extend(conn.iter().cloned());
        let b = Span::new(tokens.len(), tokens.len() + second.len());
        tokens.extend(second.iter().cloned());
        filler(&mut rng, &mut tokens);
        let (cs, es) = if forward { (a, b) } else { (b, a) };
        corpus.push(AnnotatedSentence::new(
            format!("syn-{i}"),
            tokens,
            vec![cs],
            vec![es],
        )?);
    }
    Ok(corpus)
}
