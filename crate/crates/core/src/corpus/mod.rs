//! Span-annotated causality corpora: data types, file formats, BIO tagging,
//! dataset statistics and seeded splits.

mod bio;
mod io;
mod split;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bio::{decode_bio, encode_bio, Repair, Tag, TagSequence};
pub use io::{
    load_corpus, load_corpus_lenient, read_conll, read_jsonl, write_conll, write_corpus,
    write_jsonl, CorpusFormat,
};
pub use split::{split_corpus, Splits};
pub use stats::{compute_stats, CorpusStats, LengthMode};

/// Event role of an annotated span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Cause,
    Effect,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Cause, Role::Effect];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Cause => "cause",
            Role::Effect => "effect",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open token interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Token gap between two disjoint spans (0 when adjacent).
    pub fn gap(&self, other: &Span) -> usize {
        other
            .start
            .saturating_sub(self.end)
            .max(self.start.saturating_sub(other.end))
    }

    pub fn contains_window(&self, start: usize, len: usize) -> bool {
        start >= self.start && start + len <= self.end
    }
}

/// A tokenized sentence with its cause and effect span annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub cause_spans: Vec<Span>,
    pub effect_spans: Vec<Span>,
}

impl AnnotatedSentence {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        cause_spans: Vec<Span>,
        effect_spans: Vec<Span>,
    ) -> Result<Self> {
        let sentence = AnnotatedSentence {
            id: id.into(),
            tokens,
            cause_spans,
            effect_spans,
        };
        sentence.validate().map_err(Error::InvalidInput)?;
        Ok(sentence)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn spans(&self, role: Role) -> &[Span] {
        match role {
            Role::Cause => &self.cause_spans,
            Role::Effect => &self.effect_spans,
        }
    }

    /// All spans tagged with their role, causes first.
    pub fn role_spans(&self) -> impl Iterator<Item = (Role, Span)> + '_ {
        self.cause_spans
            .iter()
            .map(|s| (Role::Cause, *s))
            .chain(self.effect_spans.iter().map(|s| (Role::Effect, *s)))
    }

    /// Checks span bounds and pairwise disjointness. Returns the first violated
    /// invariant as a message.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        for (role, span) in self.role_spans() {
            if span.start >= span.end {
                return Err(format!(
                    "{role} span [{}, {}) is empty or reversed",
                    span.start, span.end
                ));
            }
            if span.end > n {
                return Err(format!(
                    "{role} span [{}, {}) ends past token count {n}",
                    span.start, span.end
                ));
            }
        }
        let mut all: Vec<(Span, Role)> = self.role_spans().map(|(r, s)| (s, r)).collect();
        all.sort();
        for pair in all.windows(2) {
            let ((a, ra), (b, rb)) = (pair[0], pair[1]);
            if a.overlaps(&b) {
                return Err(format!(
                    "{ra} span [{}, {}) overlaps {rb} span [{}, {})",
                    a.start, a.end, b.start, b.end
                ));
            }
        }
        Ok(())
    }

    /// Training data additionally needs at least one cause and one effect.
    pub fn has_causal_pair(&self) -> bool {
        !self.cause_spans.is_empty() && !self.effect_spans.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn rejects_overlap_across_roles() {
        let err =
            AnnotatedSentence::new("x", toks(4), vec![Span::new(0, 2)], vec![Span::new(1, 3)])
                .unwrap_err();
        assert!(err.to_string().contains("overlaps"), "{err}");
    }

    #[test]
    fn rejects_empty_span() {
        assert!(AnnotatedSentence::new("x", toks(4), vec![Span::new(2, 2)], vec![]).is_err());
    }

    #[test]
    fn adjacent_spans_are_fine() {
        let s = AnnotatedSentence::new(
            "x",
            toks(4),
            vec![Span::new(0, 1), Span::new(1, 2)],
            vec![Span::new(2, 4)],
        )
        .unwrap();
        assert!(s.has_causal_pair());
    }

    #[test]
    fn gap_is_symmetric() {
        let a = Span::new(0, 2);
        let b = Span::new(5, 6);
        assert_eq!(a.gap(&b), 3);
        assert_eq!(b.gap(&a), 3);
        assert_eq!(Span::new(0, 2).gap(&Span::new(2, 3)), 0);
    }
}
