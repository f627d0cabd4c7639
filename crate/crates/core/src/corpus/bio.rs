use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, Role, Span};
use crate::error::{Error, Result};

/// Five-tag BIO alphabet for cause (C) and effect (E) spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "O")]
    O,
    #[serde(rename = "B-C")]
    BeginCause,
    #[serde(rename = "I-C")]
    InsideCause,
    #[serde(rename = "B-E")]
    BeginEffect,
    #[serde(rename = "I-E")]
    InsideEffect,
}

impl Tag {
    pub const COUNT: usize = 5;
    pub const ALL: [Tag; 5] = [
        Tag::O,
        Tag::BeginCause,
        Tag::InsideCause,
        Tag::BeginEffect,
        Tag::InsideEffect,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Tag> {
        Tag::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::O => "O",
            Tag::BeginCause => "B-C",
            Tag::InsideCause => "I-C",
            Tag::BeginEffect => "B-E",
            Tag::InsideEffect => "I-E",
        }
    }

    pub fn role(self) -> Option<Role> {
        match self {
            Tag::O => None,
            Tag::BeginCause | Tag::InsideCause => Some(Role::Cause),
            Tag::BeginEffect | Tag::InsideEffect => Some(Role::Effect),
        }
    }

    pub fn is_inside(self) -> bool {
        matches!(self, Tag::InsideCause | Tag::InsideEffect)
    }

    fn begin(role: Role) -> Tag {
        match role {
            Role::Cause => Tag::BeginCause,
            Role::Effect => Tag::BeginEffect,
        }
    }

    fn inside(role: Role) -> Tag {
        match role {
            Role::Cause => Tag::InsideCause,
            Role::Effect => Tag::InsideEffect,
        }
    }

    /// Whether `self` may directly follow `prev` (`None` = sentence start).
    pub fn may_follow(self, prev: Option<Tag>) -> bool {
        if !self.is_inside() {
            return true;
        }
        matches!((prev.and_then(Tag::role), self.role()), (Some(a), Some(b)) if a == b)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tag> {
        Tag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown tag {s:?}")))
    }
}

/// One tag per token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagSequence(pub Vec<Tag>);

impl TagSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.index()).collect()
    }

    /// First index whose tag breaks BIO well-formedness.
    pub fn first_violation(&self) -> Option<usize> {
        let mut prev = None;
        for (i, &tag) in self.0.iter().enumerate() {
            if !tag.may_follow(prev) {
                return Some(i);
            }
            prev = Some(tag);
        }
        None
    }

    pub fn is_valid(&self) -> bool {
        self.first_violation().is_none()
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|t| t.as_str()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// How `decode_bio` treats an `I-*` tag without a compatible predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Repair {
    Strict,
    /// Treat the orphaned `I-*` as `B-*`.
    Coerce,
}

pub fn encode_bio(sentence: &AnnotatedSentence) -> TagSequence {
    let mut tags = vec![Tag::O; sentence.tokens.len()];
    for (role, span) in sentence.role_spans() {
        tags[span.start] = Tag::begin(role);
        for tag in &mut tags[span.start + 1..span.end] {
            *tag = Tag::inside(role);
        }
    }
    TagSequence(tags)
}

/// Recovers `(cause_spans, effect_spans)` from a tag sequence.
pub fn decode_bio(tags: &[Tag], repair: Repair) -> Result<(Vec<Span>, Vec<Span>)> {
    let mut causes = Vec::new();
    let mut effects = Vec::new();
    let mut open: Option<(Role, usize)> = None;
    let mut prev: Option<Tag> = None;

    let mut close = |open: &mut Option<(Role, usize)>, end: usize| {
        if let Some((role, start)) = open.take() {
            let span = Span::new(start, end);
            match role {
                Role::Cause => causes.push(span),
                Role::Effect => effects.push(span),
            }
        }
    };

    for (i, &tag) in tags.iter().enumerate() {
        let orphan = !tag.may_follow(prev);
        if orphan && repair == Repair::Strict {
            return Err(Error::InvalidBio {
                index: i,
                message: format!(
                    "{tag} follows {}",
                    prev.map_or("sentence start", Tag::as_str)
                ),
            });
        }
        match (tag.role(), tag.is_inside() && !orphan) {
            (None, _) => close(&mut open, i),
            (Some(_), true) => {}
            (Some(role), false) => {
                close(&mut open, i);
                open = Some((role, i));
            }
        }
        prev = Some(tag);
    }
    close(&mut open, tags.len());
    Ok((causes, effects))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use Tag::*;

    fn sentence(len: usize, causes: Vec<Span>, effects: Vec<Span>) -> AnnotatedSentence {
        let tokens = (0..len).map(|i| format!("w{i}")).collect();
        AnnotatedSentence::new("s", tokens, causes, effects).unwrap()
    }

    #[test]
    fn encode_examples() {
        let s = sentence(4, vec![Span::new(0, 2)], vec![Span::new(3, 4)]);
        assert_eq!(
            encode_bio(&s).0,
            vec![BeginCause, InsideCause, O, BeginEffect]
        );

        let s = sentence(3, vec![], vec![]);
        assert_eq!(encode_bio(&s).0, vec![O, O, O]);

        let s = sentence(3, vec![Span::new(0, 1), Span::new(1, 2)], vec![]);
        assert_eq!(encode_bio(&s).0, vec![BeginCause, BeginCause, O]);
    }

    #[test]
    fn decode_examples() {
        let (c, e) =
            decode_bio(&[BeginCause, InsideCause, O, BeginEffect], Repair::Strict).unwrap();
        assert_eq!(c, vec![Span::new(0, 2)]);
        assert_eq!(e, vec![Span::new(3, 4)]);

        let (c, e) = decode_bio(&[InsideCause, O], Repair::Coerce).unwrap();
        assert_eq!(c, vec![Span::new(0, 1)]);
        assert!(e.is_empty());

        match decode_bio(&[InsideCause, O], Repair::Strict) {
            Err(Error::InvalidBio { index, .. }) => assert_eq!(index, 0),
            other => panic!("expected strict failure, got {other:?}"),
        }
    }

    #[test]
    fn strict_reports_first_offender() {
        match decode_bio(&[BeginCause, O, InsideEffect, InsideCause], Repair::Strict) {
            Err(Error::InvalidBio { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
        // I-E after I-C switches role: invalid.
        match decode_bio(&[BeginCause, InsideCause, InsideEffect], Repair::Strict) {
            Err(Error::InvalidBio { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    /// Independent statement of the repair rule for two tokens: each position
    /// opens a span unless it is I-X directly after a B-X/I-X.
    fn pair_oracle(a: Tag, b: Tag) -> (Vec<Span>, Vec<Span>) {
        let mut causes = vec![];
        let mut effects = vec![];
        let push = |role: Role, span: Span, c: &mut Vec<Span>, e: &mut Vec<Span>| match role {
            Role::Cause => c.push(span),
            Role::Effect => e.push(span),
        };
        let continues = b.is_inside() && a.role().is_some() && a.role() == b.role();
        match (a.role(), b.role()) {
            (Some(ra), _) if continues => push(ra, Span::new(0, 2), &mut causes, &mut effects),
            (ra, rb) => {
                if let Some(ra) = ra {
                    push(ra, Span::new(0, 1), &mut causes, &mut effects);
                }
                if let Some(rb) = rb {
                    push(rb, Span::new(1, 2), &mut causes, &mut effects);
                }
            }
        }
        (causes, effects)
    }

    #[test]
    fn coerce_matches_exhaustive_two_token_enumeration() {
        let mut strict_failures = 0;
        for a in Tag::ALL {
            for b in Tag::ALL {
                let got = decode_bio(&[a, b], Repair::Coerce).unwrap();
                assert_eq!(got, pair_oracle(a, b), "pair ({a}, {b})");
                let valid = b.may_follow(Some(a)) && a.may_follow(None);
                assert_eq!(
                    decode_bio(&[a, b], Repair::Strict).is_ok(),
                    valid,
                    "({a}, {b})"
                );
                if !valid {
                    strict_failures += 1;
                }
            }
        }
        // 10 pairs open with I-*; O/I-C, O/I-E, B-E/I-C, B-C/I-E are the other 4.
        assert_eq!(strict_failures, 14);
    }

    fn arb_sentence() -> impl Strategy<Value = AnnotatedSentence> {
        (1usize..30)
            .prop_flat_map(|len| (Just(len), proptest::collection::vec(0u8..4, len)))
            .prop_map(|(len, marks)| {
                // marks: 0 = O, 1 = start cause, 2 = start effect, 3 = continue current span
                let mut causes = vec![];
                let mut effects = vec![];
                let mut cur: Option<(Role, usize)> = None;
                let flush =
                    |cur: &mut Option<(Role, usize)>, end, c: &mut Vec<Span>, e: &mut Vec<Span>| {
                        if let Some((role, start)) = cur.take() {
                            match role {
                                Role::Cause => c.push(Span::new(start, end)),
                                Role::Effect => e.push(Span::new(start, end)),
                            }
                        }
                    };
                for (i, m) in marks.into_iter().enumerate() {
                    match m {
                        0 => flush(&mut cur, i, &mut causes, &mut effects),
                        1 | 2 => {
                            flush(&mut cur, i, &mut causes, &mut effects);
                            cur = Some((if m == 1 { Role::Cause } else { Role::Effect }, i));
                        }
                        _ => {}
                    }
                }
                flush(&mut cur, len, &mut causes, &mut effects);
                sentence(len, causes, effects)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn bio_round_trip(s in arb_sentence()) {
            let tags = encode_bio(&s);
            prop_assert_eq!(tags.len(), s.tokens.len());
            prop_assert!(tags.is_valid());
            let b_c = tags.0.iter().filter(|t| **t == BeginCause).count();
            let b_e = tags.0.iter().filter(|t| **t == BeginEffect).count();
            prop_assert_eq!(b_c, s.cause_spans.len());
            prop_assert_eq!(b_e, s.effect_spans.len());
            let (c, e) = decode_bio(&tags.0, Repair::Strict).unwrap();
            prop_assert_eq!(c, s.cause_spans.clone());
            prop_assert_eq!(e, s.effect_spans.clone());
        }

        #[test]
        fn coerce_output_is_always_valid(raw in proptest::collection::vec(0usize..5, 0..20)) {
            let tags: Vec<Tag> = raw.into_iter().map(|i| Tag::from_index(i).unwrap()).collect();
            let (c, e) = decode_bio(&tags, Repair::Coerce).unwrap();
            let s = sentence(tags.len(), c, e);
            let (c2, e2) = decode_bio(&encode_bio(&s).0, Repair::Strict).unwrap();
            prop_assert_eq!(c2, s.cause_spans);
            prop_assert_eq!(e2, s.effect_spans);
        }
    }
}
