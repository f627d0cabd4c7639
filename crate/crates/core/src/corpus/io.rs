//! JSONL (canonical) and CoNLL-TSV (import/export) corpus files.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bio::{decode_bio, encode_bio, Repair, Tag};
use super::{AnnotatedSentence, Role, Span};
use crate::error::{Error, RecordIssue, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    ConllTsv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "conll-tsv" | "conll" | "tsv" => Ok(CorpusFormat::ConllTsv),
            other => Err(Error::InvalidInput(format!(
                "unknown corpus format {other:?} (expected jsonl or conll-tsv)"
            ))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonSpan {
    role: Role,
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    id: String,
    tokens: Vec<String>,
    #[serde(default)]
    spans: Vec<JsonSpan>,
}

impl From<&AnnotatedSentence> for JsonRecord {
    fn from(s: &AnnotatedSentence) -> Self {
        JsonRecord {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            spans: s
                .role_spans()
                .map(|(role, span)| JsonSpan {
                    role,
                    start: span.start,
                    end: span.end,
                })
                .collect(),
        }
    }
}

impl From<JsonRecord> for AnnotatedSentence {
    fn from(r: JsonRecord) -> Self {
        let mut cause_spans = Vec::new();
        let mut effect_spans = Vec::new();
        for s in r.spans {
            let span = Span::new(s.start, s.end);
            match s.role {
                Role::Cause => cause_spans.push(span),
                Role::Effect => effect_spans.push(span),
            }
        }
        AnnotatedSentence {
            id: r.id,
            tokens: r.tokens,
            cause_spans,
            effect_spans,
        }
    }
}

/// Parsed sentences plus records rejected for violating span invariants.
type Lenient = (Vec<AnnotatedSentence>, Vec<RecordIssue>);

/// Parses JSONL text. Syntax errors abort; invariant violations are collected.
pub fn read_jsonl(text: &str) -> Result<Lenient> {
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let sentence = AnnotatedSentence::from(record);
        match sentence.validate() {
            Ok(()) => out.push(sentence),
            Err(reason) => issues.push(RecordIssue {
                line: line_no,
                id: Some(sentence.id),
                reason,
            }),
        }
    }
    Ok((out, issues))
}

/// Parses CoNLL-TSV text: `token<TAB>tag` per line, one blank line between
/// sentences. Sentence ids are `conll-<n>` (1-based).
pub fn read_conll(text: &str) -> Result<Lenient> {
    let mut out = Vec::new();
    let mut issues = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();
    let mut first_line = 0;

    let flush = |tokens: &mut Vec<String>,
                 tags: &mut Vec<Tag>,
                 first_line: usize,
                 out: &mut Vec<AnnotatedSentence>,
                 issues: &mut Vec<RecordIssue>| {
        if tokens.is_empty() {
            return;
        }
        let id = format!("conll-{}", out.len() + issues.len() + 1);
        match decode_bio(tags, Repair::Strict) {
            Ok((cause_spans, effect_spans)) => out.push(AnnotatedSentence {
                id,
                tokens: std::mem::take(tokens),
                cause_spans,
                effect_spans,
            }),
            Err(Error::InvalidBio { index, message }) => {
                issues.push(RecordIssue {
                    line: first_line + index,
                    id: Some(id),
                    reason: format!("invalid BIO: {message}"),
                });
                tokens.clear();
            }
            Err(other) => unreachable!("decode_bio only fails with InvalidBio: {other}"),
        }
        tags.clear();
    };

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, first_line, &mut out, &mut issues);
            continue;
        }
        let mut cols = line.split('\t');
        let (token, tag) = match (cols.next(), cols.next(), cols.next()) {
            (Some(tok), Some(tag), None) if !tok.is_empty() => (tok, tag.trim_end()),
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "expected two tab-separated columns: token, tag".into(),
                })
            }
        };
        let tag = Tag::from_str(tag).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if tokens.is_empty() {
            first_line = line_no;
        }
        tokens.push(token.to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags, first_line, &mut out, &mut issues);
    Ok((out, issues))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a corpus, returning valid sentences and a report of rejected records.
pub fn load_corpus_lenient(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Lenient> {
    let text = read_file(path.as_ref())?;
    match format {
        CorpusFormat::Jsonl => read_jsonl(&text),
        CorpusFormat::ConllTsv => read_conll(&text),
    }
}

/// Loads a corpus; any record violating span invariants fails the whole load
/// with the full report.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<AnnotatedSentence>> {
    let (sentences, issues) = load_corpus_lenient(path, format)?;
    if issues.is_empty() {
        Ok(sentences)
    } else {
        Err(Error::InvalidRecords(issues))
    }
}

pub fn write_jsonl<W: Write>(mut w: W, corpus: &[AnnotatedSentence]) -> Result<()> {
    for s in corpus {
        serde_json::to_writer(&mut w, &JsonRecord::from(s))?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn write_conll<W: Write>(mut w: W, corpus: &[AnnotatedSentence]) -> Result<()> {
    let io_err = |e| Error::io("<writer>", e);
    for (i, s) in corpus.iter().enumerate() {
        if i > 0 {
            writeln!(w).map_err(io_err)?;
        }
        for (token, tag) in s.tokens.iter().zip(encode_bio(s).0) {
            writeln!(w, "{token}\t{tag}").map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn write_corpus(
    path: impl AsRef<Path>,
    corpus: &[AnnotatedSentence],
    format: CorpusFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    match format {
        CorpusFormat::Jsonl => write_jsonl(&mut w, corpus)?,
        CorpusFormat::ConllTsv => write_conll(&mut w, corpus)?,
    }
    w.flush().map_err(|e| Error::io(path, e))
}
