//! Token encoders producing one `e`-wide row per input token.
//!
//! Two implementations share [`TokenEncoder`]: a trainable embedder whose
//! table is learned from scratch, and an adapter over externally pretrained
//! vectors with greedy word-piece fallback for out-of-vocabulary tokens. Both
//! wrap the sentence in `[CLS] … [SEP]`, add a sinusoidal position signal and
//! strip the markers before returning.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform, Matrix};
use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
const CONTINUATION: &str = "##";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    PretrainedAdapter,
    TrainableEmbedder,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::PretrainedAdapter => "pretrained-adapter",
            EncoderKind::TrainableEmbedder => "trainable-embedder",
        })
    }
}

/// Anything that maps a token sequence to an `l × e` matrix.
pub trait Encoder {
    fn width(&self) -> usize;
    fn kind(&self) -> EncoderKind;
    fn encode(&self, tokens: &[String]) -> Result<Matrix>;
}

/// Token inventory; the first three entries are always `[UNK]`, `[CLS]`, `[SEP]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Vocab::new(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary with the special markers first, then `tokens` in
    /// order with duplicates removed.
    pub fn new(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [UNK, CLS, SEP].into_iter().map(String::from).chain(tokens) {
            if !vocab.index.contains_key(&t) {
                vocab.index.insert(t.clone(), vocab.tokens.len());
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    /// Sorted, de-duplicated vocabulary over all tokens of `sentences`.
    pub fn from_corpus<'a>(sentences: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut all: Vec<String> = sentences.into_iter().flatten().cloned().collect();
        all.sort();
        all.dedup();
        Vocab::new(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk(&self) -> usize {
        0
    }

    /// Greedy longest-match word pieces; continuation pieces carry a `##` prefix.
    fn word_pieces(&self, token: &str) -> Option<Vec<usize>> {
        let chars: Vec<char> = token.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let body: String = chars[start..end].iter().collect();
                let candidate = if start == 0 {
                    body
                } else {
                    format!("{CONTINUATION}{body}")
                };
                if let Some(id) = self.get(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            let (id, end) = found?;
            pieces.push(id);
            start = end;
        }
        Some(pieces)
    }
}

/// Embedding vectors exported from a pretrained model.
///
/// Text format: a header line `<count> <dim>`, then one line per entry,
/// `<token> <v_1> … <v_dim>` separated by single spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbeddings {
    pub vocab: Vocab,
    pub table: Matrix,
}

impl PretrainedEmbeddings {
    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing `<count> <dim>` header".into(),
        })?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: 1,
                message: format!("bad header: {e}"),
            })?;
        let [count, dim] = nums[..] else {
            return Err(Error::Parse {
                line: 1,
                message: "header must be `<count> <dim>`".into(),
            });
        };
        let mut tokens: Vec<String> = Vec::with_capacity(count);
        let mut rows: Vec<f64> = Vec::with_capacity(count * dim);
        for (idx, line) in lines {
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default().to_string();
            let values: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: format!("bad vector value: {e}"),
                })?;
            if values.len() != dim || token.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected a token and {dim} values"),
                });
            }
            tokens.push(token);
            rows.extend(values);
        }
        if tokens.len() != count {
            return Err(Error::Parse {
                line: 1,
                message: format!("header declares {count} entries, found {}", tokens.len()),
            });
        }
        // Specials missing from the file get zero vectors.
        let vocab = Vocab::new(tokens.iter().cloned());
        let file_rows =
            Array2::from_shape_vec((count, dim), rows).map_err(|e| Error::Shape(e.to_string()))?;
        let mut table = Array2::zeros((vocab.len(), dim));
        for (i, t) in tokens.iter().enumerate() {
            let id = vocab.get(t).expect("token inserted above");
            table.row_mut(id).assign(&file_rows.row(i));
        }
        Ok(PretrainedEmbeddings { vocab, table })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<writer>", e);
        writeln!(w, "{} {}", self.vocab.len(), self.dim()).map_err(io)?;
        for (id, token) in self.vocab.tokens().iter().enumerate() {
            write!(w, "{token}").map_err(io)?;
            for v in self.table.row(id) {
                write!(w, " {v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Encoder configuration; the embedding table itself lives with the other
/// trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEncoder {
    pub kind: EncoderKind,
    pub vocab: Vocab,
    pub dim: usize,
    pub max_len: usize,
    pub position_scale: f64,
    /// Whether the table receives gradient updates.
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct EncodeCache {
    pieces: Vec<Vec<usize>>,
}

impl TokenEncoder {
    pub fn trainable(vocab: Vocab, dim: usize, max_len: usize, position_scale: f64) -> Self {
        TokenEncoder {
            kind: EncoderKind::TrainableEmbedder,
            vocab,
            dim,
            max_len,
            position_scale,
            trainable: true,
        }
    }

    pub fn pretrained(
        embeddings: &PretrainedEmbeddings,
        max_len: usize,
        position_scale: f64,
        fine_tune: bool,
    ) -> Self {
        TokenEncoder {
            kind: EncoderKind::PretrainedAdapter,
            vocab: embeddings.vocab.clone(),
            dim: embeddings.dim(),
            max_len,
            position_scale,
            trainable: fine_tune,
        }
    }

    /// Seeded table for the trainable embedder.
    pub fn init_table<R: Rng>(&self, rng: &mut R) -> Matrix {
        let mut table = uniform(rng, self.vocab.len(), self.dim, 0.5 * 3f64.sqrt());
        for special in 0..3 {
            table.row_mut(special).fill(0.0);
        }
        table
    }

    fn pieces(&self, token: &str) -> Vec<usize> {
        if let Some(id) = self.vocab.get(token) {
            return vec![id];
        }
        match self.kind {
            EncoderKind::PretrainedAdapter => self
                .vocab
                .word_pieces(token)
                .unwrap_or_else(|| vec![self.vocab.unk()]),
            EncoderKind::TrainableEmbedder => vec![self.vocab.unk()],
        }
    }

    /// Sinusoidal signal for sequence position `pos` (the `[CLS]` marker is position 0).
    pub fn position_signal(&self, pos: usize) -> impl Iterator<Item = f64> + '_ {
        let dim = self.dim;
        (0..dim).map(move |k| {
            let rate = 1.0 / 10000f64.powf((2 * (k / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            self.position_scale * if k % 2 == 0 { angle.sin() } else { angle.cos() }
        })
    }

    pub(crate) fn forward(
        &self,
        table: &Matrix,
        tokens: &[String],
    ) -> Result<(Matrix, EncodeCache)> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput(
                "cannot encode an empty sentence".into(),
            ));
        }
        if tokens.len() > self.max_len {
            return Err(Error::TooLong {
                len: tokens.len(),
                max: self.max_len,
            });
        }
        if table.dim() != (self.vocab.len(), self.dim) {
            return Err(Error::Shape(format!(
                "embedding table is {:?}, encoder expects ({}, {})",
                table.dim(),
                self.vocab.len(),
                self.dim
            )));
        }
        let mut pieces = Vec::with_capacity(tokens.len() + 2);
        pieces.push(vec![self.vocab.get(CLS).expect("special")]);
        pieces.extend(tokens.iter().map(|t| self.pieces(t)));
        pieces.push(vec![self.vocab.get(SEP).expect("special")]);

        let mut full = Array2::zeros((pieces.len(), self.dim));
        for (pos, ids) in pieces.iter().enumerate() {
            let mut row = full.row_mut(pos);
            let w = 1.0 / ids.len() as f64;
            for &id in ids {
                row.scaled_add(w, &table.row(id));
            }
            for (v, p) in row.iter_mut().zip(self.position_signal(pos)) {
                *v += p;
            }
        }
        let l = tokens.len();
        let h = full.slice(ndarray::s![1..=l, ..]).to_owned();
        pieces.pop();
        pieces.remove(0);
        Ok((h, EncodeCache { pieces }))
    }

    pub(crate) fn backward(&self, cache: &EncodeCache, d_h: &Matrix, d_table: &mut Matrix) {
        for (i, ids) in cache.pieces.iter().enumerate() {
            let w = 1.0 / ids.len() as f64;
            for &id in ids {
                d_table.row_mut(id).scaled_add(w, &d_h.row(i));
            }
        }
    }

    pub fn view<'a>(&'a self, table: &'a Matrix) -> EncoderView<'a> {
        EncoderView {
            encoder: self,
            table,
        }
    }
}

/// An encoder bound to its current embedding table.
#[derive(Debug, Clone, Copy)]
pub struct EncoderView<'a> {
    pub encoder: &'a TokenEncoder,
    pub table: &'a Matrix,
}

impl Encoder for EncoderView<'_> {
    fn width(&self) -> usize {
        self.encoder.dim
    }

    fn kind(&self) -> EncoderKind {
        self.encoder.kind
    }

    fn encode(&self, tokens: &[String]) -> Result<Matrix> {
        Ok(self.encoder.forward(self.table, tokens)?.0)
    }
}
