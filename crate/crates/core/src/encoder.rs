//! Token encoders with a sliding window of neighbouring sentences.
//!
//! Base vectors come from a trainable lookup table or from a precomputed
//! vector file. With the recurrent contextualizer enabled, each sentence is
//! encoded by running a bidirectional LSTM over the concatenation of
//! sentences `[i − L, i + L]` (truncated at document edges) and keeping the
//! rows of sentence `i`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::tensor::nn::{BiLstm, Embedding};
use crate::tensor::{Graph, Matrix, ParamStore, TensorError, Var};

pub const VECTOR_MAGIC: &[u8; 4] = b"SPGV";
pub const VECTOR_VERSION: u32 = 1;
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("missing precomputed vectors for {} tokens, first: {}", .0.len(), fmt_missing(.0))]
    MissingVectors(Vec<(String, usize, usize)>),
    #[error("precomputed encoder used without a vector table")]
    NoVectors,
    #[error("vector file {path}: {msg}")]
    VectorFile { path: String, msg: String },
    #[error("vector dimension {found} does not match configured {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn fmt_missing(m: &[(String, usize, usize)]) -> String {
    m.iter()
        .take(5)
        .map(|(d, s, t)| format!("({d}, {s}, {t})"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Lookup,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Token vector width `d_tok`.
    pub embed_dim: usize,
    /// Sentences of context on each side.
    pub window: usize,
    pub recurrent_contextualizer: bool,
    pub recurrent_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Lookup,
            embed_dim: 32,
            window: 0,
            recurrent_contextualizer: false,
            recurrent_hidden: 32,
        }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        if self.recurrent_contextualizer {
            2 * self.recurrent_hidden
        } else {
            self.embed_dim
        }
    }
}

/// Token strings to lookup rows; row 0 is the UNK row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut tokens = vec![UNK.to_string()];
        let mut index = HashMap::new();
        index.insert(UNK.to_string(), 0);
        for d in docs {
            for s in &d.sentences {
                for t in &s.tokens {
                    if !index.contains_key(t) {
                        index.insert(t.clone(), tokens.len());
                        tokens.push(t.clone());
                    }
                }
            }
        }
        Self { tokens, index }
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }
}

/// Precomputed token vectors keyed by `(doc_key, sentence, token)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecomputedVectors {
    pub dim: usize,
    vectors: HashMap<(String, usize, usize), Vec<f64>>,
}

impl PrecomputedVectors {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, doc_key: &str, sentence: usize, token: usize, v: Vec<f64>) {
        assert_eq!(v.len(), self.dim, "vector width");
        self.vectors.insert((doc_key.to_string(), sentence, token), v);
    }

    pub fn get(&self, doc_key: &str, sentence: usize, token: usize) -> Option<&[f64]> {
        self.vectors
            .get(&(doc_key.to_string(), sentence, token))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Binary layout, little endian: magic `SPGV`, `u32` version, `u32`
    /// width, then per record `u32` key length, key bytes, `u32` sentence,
    /// `u32` token and `width` × `f32`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        let path = path.as_ref();
        let err = |e: std::io::Error| EncoderError::VectorFile {
            path: path.display().to_string(),
            msg: e.to_string(),
        };
        let mut w = BufWriter::new(File::create(path).map_err(err)?);
        w.write_all(VECTOR_MAGIC).map_err(err)?;
        w.write_all(&VECTOR_VERSION.to_le_bytes()).map_err(err)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(err)?;
        let mut keys: Vec<_> = self.vectors.keys().collect();
        keys.sort();
        for key in keys {
            let (doc, s, t) = key;
            w.write_all(&(doc.len() as u32).to_le_bytes()).map_err(err)?;
            w.write_all(doc.as_bytes()).map_err(err)?;
            w.write_all(&(*s as u32).to_le_bytes()).map_err(err)?;
            w.write_all(&(*t as u32).to_le_bytes()).map_err(err)?;
            for &x in &self.vectors[key] {
                w.write_all(&(x as f32).to_le_bytes()).map_err(err)?;
            }
        }
        w.flush().map_err(err)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let path = path.as_ref();
        let bad = |msg: String| EncoderError::VectorFile {
            path: path.display().to_string(),
            msg,
        };
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
            .map_err(|e| bad(e.to_string()))?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(4).ok_or_else(|| bad("truncated header".into()))? != VECTOR_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = cur.u32().ok_or_else(|| bad("truncated header".into()))?;
        if version != VECTOR_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dim = cur.u32().ok_or_else(|| bad("truncated header".into()))? as usize;
        let mut out = Self::new(dim);
        while cur.pos < bytes.len() {
            let rec = (|| {
                let klen = cur.u32()? as usize;
                let key = String::from_utf8(cur.take(klen)?.to_vec()).ok()?;
                let s = cur.u32()? as usize;
                let t = cur.u32()? as usize;
                let mut v = Vec::with_capacity(dim);
                for _ in 0..dim {
                    let b = cur.take(4)?;
                    v.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
                }
                Some((key, s, t, v))
            })()
            .ok_or_else(|| bad(format!("corrupt record at byte {}", cur.pos)))?;
            out.vectors.insert((rec.0, rec.1, rec.2), rec.3);
        }
        Ok(out)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        let b = self.take(4)?;
        Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub embedding: Option<Embedding>,
    pub contextualizer: Option<BiLstm>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, vocab: Vocab, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let embedding = (config.kind == EncoderKind::Lookup)
            .then(|| Embedding::new(store, "encoder.embedding", vocab.len(), config.embed_dim, rng));
        let contextualizer = config.recurrent_contextualizer.then(|| {
            BiLstm::new(
                store,
                "encoder.lstm",
                config.embed_dim,
                config.recurrent_hidden,
                rng,
            )
        });
        Self {
            config,
            vocab,
            embedding,
            contextualizer,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn base_vectors(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        vectors: Option<&PrecomputedVectors>,
    ) -> Result<Vec<Var>, EncoderError> {
        match self.config.kind {
            EncoderKind::Lookup => {
                let emb = self.embedding.as_ref().expect("lookup encoder has a table");
                doc.sentences
                    .iter()
                    .map(|s| {
                        let ids = s.tokens.iter().map(|t| self.vocab.id(t)).collect();
                        Ok(emb.lookup(g, ids)?)
                    })
                    .collect()
            }
            EncoderKind::Precomputed => {
                let table = vectors.ok_or(EncoderError::NoVectors)?;
                if table.dim != self.config.embed_dim {
                    return Err(EncoderError::Dimension {
                        expected: self.config.embed_dim,
                        found: table.dim,
                    });
                }
                let mut missing = Vec::new();
                let mut out = Vec::with_capacity(doc.sentences.len());
                for (si, s) in doc.sentences.iter().enumerate() {
                    let mut m = Matrix::zeros((s.len(), table.dim));
                    for ti in 0..s.len() {
                        match table.get(&doc.doc_key, si, ti) {
                            Some(v) => m.row_mut(ti).iter_mut().zip(v).for_each(|(a, b)| *a = *b),
                            None => missing.push((doc.doc_key.clone(), si, ti)),
                        }
                    }
                    out.push(g.constant(m));
                }
                if !missing.is_empty() {
                    return Err(EncoderError::MissingVectors(missing));
                }
                Ok(out)
            }
        }
    }

    /// One `n_tokens × output_dim` matrix per sentence.
    pub fn encode_tokens(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        vectors: Option<&PrecomputedVectors>,
    ) -> Result<Vec<Var>, EncoderError> {
        let base = self.base_vectors(g, doc, vectors)?;
        let Some(lstm) = &self.contextualizer else {
            return Ok(base);
        };
        let n = base.len();
        let l = self.config.window;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let lo = i.saturating_sub(l);
            let hi = (i + l).min(n - 1);
            let window = g.concat_rows(&base[lo..=hi])?;
            let offset: usize = doc.sentences[lo..i].iter().map(|s| s.len()).sum();
            let ctx = lstm.run(g, window)?;
            let rows = (offset..offset + doc.sentences[i].len()).collect();
            out.push(g.gather_rows(ctx, rows)?);
        }
        Ok(out)
    }
}
