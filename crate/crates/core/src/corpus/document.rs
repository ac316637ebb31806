use serde::{Deserialize, Serialize};

/// Half-open token range `[start, end)` within one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end, "empty span {start}..{end}");
        Self { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub span: Span,
    pub label: usize,
}

/// Directed relation from `head` to `tail`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub head: Span,
    pub tail: Span,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Argument {
    pub span: Span,
    pub role: usize,
}

/// An event anchored on a single trigger token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub trigger: usize,
    pub label: usize,
    pub arguments: Vec<Argument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    pub events: Vec<Event>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A span located in a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    pub sentence: usize,
    pub span: Span,
}

/// Model scores attached to predicted annotations, parallel to them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Confidences {
    pub ner: Vec<Vec<f64>>,
    pub relations: Vec<Vec<f64>>,
    pub triggers: Vec<Vec<f64>>,
    pub arguments: Vec<Vec<Vec<f64>>>,
}

/// A tokenized document with (possibly empty) annotations.
///
/// Offsets are sentence-local and half-open; labels are 1-based ids into a
/// [`LabelSchema`](super::LabelSchema).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub doc_key: String,
    pub sentences: Vec<Sentence>,
    pub clusters: Vec<Vec<Mention>>,
    pub confidences: Option<Confidences>,
}

impl Document {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Document-level offset of each sentence's first token.
    pub fn sentence_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.sentences.len());
        let mut acc = 0;
        for s in &self.sentences {
            starts.push(acc);
            acc += s.len();
        }
        starts
    }

    /// The same tokens with every annotation removed.
    pub fn without_annotations(&self) -> Document {
        Document {
            doc_key: self.doc_key.clone(),
            sentences: self
                .sentences
                .iter()
                .map(|s| Sentence {
                    tokens: s.tokens.clone(),
                    ..Sentence::default()
                })
                .collect(),
            clusters: Vec::new(),
            confidences: None,
        }
    }

    /// Widest gold span of any kind.
    pub fn max_gold_width(&self) -> usize {
        let mut w = 0;
        for s in &self.sentences {
            for e in &s.entities {
                w = w.max(e.span.width());
            }
            for r in &s.relations {
                w = w.max(r.head.width()).max(r.tail.width());
            }
            for ev in &s.events {
                for a in &ev.arguments {
                    w = w.max(a.span.width());
                }
            }
        }
        for c in &self.clusters {
            for m in c {
                w = w.max(m.span.width());
            }
        }
        w
    }
}
