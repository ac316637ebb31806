//! The on-disk jsonl format: one document per line, document-level token
//! offsets, inclusive span ends.
//!
//! ```text
//! {"doc_key": "d1",
//!  "sentences": [["Alice", "visited", "Paris"]],
//!  "ner": [[[0, 0, "PER"], [2, 2, "LOC"]]],
//!  "relations": [[[0, 0, 2, 2, "LOCATED_IN"]]],
//!  "clusters": [[[0, 0], [5, 5]]],
//!  "events": [[[[1, "TRAVEL"], [0, 0, "AGENT"], [2, 2, "DESTINATION"]]]]}
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Argument, Confidences, CorpusError, Document, Entity, Event, LabelKind, LabelSchema, Mention, Relation,
    Sentence, Span,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum EventPart {
    Trigger(usize, String),
    Argument(usize, usize, String),
}

type RawEvent = Vec<EventPart>;
/// Head start, head end, tail start, tail end (inclusive), label.
type RawRelation = (usize, usize, usize, usize, String);

/// Serde mirror of one jsonl record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_key: String,
    pub sentences: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ner: Option<Vec<Vec<(usize, usize, String)>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relations: Option<Vec<Vec<RawRelation>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clusters: Option<Vec<Vec<(usize, usize)>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    events: Option<Vec<Vec<RawEvent>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidences: Option<Confidences>,
}

struct Converter<'a> {
    doc_key: &'a str,
    starts: Vec<usize>,
    lens: Vec<usize>,
    schema: &'a LabelSchema,
}

impl Converter<'_> {
    fn err(&self, field: &str, msg: String) -> CorpusError {
        CorpusError::Invalid {
            doc_key: self.doc_key.to_string(),
            field: field.to_string(),
            msg,
        }
    }

    /// Inclusive document offsets → sentence-local half-open span, which
    /// must lie in `sentence`.
    fn local(&self, field: &str, sentence: usize, start: usize, end: usize) -> Result<Span, CorpusError> {
        let lo = self.starts[sentence];
        let hi = lo + self.lens[sentence];
        if start > end {
            return Err(self.err(field, format!("span [{start}, {end}] has start after end")));
        }
        if start < lo || end >= hi {
            return Err(self.err(
                field,
                format!("span [{start}, {end}] outside sentence {sentence} (tokens {lo}..{hi})"),
            ));
        }
        Ok(Span::new(start - lo, end + 1 - lo))
    }

    /// Sentence holding document offset `tok`.
    fn sentence_of(&self, tok: usize) -> Option<usize> {
        (0..self.starts.len()).find(|&s| tok >= self.starts[s] && tok < self.starts[s] + self.lens[s])
    }

    fn label(&self, field: &str, kind: LabelKind, label: &str) -> Result<usize, CorpusError> {
        self.schema
            .id(kind, label)
            .ok_or_else(|| self.err(field, format!("unknown {kind} label {label:?}")))
    }

    fn per_sentence<T>(&self, field: &str, lists: &Option<Vec<Vec<T>>>) -> Result<(), CorpusError> {
        match lists {
            Some(l) if l.len() != self.lens.len() => Err(self.err(
                field,
                format!("{} per-sentence lists for {} sentences", l.len(), self.lens.len()),
            )),
            _ => Ok(()),
        }
    }
}

impl RawDocument {
    /// Validates against `schema` and converts to sentence-local offsets.
    pub fn into_document(self, schema: &LabelSchema) -> Result<Document, CorpusError> {
        let lens: Vec<usize> = self.sentences.iter().map(Vec::len).collect();
        let mut starts = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &l in &lens {
            starts.push(acc);
            acc += l;
        }
        let cv = Converter {
            doc_key: &self.doc_key,
            starts,
            lens,
            schema,
        };
        if let Some(i) = cv.lens.iter().position(|&l| l == 0) {
            return Err(cv.err("sentences", format!("sentence {i} is empty")));
        }
        cv.per_sentence("ner", &self.ner)?;
        cv.per_sentence("relations", &self.relations)?;
        cv.per_sentence("events", &self.events)?;

        let mut sentences: Vec<Sentence> = self
            .sentences
            .iter()
            .map(|t| Sentence {
                tokens: t.clone(),
                ..Sentence::default()
            })
            .collect();

        if let Some(ner) = &self.ner {
            for (si, list) in ner.iter().enumerate() {
                for (s, e, label) in list {
                    let span = cv.local("ner", si, *s, *e)?;
                    let label = cv.label("ner", LabelKind::Entity, label)?;
                    sentences[si].entities.push(Entity { span, label });
                }
            }
        }
        if let Some(rels) = &self.relations {
            for (si, list) in rels.iter().enumerate() {
                for (s1, e1, s2, e2, label) in list {
                    let head = cv.local("relations", si, *s1, *e1)?;
                    let tail = cv.local("relations", si, *s2, *e2)?;
                    let label = cv.label("relations", LabelKind::Relation, label)?;
                    sentences[si].relations.push(Relation { head, tail, label });
                }
            }
        }
        if let Some(events) = &self.events {
            for (si, list) in events.iter().enumerate() {
                for raw in list {
                    let (trigger, label) = match raw.first() {
                        Some(EventPart::Trigger(t, l)) => (*t, l),
                        _ => {
                            return Err(
                                cv.err("events", "event must start with a [token, type] trigger".into())
                            )
                        }
                    };
                    let trig = cv.local("events", si, trigger, trigger)?;
                    let label = cv.label("events", LabelKind::Trigger, label)?;
                    let mut arguments = Vec::new();
                    for part in &raw[1..] {
                        match part {
                            EventPart::Argument(s, e, role) => {
                                let span = cv.local("events", si, *s, *e)?;
                                let role = cv.label("events", LabelKind::ArgumentRole, role)?;
                                arguments.push(Argument { span, role });
                            }
                            EventPart::Trigger(..) => {
                                return Err(cv.err("events", "event has two triggers".into()))
                            }
                        }
                    }
                    sentences[si].events.push(Event {
                        trigger: trig.start,
                        label,
                        arguments,
                    });
                }
            }
        }
        let mut clusters = Vec::new();
        if let Some(raw_clusters) = &self.clusters {
            for cluster in raw_clusters {
                let mut c = Vec::with_capacity(cluster.len());
                for &(s, e) in cluster {
                    let si = cv
                        .sentence_of(s)
                        .ok_or_else(|| cv.err("clusters", format!("offset {s} outside the document")))?;
                    let span = cv.local("clusters", si, s, e)?;
                    c.push(Mention { sentence: si, span });
                }
                clusters.push(c);
            }
        }
        if let Some(conf) = &self.confidences {
            cv.per_sentence("confidences.ner", &Some(conf.ner.clone()))?;
        }
        Ok(Document {
            doc_key: self.doc_key,
            sentences,
            clusters,
            confidences: self.confidences,
        })
    }

    pub fn from_document(doc: &Document, schema: &LabelSchema) -> Self {
        let starts = doc.sentence_starts();
        let abs = |si: usize, sp: Span| (starts[si] + sp.start, starts[si] + sp.end - 1);
        let mut ner = Vec::new();
        let mut relations = Vec::new();
        let mut events = Vec::new();
        for (si, s) in doc.sentences.iter().enumerate() {
            ner.push(
                s.entities
                    .iter()
                    .map(|e| {
                        let (a, b) = abs(si, e.span);
                        (a, b, schema.name(LabelKind::Entity, e.label).to_string())
                    })
                    .collect(),
            );
            relations.push(
                s.relations
                    .iter()
                    .map(|r| {
                        let (a, b) = abs(si, r.head);
                        let (c, d) = abs(si, r.tail);
                        (a, b, c, d, schema.name(LabelKind::Relation, r.label).to_string())
                    })
                    .collect(),
            );
            events.push(
                s.events
                    .iter()
                    .map(|ev| {
                        let mut parts = vec![EventPart::Trigger(
                            starts[si] + ev.trigger,
                            schema.name(LabelKind::Trigger, ev.label).to_string(),
                        )];
                        for a in &ev.arguments {
                            let (x, y) = abs(si, a.span);
                            parts.push(EventPart::Argument(
                                x,
                                y,
                                schema.name(LabelKind::ArgumentRole, a.role).to_string(),
                            ));
                        }
                        parts
                    })
                    .collect(),
            );
        }
        let clusters = doc
            .clusters
            .iter()
            .map(|c| c.iter().map(|m| abs(m.sentence, m.span)).collect())
            .collect();
        RawDocument {
            doc_key: doc.doc_key.clone(),
            sentences: doc.sentences.iter().map(|s| s.tokens.clone()).collect(),
            ner: Some(ner),
            relations: Some(relations),
            clusters: Some(clusters),
            events: Some(events),
            confidences: doc.confidences.clone(),
        }
    }

    fn collect_labels(&self, into: &mut [BTreeSet<String>; 4]) {
        for l in self.ner.iter().flatten().flatten() {
            into[0].insert(l.2.clone());
        }
        for r in self.relations.iter().flatten().flatten() {
            into[1].insert(r.4.clone());
        }
        for ev in self.events.iter().flatten().flatten() {
            for part in ev {
                match part {
                    EventPart::Trigger(_, l) => into[2].insert(l.clone()),
                    EventPart::Argument(_, _, r) => into[3].insert(r.clone()),
                };
            }
        }
    }
}

fn parse_raw(line: &str, line_no: usize) -> Result<RawDocument, CorpusError> {
    serde_json::from_str(line).map_err(|source| CorpusError::Json {
        line: line_no,
        source,
    })
}

/// Parses and validates one jsonl record.
pub fn parse_document(line: &str, schema: &LabelSchema) -> Result<Document, CorpusError> {
    parse_raw(line, 1)?.into_document(schema)
}

/// One jsonl line (no trailing newline).
pub fn serialize_document(doc: &Document, schema: &LabelSchema) -> String {
    serde_json::to_string(&RawDocument::from_document(doc, schema)).expect("serializable")
}

/// Schema holding every label seen in `docs`, sorted.
pub fn infer_schema<'a>(docs: impl IntoIterator<Item = &'a RawDocument>) -> Result<LabelSchema, CorpusError> {
    let mut sets: [BTreeSet<String>; 4] = Default::default();
    for d in docs {
        d.collect_labels(&mut sets);
    }
    let [e, r, t, a] = sets;
    LabelSchema::new(
        e.into_iter().collect(),
        r.into_iter().collect(),
        t.into_iter().collect(),
        a.into_iter().collect(),
    )
}

fn read_raw(path: &Path) -> Result<Vec<RawDocument>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut raws = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        raws.push(parse_raw(&line, i + 1)?);
    }
    Ok(raws)
}

/// Documents sharing one [`LabelSchema`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub schema: LabelSchema,
    pub documents: Vec<Document>,
}

impl Corpus {
    /// Reads a jsonl file. Without a schema, the schema is inferred from the
    /// file's own labels.
    pub fn read(path: impl AsRef<Path>, schema: Option<&LabelSchema>) -> Result<Self, CorpusError> {
        let raws = read_raw(path.as_ref())?;
        let schema = match schema {
            Some(s) => s.clone(),
            None => infer_schema(&raws)?,
        };
        Self::from_raw(raws, schema)
    }

    /// Reads several files under one schema inferred from all of them, so
    /// a label that only occurs in, say, the dev split is still known.
    pub fn read_joint(paths: &[&Path]) -> Result<Vec<Self>, CorpusError> {
        let raws = paths.iter().map(|p| read_raw(p)).collect::<Result<Vec<_>, _>>()?;
        let schema = infer_schema(raws.iter().flatten())?;
        raws.into_iter()
            .map(|r| Self::from_raw(r, schema.clone()))
            .collect()
    }

    fn from_raw(raws: Vec<RawDocument>, schema: LabelSchema) -> Result<Self, CorpusError> {
        let documents = raws
            .into_iter()
            .map(|r| r.into_document(&schema))
            .collect::<Result<_, _>>()?;
        Ok(Self { schema, documents })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for d in &self.documents {
            writeln!(w, "{}", serialize_document(d, &self.schema)).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serialize_document(d, &self.schema));
            out.push('\n');
        }
        out
    }

    pub fn max_gold_width(&self) -> usize {
        self.documents
            .iter()
            .map(Document::max_gold_width)
            .max()
            .unwrap_or(0)
    }

    /// Warning text when some gold span is wider than `max_width` and can
    /// never be enumerated.
    pub fn width_warning(&self, max_width: usize) -> Option<String> {
        let w = self.max_gold_width();
        (w > max_width).then(|| {
            format!("gold spans up to width {w} exceed max span width {max_width}; they cannot be predicted")
        })
    }

    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }
}
