//! Documents, label inventories, jsonl ingestion and synthetic corpora.

mod document;
mod jsonl;
mod schema;
pub mod synthetic;

use thiserror::Error;

pub use document::{Argument, Confidences, Document, Entity, Event, Mention, Relation, Sentence, Span};
pub use jsonl::{infer_schema, parse_document, serialize_document, Corpus, RawDocument};
pub use schema::{LabelKind, LabelSchema, NULL_LABEL};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticCorpus, SyntheticMetadata};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("document {doc_key:?}, field {field}: {msg}")]
    Invalid {
        doc_key: String,
        field: String,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("label schema: {0}")]
    Schema(String),
    #[error("synthetic config: {0}")]
    Config(String),
}
