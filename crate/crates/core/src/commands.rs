//! The operations behind the `spangraph` binary: train, evaluate, predict,
//! inspect and synth. Each takes plain paths and returns a summary; the
//! binary only parses arguments and reports errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{generate_synthetic, Corpus, CorpusError, Mention, SyntheticConfig};
use crate::encoder::{EncoderError, EncoderKind, PrecomputedVectors};
use crate::engine::{restore_model, Checkpoint, EngineError, EpochRecord, TrainConfig, Trainer};
use crate::model::{predict_all, ModelConfig, ModelError, Node};
use crate::propagation::Mechanism;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
}

impl CommandError {
    /// Stable short name for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Corpus(_) => "corpus",
            Self::Engine(EngineError::SchemaMismatch) => "schema_mismatch",
            Self::Engine(EngineError::NonFinite { .. }) => "divergence",
            Self::Engine(EngineError::Checkpoint { .. }) => "checkpoint",
            Self::Engine(_) => "engine",
            Self::Model(_) => "model",
            Self::Encoder(_) => "encoder",
            Self::Io { .. } => "io",
            Self::Config(_) => "config",
            Self::Input(_) => "input",
        }
    }

    /// One-line JSON object, `{"error": {"kind": ..., "message": ...}}`.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

type Result<T> = std::result::Result<T, CommandError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// File locations a config may name; command-line paths take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    /// Precomputed token vectors, required when `model.encoder.kind` is
    /// `precomputed`.
    pub vectors: Option<PathBuf>,
    /// Checkpoint to continue training from.
    pub resume: Option<PathBuf>,
}

/// The whole experiment in one TOML file:
///
/// ```toml
/// [model]            # hidden, event_hidden, dropout
/// [model.encoder]    # kind, embed_dim, window, recurrent_contextualizer, recurrent_hidden
/// [model.spans]      # max_width, width_dim, dim, mention_ratio, trigger_ratio, max_antecedents
/// [model.propagation]  # coref, coref_iterations, relation, ..., event_iterations
/// [model.task_weights] # entity, relation, coref, trigger, argument
/// [train]            # lr, momentum, weight_decay, batch_size, halve_patience, max_epochs, ...
/// [synth]            # n_docs, vocab_size, seed, ambiguity_rate
/// [paths]            # train, dev, vectors, resume
/// ```
///
/// Every key is optional and unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SyntheticConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CommandError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io(path))?;
        Self::from_toml(&text).map_err(|e| CommandError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `--seed`, which drives both training and synthesis.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.synth.seed = s;
        }
        self
    }
}

fn load_vectors(path: Option<&Path>, kind: EncoderKind) -> Result<Option<PrecomputedVectors>> {
    match (kind, path) {
        (EncoderKind::Lookup, _) => Ok(None),
        (EncoderKind::Precomputed, Some(p)) => Ok(Some(PrecomputedVectors::read(p)?)),
        (EncoderKind::Precomputed, None) => Err(CommandError::Config(
            "the precomputed encoder needs a vectors file".into(),
        )),
    }
}

fn read_nonempty(path: &Path, schema: Option<&crate::corpus::LabelSchema>) -> Result<Corpus> {
    let corpus = Corpus::read(path, schema)?;
    if corpus.documents.is_empty() {
        return Err(CommandError::Input(format!("{}: no documents", path.display())));
    }
    Ok(corpus)
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub warnings: Vec<String>,
}

/// Trains on `train` with `dev` for the schedule and early stopping, and
/// writes the checkpoint, the per-epoch history (JSON lines) and the
/// effective config into `output`. The checkpoint is rewritten after every
/// epoch so an interrupted run can continue through `paths.resume`.
pub fn cmd_train(
    config: &RunConfig,
    train: Option<&Path>,
    dev: Option<&Path>,
    output: &Path,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    let pick = |flag: Option<&Path>, cfg: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| cfg.clone())
            .ok_or_else(|| CommandError::Config(format!("no {what} file given")))
    };
    let train_path = pick(train, &config.paths.train, "training")?;
    let dev_path = pick(dev, &config.paths.dev, "dev")?;
    let resume = config.paths.resume.as_ref().map(Checkpoint::load).transpose()?;

    let (train_corpus, dev_corpus) = match &resume {
        Some(ck) => (
            read_nonempty(&train_path, Some(&ck.header.schema))?,
            read_nonempty(&dev_path, Some(&ck.header.schema))?,
        ),
        None => {
            let mut both = Corpus::read_joint(&[&train_path, &dev_path])?;
            let dev = both.pop().expect("two corpora");
            let train = both.pop().expect("two corpora");
            for (c, p) in [(&train, &train_path), (&dev, &dev_path)] {
                if c.documents.is_empty() {
                    return Err(CommandError::Input(format!("{}: no documents", p.display())));
                }
            }
            (train, dev)
        }
    };
    let model_config = resume.as_ref().map_or(&config.model, |c| &c.header.model);
    let vectors = load_vectors(config.paths.vectors.as_deref(), model_config.encoder.kind)?;
    let warnings: Vec<String> = [&train_corpus, &dev_corpus]
        .into_iter()
        .filter_map(|c| c.width_warning(model_config.spans.max_width))
        .collect();

    let mut trainer = match &resume {
        Some(ck) => Trainer::resume(
            ck,
            &train_corpus.documents,
            &dev_corpus.documents,
            vectors.as_ref(),
        )?,
        None => Trainer::new(
            config.model.clone(),
            config.train.clone(),
            train_corpus.schema.clone(),
            &train_corpus.documents,
            &dev_corpus.documents,
            vectors.as_ref(),
        )?,
    };

    fs::create_dir_all(output).map_err(io(output))?;
    let config_path = output.join(CONFIG_FILE);
    fs::write(&config_path, config.to_toml()).map_err(io(&config_path))?;
    let checkpoint = output.join(CHECKPOINT_FILE);
    let history = output.join(HISTORY_FILE);
    let write_history = |records: &[EpochRecord]| -> Result<()> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).expect("record serializes"));
            text.push('\n');
        }
        fs::write(&history, text).map_err(io(&history))
    };

    while !trainer.finished() {
        let record = trainer.run_epoch()?;
        trainer.checkpoint().save(&checkpoint)?;
        write_history(&trainer.state.history)?;
        on_epoch(&record);
    }
    trainer.checkpoint().save(&checkpoint)?;
    write_history(&trainer.state.history)?;
    Ok(TrainSummary {
        checkpoint,
        history,
        epochs: trainer.state.epoch,
        best_epoch: trainer.state.best_epoch,
        warnings,
    })
}

fn load_for_input(checkpoint: &Path, input: &Path) -> Result<(Checkpoint, Corpus)> {
    let ck = Checkpoint::load(checkpoint)?;
    let corpus = read_nonempty(input, Some(&ck.header.schema))?;
    Ok((ck, corpus))
}

/// Scores the checkpoint's best parameters on a gold corpus and returns
/// the metrics object (one entry per enabled task).
pub fn cmd_evaluate(checkpoint: &Path, test: &Path, vectors: Option<&Path>) -> Result<serde_json::Value> {
    let (ck, corpus) = load_for_input(checkpoint, test)?;
    let (model, store) = restore_model(&ck, true)?;
    let vectors = load_vectors(vectors, model.config.encoder.kind)?;
    let (ev, _) = crate::engine::evaluate_corpus(&model, &store, &corpus.documents, vectors.as_ref())?;
    Ok(ev.to_json())
}

/// Writes predictions for `input` as jsonl in the gold annotation format,
/// with per-candidate softmax confidences.
pub fn cmd_predict(checkpoint: &Path, input: &Path, output: &Path, vectors: Option<&Path>) -> Result<usize> {
    let (ck, corpus) = load_for_input(checkpoint, input)?;
    let (model, store) = restore_model(&ck, true)?;
    let vectors = load_vectors(vectors, model.config.encoder.kind)?;
    let preds = predict_all(&model, &store, &corpus.documents, vectors.as_ref())?;
    let out = Corpus {
        schema: corpus.schema,
        documents: preds.into_iter().map(|p| p.document).collect(),
    };
    out.write(output)?;
    Ok(out.documents.len())
}

/// One exported propagation edge.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRow {
    pub doc_key: String,
    pub iteration: usize,
    pub source: String,
    pub target: String,
    pub strength: f64,
}

/// `sentence:start-end` for spans (end exclusive), `sentence:token` for
/// trigger tokens.
pub fn node_label(node: &Node) -> String {
    match node {
        Node::Span(Mention { sentence, span }) => format!("{sentence}:{}-{}", span.start, span.end),
        Node::Token { sentence, token } => format!("{sentence}:{token}"),
    }
}

pub fn links_csv(rows: &[LinkRow]) -> String {
    let mut out = String::from("doc_key,source,target,iteration,strength\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.doc_key),
            r.source,
            r.target,
            r.iteration,
            r.strength
        )
        .expect("string write");
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Directed graph with one cluster per document; edge width and color
/// scale with strength relative to the strongest edge.
pub fn links_dot(rows: &[LinkRow], mechanism: Mechanism) -> String {
    let max = rows.iter().map(|r| r.strength).fold(0.0, f64::max);
    let mut out = format!("digraph {} {{\n  node [shape=box];\n", mechanism.name());
    let mut docs: Vec<&str> = rows.iter().map(|r| r.doc_key.as_str()).collect();
    docs.dedup();
    for (k, doc) in docs.iter().enumerate() {
        writeln!(out, "  subgraph cluster_{k} {{\n    label={doc:?};").expect("string write");
        for r in rows.iter().filter(|r| r.doc_key == *doc) {
            let rel = if max > 0.0 { r.strength / max } else { 0.0 };
            writeln!(
                out,
                "    \"{doc}/{}\" -> \"{doc}/{}\" [label=\"{:.3} (t={})\", penwidth={:.2}, color=\"0.0 {:.3} 1.0\"];",
                r.source,
                r.target,
                r.strength,
                r.iteration,
                0.5 + 3.5 * rel,
                rel
            )
            .expect("string write");
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectSummary {
    pub csv: PathBuf,
    pub dot: PathBuf,
    pub rows: usize,
}

/// Exports the link strengths `mechanism` computed on `input`: coref rows
/// are antecedent softmax weights, relation and event rows the L1 norm of
/// the rectified label scores.
pub fn cmd_inspect(
    checkpoint: &Path,
    input: &Path,
    mechanism: Mechanism,
    output: &Path,
    vectors: Option<&Path>,
) -> Result<InspectSummary> {
    let (ck, corpus) = load_for_input(checkpoint, input)?;
    if !ck.header.model.propagation.enabled(mechanism) {
        return Err(CommandError::Config(format!(
            "{} propagation is not enabled in this checkpoint",
            mechanism.name()
        )));
    }
    let (model, store) = restore_model(&ck, true)?;
    let vectors = load_vectors(vectors, model.config.encoder.kind)?;
    let mut rows = Vec::new();
    for doc in &corpus.documents {
        let pred = model.predict(&store, doc, vectors.as_ref())?;
        rows.extend(
            pred.links
                .iter()
                .filter(|l| l.mechanism == mechanism)
                .map(|l| LinkRow {
                    doc_key: doc.doc_key.clone(),
                    iteration: l.iteration,
                    source: node_label(&l.source),
                    target: node_label(&l.target),
                    strength: l.strength,
                }),
        );
    }
    fs::create_dir_all(output).map_err(io(output))?;
    let csv = output.join(format!("{}_links.csv", mechanism.name()));
    let dot = output.join(format!("{}_links.dot", mechanism.name()));
    fs::write(&csv, links_csv(&rows)).map_err(io(&csv))?;
    fs::write(&dot, links_dot(&rows, mechanism)).map_err(io(&dot))?;
    Ok(InspectSummary {
        csv,
        dot,
        rows: rows.len(),
    })
}

/// Writes `train`, `dev` and `test` splits (seeds `s`, `s+1`, `s+2`) with
/// their metadata into `output`.
pub fn cmd_synth(config: &SyntheticConfig, output: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(output).map_err(io(output))?;
    let mut written = Vec::new();
    for (k, stem) in ["train", "dev", "test"].into_iter().enumerate() {
        let split = SyntheticConfig {
            seed: config.seed.wrapping_add(k as u64),
            ..config.clone()
        };
        generate_synthetic(&split)?.write(output, stem)?;
        written.push(output.join(format!("{stem}.jsonl")));
    }
    Ok(written)
}
