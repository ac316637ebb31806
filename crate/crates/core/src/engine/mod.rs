//! Joint training: batching, SGD with momentum, the plateau schedule, dev
//! evaluation, early stopping and checkpoints.

mod checkpoint;
mod optim;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    Checkpoint, CheckpointHeader, BEST_PREFIX, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, PARAM_PREFIX,
    VELOCITY_PREFIX,
};
pub use optim::{clip_scale, PlateauHalving, Sgd};

use crate::corpus::{Document, LabelSchema};
use crate::encoder::{EncoderKind, PrecomputedVectors, Vocab};
use crate::metrics::{Evaluation, Score};
use crate::model::{Model, ModelConfig, ModelError, Prediction};
use crate::tensor::{Graph, Matrix, ParamStore};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (documents {docs:?})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        docs: Vec<String>,
    },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("checkpoint label schema differs from the corpus schema")]
    SchemaMismatch,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training config: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Sentences per batch; whole documents are packed until reaching it.
    pub batch_size: usize,
    /// Epochs without dev F1 improvement before the learning rate halves.
    pub halve_patience: usize,
    pub max_epochs: usize,
    /// Epochs without dev loss improvement before stopping; 0 disables.
    pub early_stopping_patience: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-6,
            batch_size: 15,
            halve_patience: 3,
            max_epochs: 100,
            early_stopping_patience: 20,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.halve_patience > 0
            && self.grad_clip >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(EngineError::Config(format!(
                "invalid training settings: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub batch_losses: Vec<f64>,
    pub dev_loss: Option<f64>,
    pub dev_f1: Option<f64>,
    pub dev_metrics: Option<BTreeMap<String, Score>>,
}

/// Everything besides tensors needed to resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub scheduler: PlateauHalving,
    pub best_dev_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_best: usize,
    pub history: Vec<EpochRecord>,
}

/// Document batches for one epoch: a seeded shuffle, then documents packed
/// in order until each batch holds at least `batch_size` sentences.
pub fn make_batches(docs: &[Document], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut sentences = 0;
    for i in order {
        cur.push(i);
        sentences += docs[i].sentences.len();
        if sentences >= batch_size {
            out.push(std::mem::take(&mut cur));
            sentences = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Mean per-sentence loss over `docs` with dropout off.
pub fn corpus_loss(
    model: &Model,
    store: &ParamStore,
    docs: &[Document],
    vectors: Option<&PrecomputedVectors>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut sentences = 0;
    for d in docs {
        let mut g = Graph::new(store);
        let l = model.document_loss(&mut g, d, vectors)?;
        total += g.scalar(l);
        sentences += d.sentences.len();
    }
    Ok(total / sentences.max(1) as f64)
}

/// Predicts every document and scores the predictions against them.
pub fn evaluate_corpus(
    model: &Model,
    store: &ParamStore,
    docs: &[Document],
    vectors: Option<&PrecomputedVectors>,
) -> Result<(Evaluation, Vec<Prediction>)> {
    let mut ev = Evaluation::new(&model.tasks());
    let mut preds = Vec::with_capacity(docs.len());
    for d in docs {
        let p = model.predict(store, d, vectors)?;
        ev.add(&p.document, d);
        preds.push(p);
    }
    Ok((ev, preds))
}

/// Rebuilds a model from a checkpoint, taking the best-dev-loss parameters
/// when `best` is set and they are present.
pub fn restore_model(ck: &Checkpoint, best: bool) -> Result<(Model, ParamStore)> {
    let h = &ck.header;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::new(
        h.model.clone(),
        h.schema.clone(),
        h.vocab.clone(),
        &mut store,
        &mut rng,
    )?;
    let use_best = best && ck.tensors.iter().any(|(n, _)| n.starts_with(BEST_PREFIX));
    let prefix = if use_best { BEST_PREFIX } else { PARAM_PREFIX };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = format!("{prefix}{}", store.name(id));
        let m = ck.tensor(&name).ok_or_else(|| EngineError::Checkpoint {
            path: String::new(),
            msg: format!("missing tensor {name}"),
        })?;
        if m.dim() != store.value(id).dim() {
            return Err(EngineError::Checkpoint {
                path: String::new(),
                msg: format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    m.dim(),
                    store.value(id).dim()
                ),
            });
        }
        store.value_mut(id).assign(m);
    }
    Ok((model, store))
}

/// Training session over fixed train and dev corpora.
pub struct Trainer<'a> {
    pub model: Model,
    pub store: ParamStore,
    pub config: TrainConfig,
    pub state: TrainState,
    optimizer: Sgd,
    best: Option<Vec<Matrix>>,
    train: &'a [Document],
    dev: &'a [Document],
    vectors: Option<&'a PrecomputedVectors>,
}

impl<'a> Trainer<'a> {
    /// Fresh parameters drawn from `config.seed`; the vocabulary comes from
    /// the training documents.
    pub fn new(
        model_config: ModelConfig,
        config: TrainConfig,
        schema: LabelSchema,
        train: &'a [Document],
        dev: &'a [Document],
        vectors: Option<&'a PrecomputedVectors>,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(EngineError::Config("training corpus is empty".into()));
        }
        let vocab = match model_config.encoder.kind {
            EncoderKind::Lookup => Vocab::build(train),
            EncoderKind::Precomputed => Vocab::default(),
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(model_config, schema, vocab, &mut store, &mut rng)?;
        let n = store.len();
        Ok(Self {
            model,
            store,
            state: TrainState {
                epoch: 0,
                scheduler: PlateauHalving::new(config.lr, config.halve_patience),
                best_dev_loss: None,
                best_epoch: None,
                epochs_since_best: 0,
                history: Vec::new(),
            },
            optimizer: Sgd::new(config.momentum, config.weight_decay, n),
            config,
            best: None,
            train,
            dev,
            vectors,
        })
    }

    /// Continues a run from its checkpoint.
    pub fn resume(
        ck: &Checkpoint,
        train: &'a [Document],
        dev: &'a [Document],
        vectors: Option<&'a PrecomputedVectors>,
    ) -> Result<Self> {
        let (model, store) = restore_model(ck, false)?;
        let config = ck.header.train.clone();
        let mut optimizer = Sgd::new(config.momentum, config.weight_decay, store.len());
        let mut best = None;
        if ck.tensors.iter().any(|(n, _)| n.starts_with(BEST_PREFIX)) {
            let mut b = Vec::with_capacity(store.len());
            for id in store.ids() {
                let name = format!("{BEST_PREFIX}{}", store.name(id));
                b.push(ck.tensor(&name).cloned().ok_or_else(|| EngineError::Checkpoint {
                    path: String::new(),
                    msg: format!("missing tensor {name}"),
                })?);
            }
            best = Some(b);
        }
        for id in store.ids() {
            let name = format!("{VELOCITY_PREFIX}{}", store.name(id));
            optimizer.velocity[id.index()] = ck.tensor(&name).cloned();
        }
        Ok(Self {
            model,
            store,
            config,
            state: ck.header.state.clone(),
            optimizer,
            best,
            train,
            dev,
            vectors,
        })
    }

    pub fn lr(&self) -> f64 {
        self.state.scheduler.lr
    }

    /// True once `max_epochs` have run or dev loss has stalled.
    pub fn finished(&self) -> bool {
        let p = self.config.early_stopping_patience;
        self.state.epoch >= self.config.max_epochs || (p > 0 && self.state.epochs_since_best >= p)
    }

    /// One pass over the training corpus followed by dev evaluation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.state.epoch;
        let lr = self.lr();
        let mut rng = epoch_rng(self.config.seed, epoch);
        let batches = make_batches(self.train, self.config.batch_size, &mut rng);
        let mut batch_losses = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            let dropout_seed: u64 = rng.random();
            let docs: Vec<&Document> = batch.iter().map(|&i| &self.train[i]).collect();
            let (value, grads) = {
                let mut g = Graph::training(&self.store, dropout_seed);
                let loss = self.model.batch_loss(&mut g, &docs, self.vectors)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(EngineError::NonFinite {
                        epoch,
                        batch: b,
                        loss: value,
                        docs: docs.iter().map(|d| d.doc_key.clone()).collect(),
                    });
                }
                (value, g.backward(loss).map_err(ModelError::from)?)
            };
            let scale = clip_scale(
                &self.store,
                &grads,
                (self.config.grad_clip > 0.0).then_some(self.config.grad_clip),
            );
            self.optimizer.step(&mut self.store, &grads, lr, scale);
            batch_losses.push(value);
        }
        let train_loss = batch_losses.iter().sum::<f64>() / batch_losses.len().max(1) as f64;

        let (mut dev_loss, mut dev_f1, mut dev_metrics) = (None, None, None);
        if !self.dev.is_empty() {
            let loss = corpus_loss(&self.model, &self.store, self.dev, self.vectors)?;
            let (ev, _) = evaluate_corpus(&self.model, &self.store, self.dev, self.vectors)?;
            let f1 = ev.mean_f1();
            self.state.scheduler.step(f1);
            if self.state.best_dev_loss.is_none_or(|b| loss < b) {
                self.state.best_dev_loss = Some(loss);
                self.state.best_epoch = Some(epoch);
                self.state.epochs_since_best = 0;
                self.best = Some(self.store.iter().map(|(_, _, t)| t.data.clone()).collect());
            } else {
                self.state.epochs_since_best += 1;
            }
            dev_loss = Some(loss);
            dev_f1 = Some(f1);
            dev_metrics = Some(ev.scores());
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            batch_losses,
            dev_loss,
            dev_f1,
            dev_metrics,
        };
        self.state.history.push(record.clone());
        self.state.epoch += 1;
        Ok(record)
    }

    /// Runs epochs until [`Trainer::finished`] or until `on_epoch` returns
    /// false.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&EpochRecord) -> bool) -> Result<()> {
        while !self.finished() {
            let r = self.run_epoch()?;
            if !on_epoch(&r) {
                break;
            }
        }
        Ok(())
    }

    /// Parameters with the lowest dev loss so far, or the current ones.
    pub fn best_store(&self) -> ParamStore {
        let mut s = self.store.clone();
        if let Some(best) = &self.best {
            let ids: Vec<_> = s.ids().collect();
            for (id, m) in ids.into_iter().zip(best) {
                s.value_mut(id).assign(m);
            }
        }
        s
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (id, name, t) in self.store.iter() {
            tensors.push((format!("{PARAM_PREFIX}{name}"), t.data.clone()));
            if let Some(v) = &self.optimizer.velocity[id.index()] {
                tensors.push((format!("{VELOCITY_PREFIX}{name}"), v.clone()));
            }
        }
        if let Some(best) = &self.best {
            for ((_, name, _), m) in self.store.iter().zip(best) {
                tensors.push((format!("{BEST_PREFIX}{name}"), m.clone()));
            }
        }
        Checkpoint {
            header: CheckpointHeader {
                model: self.model.config.clone(),
                train: self.config.clone(),
                schema: self.model.schema.clone(),
                vocab: self.model.encoder.vocab.clone(),
                state: self.state.clone(),
            },
            tensors,
        }
    }

    /// Predictions on `docs` with the current parameters.
    pub fn predict(&self, docs: &[Document]) -> Result<Vec<Prediction>> {
        docs.iter()
            .map(|d| Ok(self.model.predict(&self.store, d, self.vectors)?))
            .collect()
    }

    /// Scores `docs` with the current parameters.
    pub fn evaluate(&self, docs: &[Document]) -> Result<Evaluation> {
        Ok(evaluate_corpus(&self.model, &self.store, docs, self.vectors)?.0)
    }
}
