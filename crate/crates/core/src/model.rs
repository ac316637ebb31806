//! The assembled span-graph model: encoding, span enumeration, beam
//! pruning, propagation, task heads, loss and decoding.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    Argument, Confidences, Document, Entity, Event, LabelKind, LabelSchema, Mention, Relation, Span,
};
use crate::encoder::{Encoder, EncoderConfig, EncoderError, PrecomputedVectors, Vocab};
use crate::heads::{
    antecedent_distribution, antecedent_pairs, argmax, check_same_sentence, clusters_from_links, coref_loss,
    multitask_loss, score_antecedent_pairs, score_pairwise, softmax, HeadError, HeadShape, TaskHeads,
    TaskLosses, TaskWeights,
};
use crate::metrics::Task;
use crate::propagation::{
    propagate_coref, propagate_events, propagate_relation, CorefParams, EventParams, LinkStrength, Mechanism,
    RelationParams,
};
use crate::spans::{enumerate_spans, prune_beam, SpanEncoder};
use crate::tensor::nn::Ffnn;
use crate::tensor::{Graph, Matrix, ParamStore, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model config: {0}")]
    Config(String),
    #[error("document {0:?} has no sentences")]
    EmptyDocument(String),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpanConfig {
    /// Widest enumerated span, in tokens.
    pub max_width: usize,
    pub width_dim: usize,
    /// Span embedding size `d`.
    pub dim: usize,
    /// Mention beam size per sentence, as a fraction of its length.
    pub mention_ratio: f64,
    /// Trigger beam size per sentence, as a fraction of its length.
    pub trigger_ratio: f64,
    /// Antecedent candidates per mention.
    pub max_antecedents: usize,
}

impl Default for SpanConfig {
    fn default() -> Self {
        Self {
            max_width: 8,
            width_dim: 16,
            dim: 64,
            mention_ratio: 0.4,
            trigger_ratio: 0.4,
            max_antecedents: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig {
    pub coref: bool,
    pub coref_iterations: usize,
    pub relation: bool,
    pub relation_iterations: usize,
    pub event: bool,
    pub event_iterations: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            coref: true,
            coref_iterations: 2,
            relation: true,
            relation_iterations: 2,
            event: true,
            event_iterations: 1,
        }
    }
}

impl PropagationConfig {
    pub fn none() -> Self {
        Self {
            coref: false,
            relation: false,
            event: false,
            ..Self::default()
        }
    }

    pub fn enabled(&self, m: Mechanism) -> bool {
        match m {
            Mechanism::Coref => self.coref,
            Mechanism::Relation => self.relation,
            Mechanism::Event => self.event,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub spans: SpanConfig,
    /// Hidden units of entity, relation, coreference and pruning scorers.
    pub hidden: usize,
    /// Hidden units of trigger, argument and event-similarity scorers.
    pub event_hidden: usize,
    pub dropout: f64,
    pub propagation: PropagationConfig,
    pub task_weights: TaskWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            spans: SpanConfig::default(),
            hidden: 150,
            event_hidden: 600,
            dropout: 0.4,
            propagation: PropagationConfig::default(),
            task_weights: TaskWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        let s = &self.spans;
        if s.max_width == 0 || s.dim == 0 || s.width_dim == 0 {
            return bad("span max_width, dim and width_dim must be positive");
        }
        if !(s.mention_ratio > 0.0 && s.trigger_ratio > 0.0) {
            return bad("beam ratios must be positive");
        }
        if self.encoder.embed_dim == 0
            || (self.encoder.recurrent_contextualizer && self.encoder.recurrent_hidden == 0)
        {
            return bad("encoder dimensions must be positive");
        }
        if self.hidden == 0 || self.event_hidden == 0 {
            return bad("hidden sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        let w = &self.task_weights;
        if [w.entity, w.relation, w.coref, w.trigger, w.argument]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return bad("task weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// Where the argument scorer's entity-label feature comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityFeature {
    /// One-hot gold labels (training).
    Gold,
    /// Entity-head softmax (inference).
    Predicted,
}

/// Positions of every candidate in one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// `(sentence, span)` per global span index, sentence by sentence.
    pub spans: Vec<(usize, Span)>,
    pub span_offsets: Vec<usize>,
    /// `(sentence, token)` per global token index.
    pub tokens: Vec<(usize, usize)>,
    pub token_offsets: Vec<usize>,
    /// Global span index of each token's width-one span.
    pub width_one: Vec<usize>,
}

impl Layout {
    pub fn new(doc: &Document, max_width: usize) -> Self {
        let mut spans = Vec::new();
        let mut span_offsets = Vec::new();
        let mut tokens = Vec::new();
        let mut token_offsets = Vec::new();
        let mut width_one = Vec::new();
        for (si, s) in doc.sentences.iter().enumerate() {
            span_offsets.push(spans.len());
            token_offsets.push(tokens.len());
            for sp in enumerate_spans(s.len(), max_width) {
                if sp.width() == 1 {
                    width_one.push(spans.len());
                }
                spans.push((si, sp));
            }
            tokens.extend((0..s.len()).map(|t| (si, t)));
        }
        Self {
            spans,
            span_offsets,
            tokens,
            token_offsets,
            width_one,
        }
    }

    pub fn sentence_spans(&self, sentence: usize) -> &[(usize, Span)] {
        let lo = self.span_offsets[sentence];
        let hi = self
            .span_offsets
            .get(sentence + 1)
            .copied()
            .unwrap_or(self.spans.len());
        &self.spans[lo..hi]
    }

    fn sentence_range(offsets: &[usize], total: usize, sentence: usize) -> std::ops::Range<usize> {
        offsets[sentence]..offsets.get(sentence + 1).copied().unwrap_or(total)
    }
}

/// Everything one forward pass produces for a document.
#[derive(Debug, Clone)]
pub struct DocForward {
    pub layout: Layout,
    /// Global span indices of the mention beam, in document order.
    pub mention_beam: Vec<usize>,
    /// Global token indices of the trigger beam, in document order.
    pub trigger_beam: Vec<usize>,
    pub mention_scores: Option<Var>,
    pub trigger_scores: Option<Var>,
    pub entity_logits: Option<Var>,
    pub trigger_logits: Option<Var>,
    /// Ordered same-sentence pairs of mention-beam positions.
    pub relation_pairs: Vec<(usize, usize)>,
    pub relation_logits: Option<Var>,
    /// `(trigger-beam position, mention-beam position)` pairs.
    pub argument_pairs: Vec<(usize, usize)>,
    pub argument_logits: Option<Var>,
    /// `(mention, antecedent)` mention-beam positions.
    pub antecedent_pairs: Vec<(usize, usize)>,
    pub antecedent_scores: Option<Var>,
    pub links: Vec<LinkStrength>,
}

impl DocForward {
    pub fn mention(&self, beam_pos: usize) -> Mention {
        let (sentence, span) = self.layout.spans[self.mention_beam[beam_pos]];
        Mention { sentence, span }
    }

    pub fn trigger_token(&self, beam_pos: usize) -> (usize, usize) {
        self.layout.tokens[self.trigger_beam[beam_pos]]
    }
}

/// Gold annotations keyed by position.
#[derive(Debug, Default)]
struct GoldIndex {
    entity: HashMap<Mention, usize>,
    relation: HashMap<(usize, Span, Span), usize>,
    trigger: HashMap<(usize, usize), usize>,
    argument: HashMap<(usize, usize, Span), usize>,
    cluster: HashMap<Mention, usize>,
    mentions: HashSet<Mention>,
}

impl GoldIndex {
    fn new(doc: &Document) -> Self {
        let mut gi = Self::default();
        for (si, s) in doc.sentences.iter().enumerate() {
            let m = |span| Mention { sentence: si, span };
            for e in &s.entities {
                gi.entity.insert(m(e.span), e.label);
                gi.mentions.insert(m(e.span));
            }
            for r in &s.relations {
                gi.relation.insert((si, r.head, r.tail), r.label);
                gi.mentions.insert(m(r.head));
                gi.mentions.insert(m(r.tail));
            }
            for ev in &s.events {
                gi.trigger.insert((si, ev.trigger), ev.label);
                for a in &ev.arguments {
                    gi.argument.insert((si, ev.trigger, a.span), a.role);
                    gi.mentions.insert(m(a.span));
                }
            }
        }
        for (c, cluster) in doc.clusters.iter().enumerate() {
            for &mention in cluster {
                gi.cluster.insert(mention, c);
                gi.mentions.insert(mention);
            }
        }
        gi
    }
}

/// A document's predictions plus the propagation links that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub document: Document,
    pub links: Vec<ResolvedLink>,
}

/// Graph node named by document position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Span(Mention),
    Token { sentence: usize, token: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedLink {
    pub mechanism: Mechanism,
    pub iteration: usize,
    pub source: Node,
    pub target: Node,
    pub strength: f64,
}

/// Network structure; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub schema: LabelSchema,
    pub encoder: Encoder,
    pub span_encoder: SpanEncoder,
    pub mention_scorer: Option<Ffnn>,
    pub trigger_scorer: Option<Ffnn>,
    pub heads: TaskHeads,
    pub coref_prop: Option<CorefParams>,
    pub relation_prop: Option<RelationParams>,
    pub event_prop: Option<EventParams>,
}

fn pair_lists(sentences: &[usize], other: &[usize], same_node_type: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, &si) in sentences.iter().enumerate() {
        for (j, &sj) in other.iter().enumerate() {
            if si == sj && !(same_node_type && i == j) {
                out.push((i, j));
            }
        }
    }
    out
}

/// `x` with the rows listed in `idx` replaced by the rows of `rows`.
fn replace_rows(g: &mut Graph<'_>, x: Var, rows: Var, idx: &[usize]) -> Result<Var> {
    let (n, _) = g.shape(x);
    let mut keep = Matrix::ones((n, 1));
    for &i in idx {
        keep[[i, 0]] = 0.0;
    }
    let keep = g.constant(keep);
    let kept = g.mul_col(x, keep)?;
    let placed = g.index_add_rows(rows, idx.to_vec(), n)?;
    Ok(g.add(kept, placed)?)
}

fn column(m: &Matrix) -> Vec<f64> {
    m.column(0).to_vec()
}

impl Model {
    /// Builds the structure and registers freshly initialised parameters.
    pub fn new(
        config: ModelConfig,
        schema: LabelSchema,
        vocab: Vocab,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        schema.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        let w = &config.task_weights;
        let d = config.spans.dim;
        let entity = !schema.entity_labels.is_empty() && w.entity > 0.0;
        let relation = schema.has_relations() && w.relation > 0.0;
        let trigger = schema.has_events() && w.trigger > 0.0;
        let argument = trigger && w.argument > 0.0;
        let coref = w.coref > 0.0;
        let p = &config.propagation;
        if p.coref && !coref {
            return Err(ModelError::Config(
                "coref propagation needs the coref task".into(),
            ));
        }
        if p.relation && !relation {
            return Err(ModelError::Config(
                "relation propagation needs the relation task".into(),
            ));
        }
        if p.event && !trigger {
            return Err(ModelError::Config(
                "event propagation needs the trigger task".into(),
            ));
        }
        if !(entity || relation || trigger || coref) {
            return Err(HeadError::NoTasks.into());
        }

        let encoder = Encoder::new(config.encoder.clone(), vocab, store, rng);
        let span_encoder = SpanEncoder::new(store, encoder.output_dim(), config.spans.width_dim, d, rng);
        let needs_mentions = relation || argument || coref;
        let mention_scorer = needs_mentions.then(|| {
            Ffnn::new(
                store,
                "prune.mention",
                d,
                config.hidden,
                2,
                1,
                config.dropout,
                rng,
            )
        });
        let trigger_scorer = trigger.then(|| {
            Ffnn::new(
                store,
                "prune.trigger",
                d,
                config.hidden,
                2,
                1,
                config.dropout,
                rng,
            )
        });
        let classes = |on: bool, kind| on.then(|| schema.num_classes(kind));
        let heads = TaskHeads::new(
            store,
            &HeadShape {
                dim: d,
                hidden: config.hidden,
                event_hidden: config.event_hidden,
                dropout: config.dropout,
                entity_classes: classes(entity, LabelKind::Entity),
                relation_classes: classes(relation, LabelKind::Relation),
                trigger_classes: classes(trigger, LabelKind::Trigger),
                role_classes: classes(argument, LabelKind::ArgumentRole),
                coref,
            },
            rng,
        );
        let coref_prop = p.coref.then(|| CorefParams::new(store, d, rng));
        let relation_prop = p
            .relation
            .then(|| RelationParams::new(store, d, schema.relation_labels.len(), rng));
        let event_prop = p.event.then(|| {
            EventParams::new(
                store,
                d,
                schema.argument_roles.len(),
                config.event_hidden,
                config.dropout,
                rng,
            )
        });
        Ok(Self {
            config,
            schema,
            encoder,
            span_encoder,
            mention_scorer,
            trigger_scorer,
            heads,
            coref_prop,
            relation_prop,
            event_prop,
        })
    }

    /// Metric keys this model is evaluated on.
    pub fn tasks(&self) -> Vec<Task> {
        let mut t = Vec::new();
        if self.heads.entity.is_some() {
            t.push(Task::Entity);
        }
        if self.heads.relation.is_some() {
            t.push(Task::Relation);
        }
        if self.heads.trigger.is_some() {
            t.extend([Task::TriggerId, Task::TriggerClass]);
        }
        if self.heads.argument.is_some() {
            t.extend([Task::ArgumentId, Task::ArgumentClass]);
        }
        t
    }

    fn entity_feature(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        fwd: &DocForward,
        mode: EntityFeature,
        entity_logits: Option<Var>,
    ) -> Result<Option<Var>> {
        let Some(logits) = entity_logits else {
            return Ok(None);
        };
        Ok(Some(match mode {
            EntityFeature::Gold => {
                let gold = GoldIndex::new(doc);
                let classes = self.schema.num_classes(LabelKind::Entity);
                let mut m = Matrix::zeros((fwd.mention_beam.len(), classes));
                for pos in 0..fwd.mention_beam.len() {
                    let label = gold.entity.get(&fwd.mention(pos)).copied().unwrap_or(0);
                    m[[pos, label]] = 1.0;
                }
                g.constant(m)
            }
            EntityFeature::Predicted => {
                let rows = g.gather_rows(logits, fwd.mention_beam.clone())?;
                g.softmax_rows(rows)
            }
        }))
    }

    /// Runs the network on one document.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        vectors: Option<&PrecomputedVectors>,
        feature: EntityFeature,
        trace: bool,
    ) -> Result<DocForward> {
        if doc.sentences.is_empty() {
            return Err(ModelError::EmptyDocument(doc.doc_key.clone()));
        }
        let cfg = &self.config.spans;
        let layout = Layout::new(doc, cfg.max_width);
        let tokens = self.encoder.encode_tokens(g, doc, vectors)?;
        let mut reps = Vec::with_capacity(tokens.len());
        for (si, &tv) in tokens.iter().enumerate() {
            let spans: Vec<Span> = layout.sentence_spans(si).iter().map(|p| p.1).collect();
            reps.push(self.span_encoder.represent(g, tv, &spans)?);
        }
        let all_spans = g.concat_rows(&reps)?;
        let all_tokens = g.gather_rows(all_spans, layout.width_one.clone())?;

        let mut mention_beam = Vec::new();
        let mention_scores = match &self.mention_scorer {
            Some(f) => {
                let s = f.forward(g, all_spans)?;
                let v = column(g.value(s));
                for (si, sent) in doc.sentences.iter().enumerate() {
                    let r = Layout::sentence_range(&layout.span_offsets, layout.spans.len(), si);
                    let beam = prune_beam(&v[r.clone()], cfg.mention_ratio, sent.len());
                    mention_beam.extend(beam.sorted_members().into_iter().map(|k| r.start + k));
                }
                Some(s)
            }
            None => None,
        };
        let mut trigger_beam = Vec::new();
        let trigger_scores = match &self.trigger_scorer {
            Some(f) => {
                let s = f.forward(g, all_tokens)?;
                let v = column(g.value(s));
                for (si, sent) in doc.sentences.iter().enumerate() {
                    let r = Layout::sentence_range(&layout.token_offsets, layout.tokens.len(), si);
                    let beam = prune_beam(&v[r.clone()], cfg.trigger_ratio, sent.len());
                    trigger_beam.extend(beam.sorted_members().into_iter().map(|k| r.start + k));
                }
                Some(s)
            }
            None => None,
        };

        let mention_sent: Vec<usize> = mention_beam.iter().map(|&k| layout.spans[k].0).collect();
        let trigger_sent: Vec<usize> = trigger_beam.iter().map(|&k| layout.tokens[k].0).collect();
        let relation_pairs = if self.heads.relation.is_some() {
            pair_lists(&mention_sent, &mention_sent, true)
        } else {
            Vec::new()
        };
        let argument_pairs = if self.heads.argument.is_some() || self.event_prop.is_some() {
            pair_lists(&trigger_sent, &mention_sent, false)
        } else {
            Vec::new()
        };
        check_same_sentence(&relation_pairs, &mention_sent, &mention_sent)?;
        check_same_sentence(&argument_pairs, &trigger_sent, &mention_sent)?;
        let coref_pairs = if self.heads.antecedent.is_some() {
            antecedent_pairs(mention_beam.len(), cfg.max_antecedents)
        } else {
            Vec::new()
        };

        let mut links = Vec::new();
        let mut mentions = (!mention_beam.is_empty())
            .then(|| g.gather_rows(all_spans, mention_beam.clone()))
            .transpose()?;
        let mut triggers = (!trigger_beam.is_empty())
            .then(|| g.gather_rows(all_tokens, trigger_beam.clone()))
            .transpose()?;
        let p = &self.config.propagation;
        let mut mentions_changed = false;
        if let (Some(params), Some(head), Some(x)) = (&self.coref_prop, &self.heads.antecedent, mentions) {
            let score = |g: &mut Graph<'_>, x: Var, pairs: &[(usize, usize)]| {
                score_antecedent_pairs(g, head, x, pairs)
            };
            let t = trace.then_some(&mut links);
            mentions = Some(propagate_coref(
                g,
                x,
                &coref_pairs,
                params,
                p.coref_iterations,
                score,
                t,
            )?);
            mentions_changed = true;
        }
        if let (Some(params), Some(head), Some(x)) = (&self.relation_prop, &self.heads.relation, mentions) {
            let score = |g: &mut Graph<'_>, x: Var, pairs: &[(usize, usize)]| {
                score_pairwise(g, head, x, x, pairs, None)
            };
            let t = trace.then_some(&mut links);
            mentions = Some(propagate_relation(
                g,
                x,
                &relation_pairs,
                params,
                p.relation_iterations,
                score,
                t,
            )?);
            mentions_changed = true;
        }
        let mut triggers_changed = false;
        if let (Some(params), Some(h), Some(a)) = (&self.event_prop, triggers, mentions) {
            let t = trace.then_some(&mut links);
            let (h2, a2) = propagate_events(g, h, a, &argument_pairs, params, p.event_iterations, t)?;
            triggers = Some(h2);
            mentions = Some(a2);
            mentions_changed = true;
            triggers_changed = true;
        }

        let final_spans = match mentions {
            Some(m) if mentions_changed => replace_rows(g, all_spans, m, &mention_beam)?,
            _ => all_spans,
        };
        let final_tokens = match triggers {
            Some(t) if triggers_changed => replace_rows(g, all_tokens, t, &trigger_beam)?,
            _ => all_tokens,
        };

        let entity_logits = self
            .heads
            .entity
            .as_ref()
            .map(|h| h.forward(g, final_spans))
            .transpose()?;
        let trigger_logits = self
            .heads
            .trigger
            .as_ref()
            .map(|h| h.forward(g, final_tokens))
            .transpose()?;
        let mut fwd = DocForward {
            layout,
            mention_beam,
            trigger_beam,
            mention_scores,
            trigger_scores,
            entity_logits,
            trigger_logits,
            relation_pairs,
            relation_logits: None,
            argument_pairs,
            argument_logits: None,
            antecedent_pairs: coref_pairs,
            antecedent_scores: None,
            links,
        };
        if let (Some(head), Some(m)) = (&self.heads.relation, mentions) {
            if !fwd.relation_pairs.is_empty() {
                fwd.relation_logits = Some(score_pairwise(g, head, m, m, &fwd.relation_pairs, None)?);
            }
        }
        if let (Some(head), Some(t), Some(m)) = (&self.heads.argument, triggers, mentions) {
            if !fwd.argument_pairs.is_empty() {
                let aux = self.entity_feature(g, doc, &fwd, feature, entity_logits)?;
                fwd.argument_logits = Some(score_pairwise(g, head, t, m, &fwd.argument_pairs, aux)?);
            }
        }
        if let (Some(head), Some(m)) = (&self.heads.antecedent, mentions) {
            if !fwd.antecedent_pairs.is_empty() {
                fwd.antecedent_scores = Some(score_antecedent_pairs(g, head, m, &fwd.antecedent_pairs)?);
            }
        }
        Ok(fwd)
    }

    /// Unnormalised multitask loss of one annotated document, including the
    /// pruning scorers' auxiliary losses.
    pub fn document_loss(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        vectors: Option<&PrecomputedVectors>,
    ) -> Result<Var> {
        let fwd = self.forward(g, doc, vectors, EntityFeature::Gold, false)?;
        let gold = GoldIndex::new(doc);
        let mut losses = TaskLosses::default();
        let layout = &fwd.layout;
        let span_mention = |k: usize| {
            let (sentence, span) = layout.spans[k];
            Mention { sentence, span }
        };
        if let Some(l) = fwd.entity_logits {
            let targets: Vec<usize> = (0..layout.spans.len())
                .map(|k| gold.entity.get(&span_mention(k)).copied().unwrap_or(0))
                .collect();
            losses.entity = Some(g.cross_entropy(l, &targets)?);
        }
        if let Some(l) = fwd.trigger_logits {
            let targets: Vec<usize> = layout
                .tokens
                .iter()
                .map(|t| gold.trigger.get(t).copied().unwrap_or(0))
                .collect();
            losses.trigger = Some(g.cross_entropy(l, &targets)?);
        }
        if let Some(l) = fwd.relation_logits {
            let targets: Vec<usize> = fwd
                .relation_pairs
                .iter()
                .map(|&(i, j)| {
                    let (a, b) = (fwd.mention(i), fwd.mention(j));
                    gold.relation
                        .get(&(a.sentence, a.span, b.span))
                        .copied()
                        .unwrap_or(0)
                })
                .collect();
            losses.relation = Some(g.cross_entropy(l, &targets)?);
        }
        if let Some(l) = fwd.argument_logits {
            let targets: Vec<usize> = fwd
                .argument_pairs
                .iter()
                .map(|&(t, m)| {
                    let (sentence, token) = fwd.trigger_token(t);
                    let a = fwd.mention(m);
                    gold.argument
                        .get(&(sentence, token, a.span))
                        .copied()
                        .unwrap_or(0)
                })
                .collect();
            losses.argument = Some(g.cross_entropy(l, &targets)?);
        }
        if self.heads.antecedent.is_some() && !fwd.mention_beam.is_empty() {
            let n = fwd.mention_beam.len();
            let scores = match fwd.antecedent_scores {
                Some(s) => s,
                None => g.constant(Matrix::zeros((0, 1))),
            };
            let is_gold: Vec<bool> = fwd
                .antecedent_pairs
                .iter()
                .map(|&(i, j)| {
                    match (
                        gold.cluster.get(&fwd.mention(i)),
                        gold.cluster.get(&fwd.mention(j)),
                    ) {
                        (Some(a), Some(b)) => a == b,
                        _ => false,
                    }
                })
                .collect();
            losses.coref = Some(coref_loss(g, scores, &fwd.antecedent_pairs, &is_gold, n)?);
        }
        let mut total = multitask_loss(g, &losses, &self.config.task_weights)?;
        if let Some(s) = fwd.mention_scores {
            let targets: Vec<f64> = (0..layout.spans.len())
                .map(|k| f64::from(u8::from(gold.mentions.contains(&span_mention(k)))))
                .collect();
            let l = g.bce_with_logits(s, &targets)?;
            total = g.add(total, l)?;
        }
        if let Some(s) = fwd.trigger_scores {
            let targets: Vec<f64> = layout
                .tokens
                .iter()
                .map(|t| f64::from(u8::from(gold.trigger.contains_key(t))))
                .collect();
            let l = g.bce_with_logits(s, &targets)?;
            total = g.add(total, l)?;
        }
        Ok(total)
    }

    /// Sum of document losses divided by the number of sentences.
    pub fn batch_loss(
        &self,
        g: &mut Graph<'_>,
        docs: &[&Document],
        vectors: Option<&PrecomputedVectors>,
    ) -> Result<Var> {
        let mut total: Option<Var> = None;
        let mut sentences = 0;
        for doc in docs {
            let l = self.document_loss(g, doc, vectors)?;
            sentences += doc.sentences.len();
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let total = total.ok_or_else(|| ModelError::Config("empty batch".into()))?;
        Ok(g.scale(total, 1.0 / sentences.max(1) as f64))
    }

    /// Decodes one document with dropout off.
    pub fn predict(
        &self,
        store: &ParamStore,
        doc: &Document,
        vectors: Option<&PrecomputedVectors>,
    ) -> Result<Prediction> {
        let mut g = Graph::new(store);
        let fwd = self.forward(&mut g, doc, vectors, EntityFeature::Predicted, true)?;
        Ok(self.decode(&g, doc, &fwd))
    }

    fn decode(&self, g: &Graph<'_>, doc: &Document, fwd: &DocForward) -> Prediction {
        let n_sent = doc.sentences.len();
        let mut out = doc.without_annotations();
        let mut conf = Confidences {
            ner: vec![Vec::new(); n_sent],
            relations: vec![Vec::new(); n_sent],
            triggers: vec![Vec::new(); n_sent],
            arguments: vec![Vec::new(); n_sent],
        };
        let best = |row: ndarray::ArrayView1<'_, f64>| {
            let v = row.to_vec();
            let k = argmax(&v);
            (k, softmax(&v)[k])
        };
        if let Some(l) = fwd.entity_logits {
            for (k, row) in g.value(l).rows().into_iter().enumerate() {
                let (label, p) = best(row);
                if label != 0 {
                    let (si, span) = fwd.layout.spans[k];
                    out.sentences[si].entities.push(Entity { span, label });
                    conf.ner[si].push(p);
                }
            }
        }
        let mut event_at: HashMap<usize, (usize, usize)> = HashMap::new();
        if let Some(l) = fwd.trigger_logits {
            for (k, row) in g.value(l).rows().into_iter().enumerate() {
                let (label, p) = best(row);
                if label != 0 {
                    let (si, token) = fwd.layout.tokens[k];
                    event_at.insert(k, (si, out.sentences[si].events.len()));
                    out.sentences[si].events.push(Event {
                        trigger: token,
                        label,
                        arguments: Vec::new(),
                    });
                    conf.triggers[si].push(p);
                    conf.arguments[si].push(Vec::new());
                }
            }
        }
        if let Some(l) = fwd.relation_logits {
            for (row, &(i, j)) in g.value(l).rows().into_iter().zip(&fwd.relation_pairs) {
                let (label, p) = best(row);
                if label != 0 {
                    let (a, b) = (fwd.mention(i), fwd.mention(j));
                    out.sentences[a.sentence].relations.push(Relation {
                        head: a.span,
                        tail: b.span,
                        label,
                    });
                    conf.relations[a.sentence].push(p);
                }
            }
        }
        if let Some(l) = fwd.argument_logits {
            for (row, &(t, m)) in g.value(l).rows().into_iter().zip(&fwd.argument_pairs) {
                let Some(&(si, e)) = event_at.get(&fwd.trigger_beam[t]) else {
                    continue;
                };
                let (role, p) = best(row);
                if role != 0 {
                    let span = fwd.mention(m).span;
                    out.sentences[si].events[e]
                        .arguments
                        .push(Argument { span, role });
                    conf.arguments[si][e].push(p);
                }
            }
        }
        if let Some(s) = fwd.antecedent_scores {
            let scores = column(g.value(s));
            let mut by_span: Vec<Vec<(usize, f64)>> = vec![Vec::new(); fwd.mention_beam.len()];
            for (&(i, j), &v) in fwd.antecedent_pairs.iter().zip(&scores) {
                by_span[i].push((j, v));
            }
            let mut links = Vec::new();
            for (i, cands) in by_span.iter().enumerate() {
                let v: Vec<f64> = cands.iter().map(|c| c.1).collect();
                let k = argmax(&antecedent_distribution(&v));
                if k > 0 {
                    links.push((i, cands[k - 1].0));
                }
            }
            out.clusters = clusters_from_links(fwd.mention_beam.len(), &links)
                .into_iter()
                .map(|c| c.into_iter().map(|pos| fwd.mention(pos)).collect())
                .collect();
        }
        out.confidences = Some(conf);
        let links = fwd
            .links
            .iter()
            .map(|l| {
                let (source, target) = match l.mechanism {
                    Mechanism::Coref | Mechanism::Relation => (
                        Node::Span(fwd.mention(l.source)),
                        Node::Span(fwd.mention(l.target)),
                    ),
                    Mechanism::Event => {
                        let (sentence, token) = fwd.trigger_token(l.source);
                        (Node::Token { sentence, token }, Node::Span(fwd.mention(l.target)))
                    }
                };
                ResolvedLink {
                    mechanism: l.mechanism,
                    iteration: l.iteration,
                    source,
                    target,
                    strength: l.strength,
                }
            })
            .collect();
        Prediction { document: out, links }
    }
}

/// Predicted documents for a corpus, in order.
pub fn predict_all(
    model: &Model,
    store: &ParamStore,
    docs: &[Document],
    vectors: Option<&PrecomputedVectors>,
) -> Result<Vec<Prediction>> {
    docs.iter().map(|d| model.predict(store, d, vectors)).collect()
}
