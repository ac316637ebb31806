//! Synthetic corpora in which one mention per document can only be typed
//! through its coreference antecedent.
//!
//! Every document opens with a two-sentence coreference cluster. Sentence 0
//! holds a single named mention whose label is a fair coin between `PER` and
//! `ORG`; sentence 1 holds a single second mention of the same entity, which
//! is the pronoun `it` with probability `ambiguity_rate` and a repeat of the
//! name otherwise. Since `it` carries no label information of its own, a
//! classifier that sees only the pronoun's sentence is right half the time
//! in expectation. Remaining sentences carry two or three unambiguous
//! mentions, relations that are a fixed function of the ordered label pair,
//! and optionally an event whose trigger word fixes the event type and whose
//! arguments are the mentions with a role for that type.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{entity_counts_at, Counts};

use super::{
    Argument, Corpus, CorpusError, Document, Entity, Event, LabelSchema, Mention, Relation, Sentence, Span,
};

pub const PRONOUN: &str = "it";
const TITLE: &str = "mr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub ambiguity_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_docs: 50,
            vocab_size: 60,
            seed: 0,
            ambiguity_rate: 0.5,
        }
    }
}

/// Sentence-local location of one ambiguous pronoun.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguousMention {
    pub doc_key: String,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

/// Sidecar describing how a synthetic corpus was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetadata {
    pub config: SyntheticConfig,
    pub ambiguous_mentions: Vec<AmbiguousMention>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub metadata: SyntheticMetadata,
}

const LOC: usize = 0;
const ORG: usize = 1;
const PER: usize = 2;
const LABELS: [&str; 3] = ["LOC", "ORG", "PER"];
const RELATIONS: [&str; 2] = ["LOCATED_IN", "WORKS_FOR"];
const EVENT_TYPES: [&str; 2] = ["ATTACK", "TRAVEL"];
const ROLES: [&str; 3] = ["AGENT", "DESTINATION", "TARGET"];

pub fn synthetic_schema() -> LabelSchema {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    LabelSchema::new(v(&LABELS), v(&RELATIONS), v(&EVENT_TYPES), v(&ROLES)).expect("valid")
}

/// Relation (1-based id) holding from a mention labeled `head` to one
/// labeled `tail`.
fn relation_for(head: usize, tail: usize) -> Option<usize> {
    match (head, tail) {
        (PER, ORG) => Some(2),
        (PER, LOC) | (ORG, LOC) => Some(1),
        _ => None,
    }
}

/// Role (1-based id) a mention labeled `label` plays in an event of type
/// `event` (0 = ATTACK, 1 = TRAVEL).
fn role_for(event: usize, label: usize) -> Option<usize> {
    match (event, label) {
        (_, PER) => Some(1),
        (1, LOC) => Some(2),
        (0, ORG) => Some(3),
        _ => None,
    }
}

struct Vocabulary {
    fillers: Vec<String>,
    triggers: [Vec<String>; 2],
    /// Single-token names per label.
    plain: [Vec<String>; 3],
    /// Names that only occur after the title word.
    titled: [Vec<String>; 3],
}

impl Vocabulary {
    fn new(size: usize) -> Self {
        let rest = size - 6;
        let mut n_fill = (rest / 4).max(4);
        let per_label = (rest - n_fill) / 3;
        n_fill = rest - 3 * per_label;
        let n_plain = per_label.div_ceil(2);
        let n_titled = per_label - n_plain;
        let lower = |l: usize| LABELS[l].to_lowercase();
        Self {
            fillers: (0..n_fill).map(|i| format!("w{i}")).collect(),
            triggers: [
                vec!["attacked".into(), "raided".into()],
                vec!["travelled".into(), "flew".into()],
            ],
            plain: std::array::from_fn(|l| (0..n_plain).map(|i| format!("{}{i}", lower(l))).collect()),
            titled: std::array::from_fn(|l| (0..n_titled).map(|i| format!("{}x{i}", lower(l))).collect()),
        }
    }

    fn size(&self) -> usize {
        2 + self.fillers.len()
            + self.triggers.iter().map(Vec::len).sum::<usize>()
            + self.plain.iter().chain(&self.titled).map(Vec::len).sum::<usize>()
    }
}

/// One name's surface form.
#[derive(Debug, Clone, PartialEq)]
struct Name {
    label: usize,
    tokens: Vec<String>,
}

fn sample_name(rng: &mut ChaCha8Rng, vocab: &Vocabulary, label: usize, exclude: &[Name]) -> Name {
    let mut options: Vec<Vec<String>> = vocab.plain[label].iter().map(|w| vec![w.clone()]).collect();
    options.extend(
        vocab.titled[label]
            .iter()
            .map(|w| vec![TITLE.to_string(), w.clone()]),
    );
    let fresh: Vec<&Vec<String>> = options
        .iter()
        .filter(|o| !exclude.iter().any(|e| &e.tokens == *o))
        .collect();
    let tokens = if fresh.is_empty() {
        options.choose(rng).expect("non-empty").clone()
    } else {
        (*fresh.choose(rng).expect("non-empty")).clone()
    };
    Name { label, tokens }
}

enum Item {
    Mention(Name),
    Trigger(usize, String),
}

struct Built {
    sentence: Sentence,
    mentions: Vec<(Span, usize)>,
}

/// Lays out items with random filler runs and derives the annotations.
fn build_sentence(rng: &mut ChaCha8Rng, vocab: &Vocabulary, items: Vec<Item>) -> Built {
    let mut tokens: Vec<String> = Vec::new();
    let mut mentions: Vec<(Span, usize)> = Vec::new();
    let mut trigger: Option<(usize, usize)> = None;
    let push_fillers = |tokens: &mut Vec<String>, rng: &mut ChaCha8Rng, lo: usize, hi: usize| {
        for _ in 0..rng.random_range(lo..=hi) {
            tokens.push(vocab.fillers.choose(rng).expect("fillers").clone());
        }
    };
    push_fillers(&mut tokens, rng, 0, 2);
    for item in items {
        match item {
            Item::Mention(name) => {
                let start = tokens.len();
                tokens.extend(name.tokens);
                mentions.push((Span::new(start, tokens.len()), name.label));
            }
            Item::Trigger(ty, word) => {
                trigger = Some((tokens.len(), ty));
                tokens.push(word);
            }
        }
        push_fillers(&mut tokens, rng, 1, 2);
    }

    let entities = mentions
        .iter()
        .map(|&(span, label)| Entity {
            span,
            label: label + 1,
        })
        .collect();
    let mut relations = Vec::new();
    for &(hs, hl) in &mentions {
        for &(ts, tl) in &mentions {
            if hs != ts {
                if let Some(label) = relation_for(hl, tl) {
                    relations.push(Relation {
                        head: hs,
                        tail: ts,
                        label,
                    });
                }
            }
        }
    }
    let events = trigger
        .map(|(tok, ty)| {
            let arguments = mentions
                .iter()
                .filter_map(|&(span, l)| role_for(ty, l).map(|role| Argument { span, role }))
                .collect();
            vec![Event {
                trigger: tok,
                label: ty + 1,
                arguments,
            }]
        })
        .unwrap_or_default();
    Built {
        sentence: Sentence {
            tokens,
            entities,
            relations,
            events,
        },
        mentions,
    }
}

/// Generates a corpus; identical configs yield identical corpora.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus, CorpusError> {
    if config.vocab_size < 20 {
        return Err(CorpusError::Config(format!(
            "vocab_size must be at least 20, got {}",
            config.vocab_size
        )));
    }
    if !(0.0..=1.0).contains(&config.ambiguity_rate) {
        return Err(CorpusError::Config(format!(
            "ambiguity_rate must lie in [0, 1], got {}",
            config.ambiguity_rate
        )));
    }
    let vocab = Vocabulary::new(config.vocab_size);
    debug_assert_eq!(vocab.size(), config.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut documents = Vec::with_capacity(config.n_docs);
    let mut ambiguous = Vec::new();

    for d in 0..config.n_docs {
        let doc_key = format!("synth-{}-{d:04}", config.seed);
        let cluster_label = if rng.random_bool(0.5) { PER } else { ORG };
        let antecedent = sample_name(&mut rng, &vocab, cluster_label, &[]);
        let pronoun = rng.random_bool(config.ambiguity_rate);

        let s0 = build_sentence(&mut rng, &vocab, vec![Item::Mention(antecedent.clone())]);
        let second = if pronoun {
            Name {
                label: cluster_label,
                tokens: vec![PRONOUN.to_string()],
            }
        } else {
            antecedent.clone()
        };
        let s1 = build_sentence(&mut rng, &vocab, vec![Item::Mention(second)]);
        let cluster = vec![
            Mention {
                sentence: 0,
                span: s0.mentions[0].0,
            },
            Mention {
                sentence: 1,
                span: s1.mentions[0].0,
            },
        ];
        if pronoun {
            ambiguous.push(AmbiguousMention {
                doc_key: doc_key.clone(),
                sentence: 1,
                start: cluster[1].span.start,
                end: cluster[1].span.end,
            });
        }

        let mut sentences = vec![s0.sentence, s1.sentence];
        let mut used = vec![antecedent];
        let extra = rng.random_range(2..=3);
        for _ in 0..extra {
            let n_mentions = rng.random_range(2..=3);
            let mut items = Vec::new();
            for _ in 0..n_mentions {
                let label = rng.random_range(0..3);
                let name = sample_name(&mut rng, &vocab, label, &used);
                used.push(name.clone());
                items.push(Item::Mention(name));
            }
            if rng.random_bool(0.6) {
                let ty = rng.random_range(0..2);
                let word = vocab.triggers[ty].choose(&mut rng).expect("triggers").clone();
                let at = rng.random_range(0..=items.len());
                items.insert(at, Item::Trigger(ty, word));
            } else {
                items.shuffle(&mut rng);
            }
            sentences.push(build_sentence(&mut rng, &vocab, items).sentence);
        }
        documents.push(Document {
            doc_key,
            sentences,
            clusters: vec![cluster],
            confidences: None,
        });
    }

    Ok(SyntheticCorpus {
        corpus: Corpus {
            schema: synthetic_schema(),
            documents,
        },
        metadata: SyntheticMetadata {
            config: config.clone(),
            ambiguous_mentions: ambiguous,
        },
    })
}

impl SyntheticCorpus {
    /// Writes `<stem>.jsonl` and `<stem>.meta.json` into `dir`.
    pub fn write(&self, dir: &std::path::Path, stem: &str) -> Result<(), CorpusError> {
        self.corpus.write(dir.join(format!("{stem}.jsonl")))?;
        let meta_path = dir.join(format!("{stem}.meta.json"));
        let json = serde_json::to_string_pretty(&self.metadata).expect("serializable");
        std::fs::write(&meta_path, json).map_err(|source| CorpusError::Io {
            path: meta_path.display().to_string(),
            source,
        })
    }

    /// Entity counts over the ambiguous mentions only; `predictions` are
    /// paired with the generated documents by position.
    pub fn ambiguous_counts(&self, predictions: &[Document]) -> Counts {
        let mut total = Counts::default();
        for (pred, gold) in predictions.iter().zip(&self.corpus.documents) {
            let at: Vec<Mention> = self
                .metadata
                .ambiguous_mentions
                .iter()
                .filter(|m| m.doc_key == gold.doc_key)
                .map(|m| Mention {
                    sentence: m.sentence,
                    span: Span::new(m.start, m.end),
                })
                .collect();
            total.merge(entity_counts_at(pred, gold, &at));
        }
        total
    }

    /// Gold entity id of each ambiguous mention, keyed like the metadata.
    pub fn ambiguous_labels(&self) -> Vec<(AmbiguousMention, usize)> {
        self.metadata
            .ambiguous_mentions
            .iter()
            .map(|m| {
                let doc = self
                    .corpus
                    .documents
                    .iter()
                    .find(|d| d.doc_key == m.doc_key)
                    .expect("metadata refers to generated docs");
                let span = Span::new(m.start, m.end);
                let label = doc.sentences[m.sentence]
                    .entities
                    .iter()
                    .find(|e| e.span == span)
                    .expect("ambiguous mention is annotated")
                    .label;
                (m.clone(), label)
            })
            .collect()
    }
}
