//! Micro-averaged precision, recall and F1 for every extraction task.
//!
//! Items are compared as multisets of tuples: duplicate predictions of one
//! gold item yield one true positive and the rest count as false positives.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Mention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Entity,
    Relation,
    TriggerId,
    TriggerClass,
    ArgumentId,
    ArgumentClass,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Entity,
        Task::Relation,
        Task::TriggerId,
        Task::TriggerClass,
        Task::ArgumentId,
        Task::ArgumentClass,
    ];

    pub const EVENTS: [Task; 4] = [
        Task::TriggerId,
        Task::TriggerClass,
        Task::ArgumentId,
        Task::ArgumentClass,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Task::Entity => "entity",
            Task::Relation => "relation",
            Task::TriggerId => "trigger_id",
            Task::TriggerClass => "trigger_class",
            Task::ArgumentId => "argument_id",
            Task::ArgumentClass => "argument_class",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{predicted} predicted documents for {gold} gold documents")]
    Count { predicted: usize, gold: usize },
    #[error("prediction {predicted:?} paired with gold {gold:?}")]
    Mismatch { predicted: String, gold: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn from_items<T: Eq + Hash>(predicted: Vec<T>, gold: Vec<T>) -> Self {
        let mut bag: HashMap<&T, usize> = HashMap::new();
        for g in &gold {
            *bag.entry(g).or_default() += 1;
        }
        let mut tp = 0;
        for p in &predicted {
            if let Some(c) = bag.get_mut(p) {
                if *c > 0 {
                    *c -= 1;
                    tp += 1;
                }
            }
        }
        Self {
            tp,
            fp: predicted.len() - tp,
            fn_: gold.len() - tp,
        }
    }

    pub fn merge(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn score(&self) -> Score {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        // 2PR / (P + R), as one division so simple fractions come out exact
        let f1 = ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_);
        Score {
            precision,
            recall,
            f1,
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

type SentenceTuple = (usize, Vec<usize>);

fn items(doc: &Document, task: Task) -> Vec<SentenceTuple> {
    let mut out = Vec::new();
    for (si, s) in doc.sentences.iter().enumerate() {
        match task {
            Task::Entity => {
                for e in &s.entities {
                    out.push((si, vec![e.span.start, e.span.end, e.label]));
                }
            }
            Task::Relation => {
                for r in &s.relations {
                    out.push((
                        si,
                        vec![r.head.start, r.head.end, r.tail.start, r.tail.end, r.label],
                    ));
                }
            }
            Task::TriggerId | Task::TriggerClass => {
                for ev in &s.events {
                    let mut t = vec![ev.trigger];
                    if task == Task::TriggerClass {
                        t.push(ev.label);
                    }
                    out.push((si, t));
                }
            }
            Task::ArgumentId | Task::ArgumentClass => {
                for ev in &s.events {
                    for a in &ev.arguments {
                        let mut t = vec![ev.trigger, ev.label, a.span.start, a.span.end];
                        if task == Task::ArgumentClass {
                            t.push(a.role);
                        }
                        out.push((si, t));
                    }
                }
            }
        }
    }
    out
}

/// Counts for one predicted/gold document pair.
pub fn document_counts(predicted: &Document, gold: &Document, task: Task) -> Counts {
    Counts::from_items(items(predicted, task), items(gold, task))
}

/// Entity counts restricted to the given mention positions.
pub fn entity_counts_at(predicted: &Document, gold: &Document, mentions: &[Mention]) -> Counts {
    let keep = |(si, t): &SentenceTuple| {
        mentions
            .iter()
            .any(|m| m.sentence == *si && m.span.start == t[0] && m.span.end == t[1])
    };
    let p = items(predicted, Task::Entity).into_iter().filter(keep).collect();
    let g = items(gold, Task::Entity).into_iter().filter(keep).collect();
    Counts::from_items(p, g)
}

/// Accumulated counts for a fixed task list.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub counts: BTreeMap<Task, Counts>,
}

impl Evaluation {
    pub fn new(tasks: &[Task]) -> Self {
        Self {
            counts: tasks.iter().map(|&t| (t, Counts::default())).collect(),
        }
    }

    pub fn add(&mut self, predicted: &Document, gold: &Document) {
        for (&task, c) in self.counts.iter_mut() {
            c.merge(document_counts(predicted, gold, task));
        }
    }

    pub fn score(&self, task: Task) -> Option<Score> {
        self.counts.get(&task).map(Counts::score)
    }

    pub fn scores(&self) -> BTreeMap<String, Score> {
        self.counts
            .iter()
            .map(|(t, c)| (t.key().to_string(), c.score()))
            .collect()
    }

    /// Mean F1 over the evaluated tasks; 0 when there are none.
    pub fn mean_f1(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.values().map(|c| c.score().f1).sum::<f64>() / self.counts.len() as f64
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.scores()).expect("scores serialize")
    }
}

/// Evaluates document lists paired by position; keys must agree.
pub fn evaluate(
    predicted: &[Document],
    gold: &[Document],
    tasks: &[Task],
) -> Result<Evaluation, MetricsError> {
    if predicted.len() != gold.len() {
        return Err(MetricsError::Count {
            predicted: predicted.len(),
            gold: gold.len(),
        });
    }
    let mut ev = Evaluation::new(tasks);
    for (p, g) in predicted.iter().zip(gold) {
        if p.doc_key != g.doc_key {
            return Err(MetricsError::Mismatch {
                predicted: p.doc_key.clone(),
                gold: g.doc_key.clone(),
            });
        }
        ev.add(p, g);
    }
    Ok(ev)
}
