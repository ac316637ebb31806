//! Task scorers, the multitask loss and decoding rules.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::nn::Ffnn;
use crate::tensor::{Graph, Matrix, ParamStore, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("pair ({left}, {right}) crosses sentences {left_sentence} and {right_sentence}")]
    CrossSentence {
        left: usize,
        right: usize,
        left_sentence: usize,
        right_sentence: usize,
    },
    #[error("every task loss weight is zero")]
    NoTasks,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, HeadError>;

/// Loss weight per task; a zero weight disables the task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskWeights {
    pub entity: f64,
    pub relation: f64,
    pub coref: f64,
    pub trigger: f64,
    pub argument: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            entity: 1.0,
            relation: 1.0,
            coref: 1.0,
            trigger: 1.0,
            argument: 1.0,
        }
    }
}

/// Per-task losses, `None` for tasks that are not trained.
#[derive(Debug, Clone, Copy, Default)]
pub struct TaskLosses {
    pub entity: Option<Var>,
    pub relation: Option<Var>,
    pub coref: Option<Var>,
    pub trigger: Option<Var>,
    pub argument: Option<Var>,
}

/// `Σ_task weight · loss` over the tasks that are present with a nonzero
/// weight.
pub fn multitask_loss(g: &mut Graph<'_>, losses: &TaskLosses, weights: &TaskWeights) -> Result<Var> {
    let parts = [
        (losses.entity, weights.entity),
        (losses.relation, weights.relation),
        (losses.coref, weights.coref),
        (losses.trigger, weights.trigger),
        (losses.argument, weights.argument),
    ];
    let mut total: Option<Var> = None;
    for (loss, w) in parts {
        let Some(l) = loss else { continue };
        if w == 0.0 {
            continue;
        }
        let term = if w == 1.0 { l } else { g.scale(l, w) };
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    total.ok_or(HeadError::NoTasks)
}

/// Scorer networks; absent heads belong to disabled tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHeads {
    pub entity: Option<Ffnn>,
    pub relation: Option<Ffnn>,
    pub trigger: Option<Ffnn>,
    pub argument: Option<Ffnn>,
    pub antecedent: Option<Ffnn>,
}

/// Sizes needed to build the heads.
#[derive(Debug, Clone, Copy)]
pub struct HeadShape {
    pub dim: usize,
    pub hidden: usize,
    pub event_hidden: usize,
    pub dropout: f64,
    pub entity_classes: Option<usize>,
    pub relation_classes: Option<usize>,
    pub trigger_classes: Option<usize>,
    pub role_classes: Option<usize>,
    pub coref: bool,
}

impl TaskHeads {
    pub fn new(store: &mut ParamStore, shape: &HeadShape, rng: &mut impl Rng) -> Self {
        let d = shape.dim;
        let mut ffnn = |store: &mut ParamStore, name: &str, input: usize, hidden: usize, out: usize| {
            Ffnn::new(store, name, input, hidden, 2, out, shape.dropout, rng)
        };
        let entity = shape
            .entity_classes
            .map(|c| ffnn(store, "head.entity", d, shape.hidden, c));
        let relation = shape
            .relation_classes
            .map(|c| ffnn(store, "head.relation", 2 * d, shape.hidden, c));
        let trigger = shape
            .trigger_classes
            .map(|c| ffnn(store, "head.trigger", d, shape.event_hidden, c));
        let argument = shape.role_classes.map(|c| {
            let feature = shape.entity_classes.unwrap_or(0);
            ffnn(store, "head.argument", 2 * d + feature, shape.event_hidden, c)
        });
        let antecedent = shape
            .coref
            .then(|| ffnn(store, "head.antecedent", 3 * d, shape.hidden, 1));
        Self {
            entity,
            relation,
            trigger,
            argument,
            antecedent,
        }
    }
}

/// `FFNN(x)`, one row of logits per row of `x`.
pub fn score_unary(g: &mut Graph<'_>, head: &Ffnn, x: Var) -> Result<Var> {
    Ok(head.forward(g, x)?)
}

/// Rejects pairs whose members lie in different sentences.
pub fn check_same_sentence(
    pairs: &[(usize, usize)],
    left_sentence: &[usize],
    right_sentence: &[usize],
) -> Result<()> {
    for &(i, j) in pairs {
        if left_sentence[i] != right_sentence[j] {
            return Err(HeadError::CrossSentence {
                left: i,
                right: j,
                left_sentence: left_sentence[i],
                right_sentence: right_sentence[j],
            });
        }
    }
    Ok(())
}

/// `FFNN([x_i ; y_j ; aux_j])` for every pair; `aux` rows are indexed like
/// `right`.
pub fn score_pairwise(
    g: &mut Graph<'_>,
    head: &Ffnn,
    left: Var,
    right: Var,
    pairs: &[(usize, usize)],
    aux: Option<Var>,
) -> std::result::Result<Var, TensorError> {
    let l = g.gather_rows(left, pairs.iter().map(|p| p.0).collect())?;
    let r = g.gather_rows(right, pairs.iter().map(|p| p.1).collect())?;
    let x = match aux {
        Some(a) => {
            let f = g.gather_rows(a, pairs.iter().map(|p| p.1).collect())?;
            g.concat_cols(&[l, r, f])?
        }
        None => g.concat_cols(&[l, r])?,
    };
    head.forward(g, x)
}

/// Antecedent scores `FFNN([g_i ; g_j ; g_i ⊙ g_j])`, `P × 1`.
pub fn score_antecedent_pairs(
    g: &mut Graph<'_>,
    head: &Ffnn,
    spans: Var,
    pairs: &[(usize, usize)],
) -> std::result::Result<Var, TensorError> {
    let a = g.gather_rows(spans, pairs.iter().map(|p| p.0).collect())?;
    let b = g.gather_rows(spans, pairs.iter().map(|p| p.1).collect())?;
    let prod = g.mul(a, b)?;
    let x = g.concat_cols(&[a, b, prod])?;
    head.forward(g, x)
}

/// For every span, the last `max_antecedents` spans before it.
pub fn antecedent_pairs(n: usize, max_antecedents: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i.saturating_sub(max_antecedents)..i {
            out.push((i, j));
        }
    }
    out
}

/// Marginal log-likelihood of the gold antecedents with a fixed dummy score
/// of 0. `gold[p]` marks pair `p` as coreferent; spans with no gold pair
/// take the dummy as their gold antecedent.
pub fn coref_loss(
    g: &mut Graph<'_>,
    scores: Var,
    pairs: &[(usize, usize)],
    gold: &[bool],
    n: usize,
) -> Result<Var> {
    let dummy = g.constant(Matrix::zeros((n, 1)));
    let all = g.concat_rows(&[scores, dummy])?;
    let mut seg: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    seg.extend(0..n);
    let mut has_gold = vec![false; n];
    let mut gold_rows = Vec::new();
    let mut gold_seg = Vec::new();
    for (p, &(i, _)) in pairs.iter().enumerate() {
        if gold[p] {
            has_gold[i] = true;
            gold_rows.push(p);
            gold_seg.push(i);
        }
    }
    for (i, &h) in has_gold.iter().enumerate() {
        if !h {
            gold_rows.push(pairs.len() + i);
            gold_seg.push(i);
        }
    }
    let norm = g.segment_logsumexp(all, seg, n)?;
    let picked = g.gather_rows(all, gold_rows)?;
    let num = g.segment_logsumexp(picked, gold_seg, n)?;
    let diff = g.sub(norm, num)?;
    Ok(g.sum(diff))
}

/// Softmax over `[dummy = 0, scores...]`.
pub fn antecedent_distribution(scores: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(scores.len() + 1);
    z.push(0.0);
    z.extend_from_slice(scores);
    softmax(&z)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; the lowest index wins ties, so the null
/// label at 0 beats any label it ties with.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Clusters from antecedent links `(span, antecedent)` over `n` spans.
/// Singletons are dropped; clusters and members come out sorted.
pub fn clusters_from_links(n: usize, links: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in links {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().filter(|c| c.len() > 1).collect();
    out.sort();
    out
}
