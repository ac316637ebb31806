//! Span-graph propagation.
//!
//! Every mechanism computes a message `u(i) = Σ_j w(i, j) ⊙ x_j` from a
//! node's graph neighbours and blends it into the node with a learned gate
//!
//! ```text
//! f      = σ(W [x_i ; u(i)] + b)
//! x_i'   = f ⊙ x_i + (1 − f) ⊙ u(i)
//! ```
//!
//! Coreference weights are a softmax over antecedent scores (a scalar per
//! pair). Relation weights are `ReLU(relation logits) · A_R`, one
//! `d`-vector per same-sentence pair. Event propagation alternates between
//! trigger nodes and argument nodes: triggers receive
//! `Σ_j ReLU(V(i, j)) A_{A→T} ⊙ g_j`, then arguments receive
//! `Σ_i ReLU(V'(i, j)) A_{T→A} ⊙ h_i'` where `V'` is rescored on the
//! updated triggers.
//!
//! Projection matrices are stored label-major (`L × d`), so a row vector of
//! label scores maps to `d` dimensions by a plain right multiplication.

use rand::Rng;

use crate::tensor::nn::{fan_in_uniform, Ffnn, Linear};
use crate::tensor::{Graph, Matrix, ParamId, ParamStore, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Pair of node positions `(i, j)`: `i` receives, `j` sends.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Coref,
    Relation,
    Event,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Coref => "coref",
            Mechanism::Relation => "relation",
            Mechanism::Event => "event",
        }
    }
}

/// One weighted edge observed during propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStrength {
    pub mechanism: Mechanism,
    pub iteration: usize,
    /// Receiving node (span, or trigger for events).
    pub source: usize,
    /// Neighbour (antecedent, related span, or argument for events).
    pub target: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorefParams {
    pub gate: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationParams {
    /// `L_R × d`.
    pub projection: ParamId,
    pub gate: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventParams {
    /// `[h ; g]` → `L_A` role scores.
    pub similarity: Ffnn,
    /// `L_A × d`, weights argument messages to triggers.
    pub args_to_trigger: ParamId,
    /// `L_A × d`, weights trigger messages to arguments.
    pub trigger_to_args: ParamId,
    pub trigger_gate: Linear,
    pub argument_gate: Linear,
}

impl CorefParams {
    pub fn new(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            gate: Linear::new(store, "prop.coref.gate", 2 * dim, dim, rng),
        }
    }
}

impl RelationParams {
    pub fn new(store: &mut ParamStore, dim: usize, relation_labels: usize, rng: &mut impl Rng) -> Self {
        Self {
            projection: store.add(
                "prop.relation.projection",
                fan_in_uniform(rng, relation_labels, dim, relation_labels),
            ),
            gate: Linear::new(store, "prop.relation.gate", 2 * dim, dim, rng),
        }
    }
}

impl EventParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        dim: usize,
        roles: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            similarity: Ffnn::new(
                store,
                "prop.event.similarity",
                2 * dim,
                hidden,
                2,
                roles,
                dropout,
                rng,
            ),
            args_to_trigger: store.add(
                "prop.event.args_to_trigger",
                fan_in_uniform(rng, roles, dim, roles),
            ),
            trigger_to_args: store.add(
                "prop.event.trigger_to_args",
                fan_in_uniform(rng, roles, dim, roles),
            ),
            trigger_gate: Linear::new(store, "prop.event.trigger_gate", 2 * dim, dim, rng),
            argument_gate: Linear::new(store, "prop.event.argument_gate", 2 * dim, dim, rng),
        }
    }
}

/// Result of one gated update.
#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub state: Var,
    pub gate: Var,
    pub message: Var,
}

/// `f = σ(gate([x ; u]))`, `x' = f ⊙ x + (1 − f) ⊙ u`.
pub fn gated_update(g: &mut Graph<'_>, gate: &Linear, state: Var, message: Var) -> Result<Step> {
    let both = g.concat_cols(&[state, message])?;
    let z = gate.forward(g, both)?;
    let f = g.sigmoid(z);
    let keep = g.mul(f, state)?;
    let rest = g.one_minus(f);
    let take = g.mul(rest, message)?;
    let new = g.add(keep, take)?;
    Ok(Step {
        state: new,
        gate: f,
        message,
    })
}

fn zeros_like(g: &mut Graph<'_>, v: Var) -> Var {
    let shape = g.shape(v);
    g.constant(Matrix::zeros(shape))
}

/// `Σ_j weight(i, j) ⊙ x_j` into `n` rows, where `weights` is `P × d`.
fn aggregate(
    g: &mut Graph<'_>,
    weights: Var,
    senders: Var,
    pairs: &[Pair],
    sender_of: impl Fn(&Pair) -> usize,
    receiver_of: impl Fn(&Pair) -> usize,
    n: usize,
) -> Result<Var> {
    let x = g.gather_rows(senders, pairs.iter().map(&sender_of).collect())?;
    let msg = g.mul(weights, x)?;
    g.index_add_rows(msg, pairs.iter().map(receiver_of).collect(), n)
}

/// Row-wise L1 norm of `ReLU(scores)`, for link-strength export.
fn relu_l1(m: &Matrix) -> Vec<f64> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.max(0.0)).sum())
        .collect()
}

/// Coreference propagation over spans `x` (`N × d`).
///
/// `pairs` holds `(i, j)` with `j` an antecedent candidate of `i`; `score`
/// maps the current states and pairs to `P × 1` antecedent scores. Spans
/// without candidates are left unchanged.
pub fn propagate_coref<F>(
    g: &mut Graph<'_>,
    spans: Var,
    pairs: &[Pair],
    params: &CorefParams,
    iterations: usize,
    mut score: F,
    mut trace: Option<&mut Vec<LinkStrength>>,
) -> Result<Var>
where
    F: for<'a, 'p> FnMut(&'a mut Graph<'p>, Var, &[Pair]) -> Result<Var>,
{
    if pairs.is_empty() {
        return Ok(spans);
    }
    let n = g.shape(spans).0;
    let mut has = Matrix::zeros((n, 1));
    for &(i, _) in pairs {
        has[[i, 0]] = 1.0;
    }
    let has = g.constant(has);
    let hasnt = g.one_minus(has);
    let mut x = spans;
    for it in 0..iterations {
        let s = score(g, x, pairs)?;
        let w = g.segment_softmax(s, pairs.iter().map(|p| p.0).collect(), n)?;
        if let Some(t) = trace.as_deref_mut() {
            let wv = g.value(w);
            for (p, &(i, j)) in pairs.iter().enumerate() {
                t.push(LinkStrength {
                    mechanism: Mechanism::Coref,
                    iteration: it,
                    source: i,
                    target: j,
                    strength: wv[[p, 0]],
                });
            }
        }
        let xj = g.gather_rows(x, pairs.iter().map(|p| p.1).collect())?;
        let msg = g.mul_col(xj, w)?;
        let u = g.index_add_rows(msg, pairs.iter().map(|p| p.0).collect(), n)?;
        let step = gated_update(g, &params.gate, x, u)?;
        let upd = g.mul_col(step.state, has)?;
        let kept = g.mul_col(x, hasnt)?;
        x = g.add(upd, kept)?;
    }
    Ok(x)
}

/// Relation propagation over spans `x` (`N × d`); `pairs` are ordered
/// same-sentence pairs and `score` returns `P × (L_R + 1)` relation logits
/// with the null class in column 0.
pub fn propagate_relation<F>(
    g: &mut Graph<'_>,
    spans: Var,
    pairs: &[Pair],
    params: &RelationParams,
    iterations: usize,
    mut score: F,
    mut trace: Option<&mut Vec<LinkStrength>>,
) -> Result<Var>
where
    F: for<'a, 'p> FnMut(&'a mut Graph<'p>, Var, &[Pair]) -> Result<Var>,
{
    let n = g.shape(spans).0;
    let mut x = spans;
    for it in 0..iterations {
        let u = if pairs.is_empty() {
            zeros_like(g, x)
        } else {
            let logits = score(g, x, pairs)?;
            let labels = g.shape(logits).1;
            let non_null = g.slice_cols(logits, 1, labels)?;
            let active = g.relu(non_null);
            if let Some(t) = trace.as_deref_mut() {
                for (p, s) in relu_l1(g.value(non_null)).into_iter().enumerate() {
                    t.push(LinkStrength {
                        mechanism: Mechanism::Relation,
                        iteration: it,
                        source: pairs[p].0,
                        target: pairs[p].1,
                        strength: s,
                    });
                }
            }
            let a = g.param(params.projection);
            let w = g.matmul(active, a)?;
            aggregate(g, w, x, pairs, |p| p.1, |p| p.0, n)?
        };
        x = gated_update(g, &params.gate, x, u)?.state;
    }
    Ok(x)
}

/// `V(i, j) = FFNN([h_i ; g_j])`, one row of `L_A` role scores per pair.
pub fn event_similarity(
    g: &mut Graph<'_>,
    triggers: Var,
    args: Var,
    pairs: &[Pair],
    params: &EventParams,
) -> Result<Var> {
    let h = g.gather_rows(triggers, pairs.iter().map(|p| p.0).collect())?;
    let a = g.gather_rows(args, pairs.iter().map(|p| p.1).collect())?;
    let x = g.concat_cols(&[h, a])?;
    params.similarity.forward(g, x)
}

/// Updates every trigger from its candidate arguments. `pairs` are
/// `(trigger, argument)` positions.
pub fn trigger_update(
    g: &mut Graph<'_>,
    triggers: Var,
    args: Var,
    pairs: &[Pair],
    params: &EventParams,
    trace: Option<(&mut Vec<LinkStrength>, usize)>,
) -> Result<Step> {
    let nt = g.shape(triggers).0;
    let u = if pairs.is_empty() {
        zeros_like(g, triggers)
    } else {
        let v = event_similarity(g, triggers, args, pairs, params)?;
        if let Some((t, it)) = trace {
            for (p, s) in relu_l1(g.value(v)).into_iter().enumerate() {
                t.push(LinkStrength {
                    mechanism: Mechanism::Event,
                    iteration: it,
                    source: pairs[p].0,
                    target: pairs[p].1,
                    strength: s,
                });
            }
        }
        let fv = g.relu(v);
        let a = g.param(params.args_to_trigger);
        let w = g.matmul(fv, a)?;
        aggregate(g, w, args, pairs, |p| p.1, |p| p.0, nt)?
    };
    gated_update(g, &params.trigger_gate, triggers, u)
}

/// Updates every argument from the already-updated triggers, rescoring
/// `V'` on them.
pub fn argument_update(
    g: &mut Graph<'_>,
    updated_triggers: Var,
    args: Var,
    pairs: &[Pair],
    params: &EventParams,
) -> Result<Step> {
    let na = g.shape(args).0;
    let u = if pairs.is_empty() {
        zeros_like(g, args)
    } else {
        let v = event_similarity(g, updated_triggers, args, pairs, params)?;
        let fv = g.relu(v);
        let a = g.param(params.trigger_to_args);
        let w = g.matmul(fv, a)?;
        aggregate(g, w, updated_triggers, pairs, |p| p.0, |p| p.1, na)?
    };
    gated_update(g, &params.argument_gate, args, u)
}

/// `iterations` rounds of trigger pass then argument pass.
pub fn propagate_events(
    g: &mut Graph<'_>,
    triggers: Var,
    args: Var,
    pairs: &[Pair],
    params: &EventParams,
    iterations: usize,
    mut trace: Option<&mut Vec<LinkStrength>>,
) -> Result<(Var, Var)> {
    let (mut h, mut a) = (triggers, args);
    for it in 0..iterations {
        h = trigger_update(g, h, a, pairs, params, trace.as_deref_mut().map(|t| (t, it)))?.state;
        a = argument_update(g, h, a, pairs, params)?.state;
    }
    Ok((h, a))
}
