//! Candidate span enumeration, span representations and beam pruning.

use rand::Rng;

use crate::corpus::Span;
use crate::tensor::nn::{Embedding, Linear};
use crate::tensor::{Graph, ParamStore, TensorError, Var};

/// Width buckets: 1, 2, 3, 4, 5–8, 9+.
pub const WIDTH_BUCKETS: usize = 6;

pub fn width_bucket(width: usize) -> usize {
    match width {
        0 | 1 => 0,
        2..=4 => width - 1,
        5..=8 => 4,
        _ => 5,
    }
}

/// All spans of width `1..=min(max_width, n)` in `(start, end)` order.
pub fn enumerate_spans(n: usize, max_width: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for start in 0..n {
        for end in start + 1..=(start + max_width).min(n) {
            out.push(Span::new(start, end));
        }
    }
    out
}

/// `⌈lambda · n⌉`, tolerant of representation error in `lambda`.
pub fn beam_capacity(lambda: f64, n: usize) -> usize {
    ((lambda * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Pruned candidates ordered by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    /// Indices into the candidate list.
    pub members: Vec<usize>,
    pub scores: Vec<f64>,
    pub capacity: usize,
}

impl Beam {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members in candidate order.
    pub fn sorted_members(&self) -> Vec<usize> {
        let mut m = self.members.clone();
        m.sort_unstable();
        m
    }
}

/// Keeps the `⌈lambda · n⌉` best-scoring candidates; equal scores keep the
/// earlier candidate.
pub fn prune_beam(scores: &[f64], lambda: f64, n: usize) -> Beam {
    assert!(lambda > 0.0, "beam ratio must be positive");
    let capacity = beam_capacity(lambda, n);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(capacity.min(scores.len()));
    Beam {
        scores: order.iter().map(|&i| scores[i]).collect(),
        members: order,
        capacity,
    }
}

/// `[v_left ; v_right ; width]` followed by a linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanEncoder {
    pub width_embedding: Embedding,
    pub projection: Linear,
}

impl SpanEncoder {
    pub fn new(
        store: &mut ParamStore,
        token_dim: usize,
        width_dim: usize,
        span_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let width_embedding = Embedding::new(store, "span.width", WIDTH_BUCKETS, width_dim, rng);
        let projection = Linear::new(store, "span.projection", 2 * token_dim + width_dim, span_dim, rng);
        Self {
            width_embedding,
            projection,
        }
    }

    /// Unprojected concatenation, `|spans| × (2·d_tok + d_width)`.
    pub fn raw_representation(
        &self,
        g: &mut Graph<'_>,
        tokens: Var,
        spans: &[Span],
    ) -> Result<Var, TensorError> {
        let left = g.gather_rows(tokens, spans.iter().map(|s| s.start).collect())?;
        let right = g.gather_rows(tokens, spans.iter().map(|s| s.end - 1).collect())?;
        let width = self
            .width_embedding
            .lookup(g, spans.iter().map(|s| width_bucket(s.width())).collect())?;
        g.concat_cols(&[left, right, width])
    }

    /// `|spans| × span_dim`.
    pub fn represent(&self, g: &mut Graph<'_>, tokens: Var, spans: &[Span]) -> Result<Var, TensorError> {
        let raw = self.raw_representation(g, tokens, spans)?;
        self.projection.forward(g, raw)
    }
}
