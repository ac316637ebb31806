//! Scalar-loop reference implementations used as oracles.
//!
//! Nothing here calls the graph engine: every vector is a `Vec<f64>` and
//! every matrix product is an explicit loop over parameter values.

#![allow(dead_code)]

use spangraph::tensor::nn::{Ffnn, Linear};
use spangraph::tensor::{ParamId, ParamStore};

pub type Vector = Vec<f64>;

fn at(store: &ParamStore, id: ParamId, r: usize, c: usize) -> f64 {
    store.value(id)[[r, c]]
}

/// `x W + b`, looping over the stored `in × out` weight.
pub fn linear(store: &ParamStore, l: &Linear, x: &[f64]) -> Vector {
    assert_eq!(x.len(), l.input);
    let mut y = vec![0.0; l.output];
    for (o, yo) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            acc += xi * at(store, l.weight, i, o);
        }
        *yo = acc + at(store, l.bias, 0, o);
    }
    y
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Feedforward scorer without dropout.
pub fn ffnn(store: &ParamStore, f: &Ffnn, x: &[f64]) -> Vector {
    let mut h = x.to_vec();
    let n = f.layers.len();
    for (k, l) in f.layers.iter().enumerate() {
        h = linear(store, l, &h);
        if k + 1 < n {
            h = h.into_iter().map(relu).collect();
        }
    }
    h
}

pub fn concat(a: &[f64], b: &[f64]) -> Vector {
    a.iter().chain(b).copied().collect()
}

/// `f = σ(W [x ; u] + b)`, `x' = f x + (1 − f) u`; returns `(x', f)`.
pub fn gate(store: &ParamStore, w: &Linear, x: &[f64], u: &[f64]) -> (Vector, Vector) {
    let z = linear(store, w, &concat(x, u));
    let f: Vector = z.into_iter().map(sigmoid).collect();
    let out = (0..x.len()).map(|k| f[k] * x[k] + (1.0 - f[k]) * u[k]).collect();
    (out, f)
}

/// `Σ_l a_l · A[l, k]` for a label-major `L × d` projection.
pub fn project(store: &ParamStore, a: ParamId, scores: &[f64], d: usize) -> Vector {
    let mut out = vec![0.0; d];
    for (k, o) in out.iter_mut().enumerate() {
        for (l, s) in scores.iter().enumerate() {
            *o += s * at(store, a, l, k);
        }
    }
    out
}

/// Antecedent score `FFNN([g_i ; g_j ; g_i ⊙ g_j])`.
pub fn antecedent_score(store: &ParamStore, head: &Ffnn, gi: &[f64], gj: &[f64]) -> f64 {
    let prod: Vector = gi.iter().zip(gj).map(|(a, b)| a * b).collect();
    ffnn(store, head, &concat(&concat(gi, gj), &prod))[0]
}

/// Coreference propagation; `candidates[i]` lists span `i`'s antecedents.
pub fn coref(
    store: &ParamStore,
    head: &Ffnn,
    gate_w: &Linear,
    spans: &[Vector],
    candidates: &[Vec<usize>],
    iterations: usize,
) -> Vec<Vector> {
    let mut x = spans.to_vec();
    let d = x.first().map_or(0, Vec::len);
    for _ in 0..iterations {
        let mut next = x.clone();
        for i in 0..x.len() {
            if candidates[i].is_empty() {
                continue;
            }
            let scores: Vector = candidates[i]
                .iter()
                .map(|&j| antecedent_score(store, head, &x[i], &x[j]))
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            let mut u = vec![0.0; d];
            for (c, &j) in candidates[i].iter().enumerate() {
                let w = (scores[c] - m).exp() / z;
                for k in 0..d {
                    u[k] += w * x[j][k];
                }
            }
            next[i] = gate(store, gate_w, &x[i], &u).0;
        }
        x = next;
    }
    x
}

/// Relation propagation over spans grouped by `sentence`.
pub fn relation(
    store: &ParamStore,
    head: &Ffnn,
    projection: ParamId,
    gate_w: &Linear,
    spans: &[Vector],
    sentence: &[usize],
    iterations: usize,
) -> Vec<Vector> {
    let mut x = spans.to_vec();
    let d = x.first().map_or(0, Vec::len);
    for _ in 0..iterations {
        let mut next = x.clone();
        for i in 0..x.len() {
            let mut u = vec![0.0; d];
            for j in 0..x.len() {
                if i == j || sentence[i] != sentence[j] {
                    continue;
                }
                let logits = ffnn(store, head, &concat(&x[i], &x[j]));
                let active: Vector = logits[1..].iter().copied().map(relu).collect();
                let v = project(store, projection, &active, d);
                for k in 0..d {
                    u[k] += v[k] * x[j][k];
                }
            }
            next[i] = gate(store, gate_w, &x[i], &u).0;
        }
        x = next;
    }
    x
}

pub struct EventRefParams<'a> {
    pub similarity: &'a Ffnn,
    pub args_to_trigger: ParamId,
    pub trigger_to_args: ParamId,
    pub trigger_gate: &'a Linear,
    pub argument_gate: &'a Linear,
}

/// Event propagation; `linked[i][j]` says whether trigger `i` and argument
/// `j` are neighbours.
pub fn events(
    store: &ParamStore,
    p: &EventRefParams<'_>,
    triggers: &[Vector],
    args: &[Vector],
    linked: &[Vec<bool>],
    iterations: usize,
) -> (Vec<Vector>, Vec<Vector>) {
    let mut h = triggers.to_vec();
    let mut g = args.to_vec();
    let d = h.first().or(g.first()).map_or(0, Vec::len);
    for _ in 0..iterations {
        let mut h_next = h.clone();
        for i in 0..h.len() {
            let mut u = vec![0.0; d];
            for j in 0..g.len() {
                if !linked[i][j] {
                    continue;
                }
                let v = ffnn(store, p.similarity, &concat(&h[i], &g[j]));
                let active: Vector = v.into_iter().map(relu).collect();
                let s = project(store, p.args_to_trigger, &active, d);
                for k in 0..d {
                    u[k] += s[k] * g[j][k];
                }
            }
            h_next[i] = gate(store, p.trigger_gate, &h[i], &u).0;
        }
        let mut g_next = g.clone();
        for j in 0..g.len() {
            let mut u = vec![0.0; d];
            for i in 0..h_next.len() {
                if !linked[i][j] {
                    continue;
                }
                let v = ffnn(store, p.similarity, &concat(&h_next[i], &g[j]));
                let active: Vector = v.into_iter().map(relu).collect();
                let s = project(store, p.trigger_to_args, &active, d);
                for k in 0..d {
                    u[k] += s[k] * h_next[i][k];
                }
            }
            g_next[j] = gate(store, p.argument_gate, &g[j], &u).0;
        }
        h = h_next;
        g = g_next;
    }
    (h, g)
}

/// Tuple-set micro F1 counted by hand: `(tp, fp, fn)`.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}
