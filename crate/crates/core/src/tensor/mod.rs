//! Dense `f64` matrices with a reverse-mode differentiation tape.
//!
//! Every value in the model is a row-major 2-D [`Matrix`]; vectors are
//! `1 × n` rows. Learnable state lives in a [`ParamStore`]; each forward
//! pass builds a fresh [`Graph`] that borrows the store, and
//! [`Graph::backward`] returns a [`Gradients`] table that the optimizer
//! folds back into the store.

mod gradcheck;
mod graph;
pub mod nn;

use std::collections::HashMap;

use ndarray::Array2;
use thiserror::Error;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};

pub type Matrix = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("non-finite objective value {0}")]
    NonFinite(f64),
}

pub(crate) fn dims(m: &Matrix) -> (usize, usize) {
    m.dim()
}

/// A dense value with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Matrix,
    pub requires_grad: bool,
    pub grad: Option<Matrix>,
}

impl Tensor {
    pub fn new(data: Matrix, requires_grad: bool) -> Self {
        Self {
            data,
            requires_grad,
            grad: None,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn zero_grad(&mut self) {
        if self.requires_grad {
            self.grad = Some(Matrix::zeros(self.data.dim()));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is always a
    /// wiring bug in model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(Tensor::new(value, true));
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0].data
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0].data
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Adds `grads` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            if !t.requires_grad {
                continue;
            }
            let buf = t.grad.get_or_insert_with(|| Matrix::zeros(t.data.dim()));
            if let Some(g) = grads.param(ParamId(i)) {
                *buf += g;
            }
        }
    }

    pub fn grad(&self, id: ParamId) -> Option<&Matrix> {
        self.tensors[id.0].grad.as_ref()
    }
}
