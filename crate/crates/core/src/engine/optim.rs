//! SGD with momentum and the plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, Matrix, ParamStore};

/// Heavy-ball SGD with L2 weight decay:
///
/// ```text
/// g ← ∇ + wd · p
/// v ← μ v + g
/// p ← p − lr · v
/// ```
///
/// Parameters that received no gradient in a step are left untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// One buffer per parameter, allocated on first use.
    pub velocity: Vec<Option<Matrix>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64, n_params: usize) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![None; n_params],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64, scale: f64) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(grad) = grads.param(id) else { continue };
            let p = store.value_mut(id);
            let mut d = grad * scale;
            if self.weight_decay != 0.0 {
                d.scaled_add(self.weight_decay, p);
            }
            let v = match &mut self.velocity[id.index()] {
                Some(v) => {
                    v.mapv_inplace(|x| x * self.momentum);
                    *v += &d;
                    v
                }
                slot => slot.insert(d),
            };
            p.scaled_add(-lr, v);
        }
    }
}

/// Multiplier that brings the global gradient norm down to `max_norm`.
pub fn clip_scale(store: &ParamStore, grads: &Gradients, max_norm: Option<f64>) -> f64 {
    let Some(max) = max_norm else { return 1.0 };
    let sq: f64 = store
        .ids()
        .filter_map(|id| grads.param(id))
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max {
        max / norm
    } else {
        1.0
    }
}

/// Halves the learning rate once dev F1 has failed to improve for
/// `patience` consecutive epochs; the counter restarts after every
/// improvement and every halving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauHalving {
    pub lr: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub stale_epochs: usize,
}

impl PlateauHalving {
    pub fn new(lr: f64, patience: usize) -> Self {
        Self {
            lr,
            patience,
            best: None,
            stale_epochs: 0,
        }
    }

    /// Records one epoch's dev F1 and returns the learning rate for the next.
    pub fn step(&mut self, dev_f1: f64) -> f64 {
        if self.best.is_none_or(|b| dev_f1 > b) {
            self.best = Some(dev_f1);
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.lr *= 0.5;
                self.stale_epochs = 0;
            }
        }
        self.lr
    }
}
