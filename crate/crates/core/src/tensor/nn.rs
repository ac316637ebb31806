//! Layers assembled from graph primitives.

use ndarray::{s, Array2};
use rand::Rng;

use super::{Graph, Matrix, ParamId, ParamStore, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Uniform in `[-1/√fan_in, 1/√fan_in]`.
pub fn fan_in_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

pub fn small_uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// `y = x W + b` with `W: in × out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(rng, input, output, input),
        );
        let bias = store.add(format!("{name}.bias"), fan_in_uniform(rng, 1, output, input));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Feedforward scorer: `hidden_layers` ReLU layers with dropout, then a
/// linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffnn {
    pub layers: Vec<Linear>,
    pub dropout: f64,
}

impl Ffnn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        hidden_layers: usize,
        output: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut width = input;
        for i in 0..hidden_layers {
            layers.push(Linear::new(
                store,
                &format!("{name}.hidden{i}"),
                width,
                hidden,
                rng,
            ));
            width = hidden;
        }
        layers.push(Linear::new(store, &format!("{name}.out"), width, output, rng));
        Self { layers, dropout }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").output
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        let mut h = x;
        for layer in hidden {
            let z = layer.forward(g, h)?;
            let a = g.relu(z);
            h = g.dropout(a, self.dropout);
        }
        last.forward(g, h)
    }
}

/// Lookup table; row `i` embeds id `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = store.add(format!("{name}.table"), small_uniform(rng, rows, dim, 0.1));
        Self { table, rows, dim }
    }

    pub fn lookup(&self, g: &mut Graph<'_>, ids: Vec<usize>) -> Result<Var> {
        let t = g.param(self.table);
        g.gather_rows(t, ids)
    }
}

/// Single-direction LSTM over the rows of a `T × input` matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lstm {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let input_weight = store.add(
            format!("{name}.input_weight"),
            fan_in_uniform(rng, input, 4 * hidden, hidden),
        );
        let hidden_weight = store.add(
            format!("{name}.hidden_weight"),
            fan_in_uniform(rng, hidden, 4 * hidden, hidden),
        );
        // gate order i, f, g, o; forget bias starts at 1
        let mut b = Matrix::zeros((1, 4 * hidden));
        b.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
        let bias = store.add(format!("{name}.bias"), b);
        Self {
            input_weight,
            hidden_weight,
            bias,
            hidden,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, reverse: bool) -> Result<Var> {
        let steps = g.shape(x).0;
        let h_dim = self.hidden;
        let wx = g.param(self.input_weight);
        let wh = g.param(self.hidden_weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, wx)?;
        let xw = g.add_row(xw, b)?;
        let mut h = g.constant(Matrix::zeros((1, h_dim)));
        let mut c = g.constant(Matrix::zeros((1, h_dim)));
        let mut outputs = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = g.gather_rows(xw, vec![t])?;
            let hw = g.matmul(h, wh)?;
            let z = g.add(xt, hw)?;
            let zi = g.slice_cols(z, 0, h_dim)?;
            let zf = g.slice_cols(z, h_dim, 2 * h_dim)?;
            let zg = g.slice_cols(z, 2 * h_dim, 3 * h_dim)?;
            let zo = g.slice_cols(z, 3 * h_dim, 4 * h_dim)?;
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let cand = g.tanh(zg);
            let o = g.sigmoid(zo);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c);
            h = g.mul(o, tc)?;
            outputs[t] = h;
        }
        if steps == 0 {
            return Ok(g.constant(Matrix::zeros((0, h_dim))));
        }
        g.concat_rows(&outputs)
    }
}

/// Forward and backward LSTMs with concatenated outputs (`T × 2h`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            forward: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn run(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let f = self.forward.forward(g, x, false)?;
        let b = self.backward.forward(g, x, true)?;
        g.concat_cols(&[f, b])
    }
}
