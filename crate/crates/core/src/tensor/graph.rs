use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dims, Matrix, ParamId, ParamStore, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentLogSumExp(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    IndexAddRows(Var, Vec<usize>),
    Dropout(Var, Matrix),
    Sum(Var),
    Mean(Var),
    CrossEntropy(Var, Matrix),
    BceWithLogits(Var, Vec<f64>),
}

enum Value<'p> {
    Owned(Matrix),
    Borrowed(&'p Matrix),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation graph built during one forward pass.
///
/// Parameters are borrowed from the [`ParamStore`], so the graph must be
/// dropped before the optimizer mutates the store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    params: HashMap<ParamId, Matrix>,
    leaves: HashMap<usize, Matrix>,
    leaf_shapes: HashMap<usize, (usize, usize)>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    /// Gradient of a `requires_grad` input leaf; zeros if the leaf did not
    /// contribute to the loss.
    pub fn input(&self, v: Var) -> Option<Matrix> {
        match self.leaves.get(&v.0) {
            Some(g) => Some(g.clone()),
            None => self.leaf_shapes.get(&v.0).map(|&s| Matrix::zeros(s)),
        }
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: dims(a),
            rhs: dims(b),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Per-segment maxima and normalizers of a column vector.
fn segment_stats(x: &Matrix, seg: &[usize], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut max = vec![f64::NEG_INFINITY; n];
    for (p, &s) in seg.iter().enumerate() {
        max[s] = max[s].max(x[[p, 0]]);
    }
    let mut z = vec![0.0; n];
    for (p, &s) in seg.iter().enumerate() {
        z[s] += (x[[p, 0]] - max[s]).exp();
    }
    (max, z)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Graph with dropout active, masks drawn from `seed`.
    pub fn training(params: &'p ParamStore, seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// The single entry of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Input leaf whose gradient is reported by [`Gradients::input`].
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        let m = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row length matches");
        self.constant(m)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let t = self.params.tensor(id);
        self.nodes.push(Node {
            value: Value::Borrowed(&t.data),
            op: Op::Param(id),
            requires_grad: t.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: dims(av),
                rhs: dims(bv),
            });
        }
        let out = av.dot(bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `a (n × m) + row (1 × m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != av.ncols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: dims(av),
                rhs: dims(rv),
            });
        }
        let out = av + rv;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `a (n × m) ⊙ col (n × 1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.ncols() != 1 || cv.nrows() != av.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col",
                lhs: dims(av),
                rhs: dims(cv),
            });
        }
        let out = av * cv;
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(out, Op::MulCol(a, col), rg))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).mapv(|v| scale * v + shift);
        let rg = self.rg(a);
        self.push(out, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// `1 − a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    fn check_segments(&self, op: &'static str, a: Var, seg: &[usize], n: usize) -> Result<()> {
        let av = self.value(a);
        if av.ncols() != 1 || av.nrows() != seg.len() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: dims(av),
                rhs: (seg.len(), 1),
            });
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= n) {
            return Err(TensorError::Invalid {
                op,
                msg: format!("segment id {bad} out of range for {n} segments"),
            });
        }
        Ok(())
    }

    /// Softmax of a column vector within groups of rows sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, seg: Vec<usize>, n_segments: usize) -> Result<Var> {
        self.check_segments("segment_softmax", a, &seg, n_segments)?;
        let av = self.value(a);
        let (max, z) = segment_stats(av, &seg, n_segments);
        let mut out = Matrix::zeros(av.dim());
        for (p, &s) in seg.iter().enumerate() {
            out[[p, 0]] = (av[[p, 0]] - max[s]).exp() / z[s];
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentSoftmax(a, seg), rg))
    }

    /// Log-sum-exp of a column vector per segment; empty segments yield −∞.
    pub fn segment_logsumexp(&mut self, a: Var, seg: Vec<usize>, n_segments: usize) -> Result<Var> {
        self.check_segments("segment_logsumexp", a, &seg, n_segments)?;
        let (max, z) = segment_stats(self.value(a), &seg, n_segments);
        let mut out = Matrix::zeros((n_segments, 1));
        for s in 0..n_segments {
            out[[s, 0]] = max[s] + z[s].ln();
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentLogSumExp(a, seg), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).nrows();
        for &p in &parts[1..] {
            if self.value(p).nrows() != first {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: dims(self.value(parts[0])),
                    rhs: dims(self.value(p)),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("rows checked");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).ncols();
        for &p in &parts[1..] {
            if self.value(p).ncols() != first {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: dims(self.value(parts[0])),
                    rhs: dims(self.value(p)),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("cols checked");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.ncols() {
            return Err(TensorError::Invalid {
                op: "slice_cols",
                msg: format!("range {start}..{end} outside {} columns", av.ncols()),
            });
        }
        let out = av.slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Rows of `a` selected by `idx` (repeats allowed). Embedding lookup.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.nrows()) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("row {bad} out of range for shape {:?}", dims(av)),
            });
        }
        let mut out = Matrix::zeros((idx.len(), av.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&av.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx), rg))
    }

    /// `out[idx[p]] += a[p]` into an `n_rows × m` zero matrix.
    pub fn index_add_rows(&mut self, a: Var, idx: Vec<usize>, n_rows: usize) -> Result<Var> {
        let av = self.value(a);
        if idx.len() != av.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "index_add_rows",
                lhs: dims(av),
                rhs: (idx.len(), av.ncols()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_rows) {
            return Err(TensorError::Invalid {
                op: "index_add_rows",
                msg: format!("target row {bad} out of range for {n_rows} rows"),
            });
        }
        let mut out = Matrix::zeros((n_rows, av.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            let mut dst = out.row_mut(i);
            dst += &av.row(r);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::IndexAddRows(a, idx), rg))
    }

    /// Inverted dropout; identity outside training graphs.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let shape = self.value(a).dim();
        let mut mask = Matrix::zeros(shape);
        for m in mask.iter_mut() {
            *m = if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            };
        }
        let out = self.value(a) * &mask;
        let rg = self.rg(a);
        self.push(out, Op::Dropout(a, mask), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.len().max(1) as f64;
        let out = Matrix::from_elem((1, 1), av.sum() / n);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Summed softmax cross-entropy of each row against its target class.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.nrows() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: dims(lv),
                rhs: (targets.len(), lv.ncols()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= lv.ncols()) {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!("target class {bad} out of range for {} classes", lv.ncols()),
            });
        }
        let logp = log_softmax_rows(lv);
        let loss: f64 = targets.iter().enumerate().map(|(r, &t)| -logp[[r, t]]).sum();
        // d loss / d logits = softmax − onehot
        let mut dlogits = logp.mapv(f64::exp);
        for (r, &t) in targets.iter().enumerate() {
            dlogits[[r, t]] -= 1.0;
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Matrix::from_elem((1, 1), loss),
            Op::CrossEntropy(logits, dlogits),
            rg,
        ))
    }

    /// Summed binary cross-entropy of a column of logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.ncols() != 1 || lv.nrows() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: dims(lv),
                rhs: (targets.len(), 1),
            });
        }
        let loss: f64 = lv
            .column(0)
            .iter()
            .zip(targets)
            .map(|(&x, &y)| softplus(x) - y * x)
            .sum();
        let rg = self.rg(logits);
        Ok(self.push(
            Matrix::from_elem((1, 1), loss),
            Op::BceWithLogits(logits, targets.to_vec()),
            rg,
        ))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::ones((1, 1)));
        let mut out = Gradients {
            params: HashMap::new(),
            leaves: HashMap::new(),
            leaf_shapes: HashMap::new(),
        };
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if matches!(node.op, Op::Input) && node.requires_grad {
                out.leaf_shapes.insert(i, self.value(Var(i)).dim());
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = self.value(Var(i));
            let mut send = |v: Var, d: Matrix| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &d,
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Input => {
                    out.leaves.insert(i, g.as_standard_layout().into_owned());
                }
                Op::Param(id) => {
                    out.params.insert(*id, g.as_standard_layout().into_owned());
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        send(*a, g.dot(&bv.t()));
                    }
                    if self.rg(*b) {
                        send(*b, av.t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddRow(a, r) => {
                    send(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, -&g);
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, &g * self.value(*b));
                    send(*b, &g * self.value(*a));
                }
                Op::MulCol(a, c) => {
                    let (av, cv) = (self.value(*a), self.value(*c));
                    if self.rg(*c) {
                        send(*c, (&g * av).sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    send(*a, &g * cv);
                }
                Op::Affine(a, scale) => send(*a, g * *scale),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    Zip::from(&mut d).and(x).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    send(*a, d);
                }
                Op::Sigmoid(a) => send(*a, &g * &y.mapv(|s| s * (1.0 - s))),
                Op::Tanh(a) => send(*a, &g * &y.mapv(|t| 1.0 - t * t)),
                Op::SoftmaxRows(a) => {
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*a, y * &(&g - &dot));
                }
                Op::LogSoftmaxRows(a) => {
                    let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*a, &g - &(y.mapv(f64::exp) * &gsum));
                }
                Op::SegmentSoftmax(a, seg) => {
                    let n = seg.iter().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; n];
                    for (p, &s) in seg.iter().enumerate() {
                        dot[s] += g[[p, 0]] * y[[p, 0]];
                    }
                    let mut d = Matrix::zeros(g.dim());
                    for (p, &s) in seg.iter().enumerate() {
                        d[[p, 0]] = y[[p, 0]] * (g[[p, 0]] - dot[s]);
                    }
                    send(*a, d);
                }
                Op::SegmentLogSumExp(a, seg) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.dim());
                    for (p, &s) in seg.iter().enumerate() {
                        d[[p, 0]] = g[[s, 0]] * (x[[p, 0]] - y[[s, 0]]).exp();
                    }
                    send(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        send(p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        send(p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Matrix::zeros(self.value(*a).dim());
                    let w = g.ncols();
                    d.slice_mut(s![.., *start..*start + w]).assign(&g);
                    send(*a, d);
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Matrix::zeros(self.value(*a).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = d.row_mut(i);
                        dst += &g.row(r);
                    }
                    send(*a, d);
                }
                Op::IndexAddRows(a, idx) => {
                    let mut d = Matrix::zeros(self.value(*a).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        d.row_mut(r).assign(&g.row(i));
                    }
                    send(*a, d);
                }
                Op::Dropout(a, mask) => send(*a, &g * mask),
                Op::Sum(a) => {
                    let shape = self.value(*a).dim();
                    send(*a, Matrix::from_elem(shape, g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let n = av.len().max(1) as f64;
                    send(*a, Matrix::from_elem(av.dim(), g[[0, 0]] / n));
                }
                Op::CrossEntropy(a, dlogits) => send(*a, dlogits * g[[0, 0]]),
                Op::BceWithLogits(a, targets) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.dim());
                    for (p, &t) in targets.iter().enumerate() {
                        d[[p, 0]] = g[[0, 0]] * (sigmoid(x[[p, 0]]) - t);
                    }
                    send(*a, d);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(array![[0.0]]);
        let y = g.sigmoid(x);
        assert_eq!(g.value(y)[[0, 0]], 0.5);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.input(x).unwrap()[[0, 0]], 0.25);
    }

    #[test]
    fn relu_forward_and_dead_region() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(array![[-1.0, 2.0]]);
        let y = g.relu(x);
        assert_eq!(g.value(y), &array![[0.0, 2.0]]);
        let l = g.sum(y);
        let d = g.backward(l).unwrap().input(x).unwrap();
        assert_eq!(d, array![[0.0, 1.0]]);
    }

    #[test]
    fn concat_lengths_add() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.row(&[1.0, 2.0, 3.0]);
        let b = g.row(&[4.0, 5.0]);
        let c = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.shape(c), (1, 5));
    }

    #[test]
    fn product_rule_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(array![[1.0, -2.0, 3.0]]);
        let y = g.constant(array![[0.5, 4.0, -1.5]]);
        let xy = g.mul(x, y).unwrap();
        let l = g.sum(xy);
        let d = g.backward(l).unwrap().input(x).unwrap();
        assert_eq!(d, array![[0.5, 4.0, -1.5]]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Matrix::zeros((2, 3)));
        let b = g.constant(Matrix::zeros((2, 3)));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: (2, 3),
                rhs: (2, 3)
            }
        );
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.leaf(Matrix::zeros((2, 2)));
        let b = g.relu(a);
        assert!(matches!(g.backward(b), Err(TensorError::NonScalarLoss((2, 2)))));
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(array![[1.0, 2.0]]);
        let unused = g.leaf(array![[3.0, 4.0, 5.0]]);
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.input(unused).unwrap(), Matrix::zeros((1, 3)));
    }

    #[test]
    fn fan_out_accumulates() {
        // x used twice: d/dx [sum(x ⊙ x) + sum(3x)] = 2x + 3
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(array![[1.0, -2.0]]);
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0);
        let a = g.sum(sq);
        let b = g.sum(lin);
        let l = g.add(a, b).unwrap();
        let d = g.backward(l).unwrap().input(x).unwrap();
        assert_eq!(d, array![[5.0, -1.0]]);
    }

    #[test]
    fn dropout_is_identity_at_inference_and_seeded_in_training() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Matrix::ones((4, 8)));
        assert_eq!(g.dropout(x, 0.4), x);

        let run = |seed| {
            let mut g = Graph::training(&store, seed);
            let x = g.constant(Matrix::ones((4, 8)));
            let y = g.dropout(x, 0.4);
            g.value(y).clone()
        };
        let a = run(7);
        assert_eq!(a, run(7));
        for &v in a.iter() {
            assert!(v == 0.0 || (v - 1.0 / 0.6).abs() < 1e-15);
        }
    }

    #[test]
    fn segment_softmax_normalizes_per_segment() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(array![[1.0], [2.0], [0.5], [-3.0], [7.0]]);
        let y = g.segment_softmax(x, vec![0, 0, 1, 1, 2], 3).unwrap();
        let v = g.value(y);
        assert!((v[[0, 0]] + v[[1, 0]] - 1.0).abs() < 1e-15);
        assert!((v[[2, 0]] + v[[3, 0]] - 1.0).abs() < 1e-15);
        assert_eq!(v[[4, 0]], 1.0);
    }

    #[test]
    fn cross_entropy_of_confident_correct_logits_vanishes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(array![[50.0, 0.0, 0.0], [0.0, 0.0, 50.0]]);
        let l = g.cross_entropy(x, &[0, 2]).unwrap();
        assert!(g.scalar(l) < 1e-20);
    }
}
