//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order of the computation DAG and `backward` is a single
//! reverse sweep. Values are immutable once recorded.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::tensor::softmax_in_place;
use super::{NumericError, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    ConcatCols(Vec<Var>),
    RowSoftmax(Var),
    RowLogSoftmax { input: Var, exclude_diagonal: bool },
    ReduceSum(Var),
    ReduceMean(Var),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    ScaleRows(Var, Arc<[f64]>),
    RowNorm(Var),
    NormalizeRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Lower bound on a row norm inside `normalize_rows`.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Single-writer computation record. Distinct tapes are independent and can
/// live on different threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a named trainable leaf. Present (possibly all zero) for
    /// every parameter registered on the tape.
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_name.iter()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }

    /// Gradient reaching an arbitrary node, if any flowed there.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, NumericError> {
        value.ensure_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf. Registering the same name twice returns the first node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        self.nodes.push(Node {
            value: value.clone(),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Register a parameter from a store, failing if it is absent.
    pub fn param_from(&mut self, store: &ParamStore, name: &str) -> Result<Var, NumericError> {
        let t = store
            .get(name)
            .ok_or_else(|| NumericError::MissingParameter(name.to_string()))?;
        Ok(self.param(name, t))
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg, "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg, "add")
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix. The only
    /// broadcasting the tape supports.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericError> {
        let (x, b) = (self.value(a), self.value(bias));
        let (r, c) = x.dims();
        if b.dims() != (1, c) {
            return Err(NumericError::shape("add_bias", x.shape(), b.shape()));
        }
        let mut out = x.clone().reshape(vec![r, c])?;
        for i in 0..r {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(out, Op::AddBias(a, bias), rg, "add_bias")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumericError> {
        let value = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg, "scale")
    }

    /// Multiply every entry of `a` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, NumericError> {
        let sv = self.value(s).item()?;
        let value = self.value(a).scale(sv);
        let rg = self.rg(a) || self.rg(s);
        self.push(value, Op::MulScalar(a, s), rg, "mul_scalar")
    }

    /// relu with derivative 0 at 0.
    pub fn relu(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg, "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg, "sigmoid")
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg, "softplus")
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg, "log")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        if parts.is_empty() {
            return Err(NumericError::InvalidArgument("concat of zero tensors".into()));
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg, "concat")
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).row_softmax();
        let rg = self.rg(a);
        self.push(value, Op::RowSoftmax(a), rg, "row_softmax")
    }

    /// Row-wise log-softmax. With `exclude_diagonal` the diagonal of a square
    /// input is left out of each normalizer and its output entry is 0.
    pub fn row_log_softmax(&mut self, a: Var, exclude_diagonal: bool) -> Result<Var, NumericError> {
        let x = self.value(a);
        let (r, c) = x.dims();
        if exclude_diagonal && (r != c || c < 2) {
            return Err(NumericError::InvalidArgument(format!(
                "diagonal exclusion needs a square matrix with at least 2 rows, got {:?}",
                x.shape()
            )));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = x.row(i);
            let max = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| !(exclude_diagonal && j == i))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + row
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| !(exclude_diagonal && j == i))
                    .map(|(_, &v)| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            for j in 0..c {
                if !(exclude_diagonal && j == i) {
                    out[i * c + j] = row[j] - lse;
                }
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        let rg = self.rg(a);
        self.push(
            value,
            Op::RowLogSoftmax {
                input: a,
                exclude_diagonal,
            },
            rg,
            "row_log_softmax",
        )
    }

    pub fn reduce_sum(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::ReduceSum(a), rg, "reduce_sum")
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var, NumericError> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(NumericError::InvalidArgument("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(t.mean());
        let rg = self.rg(a);
        self.push(value, Op::ReduceMean(a), rg, "reduce_mean")
    }

    /// `out[k] = a[index[k]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, NumericError> {
        let x = self.value(a);
        let (r, c) = x.dims();
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(NumericError::InvalidArgument(format!(
                "gather index {bad} out of range for {r} rows"
            )));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(x.row(i));
        }
        let value = Tensor::matrix(index.len(), c, data)?;
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, index), rg, "gather_rows")
    }

    /// `out[s] = sum of a[k] with segment[k] == s`, for `s < num_segments`.
    pub fn segment_sum(&mut self, a: Var, segment: Arc<[usize]>, num_segments: usize) -> Result<Var, NumericError> {
        let x = self.value(a);
        let (r, c) = x.dims();
        if segment.len() != r {
            return Err(NumericError::InvalidArgument(format!(
                "segment vector has {} entries for {r} rows",
                segment.len()
            )));
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= num_segments) {
            return Err(NumericError::InvalidArgument(format!(
                "segment id {bad} out of range for {num_segments} segments"
            )));
        }
        let mut out = Tensor::zeros(&[num_segments, c]);
        for (k, &s) in segment.iter().enumerate() {
            for (o, &v) in out.row_mut(s).iter_mut().zip(x.row(k)) {
                *o += v;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SegmentSum(a, segment), rg, "segment_sum")
    }

    /// Multiply row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Arc<[f64]>) -> Result<Var, NumericError> {
        let x = self.value(a);
        let (r, c) = x.dims();
        if factors.len() != r {
            return Err(NumericError::InvalidArgument(format!(
                "{} row factors for {r} rows",
                factors.len()
            )));
        }
        let mut out = x.clone().reshape(vec![r, c])?;
        for (i, &f) in factors.iter().enumerate() {
            for v in out.row_mut(i) {
                *v *= f;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::ScaleRows(a, factors), rg, "scale_rows")
    }

    /// Euclidean norm of each row, as an `r x 1` column. The derivative at a
    /// zero row is taken as 0.
    pub fn row_norm(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let r = x.rows();
        let data = (0..r).map(|i| norm(x.row(i))).collect();
        let value = Tensor::matrix(r, 1, data)?;
        let rg = self.rg(a);
        self.push(value, Op::RowNorm(a), rg, "row_norm")
    }

    /// Divide each row by `max(norm, NORMALIZE_EPS)`.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let (r, c) = x.dims();
        let mut out = x.clone().reshape(vec![r, c])?;
        for i in 0..r {
            let n = norm(out.row(i)).max(NORMALIZE_EPS);
            for v in out.row_mut(i) {
                *v /= n;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::NormalizeRows(a), rg, "normalize_rows")
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericError::NonScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let mut by_name = BTreeMap::new();
        for (name, &v) in &self.params {
            let g = grads
                .get(v.0)
                .and_then(Option::clone)
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            let g = g.reshape(self.value(v).shape().to_vec())?;
            by_name.insert(name.clone(), g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            by_name,
            by_node: grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NumericError> {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul(&bv.transpose())?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, av.transpose().matmul(g)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let (r, c) = g.dims();
                    let mut col = vec![0.0; c];
                    for i in 0..r {
                        for (s, &v) in col.iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    self.accumulate(grads, *b, Tensor::new(shape, col)?);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).item()?;
                self.accumulate(grads, *a, g.scale(sv));
                if self.rg(*s) {
                    let dot: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                    let shape = self.value(*s).shape().to_vec();
                    self.accumulate(grads, *s, Tensor::new(shape, vec![dot])?);
                }
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(y, "sigmoid", |gv, s| gv * s * (1.0 - s))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.value(*a), "softplus", |gv, x| gv * sigmoid(x))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip_map(self.value(*a), "log", |gv, x| gv / x)?;
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        let shape = self.value(p).shape().to_vec();
                        self.accumulate(grads, p, Tensor::new(shape, data)?);
                    }
                    offset += w;
                }
            }
            Op::RowSoftmax(a) => {
                let (r, c) = y.dims();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ga[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::new(shape, ga)?);
            }
            Op::RowLogSoftmax {
                input,
                exclude_diagonal,
            } => {
                let (r, c) = y.dims();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let keep = |j: usize| !(*exclude_diagonal && j == i);
                    let gsum: f64 = (0..c).filter(|&j| keep(j)).map(|j| gr[j]).sum();
                    for j in (0..c).filter(|&j| keep(j)) {
                        ga[i * c + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                let shape = self.value(*input).shape().to_vec();
                self.accumulate(grads, *input, Tensor::new(shape, ga)?);
            }
            Op::ReduceSum(a) => {
                let gv = g.item()?;
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::ReduceMean(a) => {
                let n = self.value(*a).numel() as f64;
                let gv = g.item()? / n;
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::GatherRows(a, index) => {
                let src = self.value(*a);
                let mut ga = Tensor::zeros(&[src.rows(), src.cols()]);
                for (k, &i) in index.iter().enumerate() {
                    for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                let ga = ga.reshape(src.shape().to_vec())?;
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentSum(a, segment) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut data = Vec::with_capacity(segment.len() * c);
                for &s in segment.iter() {
                    data.extend_from_slice(g.row(s));
                }
                self.accumulate(grads, *a, Tensor::new(src.shape().to_vec(), data)?);
            }
            Op::ScaleRows(a, factors) => {
                let mut ga = g.clone();
                for (i, &f) in factors.iter().enumerate() {
                    for v in ga.row_mut(i) {
                        *v *= f;
                    }
                }
                let ga = ga.reshape(self.value(*a).shape().to_vec())?;
                self.accumulate(grads, *a, ga);
            }
            Op::RowNorm(a) => {
                let x = self.value(*a);
                let (r, c) = x.dims();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let n = y.data()[i];
                    if n > 0.0 {
                        let gi = g.data()[i];
                        for j in 0..c {
                            ga[i * c + j] = gi * x.row(i)[j] / n;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), ga)?);
            }
            Op::NormalizeRows(a) => {
                let x = self.value(*a);
                let (r, c) = x.dims();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let n = norm(x.row(i));
                    let (yr, gr) = (y.row(i), g.row(i));
                    if n < NORMALIZE_EPS {
                        for j in 0..c {
                            ga[i * c + j] = gr[j] / NORMALIZE_EPS;
                        }
                    } else {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            ga[i * c + j] = (gr[j] - yr[j] * dot) / n;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), ga)?);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Softmax of a plain slice, exposed for callers outside the tape.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    softmax_in_place(&mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[6.0]);
    }

    #[test]
    fn relu_mean_gradient() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::row_vector(vec![-1.0, 2.0]));
        let r = tape.relu(x).unwrap();
        let m = tape.reduce_mean(r).unwrap();
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::row_vector(vec![0.0]));
        let r = tape.relu(x).unwrap();
        let s = tape.reduce_sum(r).unwrap();
        assert_eq!(tape.backward(s).unwrap().get("x").unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::row_vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(NumericError::NonScalar { .. })));
    }

    #[test]
    fn unreached_and_constant_leaves() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::scalar(2.0));
        let _unused = tape.param("unused", &Tensor::row_vector(vec![1.0, 1.0]));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[5.0]);
        assert_eq!(g.get("unused").unwrap().data(), &[0.0, 0.0]);
        assert!(g.wrt(c).is_none());
    }

    #[test]
    fn nan_detection() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0));
        assert!(matches!(tape.log(x), Err(NumericError::NonFinite { op: "log" })));
    }

    #[test]
    fn param_registration_is_idempotent() {
        let mut tape = Tape::new();
        let a = tape.param("w", &Tensor::scalar(1.0));
        let b = tape.param("w", &Tensor::scalar(9.0));
        assert_eq!(a, b);
        let y = tape.add(a, b).unwrap();
        assert_eq!(tape.backward(y).unwrap().get("w").unwrap().data(), &[2.0]);
    }

    #[test]
    fn masked_log_softmax_pair() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![5.0, 1.0, 3.0, -2.0]).unwrap());
        let y = tape.row_log_softmax(x, true).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0, 0.0]);
    }
}
