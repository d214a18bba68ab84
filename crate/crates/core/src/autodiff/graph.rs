//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order: walking it backwards visits every consumer before the
//! nodes it reads from. Trainable tensors live in a [`ParamStore`] that the
//! graph borrows; a parameter enters the graph at most once per graph, and its
//! gradient comes out keyed by [`ParamId`].

use std::collections::HashMap;
use std::fmt;

use super::tensor::{log_sum_exp, matmul_at_acc, matmul_bt_acc, Tensor};
use super::AutodiffError;

/// Handle to a trainable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Gradients of a scalar loss with respect to every parameter of a store.
/// Parameters the loss never touched have a zero gradient.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Operation kind of a graph node, without its attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Concat,
    SliceCols,
    Relu,
    Sigmoid,
    Tanh,
    Mul,
    RowSelect,
    MaxPoolRows,
    SoftmaxRows,
    LogSoftmaxRows,
    LogSumExp,
    Dot,
    Scale,
    Negate,
    Sum,
    Log,
    LogSigmoid,
    Gather,
    Custom,
}

/// An operation with a hand-written derivative, for fused kernels such as
/// dynamic programs that would be wasteful to spell out as primitive nodes.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError>;

    /// Returns the gradient contribution for each input given the gradient of
    /// the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    /// `a + b` where `b` is `1 x cols` and added to every row of `a`.
    AddRow(Var, Var),
    Sub(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Mul(Var, Var),
    RowSelect(Var, Vec<usize>),
    MaxPoolRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExp(Var),
    Dot(Var, Var),
    Scale(Var, f64),
    Negate(Var),
    Sum(Var),
    Log(Var),
    LogSigmoid(Var),
    Gather(Var, Vec<(usize, usize)>),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf | Op::Param(_) => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) | Op::AddRow(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::ConcatCols(_) | Op::ConcatRows(_) => OpKind::Concat,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Mul(..) => OpKind::Mul,
            Op::RowSelect(..) => OpKind::RowSelect,
            Op::MaxPoolRows(..) => OpKind::MaxPoolRows,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::LogSoftmaxRows(_) => OpKind::LogSoftmaxRows,
            Op::LogSumExp(_) => OpKind::LogSumExp,
            Op::Dot(..) => OpKind::Dot,
            Op::Scale(..) => OpKind::Scale,
            Op::Negate(_) => OpKind::Negate,
            Op::Sum(_) => OpKind::Sum,
            Op::Log(_) => OpKind::Log,
            Op::LogSigmoid(_) => OpKind::LogSigmoid,
            Op::Gather(..) => OpKind::Gather,
            Op::Custom(..) => OpKind::Custom,
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Dot(a, b) => vec![*a, *b],
            Op::ConcatCols(v) | Op::ConcatRows(v) | Op::Custom(_, v) => v.clone(),
            Op::SliceCols(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::RowSelect(a, _)
            | Op::MaxPoolRows(a, _)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::LogSumExp(a)
            | Op::Scale(a, _)
            | Op::Negate(a)
            | Op::Sum(a)
            | Op::Log(a)
            | Op::LogSigmoid(a)
            | Op::Gather(a, _) => vec![*a],
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// A single forward computation over a borrowed parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

impl fmt::Debug for Graph<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without cancellation for large `|x|`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
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

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var, AutodiffError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(AutodiffError::NonFinite {
                op: format!("{:?}", op.kind()),
            });
        }
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Some(value),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Some(value),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// The leaf node for a stored parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            left: a,
            right: b,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Self::mismatch("matmul", sa, sb));
        }
        let out = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), out)
    }

    /// Elementwise sum of equal shapes, or row-wise bias addition when `b`
    /// is a `1 x cols` row and `a` has more rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            let mut out = self.value(a).clone();
            out.add_assign(self.value(b));
            self.push(Op::Add(a, b), out)
        } else if sb.0 == 1 && sa.1 == sb.1 {
            let mut out = self.value(a).clone();
            let bias = self.value(b).data().to_vec();
            for r in 0..sa.0 {
                for (o, bv) in out.row_mut(r).iter_mut().zip(&bias) {
                    *o += bv;
                }
            }
            self.push(Op::AddRow(a, b), out)
        } else {
            Err(Self::mismatch("add", sa, sb))
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Self::mismatch("sub", sa, sb));
        }
        let vb = self.value(b);
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(vb.data()) {
            *o -= y;
        }
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Self::mismatch("mul", sa, sb));
        }
        let vb = self.value(b);
        let mut out = self.value(a).clone();
        for (o, y) in out.data_mut().iter_mut().zip(vb.data()) {
            *o *= y;
        }
        self.push(Op::Mul(a, b), out)
    }

    /// Side-by-side concatenation; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::EmptyInput("concat"))?;
        let rows = self.shape(*first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Self::mismatch("concat", self.shape(*first), s));
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    /// Vertical stacking; all parts need the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::EmptyInput("concat"))?;
        let cols = self.shape(*first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(Self::mismatch("concat", self.shape(*first), s));
            }
            rows += s.0;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push(Op::ConcatRows(parts.to_vec()), out)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if len == 0 || start + len > s.1 {
            return Err(Self::mismatch("slice_cols", s, (start, len)));
        }
        let va = self.value(a);
        let mut out = Tensor::zeros(s.0, len);
        for r in 0..s.0 {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..start + len]);
        }
        self.push(Op::SliceCols(a, start), out)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f64::ln);
        self.push(Op::Log(a), out)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(log_sigmoid);
        self.push(Op::LogSigmoid(a), out)
    }

    /// Selects rows by index (repeats allowed).
    pub fn row_select(&mut self, a: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if rows.is_empty() {
            return Err(AutodiffError::EmptyInput("row_select"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= s.0) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "row_select",
                index: bad,
                bound: s.0,
            });
        }
        let va = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * s.1);
        for &r in rows {
            data.extend_from_slice(va.row(r));
        }
        let out = Tensor::from_vec(rows.len(), s.1, data)?;
        self.push(Op::RowSelect(a, rows.to_vec()), out)
    }

    /// Columnwise max over rows. Ties resolve to the lowest row index, which
    /// is also where the gradient goes.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        let mut argmax = vec![0usize; cols];
        let mut out = Tensor::zeros(1, cols);
        for c in 0..cols {
            let mut best = va.get(0, c);
            for r in 1..rows {
                let v = va.get(r, c);
                if v > best {
                    best = v;
                    argmax[c] = r;
                }
            }
            out.set(0, c, best);
        }
        self.push(Op::MaxPoolRows(a, argmax), out)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = self.value(a);
        let mut out = va.clone();
        for r in 0..va.rows() {
            let lse = log_sum_exp(va.row(r));
            out.row_mut(r).iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let va = self.value(a);
        let mut out = va.clone();
        for r in 0..va.rows() {
            let lse = log_sum_exp(va.row(r));
            out.row_mut(r).iter_mut().for_each(|v| *v -= lse);
        }
        self.push(Op::LogSoftmaxRows(a), out)
    }

    /// `log(sum(exp(a)))` over every entry, as a scalar.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = Tensor::scalar(log_sum_exp(self.value(a).data()));
        self.push(Op::LogSumExp(a), out)
    }

    /// Inner product of two equally shaped tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Self::mismatch("dot", sa, sb));
        }
        let d: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        self.push(Op::Dot(a, b), Tensor::scalar(d))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).scale(k);
        self.push(Op::Scale(a, k), out)
    }

    pub fn negate(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).scale(-1.0);
        self.push(Op::Negate(a), out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Picks individual entries into a `1 x k` row.
    pub fn gather(&mut self, a: Var, cells: &[(usize, usize)]) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if cells.is_empty() {
            return Err(AutodiffError::EmptyInput("gather"));
        }
        for &(r, c) in cells {
            if r >= s.0 || c >= s.1 {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "gather",
                    index: r.max(c),
                    bound: if r >= s.0 { s.0 } else { s.1 },
                });
            }
        }
        let va = self.value(a);
        let data = cells.iter().map(|&(r, c)| va.get(r, c)).collect();
        let out = Tensor::from_vec(1, cells.len(), data)?;
        self.push(Op::Gather(a, cells.to_vec()), out)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?;
        self.push(Op::Custom(op, inputs.to_vec()), out)
    }

    /// Sum of several scalars (or equally shaped tensors).
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, AutodiffError> {
        let (&first, rest) = terms
            .split_first()
            .ok_or(AutodiffError::EmptyInput("add_all"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Reverse sweep from a scalar node. Returns the gradient for every
    /// parameter in the store (zero where unused).
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let grads = self.backward_all(loss)?;
        let mut out = Gradients::zeros_like(self.params);
        for (&id, &v) in &self.param_nodes {
            if let Some(g) = &grads[v.0] {
                *out.get_mut(id) = g.clone();
            }
        }
        Ok(out)
    }

    /// Reverse sweep returning the gradient of every node (`None` where the
    /// node does not influence the loss).
    pub fn backward_all(&self, loss: Var) -> Result<Vec<Option<Tensor>>, AutodiffError> {
        let s = self.shape(loss);
        if s != (1, 1) {
            return Err(AutodiffError::NonScalarLoss { shape: s });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, op: &Op, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = || self.nodes[i].value.as_ref().expect("computed node");
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let (r, c) = self.shape(v);
                grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
            }};
        }
        let needs = |v: Var| self.nodes[v.0].requires_grad;

        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    let vb = self.value(*b);
                    matmul_bt_acc(g, vb, acc!(*a));
                }
                if needs(*b) {
                    let va = self.value(*a);
                    matmul_at_acc(va, g, acc!(*b));
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    acc!(*a).add_assign(g);
                }
                if needs(*b) {
                    acc!(*b).add_assign(g);
                }
            }
            Op::AddRow(a, b) => {
                if needs(*a) {
                    acc!(*a).add_assign(g);
                }
                if needs(*b) {
                    let gb = acc!(*b);
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    acc!(*a).add_assign(g);
                }
                if needs(*b) {
                    let gb = acc!(*b);
                    for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                for (x, y) in [(*a, *b), (*b, *a)] {
                    if needs(x) {
                        let vy = self.value(y).data();
                        let gx = acc!(x);
                        for ((o, gv), yv) in gx.data_mut().iter_mut().zip(g.data()).zip(vy) {
                            *o += gv * yv;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if needs(p) {
                        let gp = acc!(p);
                        for r in 0..g.rows() {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (h, _) = self.shape(p);
                    if needs(p) {
                        let gp = acc!(p);
                        for r in 0..h {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(g.row(offset + r)) {
                                *o += v;
                            }
                        }
                    }
                    offset += h;
                }
            }
            Op::SliceCols(a, start) => {
                let w = g.cols();
                let ga = acc!(*a);
                for r in 0..g.rows() {
                    for (o, v) in ga.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                let ga = acc!(*a);
                for ((o, gv), x) in ga.data_mut().iter_mut().zip(g.data()).zip(va) {
                    if *x > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = out().data();
                let ga = acc!(*a);
                for ((o, gv), s) in ga.data_mut().iter_mut().zip(g.data()).zip(y) {
                    *o += gv * s * (1.0 - s);
                }
            }
            Op::Tanh(a) => {
                let y = out().data();
                let ga = acc!(*a);
                for ((o, gv), t) in ga.data_mut().iter_mut().zip(g.data()).zip(y) {
                    *o += gv * (1.0 - t * t);
                }
            }
            Op::Log(a) => {
                let va = self.value(*a).data();
                let ga = acc!(*a);
                for ((o, gv), x) in ga.data_mut().iter_mut().zip(g.data()).zip(va) {
                    *o += gv / x;
                }
            }
            Op::LogSigmoid(a) => {
                let va = self.value(*a).data();
                let ga = acc!(*a);
                for ((o, gv), x) in ga.data_mut().iter_mut().zip(g.data()).zip(va) {
                    *o += gv * sigmoid(-x);
                }
            }
            Op::RowSelect(a, rows) => {
                let ga = acc!(*a);
                for (k, &r) in rows.iter().enumerate() {
                    for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
            }
            Op::MaxPoolRows(a, argmax) => {
                let ga = acc!(*a);
                for (c, &r) in argmax.iter().enumerate() {
                    let cur = ga.get(r, c);
                    ga.set(r, c, cur + g.get(0, c));
                }
            }
            Op::SoftmaxRows(a) => {
                let y = out();
                let ga = acc!(*a);
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, p), q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += p * (q - inner);
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let y = out();
                let ga = acc!(*a);
                for r in 0..y.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for ((o, ly), q) in ga.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o += q - ly.exp() * gsum;
                    }
                }
            }
            Op::LogSumExp(a) => {
                let lse = out().item();
                let gv = g.item();
                let va = self.value(*a).data();
                let ga = acc!(*a);
                for (o, x) in ga.data_mut().iter_mut().zip(va) {
                    *o += gv * (x - lse).exp();
                }
            }
            Op::Dot(a, b) => {
                let gv = g.item();
                for (x, y) in [(*a, *b), (*b, *a)] {
                    if needs(x) {
                        let vy = self.value(y).data();
                        let gx = acc!(x);
                        for (o, yv) in gx.data_mut().iter_mut().zip(vy) {
                            *o += gv * yv;
                        }
                    }
                }
            }
            Op::Scale(a, k) => {
                let ga = acc!(*a);
                for (o, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o += k * gv;
                }
            }
            Op::Negate(a) => {
                let ga = acc!(*a);
                for (o, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *o -= gv;
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                let ga = acc!(*a);
                ga.data_mut().iter_mut().for_each(|o| *o += gv);
            }
            Op::Gather(a, cells) => {
                let ga = acc!(*a);
                for (k, &(r, c)) in cells.iter().enumerate() {
                    let cur = ga.get(r, c);
                    ga.set(r, c, cur + g.get(0, k));
                }
            }
            Op::Custom(custom, inputs) => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let parts = custom.backward(&values, out(), g);
                for (&v, part) in inputs.iter().zip(parts) {
                    if needs(v) {
                        acc!(v).add_assign(&part);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Tensor, b: &[f64]) -> bool {
        a.data().iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn forward_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::from_rows(&[[-1.0, 3.0]]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 3.0]);

        let z = g.constant(Tensor::row_vector(&[0.0, 0.0]));
        let s = g.softmax_rows(z).unwrap();
        assert!(close(g.value(s), &[0.5, 0.5]));

        let m = g.constant(Tensor::from_rows(&[[1.0, 5.0], [4.0, 2.0]]));
        let p = g.max_pool_rows(m).unwrap();
        assert_eq!(g.value(p).data(), &[4.0, 5.0]);
    }

    #[test]
    fn backward_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(Tensor::row_vector(&[1.0, 2.0]));
        let l = g.dot(x, x).unwrap();
        let grads = g.backward_all(l).unwrap();
        assert!(close(grads[x.0].as_ref().unwrap(), &[2.0, 4.0]));

        let mut g = Graph::new(&store);
        let x = g.leaf(Tensor::row_vector(&[-1.0, 2.0]));
        let r = g.relu(x).unwrap();
        let l = g.sum(r).unwrap();
        let grads = g.backward_all(l).unwrap();
        assert!(close(grads[x.0].as_ref().unwrap(), &[0.0, 1.0]));

        let mut g = Graph::new(&store);
        let x = g.leaf(Tensor::row_vector(&[0.0, 0.0]));
        let l = g.log_sum_exp(x).unwrap();
        let grads = g.backward_all(l).unwrap();
        assert!(close(grads[x.0].as_ref().unwrap(), &[0.5, 0.5]));
    }

    #[test]
    fn reuse_accumulates() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(Tensor::row_vector(&[0.3, -1.2]));
        let y = g.add(x, x).unwrap();
        let l = g.sum(y).unwrap();
        let twice = g.backward_all(l).unwrap()[x.0].clone().unwrap();

        let mut g = Graph::new(&store);
        let x = g.leaf(Tensor::row_vector(&[0.3, -1.2]));
        let y = g.scale(x, 2.0).unwrap();
        let l = g.sum(y).unwrap();
        let scaled = g.backward_all(l).unwrap()[x.0].clone().unwrap();
        assert_eq!(twice, scaled);
    }

    #[test]
    fn max_pool_ties_go_to_first_row() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.leaf(Tensor::from_rows(&[[1.0], [1.0]]));
        let p = g.max_pool_rows(x).unwrap();
        let l = g.sum(p).unwrap();
        let grads = g.backward_all(l).unwrap();
        assert_eq!(grads[x.0].as_ref().unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn errors_are_structured() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.leaf(Tensor::zeros(2, 3));
        let b = g.leaf(Tensor::zeros(2, 3));
        match g.matmul(a, b) {
            Err(AutodiffError::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "matmul");
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            g.backward(a),
            Err(AutodiffError::NonScalarLoss { shape: (2, 3) })
        ));
    }

    #[test]
    fn params_share_one_node() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row_vector(&[1.0, -2.0]));
        let mut g = Graph::new(&store);
        let a = g.param(w);
        let b = g.param(w);
        assert_eq!(a, b);
        let l = g.dot(a, b).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).data(), &[2.0, -4.0]);
        assert_eq!(g.kind(a), OpKind::Leaf);
        assert_eq!(g.parents(l), vec![a, a]);
    }
}
