//! Dense f32 tensors and a reverse-mode autodiff tape.
//!
//! Every training path in this crate (target pre-training, generator
//! synthesis, substitute updates, adversarial crafting) builds a fresh
//! [`Tape`] per step, runs forward through the documented primitives and
//! calls [`Tape::backward`] on a scalar loss. Tensors are immutable once
//! created except for their gradient buffer; distinct tapes share no state,
//! so independent graphs may run on independent threads.
//!
//! Any primitive that produces a non-finite value fails hard with the
//! offending node id and op name rather than letting NaNs propagate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects a matrix, got shape {shape:?}")]
    NotAMatrix { op: &'static str, shape: Vec<usize> },
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("zero-norm vector passed to {0}")]
    ZeroNorm(&'static str),
    #[error("target index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },
    #[error("reshape from {from:?} to {to:?} changes element count")]
    BadReshape { from: Vec<usize>, to: Vec<usize> },
    #[error("empty tensor passed to {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: self.shape.clone(),
                len: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Adds into the gradient buffer, allocating it at zero if absent.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: self.shape.clone(),
                len: delta.len(),
            });
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// In-place parameter update; only optimizers go through this.
    pub(crate) fn apply_update(&mut self, f: impl FnMut(usize, &mut f32)) {
        let mut f = f;
        for (i, v) in self.data.iter_mut().enumerate() {
            f(i, v);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f32),
    AddScalar(usize),
    Matmul(usize, usize),
    /// `[n, k] + [k]` broadcast over rows.
    AddRowBroadcast(usize, usize),
    Relu(usize),
    Tanh(usize),
    Sin(usize),
    Log(usize),
    Rsqrt(usize),
    /// Row-wise softmax over the last axis of a matrix.
    Softmax(usize),
    /// Row-wise log-softmax over the last axis of a matrix.
    LogSoftmax(usize),
    MeanAll(usize),
    SumAll(usize),
    /// `[n, k] -> [n]`, mean over each row.
    RowMean(usize),
    /// `[n, k] -> [n]`, sum over each row.
    RowSum(usize),
    /// `y[i, j] = x[i, j] * s[i]` for `x: [n, k]`, `s: [n]`.
    ScaleRows(usize, usize),
    Transpose(usize),
    /// `y[i] = x[i, idx[i]]` for `x: [n, k]`.
    PickTargets(usize, Vec<usize>),
    /// Column-wise concatenation of two matrices with equal row counts.
    ConcatCols(usize, usize),
    Reshape(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Matmul(..) => "matmul",
            Op::AddRowBroadcast(..) => "add_row_broadcast",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sin(..) => "sin",
            Op::Log(..) => "log",
            Op::Rsqrt(..) => "rsqrt",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::MeanAll(..) => "mean_all",
            Op::SumAll(..) => "sum_all",
            Op::RowMean(..) => "row_mean",
            Op::RowSum(..) => "row_sum",
            Op::ScaleRows(..) => "scale_rows",
            Op::Transpose(..) => "transpose",
            Op::PickTargets(..) => "pick_targets",
            Op::ConcatCols(..) => "concat_cols",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

/// Reverse-mode autodiff tape over f32 tensors.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mat_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        [n, k] => Ok((*n, *k)),
        _ => Err(TensorError::NotAMatrix {
            op,
            shape: shape.to_vec(),
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf node holding a copy of `t`'s values.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            Op::Leaf,
            t.shape.clone(),
            t.data.clone(),
            t.requires_grad,
        )
    }

    /// Leaf from raw parts; `requires_grad` controls gradient tracking.
    pub fn leaf_from(&mut self, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Result<Var> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(self.push(Op::Leaf, shape, data, requires_grad))
    }

    pub fn constant_scalar(&mut self, v: f32) -> Var {
        self.push(Op::Leaf, vec![], vec![v], false)
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f32>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.node(v).value
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f32 {
        debug_assert_eq!(self.node(v).value.len(), 1);
        self.node(v).value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.node(v).grad.as_deref()
    }

    fn finish(&mut self, op: Op, shape: Vec<usize>, value: Vec<f32>, requires_grad: bool) -> Result<Var> {
        if let Some(_bad) = value.iter().find(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                node: self.nodes.len(),
                op: op.name(),
            });
        }
        Ok(self.push(op, shape, value, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.shape != nb.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        Ok(na.shape.clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let value: Vec<f32> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        self.finish(Op::Add(a.0, b.0), shape, value, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let value: Vec<f32> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        self.finish(Op::Sub(a.0, b.0), shape, value, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let value: Vec<f32> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        self.finish(Op::Mul(a.0, b.0), shape, value, rg)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let value: Vec<f32> = self.node(a).value.iter().map(|x| -x).collect();
        let rg = self.node(a).requires_grad;
        self.finish(Op::Neg(a.0), shape, value, rg)
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let value: Vec<f32> = self.node(a).value.iter().map(|x| x * c).collect();
        let rg = self.node(a).requires_grad;
        self.finish(Op::Scale(a.0, c), shape, value, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let value: Vec<f32> = self.node(a).value.iter().map(|x| x + c).collect();
        let rg = self.node(a).requires_grad;
        self.finish(Op::AddScalar(a.0), shape, value, rg)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = mat_dims(&self.node(a).shape, "matmul")?;
        let (kb, n) = mat_dims(&self.node(b).shape, "matmul")?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.node(a).shape.clone(),
                rhs: self.node(b).shape.clone(),
            });
        }
        let value = matmul_raw(&self.node(a).value, &self.node(b).value, m, ka, n);
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        self.finish(Op::Matmul(a.0, b.0), vec![m, n], value, rg)
    }

    /// `[n, k] + [k]`, bias added to every row.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, k) = mat_dims(&self.node(x).shape, "add_row_broadcast")?;
        if self.node(bias).shape != [k] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: self.node(x).shape.clone(),
                rhs: self.node(bias).shape.clone(),
            });
        }
        let mut value = self.node(x).value.clone();
        for i in 0..n {
            for j in 0..k {
                value[i * k + j] += self.node(bias).value[j];
            }
        }
        let rg = self.node(x).requires_grad || self.node(bias).requires_grad;
        self.finish(Op::AddRowBroadcast(x.0, bias.0), vec![n, k], value, rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let value: Vec<f32> = self.node(a).value.iter().map(|x| x.max(0.0)).collect();
        let rg = self.node(a).requires_grad;
        self.finish(Op::Relu(a.0), shape, value, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let value: Vec<f32> = self.node(a).value.iter().map(|x| x.tanh()).collect();
        let rg = self.node(a).requires_grad;
        self.finish(Op::Tanh(a.0), shape, value, rg)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let value: Vec<f32> = self.node(a).value.iter().map(|x| x.sin()).collect();
        let rg = self.node(a).requires_grad;
        self.finish(Op::Sin(a.0), shape, value, rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let value: Vec<f32> = self.node(a).value.iter().map(|x| x.ln()).collect();
        let rg = self.node(a).requires_grad;
        self.finish(Op::Log(a.0), shape, value, rg)
    }

    /// `x^(-1/2)` elementwise; errors on zero or negative input.
    pub fn rsqrt(&mut self, a: Var) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let value: Vec<f32> = self.node(a).value.iter().map(|x| 1.0 / x.sqrt()).collect();
        let rg = self.node(a).requires_grad;
        self.finish(Op::Rsqrt(a.0), shape, value, rg)
    }

    /// Numerically stable row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (n, k) = mat_dims(&self.node(a).shape, "softmax")?;
        if k == 0 {
            return Err(TensorError::Empty("softmax"));
        }
        let mut value = vec![0.0f32; n * k];
        for i in 0..n {
            let row = &self.node(a).value[i * k..(i + 1) * k];
            softmax_row(row, &mut value[i * k..(i + 1) * k]);
        }
        let rg = self.node(a).requires_grad;
        self.finish(Op::Softmax(a.0), vec![n, k], value, rg)
    }

    /// Numerically stable row-wise log-softmax of a matrix.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (n, k) = mat_dims(&self.node(a).shape, "log_softmax")?;
        if k == 0 {
            return Err(TensorError::Empty("log_softmax"));
        }
        let mut value = vec![0.0f32; n * k];
        for i in 0..n {
            let row = &self.node(a).value[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f32>().ln();
            for j in 0..k {
                value[i * k + j] = row[j] - lse;
            }
        }
        let rg = self.node(a).requires_grad;
        self.finish(Op::LogSoftmax(a.0), vec![n, k], value, rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a).value.len();
        if n == 0 {
            return Err(TensorError::Empty("mean_all"));
        }
        let value = vec![self.node(a).value.iter().sum::<f32>() / n as f32];
        let rg = self.node(a).requires_grad;
        self.finish(Op::MeanAll(a.0), vec![], value, rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let value = vec![self.node(a).value.iter().sum::<f32>()];
        let rg = self.node(a).requires_grad;
        self.finish(Op::SumAll(a.0), vec![], value, rg)
    }

    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let (n, k) = mat_dims(&self.node(a).shape, "row_mean")?;
        if k == 0 {
            return Err(TensorError::Empty("row_mean"));
        }
        let mut value = vec![0.0f32; n];
        for i in 0..n {
            value[i] = self.node(a).value[i * k..(i + 1) * k].iter().sum::<f32>() / k as f32;
        }
        let rg = self.node(a).requires_grad;
        self.finish(Op::RowMean(a.0), vec![n], value, rg)
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (n, k) = mat_dims(&self.node(a).shape, "row_sum")?;
        let mut value = vec![0.0f32; n];
        for i in 0..n {
            value[i] = self.node(a).value[i * k..(i + 1) * k].iter().sum::<f32>();
        }
        let rg = self.node(a).requires_grad;
        self.finish(Op::RowSum(a.0), vec![n], value, rg)
    }

    /// `y[i, j] = x[i, j] * s[i]` with `x: [n, k]`, `s: [n]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, k) = mat_dims(&self.node(x).shape, "scale_rows")?;
        if self.node(s).shape != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: self.node(x).shape.clone(),
                rhs: self.node(s).shape.clone(),
            });
        }
        let mut value = vec![0.0f32; n * k];
        for i in 0..n {
            let si = self.node(s).value[i];
            for j in 0..k {
                value[i * k + j] = self.node(x).value[i * k + j] * si;
            }
        }
        let rg = self.node(x).requires_grad || self.node(s).requires_grad;
        self.finish(Op::ScaleRows(x.0, s.0), vec![n, k], value, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, k) = mat_dims(&self.node(a).shape, "transpose")?;
        let mut value = vec![0.0f32; n * k];
        for i in 0..n {
            for j in 0..k {
                value[j * n + i] = self.node(a).value[i * k + j];
            }
        }
        let rg = self.node(a).requires_grad;
        self.finish(Op::Transpose(a.0), vec![k, n], value, rg)
    }

    /// `y[i] = x[i, targets[i]]` for a matrix `x: [n, k]`.
    pub fn pick_targets(&mut self, x: Var, targets: &[usize]) -> Result<Var> {
        let (n, k) = mat_dims(&self.node(x).shape, "pick_targets")?;
        if targets.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "pick_targets",
                lhs: vec![n, k],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(TensorError::TargetOutOfRange {
                index: bad,
                classes: k,
            });
        }
        let value: Vec<f32> = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| self.node(x).value[i * k + t])
            .collect();
        let rg = self.node(x).requires_grad;
        self.finish(Op::PickTargets(x.0, targets.to_vec()), vec![n], value, rg)
    }

    /// `[n, a] ++ [n, b] -> [n, a + b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ka) = mat_dims(&self.node(a).shape, "concat_cols")?;
        let (nb, kb) = mat_dims(&self.node(b).shape, "concat_cols")?;
        if na != nb {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: self.node(a).shape.clone(),
                rhs: self.node(b).shape.clone(),
            });
        }
        let mut value = Vec::with_capacity(na * (ka + kb));
        for i in 0..na {
            value.extend_from_slice(&self.node(a).value[i * ka..(i + 1) * ka]);
            value.extend_from_slice(&self.node(b).value[i * kb..(i + 1) * kb]);
        }
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        self.finish(Op::ConcatCols(a.0, b.0), vec![na, ka + kb], value, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let from = self.node(a).shape.clone();
        if shape.iter().product::<usize>() != self.node(a).value.len() {
            return Err(TensorError::BadReshape { from, to: shape });
        }
        let value = self.node(a).value.clone();
        let rg = self.node(a).requires_grad;
        self.finish(Op::Reshape(a.0), shape, value, rg)
    }

    /// Population variance of each row: `mean(x^2) - mean(x)^2`, shape `[n]`.
    pub fn row_variance(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        let mean_sq = self.row_mean(sq)?;
        let mean = self.row_mean(x)?;
        let mean2 = self.mul(mean, mean)?;
        self.sub(mean_sq, mean2)
    }

    /// Cosine similarity of two equal-length vectors; errors on zero norm.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("cosine_similarity", a, b)?;
        if shape.len() != 1 || shape[0] == 0 {
            return Err(TensorError::Empty("cosine_similarity"));
        }
        let norm_a: f32 = self.node(a).value.iter().map(|v| v * v).sum();
        let norm_b: f32 = self.node(b).value.iter().map(|v| v * v).sum();
        if norm_a == 0.0 || norm_b == 0.0 {
            return Err(TensorError::ZeroNorm("cosine_similarity"));
        }
        let n = shape[0];
        let am = self.reshape(a, vec![1, n])?;
        let bm = self.reshape(b, vec![1, n])?;
        let prod = self.mul(am, bm)?;
        let dot = self.sum_all(prod)?;
        let a2 = self.mul(am, am)?;
        let b2 = self.mul(bm, bm)?;
        let sa = self.sum_all(a2)?;
        let sb = self.sum_all(b2)?;
        let inv_a = self.rsqrt(sa)?;
        let inv_b = self.rsqrt(sb)?;
        let t = self.mul(dot, inv_a)?;
        self.mul(t, inv_b)
    }

    /// Backpropagates from a scalar loss, accumulating gradients on every
    /// node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.node(loss).shape.clone()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(out_grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            self.backprop_node(idx, &op, &out_grad)?;
            self.nodes[idx].grad = Some(out_grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, delta: &[f32]) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        let len = self.nodes[idx].value.len();
        let grad = self.nodes[idx].grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn backprop_node(&mut self, idx: usize, op: &Op, dy: &[f32]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, dy);
                self.accumulate(b, dy);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, dy);
                let neg: Vec<f32> = dy.iter().map(|v| -v).collect();
                self.accumulate(b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[b].value)
                    .map(|(g, v)| g * v)
                    .collect();
                let db: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[a].value)
                    .map(|(g, v)| g * v)
                    .collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Neg(a) => {
                let da: Vec<f32> = dy.iter().map(|v| -v).collect();
                self.accumulate(a, &da);
            }
            Op::Scale(a, c) => {
                let da: Vec<f32> = dy.iter().map(|v| v * c).collect();
                self.accumulate(a, &da);
            }
            Op::AddScalar(a) => {
                self.accumulate(a, dy);
            }
            Op::Matmul(a, b) => {
                let (m, k) = mat_dims(&self.nodes[a].shape, "matmul").unwrap();
                let n = self.nodes[b].shape[1];
                // dA = dY . B^T ; dB = A^T . dY
                let bt = transpose_raw(&self.nodes[b].value, k, n);
                let da = matmul_raw(dy, &bt, m, n, k);
                let at = transpose_raw(&self.nodes[a].value, m, k);
                let db = matmul_raw(&at, dy, k, m, n);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::AddRowBroadcast(x, bias) => {
                self.accumulate(x, dy);
                let (n, k) = mat_dims(&self.nodes[x].shape, "add_row_broadcast").unwrap();
                let mut db = vec![0.0f32; k];
                for i in 0..n {
                    for j in 0..k {
                        db[j] += dy[i * k + j];
                    }
                }
                self.accumulate(bias, &db);
            }
            Op::Relu(a) => {
                let da: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[a].value)
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Tanh(a) => {
                let da: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[idx].value)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Sin(a) => {
                let da: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[a].value)
                    .map(|(g, v)| g * v.cos())
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Log(a) => {
                let da: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[a].value)
                    .map(|(g, v)| g / v)
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Rsqrt(a) => {
                // d/dx x^(-1/2) = -1/2 x^(-3/2)
                let da: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[a].value)
                    .map(|(g, v)| g * (-0.5 / (v * v.sqrt())))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Softmax(a) => {
                let (n, k) = mat_dims(&self.nodes[idx].shape, "softmax").unwrap();
                let y = &self.nodes[idx].value;
                let mut da = vec![0.0f32; n * k];
                for i in 0..n {
                    let dot: f32 = (0..k).map(|j| dy[i * k + j] * y[i * k + j]).sum();
                    for j in 0..k {
                        da[i * k + j] = y[i * k + j] * (dy[i * k + j] - dot);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::LogSoftmax(a) => {
                let (n, k) = mat_dims(&self.nodes[idx].shape, "log_softmax").unwrap();
                let y = &self.nodes[idx].value;
                let mut da = vec![0.0f32; n * k];
                for i in 0..n {
                    let sum: f32 = (0..k).map(|j| dy[i * k + j]).sum();
                    for j in 0..k {
                        da[i * k + j] = dy[i * k + j] - y[i * k + j].exp() * sum;
                    }
                }
                self.accumulate(a, &da);
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a].value.len() as f32;
                let da = vec![dy[0] / n; self.nodes[a].value.len()];
                self.accumulate(a, &da);
            }
            Op::SumAll(a) => {
                let da = vec![dy[0]; self.nodes[a].value.len()];
                self.accumulate(a, &da);
            }
            Op::RowMean(a) => {
                let (n, k) = mat_dims(&self.nodes[a].shape, "row_mean").unwrap();
                let mut da = vec![0.0f32; n * k];
                for i in 0..n {
                    let g = dy[i] / k as f32;
                    for j in 0..k {
                        da[i * k + j] = g;
                    }
                }
                self.accumulate(a, &da);
            }
            Op::RowSum(a) => {
                let (n, k) = mat_dims(&self.nodes[a].shape, "row_sum").unwrap();
                let mut da = vec![0.0f32; n * k];
                for i in 0..n {
                    for j in 0..k {
                        da[i * k + j] = dy[i];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::ScaleRows(x, s) => {
                let (n, k) = mat_dims(&self.nodes[x].shape, "scale_rows").unwrap();
                let mut dx = vec![0.0f32; n * k];
                let mut ds = vec![0.0f32; n];
                for i in 0..n {
                    let si = self.nodes[s].value[i];
                    for j in 0..k {
                        dx[i * k + j] = dy[i * k + j] * si;
                        ds[i] += dy[i * k + j] * self.nodes[x].value[i * k + j];
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(s, &ds);
            }
            Op::Transpose(a) => {
                let (n, k) = mat_dims(&self.nodes[a].shape, "transpose").unwrap();
                // output is [k, n]; transpose dy back to [n, k]
                let da = transpose_raw(dy, k, n);
                let _ = (n, k);
                self.accumulate(a, &da);
            }
            Op::PickTargets(x, ref targets) => {
                let (n, k) = mat_dims(&self.nodes[x].shape, "pick_targets").unwrap();
                let mut dx = vec![0.0f32; n * k];
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * k + t] = dy[i];
                }
                self.accumulate(x, &dx);
            }
            Op::ConcatCols(a, b) => {
                let (n, ka) = mat_dims(&self.nodes[a].shape, "concat_cols").unwrap();
                let kb = self.nodes[b].shape[1];
                let mut da = vec![0.0f32; n * ka];
                let mut db = vec![0.0f32; n * kb];
                for i in 0..n {
                    let row = &dy[i * (ka + kb)..(i + 1) * (ka + kb)];
                    da[i * ka..(i + 1) * ka].copy_from_slice(&row[..ka]);
                    db[i * kb..(i + 1) * kb].copy_from_slice(&row[ka..]);
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Reshape(a) => {
                self.accumulate(a, dy);
            }
        }
        Ok(())
    }
}

pub(crate) fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

pub(crate) fn transpose_raw(a: &[f32], n: usize, k: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; n * k];
    for i in 0..n {
        for j in 0..k {
            t[j * n + i] = a[i * k + j];
        }
    }
    t
}

/// Max-subtracted softmax of one row into `out`.
pub(crate) fn softmax_row(row: &[f32], out: &mut [f32]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (o, x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Index of the row maximum; ties break to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(tape: &mut Tape, v: f32) -> Var {
        tape.leaf_from(vec![1, 1], vec![v], true).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 3.0);
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        assert_eq!(tape.item(loss), 9.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 3.0);
        let c = tape.leaf_from(vec![1, 1], vec![5.0], false).unwrap();
        let y = tape.add(x, c).unwrap();
        let z = tape.sub(y, x).unwrap();
        let loss = tape.sum_all(z).unwrap();
        tape.backward(loss).unwrap();
        // d(x + 5 - x)/dx accumulates to exactly zero.
        assert_eq!(tape.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape
            .leaf_from(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0], false)
            .unwrap();
        let p = tape.softmax_rows(x).unwrap();
        for i in 0..2 {
            let s: f32 = tape.value(p)[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(tape.value(p)[i * 3..(i + 1) * 3].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn softmax_extreme_logits_stable() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![1, 2], vec![1000.0, 0.0], false).unwrap();
        let p = tape.softmax_rows(x).unwrap();
        assert_eq!(tape.value(p)[0], 1.0);
        assert_eq!(tape.value(p)[1], 0.0);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        for c in [0.0f32, -7.25, 123.0] {
            let x = tape.leaf_from(vec![1, 4], vec![c; 4], false).unwrap();
            let p = tape.softmax_rows(x).unwrap();
            for &v in tape.value(p) {
                assert!((v - 0.25).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn log_rejects_negative_via_nan_policy() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![1, 1], vec![-1.0], false).unwrap();
        let err = tape.log(x).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "log", .. }));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![2, 2], vec![1.0; 4], true).unwrap();
        let y = tape.relu(x).unwrap();
        assert!(matches!(
            tape.backward(y),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn cosine_similarity_basic_cases() {
        let a = [1.0f32, 2.0, -1.0];
        // identical vectors
        let mut tape = Tape::new();
        let va = tape.leaf_from(vec![3], a.to_vec(), false).unwrap();
        let vb = tape.leaf_from(vec![3], a.to_vec(), false).unwrap();
        let c = tape.cosine_similarity(va, vb).unwrap();
        assert!((tape.item(c) - 1.0).abs() < 1e-6);
        // opposite vectors
        let mut tape = Tape::new();
        let va = tape.leaf_from(vec![3], a.to_vec(), false).unwrap();
        let neg: Vec<f32> = a.iter().map(|v| -v).collect();
        let vb = tape.leaf_from(vec![3], neg, false).unwrap();
        let c = tape.cosine_similarity(va, vb).unwrap();
        assert!((tape.item(c) + 1.0).abs() < 1e-6);
        // orthogonal vectors
        let mut tape = Tape::new();
        let va = tape.leaf_from(vec![2], vec![1.0, 0.0], false).unwrap();
        let vb = tape.leaf_from(vec![2], vec![0.0, 3.0], false).unwrap();
        let c = tape.cosine_similarity(va, vb).unwrap();
        assert!(tape.item(c).abs() < 1e-7);
    }

    #[test]
    fn cosine_similarity_zero_norm_is_error() {
        let mut tape = Tape::new();
        let va = tape.leaf_from(vec![2], vec![0.0, 0.0], false).unwrap();
        let vb = tape.leaf_from(vec![2], vec![1.0, 0.0], false).unwrap();
        assert!(matches!(
            tape.cosine_similarity(va, vb),
            Err(TensorError::ZeroNorm(_))
        ));
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax(&[2.0, -1.0]), 0);
    }

    #[test]
    fn mean_sin_matches_finite_differences() {
        // f(x) = mean(sin(x)) on a 4x4 input; reference partials from an
        // f64 evaluation of the same function.
        let mut vals = Vec::new();
        let mut state = 0x12345u64;
        for _ in 0..16 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            vals.push(((state >> 40) as f32 / (1 << 24) as f32) * 4.0 - 2.0);
        }
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![4, 4], vals.clone(), true).unwrap();
        let s = tape.sin(x).unwrap();
        let loss = tape.mean_all(s).unwrap();
        tape.backward(loss).unwrap();
        let grad = tape.grad(x).unwrap();

        let f = |v: &[f64]| v.iter().map(|x| x.sin()).sum::<f64>() / 16.0;
        let h = 1e-3;
        for i in 0..16 {
            let mut lo: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
            let mut hi = lo.clone();
            lo[i] -= h;
            hi[i] += h;
            let fd = (f(&hi) - f(&lo)) / (2.0 * h);
            let rel = (grad[i] as f64 - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "entry {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn matmul_gradients_match_manual() {
        // loss = sum(A.B) with A 2x3, B 3x2 -> dA = ones.B^T, dB = A^T.ones
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0];
        let mut tape = Tape::new();
        let va = tape.leaf_from(vec![2, 3], a.clone(), true).unwrap();
        let vb = tape.leaf_from(vec![3, 2], b.clone(), true).unwrap();
        let c = tape.matmul(va, vb).unwrap();
        let loss = tape.sum_all(c).unwrap();
        tape.backward(loss).unwrap();
        let da = tape.grad(va).unwrap();
        let db = tape.grad(vb).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let expect: f32 = b[j * 2] + b[j * 2 + 1];
                assert!((da[i * 3 + j] - expect).abs() < 1e-6);
            }
        }
        for j in 0..3 {
            let expect: f32 = a[j] + a[3 + j];
            assert!((db[j * 2] - expect).abs() < 1e-6);
            assert!((db[j * 2 + 1] - expect).abs() < 1e-6);
        }
    }
}
