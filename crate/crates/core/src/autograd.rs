//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation executed through it, in execution
//! order, so the node list is topologically sorted by construction.
//! [`Graph::backward`] walks the list in reverse and accumulates adjoints
//! into every node that requires a gradient. Parameters are borrowed from a
//! [`ParamStore`] rather than copied; their gradients are exported with
//! [`Graph::accumulate_param_grads`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::TensorError;
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::tensor::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<S> {
    Owned(Tensor<S>),
    Param(ParamId),
}

enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    ScaleBy(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<S>,
        rstd: Vec<S>,
    },
    Dropout(Var, Vec<S>),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    L1 {
        pred: Var,
        target: Var,
        row_weights: Option<Vec<S>>,
        denom: S,
    },
    Bce {
        logits: Var,
        targets: Vec<S>,
        weights: Vec<S>,
        pos_weight: S,
        denom: S,
    },
}

struct Node<S> {
    value: Value<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Elementwise operations accepted by [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise<S> {
    Add,
    Sub,
    Mul,
    Relu,
    Tanh,
    Sigmoid,
    Scale(S),
}

/// Recorded computation over borrowed parameters.
pub struct Graph<'p, S: Real> {
    params: Option<&'p ParamStore<S>>,
    params_trainable: bool,
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Real> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Dimension {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn rank2<S: Real>(op: &'static str, t: &Tensor<S>) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(dim_err(op, s, &[])),
    }
}

fn lookup<'a, S: Real>(
    nodes: &'a [Node<S>],
    params: Option<&'a ParamStore<S>>,
    v: Var,
) -> &'a Tensor<S> {
    match &nodes[v.0].value {
        Value::Owned(t) => t,
        Value::Param(id) => params.expect("parameter node without store").get(*id),
    }
}

fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<S: Real>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<'p, S: Real> Graph<'p, S> {
    /// A graph with no parameter store.
    pub fn new() -> Self {
        Self {
            params: None,
            params_trainable: false,
            param_nodes: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// A graph whose parameter leaves require gradients.
    pub fn with_params(params: &'p ParamStore<S>) -> Self {
        Self {
            params: Some(params),
            params_trainable: true,
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// A graph over parameters that are read but never differentiated.
    pub fn frozen(params: &'p ParamStore<S>) -> Self {
        Self {
            params_trainable: false,
            ..Self::with_params(params)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Free leaf, optionally differentiable.
    pub fn leaf(&mut self, t: Tensor<S>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Leaf node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: self.params_trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Parameter leaf looked up by name. Panics when absent.
    pub fn param_named(&mut self, name: &str) -> Var {
        let id = self
            .params
            .and_then(|p| p.id(name))
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        self.param(id)
    }

    /// Drops every node recorded after the first `len`. Used by
    /// autoregressive inference to discard per-step work while keeping the
    /// encoder. Must not be called between `backward` and reading grads.
    pub fn rewind(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.clear();
        for slot in &mut self.param_nodes {
            if slot.is_some_and(|v| v.0 >= len) {
                *slot = None;
            }
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        lookup(&self.nodes, self.params, v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Adjoint of `v` after [`Graph::backward`]; zeros for differentiable nodes
    /// the loss does not reach, `None` for nodes that never require a gradient.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        if !self.rg(v) {
            return None;
        }
        let shape = self.shape(v).to_vec();
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Some(Tensor::new(&shape, g.clone()).expect("gradient shape")),
            None => Some(Tensor::zeros(&shape)),
        }
    }

    /// Adds parameter gradients from the last backward pass into `buf`.
    pub fn accumulate_param_grads(&self, buf: &mut GradBuffer<S>) {
        for (i, node) in self.param_nodes.iter().enumerate() {
            if let Some(v) = node {
                if let Some(g) = self.grads.get(v.0).and_then(Option::as_ref) {
                    buf.accumulate(ParamId(i), g);
                }
            }
        }
        buf.mark_populated();
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op<S>, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Var {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    fn unary(&mut self, op: Op<S>, a: Var, f: impl Fn(S) -> S) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    /// Adds a length-`N` vector to every row of an `M×N` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(row));
        let n = ta.cols();
        if tb.len() != n {
            return Err(dim_err("add_row", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, &b) in chunk.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(ta.shape(), data).expect("shape");
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.unary(Op::Scale(a, c), a, |x| x * c)
    }

    /// Multiplies `a` by a one-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(dim_err("scale_by", self.shape(a), self.shape(s)));
        }
        let c = self.value(s).item();
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy(a, s), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Op::Relu(a), a, |x| if x > S::zero() { x } else { S::zero() })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a), a, |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid(a), a, sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a), a, |x| x.exp())
    }

    /// Dispatches one of the pointwise operations by tag. Binary operations
    /// read `operands[0]` and `operands[1]`; unary ones read only the first.
    pub fn elementwise(&mut self, op: Elementwise<S>, operands: &[Var]) -> Result<Var, TensorError> {
        let a = *operands
            .first()
            .ok_or(TensorError::Usage("elementwise needs an operand"))?;
        let second = || {
            operands
                .get(1)
                .copied()
                .ok_or(TensorError::Usage("binary elementwise needs two operands"))
        };
        match op {
            Elementwise::Add => {
                let b = second()?;
                self.add(a, b)
            }
            Elementwise::Sub => {
                let b = second()?;
                self.sub(a, b)
            }
            Elementwise::Mul => {
                let b = second()?;
                self.mul(a, b)
            }
            Elementwise::Relu => Ok(self.relu(a)),
            Elementwise::Tanh => Ok(self.tanh(a)),
            Elementwise::Sigmoid => Ok(self.sigmoid(a)),
            Elementwise::Scale(c) => Ok(self.scale(a, c)),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = rank2("matmul", ta)?;
        let (k2, n) = rank2("matmul", tb)?;
        if k != k2 {
            return Err(dim_err("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![S::zero(); m * n];
        matmul_nn_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let out = Tensor::new(&[m, n], out).expect("shape");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = rank2("matmul_nt", ta)?;
        let (n, k2) = rank2("matmul_nt", tb)?;
        if k != k2 {
            return Err(dim_err("matmul_nt", ta.shape(), tb.shape()));
        }
        let mut out = vec![S::zero(); m * n];
        matmul_nt_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let out = Tensor::new(&[m, n], out).expect("shape");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = rank2("transpose", ta)?;
        let d = ta.data();
        let out = Tensor::from_fn(n, m, |r, c| d[c * n + r]);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Softmax over the last dimension with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.data().iter().any(|x| !x.is_finite()) {
            return Err(TensorError::Numeric("softmax"));
        }
        let n = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let mut sum = S::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let out = Tensor::new(ta.shape(), data).expect("shape");
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Layer normalization over the last dimension followed by a per-feature
    /// affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let n = tx.cols();
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(dim_err("layer_norm", tx.shape(), self.value(gain).shape()));
        }
        if n < 2 && eps <= S::zero() {
            return Err(TensorError::Numeric("layer_norm over a single feature with eps = 0"));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let nf = S::of(n as f64);
        let rows = tx.len() / n;
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(n) {
            let mean = row.iter().copied().sum::<S>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nf;
            let rstd = S::one() / (var + eps).sqrt();
            for ((&v, &gi), &bi) in row.iter().zip(g).zip(b) {
                data.push((v - mean) * rstd * gi + bi);
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let out = Tensor::new(tx.shape(), data).expect("shape");
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: means,
                rstd: rstds,
            },
            rg,
        ))
    }

    /// Inverted dropout. Inactive or `p == 0` returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: S,
        active: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(p >= S::zero() && p < S::one()) {
            return Err(TensorError::Parameter(format!(
                "dropout probability {} outside [0, 1)",
                p
            )));
        }
        if !active || p == S::zero() {
            return Ok(x);
        }
        let keep = S::one() / (S::one() - p);
        let pf = p.as_f64();
        let mask: Vec<S> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < pf {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(tx.shape(), data).expect("shape");
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout(x, mask), rg))
    }

    /// Same-padded temporal convolution. `x` is `T×C_in`, `kernels` is
    /// `width×C_in×C_out`, `bias` has `C_out` entries.
    pub fn conv1d(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tw, tb) = (self.value(x), self.value(kernels), self.value(bias));
        let (t, cin) = rank2("conv1d", tx)?;
        let (width, wcin, cout) = match tw.shape() {
            [k, i, o] => (*k, *i, *o),
            s => return Err(dim_err("conv1d", tx.shape(), s)),
        };
        if width % 2 == 0 {
            return Err(TensorError::Parameter(format!(
                "conv1d kernel width {width} must be odd"
            )));
        }
        if wcin != cin || tb.len() != cout {
            return Err(dim_err("conv1d", tx.shape(), tw.shape()));
        }
        let mut out = Vec::with_capacity(t * cout);
        for _ in 0..t {
            out.extend_from_slice(tb.data());
        }
        let half = width / 2;
        for j in 0..width {
            let Some((t0, t1)) = conv_span(t, j, half) else {
                continue;
            };
            let s0 = t0 + j - half;
            let wj = &tw.data()[j * cin * cout..(j + 1) * cin * cout];
            matmul_nn_acc(
                &tx.data()[s0 * cin..(s0 + t1 - t0) * cin],
                wj,
                &mut out[t0 * cout..t1 * cout],
                t1 - t0,
                cin,
                cout,
            );
        }
        let out = Tensor::new(&[t, cout], out).expect("shape");
        let rg = self.rg(x) || self.rg(kernels) || self.rg(bias);
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                w: kernels,
                b: bias,
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = rank2("slice_cols", ta)?;
        if start + len > n || len == 0 {
            return Err(dim_err("slice_cols", ta.shape(), &[start, len]));
        }
        let d = ta.data();
        let out = Tensor::from_fn(m, len, |r, c| d[r * n + start + c]);
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = rank2("concat_cols", self.value(p))?;
            if r != m {
                return Err(dim_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(&[m, n], data).expect("shape");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = rank2("slice_rows", ta)?;
        if start + len > m || len == 0 {
            return Err(dim_err("slice_rows", ta.shape(), &[start, len]));
        }
        let out = Tensor::new(&[len, n], ta.data()[start * n..(start + len) * n].to_vec())
            .expect("shape");
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (r, c) = rank2("concat_rows", self.value(p))?;
            if c != n {
                return Err(dim_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            data.extend_from_slice(self.value(p).data());
            m += r;
        }
        let out = Tensor::new(&[m, n], data).expect("shape");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let tt = self.value(table);
        let (size, n) = rank2("gather_rows", tt)?;
        let mut data = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            if i >= size {
                return Err(TensorError::Lookup { index: i, size });
            }
            data.extend_from_slice(tt.row(i));
        }
        let out = Tensor::new(&[ids.len(), n], data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<S>() / S::of(t.len() as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean absolute error over all elements.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.l1_impl(pred, target, None)
    }

    /// Mean absolute error restricted to rows with non-zero weight:
    /// `Σ_r w_r Σ_c |p - t| / (Σ_r w_r · cols)`.
    pub fn l1_loss_masked(&mut self, pred: Var, target: Var, row_weights: &[S]) -> Result<Var, TensorError> {
        if row_weights.len() != self.value(pred).rows() {
            return Err(dim_err("l1_loss_masked", self.shape(pred), &[row_weights.len()]));
        }
        self.l1_impl(pred, target, Some(row_weights.to_vec()))
    }

    fn l1_impl(&mut self, pred: Var, target: Var, w: Option<Vec<S>>) -> Result<Var, TensorError> {
        self.same_shape("l1_loss", pred, target)?;
        let (tp, tt) = (self.value(pred), self.value(target));
        let n = tp.cols();
        let denom = match &w {
            Some(w) => w.iter().copied().sum::<S>() * S::of(n as f64),
            None => S::of(tp.len() as f64),
        };
        if denom <= S::zero() {
            return Err(TensorError::Numeric("l1_loss with zero total weight"));
        }
        let mut total = S::zero();
        for (r, (pr, tr)) in tp.data().chunks(n).zip(tt.data().chunks(n)).enumerate() {
            let wr = w.as_ref().map_or(S::one(), |w| w[r]);
            if wr == S::zero() {
                continue;
            }
            let s: S = pr.iter().zip(tr).map(|(&a, &b)| (a - b).abs()).sum();
            total += wr * s;
        }
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::L1 {
                pred,
                target,
                row_weights: w,
                denom,
            },
            rg,
        ))
    }

    /// Weighted binary cross-entropy on logits; `pos_weight` scales the
    /// positive-class term.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: &[S],
        weights: &[S],
        pos_weight: S,
    ) -> Result<Var, TensorError> {
        let tl = self.value(logits);
        if targets.len() != tl.len() || weights.len() != tl.len() {
            return Err(dim_err("bce_with_logits", tl.shape(), &[targets.len()]));
        }
        let denom: S = weights.iter().copied().sum();
        if denom <= S::zero() {
            return Err(TensorError::Numeric("bce_with_logits with zero total weight"));
        }
        let mut total = S::zero();
        for ((&x, &y), &w) in tl.data().iter().zip(targets).zip(weights) {
            total += w * (pos_weight * y * softplus(-x) + (S::one() - y) * softplus(x));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                pos_weight,
                denom,
            },
            rg,
        ))
    }

    /// Populates adjoints for every differentiable node reachable from
    /// `root`, which must hold exactly one element.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if self.value(root).len() != 1 {
            return Err(TensorError::Usage("backward root must be a scalar"));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(root) {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![S::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                backprop(&self.nodes, self.params, i, &g, &mut self.grads);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Output rows `[t0, t1)` that read input row `t + j - half` in bounds.
fn conv_span(t: usize, j: usize, half: usize) -> Option<(usize, usize)> {
    let t0 = half.saturating_sub(j);
    let t1 = (t + half).saturating_sub(j).min(t);
    (t0 < t1).then_some((t0, t1))
}

fn slot<'g, S: Real>(
    nodes: &[Node<S>],
    params: Option<&ParamStore<S>>,
    grads: &'g mut [Option<Vec<S>>],
    v: Var,
) -> Option<&'g mut Vec<S>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = lookup(nodes, params, v).len();
    Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); len]))
}

fn backprop<S: Real>(
    nodes: &[Node<S>],
    params: Option<&ParamStore<S>>,
    i: usize,
    g: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let val = |v: Var| lookup(nodes, params, v);
    let y = val(Var(i));
    macro_rules! with_slot {
        ($v:expr, |$s:ident| $body:expr) => {
            if let Some($s) = slot(nodes, params, grads, $v) {
                $body
            }
        };
    }
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            with_slot!(*a, |s| add_into(s, g));
            with_slot!(*b, |s| add_into(s, g));
        }
        Op::Sub(a, b) => {
            with_slot!(*a, |s| add_into(s, g));
            with_slot!(*b, |s| for (x, &d) in s.iter_mut().zip(g) {
                *x -= d;
            });
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a).data(), val(*b).data());
            with_slot!(*a, |s| for ((x, &d), &o) in s.iter_mut().zip(g).zip(tb) {
                *x += d * o;
            });
            with_slot!(*b, |s| for ((x, &d), &o) in s.iter_mut().zip(g).zip(ta) {
                *x += d * o;
            });
        }
        Op::AddRow(a, row) => {
            with_slot!(*a, |s| add_into(s, g));
            let n = y.cols();
            with_slot!(*row, |s| for chunk in g.chunks(n) {
                add_into(s, chunk);
            });
        }
        Op::Scale(a, c) => {
            with_slot!(*a, |s| for (x, &d) in s.iter_mut().zip(g) {
                *x += d * *c;
            });
        }
        Op::ScaleBy(a, sv) => {
            let c = val(*sv).item();
            let ta = val(*a).data();
            with_slot!(*a, |s| for (x, &d) in s.iter_mut().zip(g) {
                *x += d * c;
            });
            with_slot!(*sv, |s| {
                s[0] += g.iter().zip(ta).map(|(&d, &x)| d * x).sum::<S>();
            });
        }
        Op::Relu(a) => {
            with_slot!(*a, |s| for ((x, &d), &o) in s.iter_mut().zip(g).zip(y.data()) {
                if o > S::zero() {
                    *x += d;
                }
            });
        }
        Op::Tanh(a) => {
            with_slot!(*a, |s| for ((x, &d), &o) in s.iter_mut().zip(g).zip(y.data()) {
                *x += d * (S::one() - o * o);
            });
        }
        Op::Sigmoid(a) => {
            with_slot!(*a, |s| for ((x, &d), &o) in s.iter_mut().zip(g).zip(y.data()) {
                *x += d * o * (S::one() - o);
            });
        }
        Op::Exp(a) => {
            with_slot!(*a, |s| for ((x, &d), &o) in s.iter_mut().zip(g).zip(y.data()) {
                *x += d * o;
            });
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            with_slot!(*a, |s| matmul_nt_acc(g, tb.data(), s, m, n, k));
            with_slot!(*b, |s| matmul_tn_acc(ta.data(), g, s, m, k, n));
        }
        Op::MatMulNT(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
            with_slot!(*a, |s| matmul_nn_acc(g, tb.data(), s, m, n, k));
            with_slot!(*b, |s| matmul_tn_acc(g, ta.data(), s, m, n, k));
        }
        Op::Transpose(a) => {
            let (m, n) = (y.rows(), y.cols());
            with_slot!(*a, |s| for r in 0..m {
                for c in 0..n {
                    s[c * m + r] += g[r * n + c];
                }
            });
        }
        Op::Softmax(a) => {
            let n = y.cols();
            with_slot!(*a, |s| for ((sr, gr), yr) in
                s.chunks_mut(n).zip(g.chunks(n)).zip(y.data().chunks(n))
            {
                let dot: S = gr.iter().zip(yr).map(|(&d, &o)| d * o).sum();
                for ((x, &d), &o) in sr.iter_mut().zip(gr).zip(yr) {
                    *x += o * (d - dot);
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            mean,
            rstd,
        } => {
            let tx = val(*x);
            let n = tx.cols();
            let nf = S::of(n as f64);
            let gn = val(*gain).data();
            let xhat = |r: usize, c: usize| (tx.data()[r * n + c] - mean[r]) * rstd[r];
            with_slot!(*gain, |s| for (r, gr) in g.chunks(n).enumerate() {
                for c in 0..n {
                    s[c] += gr[c] * xhat(r, c);
                }
            });
            with_slot!(*bias, |s| for gr in g.chunks(n) {
                add_into(s, gr);
            });
            with_slot!(*x, |s| {
                let mut dxhat = vec![S::zero(); n];
                for (r, gr) in g.chunks(n).enumerate() {
                    let mut m1 = S::zero();
                    let mut m2 = S::zero();
                    for c in 0..n {
                        dxhat[c] = gr[c] * gn[c];
                        m1 += dxhat[c];
                        m2 += dxhat[c] * xhat(r, c);
                    }
                    m1 /= nf;
                    m2 /= nf;
                    for c in 0..n {
                        s[r * n + c] += rstd[r] * (dxhat[c] - m1 - xhat(r, c) * m2);
                    }
                }
            });
        }
        Op::Dropout(a, mask) => {
            with_slot!(*a, |s| for ((x, &d), &m) in s.iter_mut().zip(g).zip(mask) {
                *x += d * m;
            });
        }
        Op::Conv1d { x, w, b } => {
            let (tx, tw) = (val(*x), val(*w));
            let (t, cin) = (tx.rows(), tx.cols());
            let (width, cout) = (tw.shape()[0], tw.shape()[2]);
            let half = width / 2;
            with_slot!(*b, |s| for gr in g.chunks(cout) {
                add_into(s, gr);
            });
            with_slot!(*x, |s| for j in 0..width {
                if let Some((t0, t1)) = conv_span(t, j, half) {
                    let s0 = t0 + j - half;
                    let wj = &tw.data()[j * cin * cout..(j + 1) * cin * cout];
                    matmul_nt_acc(
                        &g[t0 * cout..t1 * cout],
                        wj,
                        &mut s[s0 * cin..(s0 + t1 - t0) * cin],
                        t1 - t0,
                        cout,
                        cin,
                    );
                }
            });
            with_slot!(*w, |s| for j in 0..width {
                if let Some((t0, t1)) = conv_span(t, j, half) {
                    let s0 = t0 + j - half;
                    matmul_tn_acc(
                        &tx.data()[s0 * cin..(s0 + t1 - t0) * cin],
                        &g[t0 * cout..t1 * cout],
                        &mut s[j * cin * cout..(j + 1) * cin * cout],
                        t1 - t0,
                        cin,
                        cout,
                    );
                }
            });
        }
        Op::SliceCols(a, start) => {
            let n = val(*a).cols();
            let len = y.cols();
            with_slot!(*a, |s| for (r, gr) in g.chunks(len).enumerate() {
                add_into(&mut s[r * n + start..r * n + start + len], gr);
            });
        }
        Op::ConcatCols(parts) => {
            let n = y.cols();
            let mut off = 0;
            for &p in parts {
                let w = val(p).cols();
                with_slot!(p, |s| for (r, gr) in g.chunks(n).enumerate() {
                    add_into(&mut s[r * w..(r + 1) * w], &gr[off..off + w]);
                });
                off += w;
            }
        }
        Op::SliceRows(a, start) => {
            let n = y.cols();
            with_slot!(*a, |s| add_into(&mut s[start * n..start * n + g.len()], g));
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = val(p).len();
                with_slot!(p, |s| add_into(s, &g[off..off + len]));
                off += len;
            }
        }
        Op::Gather(table, ids) => {
            let n = y.cols();
            with_slot!(*table, |s| for (r, &id) in ids.iter().enumerate() {
                add_into(&mut s[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
            });
        }
        Op::Reshape(a) => {
            with_slot!(*a, |s| add_into(s, g));
        }
        Op::Sum(a) => {
            with_slot!(*a, |s| for x in s.iter_mut() {
                *x += g[0];
            });
        }
        Op::Mean(a) => {
            let d = g[0] / S::of(val(*a).len() as f64);
            with_slot!(*a, |s| for x in s.iter_mut() {
                *x += d;
            });
        }
        Op::L1 {
            pred,
            target,
            row_weights,
            denom,
        } => {
            let (tp, tt) = (val(*pred), val(*target));
            let n = tp.cols();
            let sign = |k: usize| {
                let d = tp.data()[k] - tt.data()[k];
                let w = row_weights.as_ref().map_or(S::one(), |w| w[k / n]);
                let sg = if d > S::zero() {
                    S::one()
                } else if d < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                };
                sg * w * g[0] / *denom
            };
            with_slot!(*pred, |s| for (k, x) in s.iter_mut().enumerate() {
                *x += sign(k);
            });
            with_slot!(*target, |s| for (k, x) in s.iter_mut().enumerate() {
                *x -= sign(k);
            });
        }
        Op::Bce {
            logits,
            targets,
            weights,
            pos_weight,
            denom,
        } => {
            let tl = val(*logits).data();
            with_slot!(*logits, |s| for (k, x) in s.iter_mut().enumerate() {
                let p = sigmoid(tl[k]);
                let yk = targets[k];
                let d = *pos_weight * yk * (p - S::one()) + (S::one() - yk) * p;
                *x += g[0] * weights[k] * d / *denom;
            });
        }
    }
}

fn add_into<S: Real>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Weights of one GRU layer, gates ordered `[reset, update, candidate]`.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights {
    /// `in × 3H`
    pub w_input: Var,
    /// `H × 3H`
    pub w_hidden: Var,
    /// `3H`
    pub b_input: Var,
    /// `3H`
    pub b_hidden: Var,
}

impl<S: Real> Graph<'_, S> {
    /// One GRU step given the precomputed input projection `x·W_i + b_i`
    /// (a `1×3H` row). Splitting the projection out lets a sequence project
    /// all of its inputs with a single matmul.
    pub fn gru_step(&mut self, x_proj: Var, h: Var, w: &GruWeights) -> Result<Var, TensorError> {
        let hidden = self.value(h).cols();
        if self.value(x_proj).cols() != 3 * hidden || self.value(w.w_hidden).shape() != [hidden, 3 * hidden] {
            return Err(dim_err("gru_cell", self.shape(x_proj), self.shape(h)));
        }
        let hp = self.matmul(h, w.w_hidden)?;
        let hp = self.add_row(hp, w.b_hidden)?;
        let xr = self.slice_cols(x_proj, 0, hidden)?;
        let xz = self.slice_cols(x_proj, hidden, hidden)?;
        let xn = self.slice_cols(x_proj, 2 * hidden, hidden)?;
        let hr = self.slice_cols(hp, 0, hidden)?;
        let hz = self.slice_cols(hp, hidden, hidden)?;
        let hn = self.slice_cols(hp, 2 * hidden, hidden)?;
        let r = self.add(xr, hr)?;
        let r = self.sigmoid(r);
        let z = self.add(xz, hz)?;
        let z = self.sigmoid(z);
        let rn = self.mul(r, hn)?;
        let n = self.add(xn, rn)?;
        let n = self.tanh(n);
        // h' = (1 - z)·n + z·h = n + z·(h - n)
        let diff = self.sub(h, n)?;
        let zd = self.mul(z, diff)?;
        self.add(n, zd)
    }

    /// Standard GRU cell: `x` is `1×in`, `h` is `1×H`.
    pub fn gru_cell(&mut self, x: Var, h: Var, w: &GruWeights) -> Result<Var, TensorError> {
        let xp = self.matmul(x, w.w_input)?;
        let xp = self.add_row(xp, w.b_input)?;
        self.gru_step(xp, h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::<f64>::new();
        let i = g.constant(Tensor::identity(2));
        let a = g.constant(t(&[2, 2], &[1.0, -2.0, 3.5, 4.0]));
        let y = g.matmul(i, a).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.5, 4.0]);
    }

    #[test]
    fn row_times_column() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[11.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(TensorError::Dimension { left, right, .. }) => {
                assert_eq!(left, [2, 3]);
                assert_eq!(right, [2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn pointwise_identities() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[0.5, -1.0, 2.0]));
        let z = g.constant(Tensor::zeros(&[3]));
        let y = g.elementwise(Elementwise::Add, &[x, z]).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let zero = g.leaf(Tensor::scalar(0.0), true);
        let s = g.sigmoid(zero);
        assert_eq!(g.value(s).item(), 0.5);
        let th = g.tanh(zero);
        g.backward(th).unwrap();
        assert_eq!(g.grad(zero).unwrap().item(), 1.0);
        let bad = g.constant(Tensor::zeros(&[2]));
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(t(&[1, 4], &[3.0; 4]));
        let s = g.softmax(c).unwrap();
        assert!(g.value(s).data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let e = g.constant(t(&[1, 2], &[0.0, 1000.0]));
        let s = g.softmax(e).unwrap();
        assert!(g.value(s).data()[0] < 1e-300);
        assert!((g.value(s).data()[1] - 1.0).abs() < 1e-15);
        let nan = g.constant(t(&[1, 2], &[f64::NAN, 0.0]));
        assert_eq!(g.softmax(nan), Err(TensorError::Numeric("softmax")));
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::<f64>::new();
        let gain = g.constant(Tensor::full(&[2], 1.0));
        let bias = g.constant(Tensor::zeros(&[2]));
        let x = g.constant(t(&[1, 2], &[1.0, 3.0]));
        let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
        assert!((g.value(y).data()[0] + 1.0).abs() < 1e-9);
        assert!((g.value(y).data()[1] - 1.0).abs() < 1e-9);
        let c = g.constant(t(&[1, 2], &[5.0, 5.0]));
        let y = g.layer_norm(c, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
        let g1 = g.constant(Tensor::full(&[1], 1.0));
        let b1 = g.constant(Tensor::zeros(&[1]));
        let x1 = g.constant(t(&[2, 1], &[1.0, 2.0]));
        assert!(matches!(g.layer_norm(x1, g1, b1, 0.0), Err(TensorError::Numeric(_))));
    }

    #[test]
    fn dropout_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.9, false, &mut rng).unwrap(), x);
        assert!(matches!(g.dropout(x, 1.0, true, &mut rng), Err(TensorError::Parameter(_))));
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[100_000], 1.0));
        let y = g.dropout(x, 0.6, true, &mut rng).unwrap();
        let v = g.value(y).data();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let zeros = v.iter().filter(|&&e| e == 0.0).count() as f64 / v.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((zeros - 0.6).abs() < 0.02, "zero fraction {zeros}");
    }

    #[test]
    fn conv1d_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3, 1], &[0.0, 1.0, 0.0]));
        let w = g.constant(t(&[3, 1, 1], &[1.0, 1.0, 1.0]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv1d(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0]);
        let x2 = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let id = g.constant(t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b2 = g.constant(Tensor::zeros(&[2]));
        let y = g.conv1d(x2, id, b2).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        let even = g.constant(Tensor::zeros(&[2, 2, 2]));
        assert!(matches!(g.conv1d(x2, even, b2), Err(TensorError::Parameter(_))));
    }

    #[test]
    fn gru_degenerate_cases() {
        let mut g = Graph::<f64>::new();
        let w = GruWeights {
            w_input: g.constant(Tensor::zeros(&[3, 6])),
            w_hidden: g.constant(Tensor::zeros(&[2, 6])),
            b_input: g.constant(Tensor::zeros(&[6])),
            b_hidden: g.constant(Tensor::zeros(&[6])),
        };
        let x = g.constant(t(&[1, 3], &[0.3, -2.0, 5.0]));
        let h0 = g.constant(Tensor::zeros(&[1, 2]));
        let h1 = g.gru_cell(x, h0, &w).unwrap();
        assert_eq!(g.value(h1).data(), &[0.0, 0.0]);

        // Saturated update gate keeps the previous state.
        let big = g.constant(t(&[6], &[0.0, 0.0, 50.0, 50.0, 0.0, 0.0]));
        let w_in = g.constant(t(&[3, 6], &[0.4; 18]));
        let wz = GruWeights {
            w_input: w_in,
            b_input: big,
            ..w
        };
        let h = g.constant(t(&[1, 2], &[0.7, -0.2]));
        let h1 = g.gru_cell(x, h, &wz).unwrap();
        assert!(g.value(h1).max_abs_diff(g.value(h)) < 1e-12);
    }

    #[test]
    fn l1_cases() {
        let mut g = Graph::<f64>::new();
        let p = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let tg = g.constant(t(&[2], &[0.0, 4.0]));
        let l = g.l1_loss(p, tg).unwrap();
        assert_eq!(g.value(l).item(), 1.5);
        let same = g.l1_loss(p, p).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        let q = g.leaf(t(&[2], &[0.0, 4.0]), true);
        let l0 = g.l1_loss(q, tg).unwrap();
        g.backward(l0).unwrap();
        assert_eq!(g.grad(q).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_linear_and_disconnected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let unused = g.leaf(t(&[3], &[1.0, 1.0, 1.0]), true);
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
        assert_eq!(g.grad(unused).unwrap().data(), &[0.0; 3]);
        assert_eq!(g.backward(x), Err(TensorError::Usage("backward root must be a scalar")));
    }

    #[test]
    fn reuse_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 7.0);
    }
}
