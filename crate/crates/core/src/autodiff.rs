//! Dense reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Tape`] records every operation in evaluation order. Calling
//! [`Tape::backward`] on a `1 × 1` result walks the records in reverse and
//! accumulates adjoints for every node; a tape can only be differentiated once.

use ndarray::{s, Array2, Axis, Zip};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("tape was already differentiated; re-run the forward pass")]
    StaleTape,
    #[error("time embedding dimension must be even and >= 2, got {0}")]
    OddDim(usize),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Array2<f64>),
    Scale(usize, f64),
    Silu(usize),
    Sigmoid(usize),
    Square(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    LogSoftmax(usize),
    Softmax(usize),
    /// Holds `exp(H)` computed in the forward pass.
    Acyclicity(usize, Array2<f64>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total: f64 = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Tensor {
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value produced by {:?}",
            std::mem::discriminant(&op)
        );
        let (rows, cols) = value.dim();
        self.nodes.push(Node { value, op });
        Tensor {
            id: self.nodes.len() - 1,
            rows,
            cols,
        }
    }

    /// Records an input (parameter or constant) on the tape.
    pub fn leaf(&mut self, value: Array2<f64>) -> Tensor {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Tensor {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, t: Tensor) -> &Array2<f64> {
        &self.nodes[t.id].value
    }

    pub fn scalar_value(&self, t: Tensor) -> f64 {
        self.nodes[t.id].value[[0, 0]]
    }

    fn same_shape(op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a.id, b.id)))
    }

    pub fn transpose(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a.id))
    }

    /// Elementwise sum; `b` may also be a `1 × cols` row broadcast over `a`.
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.shape() == b.shape() {
            let v = self.value(a) + self.value(b);
            Ok(self.push(v, Op::Add(a.id, b.id)))
        } else if b.rows == 1 && b.cols == a.cols {
            let v = self.value(a) + self.value(b);
            Ok(self.push(v, Op::AddRow(a.id, b.id)))
        } else {
            Err(AutodiffError::ShapeMismatch {
                op: "add",
                lhs: a.shape(),
                rhs: b.shape(),
            })
        }
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a.id, b.id)))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a.id, b.id)))
    }

    /// Elementwise product with a constant matrix that receives no gradient.
    pub fn mul_const(&mut self, a: Tensor, k: Array2<f64>) -> Result<Tensor> {
        if k.dim() != a.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_const",
                lhs: a.shape(),
                rhs: k.dim(),
            });
        }
        let v = self.value(a) * &k;
        Ok(self.push(v, Op::MulConst(a.id, k)))
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Tensor {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a.id, s))
    }

    pub fn silu(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(silu);
        self.push(v, Op::Silu(a.id))
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a.id))
    }

    pub fn square(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a.id))
    }

    pub fn abs(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).mapv(f64::abs);
        self.push(v, Op::Abs(a.id))
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a.id))
    }

    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let n = (a.rows * a.cols).max(1) as f64;
        let v = Array2::from_elem((1, 1), self.value(a).sum() / n);
        self.push(v, Op::Mean(a.id))
    }

    pub fn slice_cols(&mut self, a: Tensor, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > a.cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: a.shape(),
                rhs: (start, end),
            });
        }
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push(v, Op::SliceCols(a.id, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                lhs: (rows, 0),
                rhs: bad.shape(),
            });
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        Ok(self.push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    pub fn log_softmax(&mut self, a: Tensor) -> Tensor {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmax(a.id))
    }

    pub fn softmax(&mut self, a: Tensor) -> Tensor {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a.id))
    }

    /// `tr(exp(H)) - d` for a square `H`; the adjoint is `exp(H)^T`.
    pub fn acyclicity(&mut self, h: Tensor) -> Result<Tensor> {
        if h.rows != h.cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "acyclicity",
                lhs: h.shape(),
                rhs: h.shape(),
            });
        }
        let e = linalg::expm(self.value(h));
        let v = Array2::from_elem((1, 1), linalg::trace(&e) - h.rows as f64);
        Ok(self.push(v, Op::Acyclicity(h.id, e)))
    }

    /// Reverse sweep from a scalar loss. Consumes the tape's adjoint state.
    pub fn backward(&mut self, loss: Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(AutodiffError::StaleTape);
        }
        if loss.shape() != (1, 1) {
            return Err(AutodiffError::NotScalar(loss.shape()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.id] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], id: usize, g: Array2<f64>) {
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[*b].value.t());
                    let db = self.nodes[*a].value.t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, b) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, db);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[*b].value;
                    let db = &g * &self.nodes[*a].value;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MulConst(a, k) => acc(&mut grads, *a, &g * k),
                Op::Scale(a, s) => acc(&mut grads, *a, &g * *s),
                Op::Silu(a) => {
                    let mut d = self.nodes[*a].value.clone();
                    Zip::from(&mut d).and(&g).for_each(|x, &gy| {
                        let sg = sigmoid(*x);
                        *x = gy * sg * (1.0 + *x * (1.0 - sg));
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = node.value.clone();
                    Zip::from(&mut d).and(&g).for_each(|y, &gy| *y = gy * *y * (1.0 - *y));
                    acc(&mut grads, *a, d);
                }
                Op::Square(a) => acc(&mut grads, *a, &g * &self.nodes[*a].value * 2.0),
                Op::Abs(a) => {
                    let sign = self.nodes[*a].value.mapv(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, &g * &sign);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.nodes[*a].value.dim(), g[[0, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::Mean(a) => {
                    let dim = self.nodes[*a].value.dim();
                    let n = (dim.0 * dim.1).max(1) as f64;
                    acc(&mut grads, *a, Array2::from_elem(dim, g[[0, 0]] / n));
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.nodes[*a].value.dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        acc(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::LogSoftmax(a) => {
                    let sm = node.value.mapv(f64::exp);
                    let row_sum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, &g - &(&sm * &row_sum));
                }
                Op::Softmax(a) => {
                    let sm = &node.value;
                    let dot = (&g * sm).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, sm * &(&g - &dot));
                }
                Op::Acyclicity(a, e) => acc(&mut grads, *a, e.t().to_owned() * g[[0, 0]]),
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for a leaf; zeros when the loss does not depend on it.
    pub fn get(&self, t: Tensor) -> Array2<f64> {
        self.grads
            .get(t.id)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Array2::zeros(t.shape()))
    }
}

/// Largest relative discrepancy between analytic gradients and central
/// finite differences of `f`, using `|a - b| / max(1e-12, |a| + |b|)`.
pub fn grad_check<F>(f: F, params: &[Array2<f64>], analytic: &[Array2<f64>], step: f64) -> f64
where
    F: Fn(&[Array2<f64>]) -> f64,
{
    assert!(step > 0.0);
    assert_eq!(params.len(), analytic.len());
    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        for idx in 0..params[p].len() {
            let (r, c) = (idx / params[p].ncols(), idx % params[p].ncols());
            let orig = params[p][[r, c]];
            work[p][[r, c]] = orig + step;
            let plus = f(&work);
            work[p][[r, c]] = orig - step;
            let minus = f(&work);
            work[p][[r, c]] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let ad = analytic[p][[r, c]];
            let err = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-12);
            worst = worst.max(err);
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Silu,
    Sigmoid,
}

impl Activation {
    fn apply_tape(self, tape: &mut Tape, x: Tensor) -> Tensor {
        match self {
            Activation::Identity => x,
            Activation::Silu => tape.silu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }

    fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Silu => x.mapv_inplace(silu),
            Activation::Sigmoid => x.mapv_inplace(sigmoid),
        }
    }
}

/// Fully connected network; `params` alternates weight (`in × out`) and bias (`1 × out`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mlp {
    #[serde(with = "crate::serde_arrays")]
    pub params: Vec<Array2<f64>>,
    pub activations: Vec<Activation>,
}

impl Mlp {
    /// LeCun-normal weights, zero biases; the last layer is scaled by `out_scale`.
    pub fn new<R: rand::Rng>(widths: &[usize], hidden: Activation, out_scale: f64, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        assert!(widths.len() >= 2);
        let n_layers = widths.len() - 1;
        let mut params = Vec::with_capacity(2 * n_layers);
        let mut activations = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let scale = (1.0 / fan_in as f64).sqrt() * if l + 1 == n_layers { out_scale } else { 1.0 };
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            });
            params.push(w);
            params.push(Array2::zeros((1, fan_out)));
            activations.push(if l + 1 == n_layers { Activation::Identity } else { hidden });
        }
        Self { params, activations }
    }

    pub fn input_width(&self) -> usize {
        self.params[0].nrows()
    }

    pub fn output_width(&self) -> usize {
        self.params[self.params.len() - 1].ncols()
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Records the forward pass; returns the output and the parameter leaves
    /// in the same order as `self.params`.
    pub fn forward_tape(&self, tape: &mut Tape, input: Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let leaves: Vec<Tensor> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut h = input;
        for (l, act) in self.activations.iter().enumerate() {
            let z = tape.matmul(h, leaves[2 * l])?;
            let z = tape.add(z, leaves[2 * l + 1])?;
            h = act.apply_tape(tape, z);
        }
        Ok((h, leaves))
    }

    /// Tape-free forward pass with the same arithmetic as [`Mlp::forward_tape`].
    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_width() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mlp",
                lhs: input.dim(),
                rhs: self.params[0].dim(),
            });
        }
        let mut h = input.clone();
        for (l, act) in self.activations.iter().enumerate() {
            let mut z = h.dot(&self.params[2 * l]);
            z += &self.params[2 * l + 1];
            act.apply(&mut z);
            h = z;
        }
        Ok(h)
    }
}

/// Sinusoidal embedding `[sin(t w_k)..., cos(t w_k)...]` with `w_k`
/// log-spaced over `[1, 1000]`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(AutodiffError::OddDim(dim));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|k| if half == 1 { 1.0 } else { 1000f64.powf(k as f64 / (half - 1) as f64) })
        .collect();
    let mut out = Vec::with_capacity(dim);
    out.extend(freqs.iter().map(|w| (t * w).sin()));
    out.extend(freqs.iter().map(|w| (t * w).cos()));
    Ok(out)
}

pub fn time_embedding_batch(ts: &[f64], dim: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((ts.len(), dim));
    for (i, &t) in ts.iter().enumerate() {
        let e = time_embedding(t, dim)?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&e));
    }
    Ok(out)
}

/// Bias-corrected Adam moments for a list of parameter matrices.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamState {
    pub t: u64,
    #[serde(with = "crate::serde_arrays")]
    pub m: Vec<Array2<f64>>,
    #[serde(with = "crate::serde_arrays")]
    pub v: Vec<Array2<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Array2<f64>], lr: f64) -> Self {
        Self {
            t: 0,
            m: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam",
                lhs: (params.len(), 0),
                rhs: (grads.len(), self.m.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.dim() != g.dim() || p.dim() != m.dim() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam",
                    lhs: p.dim(),
                    rhs: g.dim(),
                });
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.lr, self.eps);
        for i in 0..params.len() {
            Zip::from(&mut params[i])
                .and(&grads[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
