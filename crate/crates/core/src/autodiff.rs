//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! Every forward operation appends a node holding its output value and the
//! ids of its inputs, so node order is already topological. [`Tape::backward`]
//! walks the nodes once in reverse and accumulates vector-Jacobian products.
//!
//! Binary elementwise operations accept equal shapes or a one-element operand
//! broadcast against the other; anything else is a dimension error.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise primitives addressable through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Relu,
    Softplus,
    Exp,
    Log,
    Square,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Softplus,
    Exp,
    Log,
    Square,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    Offset(Var),
    Sum(Var),
    MeanRows(Var),
    SumRows(Var),
    RepeatRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Transpose(Var),
    SoftmaxRows(Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

/// Ordered record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Records a differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never needs a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::contract(format!(
                "{op:?} takes {arity} input(s), got {}",
                inputs.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Relu => Ok(self.relu(inputs[0])),
            Elementwise::Softplus => Ok(self.softplus(inputs[0])),
            Elementwise::Exp => Ok(self.exp(inputs[0])),
            Elementwise::Log => self.log(inputs[0]),
            Elementwise::Square => Ok(self.square(inputs[0])),
        }
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
        };
        let out = broadcast(self.value(a), self.value(b), f)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let x = self.value(a);
        let out = match kind {
            Unary::Relu => x.map(|v| v.max(0.0)),
            Unary::Softplus => x.map(softplus),
            Unary::Exp => x.map(f64::exp),
            Unary::Log => x.map(f64::ln),
            Unary::Square => x.map(|v| v * v),
        };
        let rg = self.needs(&[a]);
        self.push(out, Op::Unary(kind, a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Unary::Softplus, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(Unary::Log, a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Addition of a constant.
    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let out = self.value(a).map(|v| v + shift);
        let rg = self.needs(&[a]);
        self.push(out, Op::Offset(a), rg)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Column-wise mean of an `m × n` matrix, giving `1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, _) = self.value(a).expect_matrix("mean_rows")?;
        if m == 0 {
            return Err(Error::contract("mean over zero rows"));
        }
        let out = column_sums(self.value(a)).map(|v| v / m as f64);
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::MeanRows(a), rg))
    }

    /// Column-wise sum of an `m × n` matrix, giving `1 × n`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.value(a).expect_matrix("sum_rows")?;
        let out = column_sums(self.value(a));
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::SumRows(a), rg))
    }

    /// Stacks a `1 × n` row `m` times.
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, n) = x.expect_matrix("repeat_rows")?;
        if r != 1 {
            return Err(Error::Dimension {
                op: "repeat_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![1, n],
            });
        }
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(x.data());
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::RepeatRows(a), rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let (m, _) = self.value(parts[0]).expect_matrix("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).expect_matrix("concat_cols")?;
            if r != m {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::matrix(m, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.expect_matrix("slice_cols")?;
        if start > end || end > n {
            return Err(Error::contract(format!(
                "column range {start}..{end} out of range for {n} columns"
            )));
        }
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&x.row_slice(i)[start..end]);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::matrix(m, end - start, data)?,
            Op::SliceCols(a, start),
            rg,
        ))
    }

    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let out = self.value(a).select_rows(indices)?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::SelectRows(a, indices.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = transpose(self.value(a))?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.expect_matrix("softmax_rows")?;
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = x.row_slice(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.into_iter().map(|e| e / z));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::SoftmaxRows(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let nn = bv.shape()[1];
                    if self.nodes[a.0].requires_grad {
                        // g · bᵀ
                        let mut ga = vec![0.0; m * k];
                        gemm(m, nn, k, g.data(), (nn, 1), bv.data(), (1, nn), &mut ga, false);
                        accumulate(&mut grads, *a, Tensor::matrix(m, k, ga)?);
                    }
                    if self.nodes[b.0].requires_grad {
                        // aᵀ · g
                        let mut gb = vec![0.0; k * nn];
                        gemm(k, m, nn, av.data(), (1, k), g.data(), (nn, 1), &mut gb, false);
                        accumulate(&mut grads, *b, Tensor::matrix(k, nn, gb)?);
                    }
                }
                Op::Binary(kind, a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (ga, gb): (Tensor, Tensor) = match kind {
                        Binary::Add => (g.clone(), g.clone()),
                        Binary::Sub => (g.clone(), g.map(|v| -v)),
                        Binary::Mul => (
                            broadcast(&g, bv, |x, y| x * y)?,
                            broadcast(&g, av, |x, y| x * y)?,
                        ),
                        Binary::Div => {
                            let ga = broadcast(&g, bv, |x, y| x / y)?;
                            // -g · a / b² = -g · out / b
                            let t = broadcast(&g, out, |x, y| -x * y)?;
                            (ga, broadcast(&t, bv, |x, y| x / y)?)
                        }
                    };
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, reduce_to(ga, av.shape()));
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, reduce_to(gb, bv.shape()));
                    }
                }
                Op::Unary(kind, a) => {
                    let x = self.value(*a);
                    let local: Vec<f64> = match kind {
                        Unary::Relu => x
                            .data()
                            .iter()
                            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                            .collect(),
                        Unary::Softplus => x.data().iter().map(|&v| sigmoid(v)).collect(),
                        Unary::Exp => out.data().to_vec(),
                        Unary::Log => x.data().iter().map(|&v| 1.0 / v).collect(),
                        Unary::Square => x.data().iter().map(|&v| 2.0 * v).collect(),
                    };
                    let data = g.data().iter().zip(&local).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::Scale(a, factor) => {
                    let f = *factor;
                    accumulate(&mut grads, *a, g.map(|v| v * f));
                }
                Op::Offset(a) => accumulate(&mut grads, *a, g),
                Op::Sum(a) => {
                    let s = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::filled(self.shape(*a), s));
                }
                Op::MeanRows(a) | Op::SumRows(a) => {
                    let (m, nc) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let scale = if matches!(node.op, Op::MeanRows(_)) {
                        1.0 / m as f64
                    } else {
                        1.0
                    };
                    let mut data = Vec::with_capacity(m * nc);
                    for _ in 0..m {
                        data.extend(g.data().iter().map(|v| v * scale));
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, nc, data)?);
                }
                Op::RepeatRows(a) => {
                    let (m, nc) = (out.shape()[0], out.shape()[1]);
                    let mut acc = vec![0.0; nc];
                    for i in 0..m {
                        for (o, v) in acc.iter_mut().zip(g.row_slice(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::row(acc));
                }
                Op::ConcatCols(parts) => {
                    let m = out.shape()[0];
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p)[1];
                        if self.nodes[p.0].requires_grad {
                            let mut data = Vec::with_capacity(m * w);
                            for i in 0..m {
                                data.extend_from_slice(&g.row_slice(i)[start..start + w]);
                            }
                            accumulate(&mut grads, *p, Tensor::matrix(m, w, data)?);
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (m, nc) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let w = out.shape()[1];
                    let mut data = vec![0.0; m * nc];
                    for i in 0..m {
                        data[i * nc + start..i * nc + start + w].copy_from_slice(g.row_slice(i));
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, nc, data)?);
                }
                Op::SelectRows(a, indices) => {
                    let (m, nc) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let mut data = vec![0.0; m * nc];
                    for (r, &src) in indices.iter().enumerate() {
                        for (o, v) in data[src * nc..(src + 1) * nc].iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, nc, data)?);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, transpose(&g)?),
                Op::SoftmaxRows(a) => {
                    let (m, nc) = (out.shape()[0], out.shape()[1]);
                    let mut data = Vec::with_capacity(m * nc);
                    for i in 0..m {
                        let s = out.row_slice(i);
                        let gi = g.row_slice(i);
                        let dot: f64 = s.iter().zip(gi).map(|(a, b)| a * b).sum();
                        data.extend(s.iter().zip(gi).map(|(sv, gv)| sv * (gv - dot)));
                    }
                    accumulate(&mut grads, *a, Tensor::matrix(m, nc, data)?);
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, g.reshape(self.shape(*a))?),
            }
        }

        let shapes = self.nodes[..n].iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Sums a broadcast gradient back down to a one-element operand.
fn reduce_to(g: Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let s: f64 = g.data().iter().sum();
    let mut t = Tensor::zeros(shape);
    t.data_mut()[0] = s;
    t
}

fn broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    if b.numel() == 1 {
        let y = b.data()[0];
        return Ok(a.map(|x| f(x, y)));
    }
    if a.numel() == 1 {
        let x = a.data()[0];
        return Ok(b.map(|y| f(x, y)));
    }
    Err(Error::Dimension {
        op: "elementwise",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

fn column_sums(x: &Tensor) -> Tensor {
    let mut out = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (o, v) in out.iter_mut().zip(x.row_slice(i)) {
            *o += v;
        }
    }
    Tensor::row(out)
}

fn transpose(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.expect_matrix("transpose")?;
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = x.data()[i * n + j];
        }
    }
    Tensor::matrix(n, m, data)
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the largest `|g_ad - g_fd| / max(1, |g_ad| + |g_fd|)` over every
/// coordinate of every parameter. Evaluation failures are reported as an
/// infinite error.
pub fn gradient_check<F>(f: F, params: &[Tensor], eps: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let analytic = (|| -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        Ok(vars.iter().map(|&v| grads.get(v)).collect())
    })();
    let Ok(analytic) = analytic else {
        return f64::INFINITY;
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.numel() {
            let orig = p.data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let plus = eval(&work);
            work[pi].data_mut()[ci] = orig - eps;
            let minus = eval(&work);
            work[pi].data_mut()[ci] = orig;
            let (Ok(plus), Ok(minus)) = (plus, minus) else {
                return f64::INFINITY;
            };
            let fd = (plus - minus) / (2.0 * eps);
            let ad = analytic[pi].data()[ci];
            let err = (ad - fd).abs() / f64::max(1.0, ad.abs() + fd.abs());
            if !err.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(err);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::identity(2));
        let v = t.constant(mat(2, 1, &[3.0, 4.0]));
        let out = t.matmul(i, v).unwrap();
        assert_eq!(t.value(out).data(), &[3.0, 4.0]);

        let z = t.constant(Tensor::zeros(&[2, 2]));
        let out = t.matmul(z, v).unwrap();
        assert_eq!(t.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_hand_product_and_shape_error() {
        let mut t = Tape::new();
        let a = t.constant(mat(1, 2, &[1.0, 2.0]));
        let b = t.constant(mat(2, 1, &[3.0, 4.0]));
        let out = t.matmul(a, b).unwrap();
        assert_eq!(t.value(out).data(), &[11.0]);
        let err = t.matmul(a, a).unwrap_err().to_string();
        assert!(err.contains("[1, 2]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let neg = t.constant(Tensor::scalar(-2.0));
        let zero = t.constant(Tensor::scalar(0.0));
        let r = t.elementwise(Elementwise::Relu, &[neg]).unwrap();
        assert_eq!(t.value(r).item().unwrap(), 0.0);
        let s = t.elementwise(Elementwise::Softplus, &[zero]).unwrap();
        assert!((t.value(s).item().unwrap() - 2f64.ln()).abs() < 1e-15);
        let e = t.elementwise(Elementwise::Exp, &[zero]).unwrap();
        assert_eq!(t.value(e).item().unwrap(), 1.0);
        assert!(matches!(
            t.elementwise(Elementwise::Log, &[zero]),
            Err(Error::Domain(_))
        ));
        assert!(t.elementwise(Elementwise::Add, &[zero]).is_err());
    }

    #[test]
    fn broadcast_only_scalar_or_equal() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[1, 3]));
        let s = t.constant(Tensor::scalar(1.0));
        assert!(t.add(a, b).is_err());
        let ok = t.add(a, s).unwrap();
        assert_eq!(t.value(ok).data(), &[1.0; 6]);
    }

    #[test]
    fn backward_power_rule() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).item().unwrap(), 6.0);
    }

    #[test]
    fn backward_sum_of_matvec() {
        // d/dW sum(W v) = 1 · vᵀ
        let mut t = Tape::new();
        let w = t.leaf(mat(2, 3, &[0.5, -1.0, 2.0, 0.0, 1.0, 3.0]));
        let v = t.leaf(mat(3, 1, &[1.0, 2.0, 3.0]));
        let wv = t.matmul(w, v).unwrap();
        let loss = t.sum(wv);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        // d/dv = Wᵀ · 1
        assert_eq!(g.get(v).data(), &[0.5, 0.0, 5.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let unused = t.leaf(Tensor::zeros(&[2, 2]));
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_check_examples() {
        let sq = |t: &mut Tape, v: &[Var]| Ok(t.square(v[0]));
        let err = gradient_check(sq, &[Tensor::scalar(1.7)], 1e-5);
        assert!(err < 1e-8, "{err}");

        let constant = |t: &mut Tape, _v: &[Var]| Ok(t.constant(Tensor::scalar(4.0)));
        assert_eq!(gradient_check(constant, &[Tensor::scalar(1.0)], 1e-5), 0.0);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-800.0) < 1e-300);
    }
}
