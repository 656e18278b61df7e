use super::{as_matrix, kernels, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a backward rule. Only used to prove the
/// gradient checker can fail.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    MulBackward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Recording,
    Consumed,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Softmax {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Sum(Var),
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: ConcatAxis,
    },
    Reshape(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy)]
enum ConcatAxis {
    Rows,
    Cols,
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of operations. Backward walks it in strict reverse
/// append order and may run once; call [`Graph::reset`] to reuse it.
#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    state: State,
    fault: Option<Fault>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const CE_CLAMP: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn check_finite<T: Real>(data: &[T], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn broadcast_count(lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    if lhs == rhs {
        return Ok(1);
    }
    if rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs {
        let lead: usize = lhs[..lhs.len() - rhs.len()].iter().product();
        return Ok(lead);
    }
    Err(Error::Broadcast {
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            state: State::Recording,
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.state == State::Consumed
    }

    /// Drops every node and gradient so the graph can record a new pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.state = State::Recording;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`, if any
    /// flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if self.state == State::Consumed {
            return Err(Error::State(
                "graph already consumed by backward; reset it before recording".into(),
            ));
        }
        let mut value = value;
        value.set_requires_grad(requires_grad);
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

    /// Records a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        let rg = t.requires_grad();
        check_finite(t.data(), "leaf")?;
        self.push(t, Op::Leaf, rg)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.value(a))?;
        let (k2, n) = as_matrix(self.value(b))?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        check_finite(&out, "matmul")?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// Pointwise add; `b` may be a suffix of `a`'s shape and is repeated
    /// along the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, false)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, true)
    }

    fn binary(&mut self, a: Var, b: Var, is_mul: bool) -> Result<Var> {
        let reps = broadcast_count(self.shape(a), self.shape(b))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let blen = bv.len();
        let mut out = Vec::with_capacity(av.len());
        for r in 0..reps {
            let arow = &av[r * blen..(r + 1) * blen];
            if is_mul {
                out.extend(arow.iter().zip(bv).map(|(&x, &y)| x * y));
            } else {
                out.extend(arow.iter().zip(bv).map(|(&x, &y)| x + y));
            }
        }
        let name = if is_mul { "mul" } else { "add" };
        check_finite(&out, name)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        let op = if is_mul { Op::Mul(a, b) } else { Op::Add(a, b) };
        self.push(Tensor::new(shape, out)?, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v * c).collect();
        check_finite(&out, "scale")?;
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Scale(x, c), rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * axis_len * inner + j * inner + i;
                let mut max = T::neg_infinity();
                for j in 0..axis_len {
                    max = max.max(xv[at(j)]);
                }
                let mut sum = T::zero();
                for j in 0..axis_len {
                    let e = (xv[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum = sum + e;
                }
                for j in 0..axis_len {
                    out[at(j)] = out[at(j)] / sum;
                }
            }
        }
        check_finite(&out, "softmax")?;
        let rg = self.rg(x);
        self.push(
            Tensor::new(shape, out)?,
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            },
            rg,
        )
    }

    /// Layer normalization over the last axis followed by the affine
    /// `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Dimension("layer_norm on a scalar".into()))?;
        if d == 0 {
            return Err(Error::Dimension(
                "layer_norm over a zero-length axis".into(),
            ));
        }
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p) != [d] {
                return Err(Error::Dimension(format!(
                    "layer_norm {name} has shape {:?}, expected [{d}]",
                    self.shape(p)
                )));
            }
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.len() / d;
        let dn = T::lit(d as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        check_finite(&out, "layer_norm")?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// GeLU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let c = T::lit(GELU_C);
        let k = T::lit(GELU_K);
        let half = T::lit(0.5);
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| half * v * (T::one() + (c * (v + k * v * v * v)).tanh()))
            .collect();
        check_finite(&out, "gelu")?;
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Gelu(x), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        check_finite(&[s], "sum")?;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `out.flat[i] = x.flat[index[i]]`, reshaped to `shape`. Backward
    /// scatter-adds, so repeated indices accumulate.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let xv = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::Dimension(format!(
                "gather index {bad} out of range for {} elements",
                xv.len()
            )));
        }
        let out: Vec<T> = index.iter().map(|&i| xv[i]).collect();
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(x);
        self.push(t, Op::Gather { x, index }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push(t, Op::Reshape(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = as_matrix(self.value(x))?;
        let index = (0..n)
            .flat_map(|j| (0..m).map(move |i| i * n + j))
            .collect();
        self.gather(x, index, vec![n, m])
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = as_matrix(self.value(x))?;
        if start >= end || end > m {
            return Err(Error::Dimension(format!(
                "row slice {start}..{end} of a {m}-row matrix"
            )));
        }
        self.gather(x, (start * n..end * n).collect(), vec![end - start, n])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = as_matrix(self.value(x))?;
        if start >= end || end > n {
            return Err(Error::Dimension(format!(
                "column slice {start}..{end} of a {n}-column matrix"
            )));
        }
        let w = end - start;
        let index = (0..m)
            .flat_map(|i| (start..end).map(move |j| i * n + j))
            .collect();
        self.gather(x, index, vec![m, w])
    }

    /// Single element as a scalar.
    pub fn element(&mut self, x: Var, flat_index: usize) -> Result<Var> {
        self.gather(x, vec![flat_index], Vec::new())
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, ConcatAxis::Rows)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, ConcatAxis::Cols)
    }

    fn concat(&mut self, parts: &[Var], axis: ConcatAxis) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".into()));
        }
        let dims = parts
            .iter()
            .map(|&p| as_matrix(self.value(p)))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match axis {
            ConcatAxis::Rows => {
                let n = dims[0].1;
                if dims.iter().any(|d| d.1 != n) {
                    return Err(Error::Dimension(format!(
                        "concat_rows column counts differ: {dims:?}"
                    )));
                }
                (dims.iter().map(|d| d.0).sum(), n)
            }
            ConcatAxis::Cols => {
                let m = dims[0].0;
                if dims.iter().any(|d| d.0 != m) {
                    return Err(Error::Dimension(format!(
                        "concat_cols row counts differ: {dims:?}"
                    )));
                }
                (m, dims.iter().map(|d| d.1).sum())
            }
        };
        let mut out = Vec::with_capacity(rows * cols);
        match axis {
            ConcatAxis::Rows => {
                for &p in parts {
                    out.extend_from_slice(self.value(p).data());
                }
            }
            ConcatAxis::Cols => {
                for r in 0..rows {
                    for (&p, &(_, w)) in parts.iter().zip(&dims) {
                        out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
                    }
                }
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Mean negative log-likelihood of `labels` under the rows of a
    /// `[batch × classes]` probability matrix, with probabilities clamped
    /// at 1e-12.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = as_matrix(self.value(probs))?;
        if labels.len() != b {
            return Err(Error::Contract(format!(
                "{} labels for a batch of {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Contract(format!("label {bad} outside 0..{c}")));
        }
        let pv = self.value(probs).data();
        let clamp = T::lit(CE_CLAMP);
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -pv[i * c + l].max(clamp).ln())
            .sum();
        let loss = total / T::lit(b as f64);
        check_finite(&[loss], "cross_entropy")?;
        let rg = self.rg(probs);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`. Populates [`Graph::grad`] for
    /// every node that requires a gradient and consumes the graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.state == State::Consumed {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.state = State::Consumed;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g)?;
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc
                .iter_mut()
                .zip(&contribution)
                .for_each(|(a, &c)| *a = *a + c),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) -> Result<()> {
        // Temporarily detach the op so saved values can be read while
        // gradients for earlier nodes are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.propagate_op(i, &op, g);
        self.nodes[i].op = op;
        result
    }

    fn propagate_op(&mut self, i: usize, op: &Op<T>, g: &[T]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(self.value(a))?;
                let n = self.shape(b)[1];
                if self.rg(a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_grad_a(g, self.value(b).data(), &mut da, m, k, n);
                    self.accumulate(a, da);
                }
                if self.rg(b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_grad_b(self.value(a).data(), g, &mut db, m, k, n);
                    self.accumulate(b, db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(a) {
                    self.accumulate(a, g.to_vec());
                }
                if self.rg(b) {
                    let blen = self.value(b).len();
                    let mut db = vec![T::zero(); blen];
                    for chunk in g.chunks(blen) {
                        db.iter_mut().zip(chunk).for_each(|(d, &x)| *d = *d + x);
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Mul(a, b) => {
                let blen = self.value(b).len();
                if self.rg(a) {
                    let bv = self.value(b).data();
                    let mut da: Vec<T> = g
                        .chunks(blen)
                        .flat_map(|chunk| chunk.iter().zip(bv).map(|(&x, &y)| x * y))
                        .collect();
                    if self.fault == Some(Fault::MulBackward) {
                        da.iter_mut().for_each(|v| *v = *v * T::lit(2.0));
                    }
                    self.accumulate(a, da);
                }
                if self.rg(b) {
                    let av = self.value(a).data();
                    let mut db = vec![T::zero(); blen];
                    for (chunk, arow) in g.chunks(blen).zip(av.chunks(blen)) {
                        for ((d, &gv), &x) in db.iter_mut().zip(chunk).zip(arow) {
                            *d = *d + gv * x;
                        }
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(x, g.iter().map(|&v| v * c).collect());
            }
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            } => {
                let y = self.nodes[i].value.data();
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for s in 0..inner {
                        let at = |j: usize| o * axis_len * inner + j * inner + s;
                        let dot: T = (0..axis_len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..axis_len {
                            dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                ref xhat,
                ref rstd,
            } => {
                let d = self.value(gamma).len();
                let rows = xhat.len() / d;
                let gv = self.value(gamma).data().to_vec();
                if self.rg(gamma) || self.rg(beta) {
                    let mut dgamma = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dgamma[j] = dgamma[j] + g[r * d + j] * xhat[r * d + j];
                            dbeta[j] = dbeta[j] + g[r * d + j];
                        }
                    }
                    self.accumulate(gamma, dgamma);
                    self.accumulate(beta, dbeta);
                }
                if self.rg(x) {
                    let dn = T::lit(d as f64);
                    let mut dx = vec![T::zero(); xhat.len()];
                    for r in 0..rows {
                        let base = r * d;
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = g[base + j] * gv[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * xhat[base + j];
                        }
                        mean_dh = mean_dh / dn;
                        mean_dh_h = mean_dh_h / dn;
                        for j in 0..d {
                            let dh = g[base + j] * gv[j];
                            dx[base + j] = rstd[r] * (dh - mean_dh - xhat[base + j] * mean_dh_h);
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::Gelu(x) => {
                let c = T::lit(GELU_C);
                let k = T::lit(GELU_K);
                let half = T::lit(0.5);
                let three_k = T::lit(3.0 * GELU_K);
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| {
                        let t = (c * (v + k * v * v * v)).tanh();
                        let du = c * (T::one() + three_k * v * v);
                        gv * (half * (T::one() + t) + half * v * (T::one() - t * t) * du)
                    })
                    .collect();
                self.accumulate(x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate(x, vec![g[0]; n]);
            }
            Op::Gather { x, ref index } => {
                let mut dx = vec![T::zero(); self.value(x).len()];
                for (&src, &gv) in index.iter().zip(g) {
                    dx[src] = dx[src] + gv;
                }
                self.accumulate(x, dx);
            }
            Op::Reshape(x) => self.accumulate(x, g.to_vec()),
            Op::Concat { ref parts, axis } => match axis {
                ConcatAxis::Rows => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        self.accumulate(p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                ConcatAxis::Cols => {
                    let total_cols = self.nodes[i].value.shape()[1];
                    let mut col = 0;
                    for &p in parts {
                        let (m, w) = as_matrix(self.value(p))?;
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            let start = r * total_cols + col;
                            dp.extend_from_slice(&g[start..start + w]);
                        }
                        self.accumulate(p, dp);
                        col += w;
                    }
                }
            },
            Op::CrossEntropy { probs, ref labels } => {
                let (b, c) = as_matrix(self.value(probs))?;
                let pv = self.value(probs).data();
                let clamp = T::lit(CE_CLAMP);
                let bn = T::lit(b as f64);
                let mut dp = vec![T::zero(); b * c];
                for (r, &l) in labels.iter().enumerate() {
                    let p = pv[r * c + l];
                    if p >= clamp {
                        dp[r * c + l] = -g[0] / (bn * p);
                    }
                }
                self.accumulate(probs, dp);
            }
        }
        Ok(())
    }
}
