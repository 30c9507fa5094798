//! Reverse-mode differentiation over a fixed set of matrix operators.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Parameters enter as borrowed leaves; [`Graph::backward`] walks the record
//! in reverse and returns gradients for the trainable parameters it touched.

use std::borrow::Cow;
use std::rc::Rc;

use rand::Rng;

use super::array::{gemm, Array};
use super::params::{ParamId, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which (query, key) pairs may attend. `allowed[r * cols + c]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Self {
        assert_eq!(rows * cols, allowed.len());
        Mask { rows, cols, allowed }
    }

    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|i| i % n <= i / n).collect();
        Mask { rows: n, cols: n, allowed }
    }

    pub fn is_allowed(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Array, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows { x: Var, start: usize, end: usize },
    SumAll(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: usize, probs: Array, count: usize },
}

struct Node<'p> {
    value: Cow<'p, Array>,
    op: Op,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub struct Graph<'p> {
    params: &'p Parameters,
    nodes: Vec<Node<'p>>,
}

/// Gradients per parameter; parameters not reached are `None`.
#[derive(Debug, Clone)]
pub struct Gradients {
    slots: Vec<Option<Array>>,
}

impl Gradients {
    pub fn empty(params: &Parameters) -> Self {
        Gradients { slots: vec![None; params.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.slots[id.index()].as_ref()
    }

    /// Gradient of `id`, or zeros of the parameter's shape.
    pub fn get_or_zeros(&self, params: &Parameters, id: ParamId) -> Array {
        self.get(id).cloned().unwrap_or_else(|| Array::zeros(params.value(id).shape()))
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for slot in self.slots.iter_mut().flatten() {
            slot.scale_in_place(k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots.iter().flatten().flat_map(|a| a.data()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|a| (ParamId::from_index(i), a)))
    }

    pub fn set(&mut self, id: ParamId, grad: Array) {
        self.slots[id.index()] = Some(grad);
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p Parameters) -> Self {
        Graph { params, nodes: Vec::with_capacity(256) }
    }

    pub fn params(&self) -> &'p Parameters {
        self.params
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0]
            .value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Array) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let needs_grad = self.params.is_trainable(id);
        self.nodes.push(Node { value: Cow::Borrowed(self.params.value(id)), op: Op::Param(id), needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a @ b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut value = Array::zeros(&[av.rows(), bv.rows()]);
        gemm(av, false, bv, true, &mut value, 0.0);
        self.push(value, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b), &[a, b])
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let mut value = self.value(x).clone();
        let b = self.value(bias);
        assert_eq!(b.len(), value.cols(), "bias width");
        for r in 0..value.rows() {
            for (v, bb) in value.row_mut(r).iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        self.push(value, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let mut value = self.value(x).clone();
        value.scale_in_place(k);
        self.push(value, Op::Scale(x, k), &[x])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shapes");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Array::new(av.shape().to_vec(), data);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Array::new(xv.shape().to_vec(), xv.data().iter().map(|v| v.max(0.0)).collect());
        self.push(value, Op::Relu(x), &[x])
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let value = Array::new(xv.shape().to_vec(), data);
        self.push(value, Op::Gelu(x), &[x])
    }

    /// Row-wise softmax; disallowed entries get exactly zero weight.
    pub fn softmax(&mut self, x: Var, mask: Option<Rc<Mask>>) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if let Some(m) = &mask {
            assert_eq!(m.shape(), (rows, cols), "mask shape");
        }
        let mut value = Array::zeros(&[rows, cols]);
        for r in 0..rows {
            let allowed = |c: usize| mask.as_ref().is_none_or(|m| m.is_allowed(r, c));
            let row = xv.row(r);
            let max = (0..cols).filter(|&c| allowed(c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let out = value.row_mut(r);
            let mut sum = 0.0;
            for c in 0..cols {
                if allowed(c) {
                    let e = (row[c] - max).exp();
                    out[c] = e;
                    sum += e;
                }
            }
            for v in out.iter_mut() {
                *v /= sum;
            }
        }
        self.push(value, Op::Softmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut normed = Array::zeros(&[rows, cols]);
        let mut value = Array::zeros(&[rows, cols]);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            let n = normed.row_mut(r);
            for c in 0..cols {
                n[c] = (row[c] - mean) * inv;
            }
            let out = value.row_mut(r);
            for c in 0..cols {
                out[c] = normed.get(r, c) * g[c] + b[c];
            }
        }
        self.push(value, Op::LayerNorm { x, gain, bias, normed, inv_std }, &[x, gain, bias])
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let cols = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            data.extend_from_slice(tv.row(id));
        }
        let value = Array::new(vec![ids.len(), cols], data);
        self.push(value, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let value = Array::new(vec![rows, end - start], data);
        self.push(value, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Array::new(vec![rows, total], data);
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), cols, "concat_rows widths");
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let value = Array::new(vec![rows, cols], data);
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Mean of rows `start..end` as a `[1, cols]` row.
    pub fn mean_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = vec![0.0; cols];
        for r in start..end {
            for (d, v) in data.iter_mut().zip(xv.row(r)) {
                *d += v;
            }
        }
        let n = (end - start) as f64;
        for d in &mut data {
            *d /= n;
        }
        self.push(Array::new(vec![1, cols], data), Op::MeanRows { x, start, end }, &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Array::scalar(s), Op::SumAll(x), &[x])
    }

    /// Inverted dropout; a no-op when `rate` is zero.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let xv = self.value(x);
        let keep = 1.0 / (1.0 - rate);
        let data = (0..xv.len()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        let mask = self.input(Array::new(xv.shape().to_vec(), data));
        self.mul(x, mask)
    }

    /// Mean negative log-likelihood of `targets` over rows whose target is
    /// not `ignore`. Returns `None` when every row is ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Option<Var> {
        let lv = self.value(logits);
        let (rows, cols) = (lv.rows(), lv.cols());
        assert_eq!(rows, targets.len(), "one target per logit row");
        let mut probs = Array::zeros(&[rows, cols]);
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..rows {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            let p = probs.row_mut(r);
            for c in 0..cols {
                p[c] = (row[c] - log_z).exp();
            }
            if targets[r] != ignore {
                assert!(targets[r] < cols, "target {} outside vocabulary {}", targets[r], cols);
                total += log_z - row[targets[r]];
                count += 1;
            }
        }
        if count == 0 {
            return None;
        }
        let value = Array::scalar(total / count as f64);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), ignore, probs, count };
        Some(self.push(value, op, &[logits]))
    }

    /// Gradients of the scalar `loss` with respect to trainable parameters.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "loss must be a scalar");
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::new(self.value(loss).shape().to_vec(), vec![1.0]));
        let mut out = Gradients::empty(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let send = |v: Var, g: Array, grads: &mut Vec<Option<Array>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match &mut out.slots[id.index()] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        let mut ga = Array::zeros(av.shape());
                        gemm(&grad, false, bv, true, &mut ga, 0.0);
                        send(*a, ga, &mut grads);
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut gb = Array::zeros(bv.shape());
                        gemm(av, true, &grad, false, &mut gb, 0.0);
                        send(*b, gb, &mut grads);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        let mut ga = Array::zeros(av.shape());
                        gemm(&grad, false, bv, false, &mut ga, 0.0);
                        send(*a, ga, &mut grads);
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut gb = Array::zeros(bv.shape());
                        gemm(&grad, true, av, false, &mut gb, 0.0);
                        send(*b, gb, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, grad.clone(), &mut grads);
                    send(*b, grad, &mut grads);
                }
                Op::AddRow(x, bias) => {
                    let bshape = self.value(*bias).shape().to_vec();
                    let mut gb = vec![0.0; grad.cols()];
                    for r in 0..grad.rows() {
                        for (acc, v) in gb.iter_mut().zip(grad.row(r)) {
                            *acc += v;
                        }
                    }
                    send(*bias, Array::new(bshape, gb), &mut grads);
                    send(*x, grad, &mut grads);
                }
                Op::Scale(x, k) => {
                    let mut g = grad;
                    g.scale_in_place(*k);
                    send(*x, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = grad.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    let gb = grad.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    send(*a, Array::new(av.shape().to_vec(), ga), &mut grads);
                    send(*b, Array::new(bv.shape().to_vec(), gb), &mut grads);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let g = grad.data().iter().zip(xv.data()).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                    send(*x, Array::new(xv.shape().to_vec(), g), &mut grads);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let g = grad
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(g, &v)| {
                            let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                            let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                            g * (0.5 * (1.0 + t) + 0.5 * v * dt)
                        })
                        .collect();
                    send(*x, Array::new(xv.shape().to_vec(), g), &mut grads);
                }
                Op::Softmax(x) => {
                    let y = self.value(Var(idx));
                    let mut g = Array::zeros(y.shape());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), grad.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (out, (yv, gv)) in g.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *out = yv * (gv - dot);
                        }
                    }
                    send(*x, g, &mut grads);
                }
                Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                    let gv = self.value(*gain).data();
                    let (rows, cols) = (normed.rows(), normed.cols());
                    let mut gx = Array::zeros(&[rows, cols]);
                    let mut gg = vec![0.0; cols];
                    let mut gbias = vec![0.0; cols];
                    let n = cols as f64;
                    for r in 0..rows {
                        let (dy, xhat) = (grad.row(r), normed.row(r));
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        let mut dxhat = vec![0.0; cols];
                        for c in 0..cols {
                            gg[c] += dy[c] * xhat[c];
                            gbias[c] += dy[c];
                            dxhat[c] = dy[c] * gv[c];
                            sum_d += dxhat[c];
                            sum_dx += dxhat[c] * xhat[c];
                        }
                        let inv = inv_std[r];
                        for (c, out) in gx.row_mut(r).iter_mut().enumerate() {
                            *out = inv / n * (n * dxhat[c] - sum_d - xhat[c] * sum_dx);
                        }
                    }
                    let gshape = self.value(*gain).shape().to_vec();
                    let bshape = self.value(*bias).shape().to_vec();
                    send(*gain, Array::new(gshape, gg), &mut grads);
                    send(*bias, Array::new(bshape, gbias), &mut grads);
                    send(*x, gx, &mut grads);
                }
                Op::Gather { table, ids } => {
                    let mut g = Array::zeros(self.value(*table).shape());
                    for (r, &id) in ids.iter().enumerate() {
                        for (acc, v) in g.row_mut(id).iter_mut().zip(grad.row(r)) {
                            *acc += v;
                        }
                    }
                    send(*table, g, &mut grads);
                }
                Op::SliceCols { x, start } => {
                    let mut g = Array::zeros(self.value(*x).shape());
                    let w = grad.cols();
                    for r in 0..grad.rows() {
                        g.row_mut(r)[*start..*start + w].copy_from_slice(grad.row(r));
                    }
                    send(*x, g, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let w = pv.cols();
                        let mut data = Vec::with_capacity(pv.len());
                        for r in 0..grad.rows() {
                            data.extend_from_slice(&grad.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        send(*p, Array::new(pv.shape().to_vec(), data), &mut grads);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let n = pv.len();
                        let data = grad.data()[offset..offset + n].to_vec();
                        offset += n;
                        send(*p, Array::new(pv.shape().to_vec(), data), &mut grads);
                    }
                }
                Op::MeanRows { x, start, end } => {
                    let mut g = Array::zeros(self.value(*x).shape());
                    let n = (end - start) as f64;
                    for r in *start..*end {
                        for (acc, v) in g.row_mut(r).iter_mut().zip(grad.row(0)) {
                            *acc += v / n;
                        }
                    }
                    send(*x, g, &mut grads);
                }
                Op::SumAll(x) => {
                    let xv = self.value(*x);
                    let g = Array::new(xv.shape().to_vec(), vec![grad.item(); xv.len()]);
                    send(*x, g, &mut grads);
                }
                Op::CrossEntropy { logits, targets, ignore, probs, count } => {
                    let scale = grad.item() / *count as f64;
                    let mut g = Array::zeros(probs.shape());
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let out = g.row_mut(r);
                        for (o, p) in out.iter_mut().zip(probs.row(r)) {
                            *o = p * scale;
                        }
                        out[t] -= scale;
                    }
                    send(*logits, g, &mut grads);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_softmax_puts_zero_on_masked_entries() {
        let params = Parameters::new();
        let mut g = Graph::new(&params);
        let x = g.input(Array::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 4.0]]));
        let mask = Rc::new(Mask::new(2, 3, vec![true, false, true, false, false, true]));
        let y = g.softmax(x, Some(mask));
        let yv = g.value(y);
        assert_eq!(yv.get(0, 1), 0.0);
        assert_eq!(yv.get(1, 0), 0.0);
        assert_eq!(yv.get(1, 2), 1.0);
        let e = (2.0f64).exp();
        assert!((yv.get(0, 2) - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let params = Parameters::new();
        let mut g = Graph::new(&params);
        let data: Vec<f64> = (0..40).map(|i| ((i * 7919) % 97) as f64 / 9.0 - 5.0).collect();
        let x = g.input(Array::new(vec![5, 8], data));
        let y = g.softmax(x, None);
        for r in 0..5 {
            let s: f64 = g.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut params = Parameters::new();
        let gain = params.insert("g", Array::new(vec![6], vec![1.0; 6]));
        let bias = params.insert("b", Array::zeros(&[6]));
        let mut g = Graph::new(&params);
        let x = g.input(Array::new(vec![3, 6], (0..18).map(|i| (i as f64).powi(2) * 3.0 - 70.0).collect()));
        let (gv, bv) = (g.param(gain), g.param(bias));
        let y = g.layer_norm(x, gv, bv);
        for r in 0..3 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6, "variance {var}");
        }
    }

    #[test]
    fn cross_entropy_hand_case() {
        // Two positions over three classes.
        let params = Parameters::new();
        let mut g = Graph::new(&params);
        let logits = g.input(Array::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]]));
        let loss = g.cross_entropy(logits, &[2, 0], usize::MAX).unwrap();
        let lse1 = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        let expect = ((lse1 - 3.0) + 3f64.ln()) / 2.0;
        assert!((g.value(loss).item() - expect).abs() < 1e-14);
        // Frozen value: 0.5 * (0.40760596444 + 1.09861228867)
        assert!((g.value(loss).item() - 0.753_109_126_554_8).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_limits() {
        let params = Parameters::new();
        let mut g = Graph::new(&params);
        let uniform = g.input(Array::zeros(&[4, 7]));
        let loss = g.cross_entropy(uniform, &[0, 3, 6, 1], usize::MAX).unwrap();
        assert!((g.value(loss).item() - 7f64.ln()).abs() < 1e-14);

        let sharp = g.input(Array::from_rows(&[vec![100.0, 0.0, 0.0]]));
        let loss = g.cross_entropy(sharp, &[0], usize::MAX).unwrap();
        assert!(g.value(loss).item() < 1e-40);

        let pads = g.input(Array::zeros(&[2, 3]));
        assert!(g.cross_entropy(pads, &[0, 0], 0).is_none());
    }
}
