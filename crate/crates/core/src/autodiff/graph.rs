use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Gather { input: usize, index: Vec<Option<usize>> },
    Reshape(usize),
    Transpose { input: usize, perm: Vec<usize> },
    Relu(usize),
    Sigmoid(usize),
    Ln(usize),
    Powf(usize, f64),
    Clamp(usize, f64, f64),
    Softmax(usize),
    LayerNorm { input: usize, eps: f64 },
    MaxAxis { input: usize, argmax: Vec<usize> },
    Sum(usize),
    Mean(usize),
    Unfold { input: usize, kernel: usize },
    ScaleRows { input: usize, factors: Rc<Vec<f64>> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Reshape(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Ln(a)
            | Op::Powf(a, _)
            | Op::Clamp(a, ..)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Slice { input, .. }
            | Op::Gather { input, .. }
            | Op::Transpose { input, .. }
            | Op::LayerNorm { input, .. }
            | Op::MaxAxis { input, .. }
            | Op::Unfold { input, .. }
            | Op::ScaleRows { input, .. } => vec![*input],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A tape of tensor operations. Build one per forward pass, then call
/// [`Graph::backward`] on a scalar result.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

/// Gradients of a scalar with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// `None` when `var` does not require gradients or does not influence the loss.
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        self.get_id(var.id)
    }

    fn get_id(&self, id: usize) -> Option<Tensor> {
        self.grads[id]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[id].clone(), g.clone()).expect("grad shape"))
    }

    /// Like [`Gradients::get`], but zeros for untouched tracked leaves.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get_id(var.id)
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.id].clone()))
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `rhs` must equal `lhs` or a suffix of it.
fn check_suffix(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<()> {
    if rhs.len() > lhs.len() || lhs[lhs.len() - rhs.len()..] != *rhs {
        return Err(shape_err(op, lhs, rhs));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub fn concat<'g>(&'g self, inputs: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let values: Vec<Rc<Tensor>> = inputs.iter().map(|v| self.value(v.id)).collect();
        let first = values
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(shape_err("concat", first.shape(), &[axis]));
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = 0;
        for v in &values {
            let s = v.shape();
            if s.len() != rank
                || s.iter()
                    .zip(first.shape())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(shape_err("concat", first.shape(), s));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat {
                inputs: inputs.iter().map(|v| v.id).collect(),
                axis,
            },
        ))
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if wants(*a) {
                accumulate(grads, nodes, *a, g.to_vec());
            }
            if wants(*b) {
                let n = val(*b).len();
                let mut gb = vec![0.0; n];
                for chunk in g.chunks(n) {
                    for (s, v) in gb.iter_mut().zip(chunk) {
                        *s += v;
                    }
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = bv.len();
            if wants(*a) {
                let ga = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * bv.data()[i % n])
                    .collect();
                accumulate(grads, nodes, *a, ga);
            }
            if wants(*b) {
                let mut gb = vec![0.0; n];
                for (i, (gi, ai)) in g.iter().zip(av.data()).enumerate() {
                    gb[i % n] += gi * ai;
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Scale(a, f) => accumulate(grads, nodes, *a, g.iter().map(|x| x * f).collect()),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let sa = av.shape();
            let sb = bv.shape();
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let n = sb[sb.len() - 1];
            let batches = av.len() / (m * k);
            let shared = sb.len() == 2;
            if wants(*a) {
                let mut ga = Vec::with_capacity(av.len());
                for t in 0..batches {
                    let bo = if shared { 0 } else { t * k * n };
                    ga.extend(kernels::matmul_nt(
                        &g[t * m * n..(t + 1) * m * n],
                        &bv.data()[bo..bo + k * n],
                        m,
                        k,
                        n,
                    ));
                }
                accumulate(grads, nodes, *a, ga);
            }
            if wants(*b) {
                let mut gb = vec![0.0; bv.len()];
                for t in 0..batches {
                    let bo = if shared { 0 } else { t * k * n };
                    kernels::matmul_tn_acc(
                        &mut gb[bo..bo + k * n],
                        &av.data()[t * m * k..(t + 1) * m * k],
                        &g[t * m * n..(t + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Concat { inputs, axis } => {
            let shape = out.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let mut parts: Vec<Vec<f64>> = inputs
                .iter()
                .map(|&i| Vec::with_capacity(val(i).len()))
                .collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (p, &i) in parts.iter_mut().zip(inputs) {
                    let chunk = val(i).shape()[*axis] * inner;
                    p.extend_from_slice(&g[offset..offset + chunk]);
                    offset += chunk;
                }
            }
            for (p, &i) in parts.into_iter().zip(inputs) {
                accumulate(grads, nodes, i, p);
            }
        }
        Op::Slice { input, axis, start } => {
            let in_shape = val(*input).shape();
            let outer: usize = in_shape[..*axis].iter().product();
            let inner: usize = in_shape[axis + 1..].iter().product();
            let len = out.shape()[*axis];
            let mut gi = vec![0.0; val(*input).len()];
            for o in 0..outer {
                let src = &g[o * len * inner..(o + 1) * len * inner];
                let dst = o * in_shape[*axis] * inner + start * inner;
                gi[dst..dst + len * inner].copy_from_slice(src);
            }
            accumulate(grads, nodes, *input, gi);
        }
        Op::Gather { input, index } => {
            let iv = val(*input);
            let width = iv.len() / iv.shape()[0].max(1);
            let mut gi = vec![0.0; iv.len()];
            for (r, slot) in index.iter().enumerate() {
                if let Some(src) = slot {
                    let dst = &mut gi[src * width..(src + 1) * width];
                    for (d, v) in dst.iter_mut().zip(&g[r * width..(r + 1) * width]) {
                        *d += v;
                    }
                }
            }
            accumulate(grads, nodes, *input, gi);
        }
        Op::Transpose { perm, input } => {
            let (gi, _) = kernels::permute(g, out.shape(), &kernels::inverse_permutation(perm));
            accumulate(grads, nodes, *input, gi);
        }
        Op::Relu(a) => {
            let gi = g
                .iter()
                .zip(val(*a).data())
                .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, gi);
        }
        Op::Sigmoid(a) => {
            let gi = g
                .iter()
                .zip(out.data())
                .map(|(gv, y)| gv * y * (1.0 - y))
                .collect();
            accumulate(grads, nodes, *a, gi);
        }
        Op::Ln(a) => {
            let gi = g.iter().zip(val(*a).data()).map(|(gv, x)| gv / x).collect();
            accumulate(grads, nodes, *a, gi);
        }
        Op::Powf(a, p) => {
            let gi = if *p == 0.0 {
                vec![0.0; g.len()]
            } else {
                g.iter()
                    .zip(val(*a).data())
                    .map(|(gv, x)| gv * p * x.powf(p - 1.0))
                    .collect()
            };
            accumulate(grads, nodes, *a, gi);
        }
        Op::Clamp(a, lo, hi) => {
            let gi = g
                .iter()
                .zip(val(*a).data())
                .map(|(gv, x)| if x >= lo && x <= hi { *gv } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, gi);
        }
        Op::Softmax(a) => {
            let n = *out.shape().last().unwrap_or(&1);
            let mut gi = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(n).zip(out.data().chunks(n)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                gi.extend(grow.iter().zip(yrow).map(|(x, y)| y * (x - dot)));
            }
            accumulate(grads, nodes, *a, gi);
        }
        Op::LayerNorm { input, eps } => {
            let xv = val(*input);
            let n = *xv.shape().last().unwrap_or(&1);
            let mut gi = Vec::with_capacity(g.len());
            for (grow, (xrow, yrow)) in g
                .chunks(n)
                .zip(xv.data().chunks(n).zip(out.data().chunks(n)))
            {
                let (_, inv_std) = row_stats(xrow, *eps);
                let mean_g = grow.iter().sum::<f64>() / n as f64;
                let mean_gy = grow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                gi.extend(
                    grow.iter()
                        .zip(yrow)
                        .map(|(gv, y)| inv_std * (gv - mean_g - y * mean_gy)),
                );
            }
            accumulate(grads, nodes, *input, gi);
        }
        Op::MaxAxis { input, argmax } => {
            let mut gi = vec![0.0; val(*input).len()];
            for (gv, &src) in g.iter().zip(argmax) {
                gi[src] += gv;
            }
            accumulate(grads, nodes, *input, gi);
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, vec![g[0]; val(*a).len()]),
        Op::Mean(a) => {
            let n = val(*a).len();
            accumulate(grads, nodes, *a, vec![g[0] / n as f64; n]);
        }
        Op::Unfold { input, kernel } => {
            let s = val(*input).shape();
            let (b, l, c) = (s[0], s[1], s[2]);
            let pad = (kernel - 1) / 2;
            let mut gi = vec![0.0; b * l * c];
            for bi in 0..b {
                for pos in 0..l {
                    let row = &g[(bi * l + pos) * kernel * c..(bi * l + pos + 1) * kernel * c];
                    for o in 0..*kernel {
                        let src = pos + o;
                        if src < pad || src - pad >= l {
                            continue;
                        }
                        let dst = (bi * l + src - pad) * c;
                        for (d, v) in gi[dst..dst + c].iter_mut().zip(&row[o * c..(o + 1) * c]) {
                            *d += v;
                        }
                    }
                }
            }
            accumulate(grads, nodes, *input, gi);
        }
        Op::ScaleRows { input, factors } => {
            let width = g.len() / factors.len().max(1);
            let gi = g
                .iter()
                .enumerate()
                .map(|(i, gv)| gv * factors[i / width])
                .collect();
            accumulate(grads, nodes, *input, gi);
        }
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let v = self.value();
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.graph.push(t, op)
    }

    fn broadcast(
        self,
        other: Var<'g>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, usize, usize)> {
        let (a, b) = (self.value(), other.value());
        check_suffix(name, a.shape(), b.shape())?;
        let n = b.len().max(1);
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % n]))
            .collect();
        Ok((Tensor::new(a.shape().to_vec(), data)?, self.id, other.id))
    }

    /// Elementwise sum; `other` may be a suffix of `self`'s shape and is
    /// broadcast over the leading axes.
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        let (t, a, b) = self.broadcast(other, "add", |x, y| x + y)?;
        Ok(self.graph.push(t, Op::Add(a, b)))
    }

    /// Elementwise product with the same broadcasting rule as [`Var::add`].
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (t, a, b) = self.broadcast(other, "mul", |x, y| x * y)?;
        Ok(self.graph.push(t, Op::Mul(a, b)))
    }

    pub fn scale(self, factor: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, factor), |x| x * factor)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    /// `[..., m, k] x [..., k, n]` with matching leading axes, or
    /// `[..., m, k] x [k, n]` with the right operand shared.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared = sb.len() == 2;
        if k != k2 || (!shared && (sb.len() != sa.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2]))
        {
            return Err(shape_err("matmul", sa, sb));
        }
        let batches = a.len() / (m * k).max(1);
        let batches = if m * k == 0 {
            sa[..sa.len() - 2].iter().product()
        } else {
            batches
        };
        let mut data = Vec::with_capacity(batches * m * n);
        for t in 0..batches {
            let bo = if shared { 0 } else { t * k * n };
            data.extend(kernels::matmul(
                &a.data()[t * m * k..(t + 1) * m * k],
                &b.data()[bo..bo + k * n],
                m,
                k,
                n,
            ));
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        Ok(self
            .graph
            .push(Tensor::new(shape, data)?, Op::MatMul(self.id, other.id)))
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let v = self.value();
        let s = v.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(shape_err("slice", s, &[axis, start, len]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner + start * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        Ok(self.graph.push(
            Tensor::new(shape, data)?,
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
        ))
    }

    /// Picks rows along axis 0; `None` yields a zero row.
    pub fn gather(self, index: &[Option<usize>]) -> Result<Var<'g>> {
        let v = self.value();
        let s = v.shape();
        if s.is_empty() {
            return Err(shape_err("gather", s, &[index.len()]));
        }
        let rows = s[0];
        let width: usize = s[1..].iter().product();
        let mut data = Vec::with_capacity(index.len() * width);
        for slot in index {
            match slot {
                Some(r) if *r < rows => {
                    data.extend_from_slice(&v.data()[r * width..(r + 1) * width])
                }
                Some(r) => {
                    return Err(Error::invalid(format!(
                        "gather index {r} out of range for {rows} rows"
                    )))
                }
                None => data.extend(std::iter::repeat_n(0.0, width)),
            }
        }
        let mut shape = vec![index.len()];
        shape.extend_from_slice(&s[1..]);
        Ok(self.graph.push(
            Tensor::new(shape, data)?,
            Op::Gather {
                input: self.id,
                index: index.to_vec(),
            },
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        if shape.iter().product::<usize>() != v.len() {
            return Err(shape_err("reshape", v.shape(), shape));
        }
        let t = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        Ok(self.graph.push(t, Op::Reshape(self.id)))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn transpose(self, perm: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..v.shape().len()).collect::<Vec<_>>() {
            return Err(shape_err("transpose", v.shape(), perm));
        }
        let (data, shape) = kernels::permute(v.data(), v.shape(), perm);
        Ok(self.graph.push(
            Tensor::new(shape, data)?,
            Op::Transpose {
                input: self.id,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Op::Sigmoid(self.id), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn powf(self, exponent: f64) -> Var<'g> {
        self.unary(Op::Powf(self.id, exponent), |x| x.powf(exponent))
    }

    /// Gradient passes only where `lo <= x <= hi`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Softmax over the last axis. Entries whose `keep` flag is false get
    /// probability exactly 0; every row needs at least one kept entry.
    pub fn softmax(self, keep: Option<&[bool]>) -> Result<Var<'g>> {
        let v = self.value();
        let n = *v.shape().last().ok_or_else(|| shape_err("softmax", v.shape(), &[]))?;
        if let Some(k) = keep {
            if k.len() != v.len() {
                return Err(shape_err("softmax", v.shape(), &[k.len()]));
            }
        }
        let mut data = vec![0.0; v.len()];
        for (r, (xrow, yrow)) in v.data().chunks(n).zip(data.chunks_mut(n)).enumerate() {
            let kept = |j: usize| keep.is_none_or(|k| k[r * n + j]);
            let max = (0..n)
                .filter(|&j| kept(j))
                .map(|j| xrow[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("softmax row {r} is fully masked")));
            }
            let mut sum = 0.0;
            for j in 0..n {
                if kept(j) {
                    yrow[j] = (xrow[j] - max).exp();
                    sum += yrow[j];
                }
            }
            for y in yrow.iter_mut() {
                *y /= sum;
            }
        }
        let t = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.graph.push(t, Op::Softmax(self.id)))
    }

    /// Normalizes the last axis to zero mean and unit variance.
    pub fn layer_norm(self, eps: f64) -> Var<'g> {
        let v = self.value();
        let n = *v.shape().last().unwrap_or(&1);
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(n) {
            let (mean, inv_std) = row_stats(row, eps);
            data.extend(row.iter().map(|x| (x - mean) * inv_std));
        }
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.graph.push(t, Op::LayerNorm { input: self.id, eps })
    }

    /// Maximum over `axis`, which is removed from the shape.
    pub fn max_axis(self, axis: usize) -> Result<Var<'g>> {
        let v = self.value();
        let s = v.shape();
        if axis >= s.len() || s[axis] == 0 {
            return Err(shape_err("max_axis", s, &[axis]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len = s[axis];
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for p in 1..len {
                    let idx = (o * len + p) * inner + i;
                    if v.data()[idx] > v.data()[best] {
                        best = idx;
                    }
                }
                data.push(v.data()[best]);
                argmax.push(best);
            }
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        Ok(self.graph.push(
            Tensor::new(shape, data)?,
            Op::MaxAxis {
                input: self.id,
                argmax,
            },
        ))
    }

    pub fn sum(self) -> Var<'g> {
        let total = self.value().data().iter().sum();
        self.graph.push(Tensor::scalar(total), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let v = self.value();
        let total: f64 = v.data().iter().sum();
        let mean = total / v.len() as f64;
        self.graph.push(Tensor::scalar(mean), Op::Mean(self.id))
    }

    /// `[B, L, C] -> [B, L, kernel * C]`: each position gets the window of
    /// `kernel` rows centered on it (zero outside the sequence), so that a
    /// following matmul is a "same"-padded 1-D convolution.
    pub fn unfold(self, kernel: usize) -> Result<Var<'g>> {
        let v = self.value();
        let s = v.shape();
        if s.len() != 3 || kernel == 0 {
            return Err(shape_err("unfold", s, &[kernel]));
        }
        let (b, l, c) = (s[0], s[1], s[2]);
        let pad = (kernel - 1) / 2;
        let mut data = vec![0.0; b * l * kernel * c];
        for bi in 0..b {
            for pos in 0..l {
                let row = &mut data[(bi * l + pos) * kernel * c..(bi * l + pos + 1) * kernel * c];
                for o in 0..kernel {
                    let src = pos + o;
                    if src < pad || src - pad >= l {
                        continue;
                    }
                    let from = (bi * l + src - pad) * c;
                    row[o * c..(o + 1) * c].copy_from_slice(&v.data()[from..from + c]);
                }
            }
        }
        Ok(self.graph.push(
            Tensor::new(vec![b, l, kernel * c], data)?,
            Op::Unfold {
                input: self.id,
                kernel,
            },
        ))
    }

    /// Multiplies each row (everything but the last axis) by a constant.
    pub fn scale_rows(self, factors: Rc<Vec<f64>>) -> Result<Var<'g>> {
        let v = self.value();
        let width = *v.shape().last().unwrap_or(&1);
        if factors.len() * width != v.len() {
            return Err(shape_err("scale_rows", v.shape(), &[factors.len()]));
        }
        let data = v
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * factors[i / width])
            .collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.graph.push(
            t,
            Op::ScaleRows {
                input: self.id,
                factors,
            },
        ))
    }
}
