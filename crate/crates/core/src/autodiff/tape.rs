use super::kernels::{conv1d_backward, conv1d_forward, ConvGeometry};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sigmoid(Var),
    /// Keeps `sigmoid(x)` from the forward pass.
    Swish(Var, Vec<f64>),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv1d { x: Var, w: Var, b: Option<Var>, geo: ConvGeometry },
    MeanAxis { x: Var, axis: usize },
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Concat { parts: Vec<Var>, axis: usize },
    BroadcastMul { x: Var, g: Var },
    Reshape(Var),
    Sum(Var),
    Custom { x: Var, local_grad: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it
/// in reverse. Nodes are only ever appended, so reverse insertion order is a
/// reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    consumed: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.wrt(*v))
    }

    /// Per-parameter gradients indexed like the store. Parameters that did
    /// not take part in the computation get zeros.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> =
            store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                out[id.0].add_assign(g);
            }
        }
        out
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
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

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clears all recorded nodes so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.consumed = false;
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.consumed {
            return Err(Error::Tape("tape already used for a backward pass; reset it first".into()));
        }
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true, "input")
    }

    /// Records a parameter from `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let v = self.push(store.get(id).clone(), Op::Leaf, true, "param")?;
        self.params.push((id, v));
        Ok(v)
    }

    /// Like [`Tape::param`] but without gradient tracking (frozen weights).
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(store.get(id).clone(), Op::Leaf, false, "param")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg, "add_scalar")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg, "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(v, Op::Log(a), rg, "log")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg, "square")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg, "sigmoid")
    }

    /// `x * sigmoid(x)`
    pub fn swish(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let sig: Vec<f64> = x.data().iter().map(|&v| sigmoid(v)).collect();
        let v = Tensor::new(x.shape().to_vec(), x.data().iter().zip(&sig).map(|(x, s)| x * s).collect())?;
        let rg = self.rg(a);
        self.push(v, Op::Swish(a, if rg { sig } else { Vec::new() }), rg, "swish")
    }

    /// `(m, k) x (k, n) -> (m, n)`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    /// Dense layer: `x (n, in)`, `w (out, in)`, `b (out)` -> `x w^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ndim() != 2 || wv.ndim() != 2 || xv.shape()[1] != wv.shape()[1] {
            return Err(Error::shape("linear", format!("x {:?}, w {:?}", xv.shape(), wv.shape())));
        }
        let (n, fin, fout) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
        if let Some(b) = b {
            if self.value(b).shape() != [fout] {
                return Err(Error::shape("linear", format!("bias {:?}", self.value(b).shape())));
            }
        }
        let mut out = vec![0.0; n * fout];
        for i in 0..n {
            let xi = &xv.data()[i * fin..(i + 1) * fin];
            for o in 0..fout {
                let wo = &wv.data()[o * fin..(o + 1) * fin];
                out[i * fout + o] = xi.iter().zip(wo).map(|(a, b)| a * b).sum::<f64>()
                    + b.map_or(0.0, |b| self.value(b).data()[o]);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::new(vec![n, fout], out)?, Op::Linear { x, w, b }, rg, "linear")
    }

    /// Grouped 1-D convolution with "same" zero padding.
    /// `x (B, C_in, L)`, `w (C_out, C_in/groups, K)`, `b (C_out)`;
    /// output `(B, C_out, ceil(L/stride))`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, groups: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ndim() != 3 || wv.ndim() != 3 {
            return Err(Error::shape("conv1d", format!("x {:?}, w {:?}", xv.shape(), wv.shape())));
        }
        let (batch, cin, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (cout, ipg, kernel) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape(
                "conv1d",
                format!("{groups} groups must divide {cin} input and {cout} output channels"),
            ));
        }
        if ipg != cin / groups {
            return Err(Error::shape(
                "conv1d",
                format!("weight expects {ipg} channels per group, input has {}", cin / groups),
            ));
        }
        if stride == 0 || len == 0 {
            return Err(Error::shape("conv1d", "stride and length must be positive"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape("conv1d", format!("bias {:?}", self.value(b).shape())));
            }
        }
        let geo = ConvGeometry::same(batch, cin, cout, groups, kernel, stride, len);
        let out = conv1d_forward(&geo, xv.data(), wv.data(), b.map(|b| self.value(b).data()));
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let t = Tensor::new(vec![batch, cout, geo.out_len], out)?;
        self.push(t, Op::Conv1d { x, w, b, geo }, rg, "conv1d")
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() || xv.shape()[axis] == 0 {
            return Err(Error::shape("mean_axis", format!("axis {axis} of {:?}", xv.shape())));
        }
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &xv.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::MeanAxis { x, axis }, rg, "mean_axis")
    }

    /// Scales every row of a 2-D tensor to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(Error::shape("l2_normalize_rows", format!("{:?}", xv.shape())));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut norms = Vec::with_capacity(n);
        let mut out = xv.data().to_vec();
        for i in 0..n {
            let row = &mut out[i * d..(i + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateEmbedding(format!("row {i} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![n, d], out)?, Op::L2NormalizeRows { x, norms }, rg, "l2_normalize")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let pv = self.value(*p);
                let chunk = pv.shape()[axis] * inner;
                out.extend_from_slice(&pv.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(Tensor::new(shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, rg, "concat")
    }

    /// `x * g` where `g`'s shape is a leading prefix of `x`'s shape; `g` is
    /// broadcast over the remaining trailing axes.
    pub fn broadcast_mul(&mut self, x: Var, g: Var) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(g));
        if gv.ndim() > xv.ndim() || xv.shape()[..gv.ndim()] != *gv.shape() {
            return Err(Error::shape("broadcast_mul", format!("{:?} by {:?}", xv.shape(), gv.shape())));
        }
        let inner = xv.len() / gv.len().max(1);
        let mut out = xv.data().to_vec();
        for (chunk, &s) in out.chunks_mut(inner).zip(gv.data()) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(g);
        self.push(Tensor::new(shape, out)?, Op::BroadcastMul { x, g }, rg, "broadcast_mul")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push(t, Op::Reshape(x), rg, "reshape")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = crate::numeric::pairwise_sum(self.value(x).data());
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    /// A scalar computed outside the tape from `x`, together with its
    /// gradient `d value / d x`. Used for fused losses.
    pub fn custom_scalar(&mut self, x: Var, value: f64, local_grad: Tensor) -> Result<Var> {
        same_shape("custom_scalar", self.value(x), &local_grad)?;
        let rg = self.rg(x);
        self.push(Tensor::scalar(value), Op::Custom { x, local_grad }, rg, "custom_scalar")
    }

    /// Reverse pass from a scalar output. The tape cannot record or run
    /// another backward pass until [`Tape::reset`] is called.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if self.value(output).len() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            } else {
                self.backprop_node(node, g, &mut grads)?;
            }
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    /// Pushes `g` (the gradient of this node's output) to its inputs.
    /// Intermediate gradients are dropped once used; only leaves keep theirs.
    fn backprop_node(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => match (rg(*a), rg(*b)) {
                (true, true) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                (true, false) => accumulate(&mut grads[a.0], g),
                (false, true) => accumulate(&mut grads[b.0], g),
                (false, false) => {}
            },
            Op::Sub(a, b) => {
                if rg(*b) {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
                if rg(*a) {
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(val(*b), |g, y| g * y));
                }
                if rg(*b) {
                    accumulate(&mut grads[b.0], g.zip_map(val(*a), |g, x| g * x));
                }
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g.map(|v| c * v)),
            Op::AddScalar(a) => accumulate(&mut grads[a.0], g),
            Op::Exp(a) => accumulate(&mut grads[a.0], g.zip_map(&node.value, |g, y| g * y)),
            Op::Log(a) => accumulate(&mut grads[a.0], g.zip_map(val(*a), |g, x| g / x)),
            Op::Square(a) => accumulate(&mut grads[a.0], g.zip_map(val(*a), |g, x| 2.0 * g * x)),
            Op::Sigmoid(a) => {
                accumulate(&mut grads[a.0], g.zip_map(&node.value, |g, y| g * y * (1.0 - y)))
            }
            Op::Swish(a, sig) => {
                let mut g = g;
                for ((gv, &x), &s) in g.data_mut().iter_mut().zip(val(*a).data()).zip(sig) {
                    *gv *= s * (1.0 + x * (1.0 - s));
                }
                accumulate(&mut grads[a.0], g);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if rg(*a) {
                    // dA = G B^T
                    let bt = transpose(bv.data(), k, n);
                    let ga = matmul_raw(g.data(), &bt, m, n, k);
                    accumulate(&mut grads[a.0], Tensor::new(vec![m, k], ga)?);
                }
                if rg(*b) {
                    // dB = A^T G
                    let at = transpose(av.data(), m, k);
                    let gb = matmul_raw(&at, g.data(), k, m, n);
                    accumulate(&mut grads[b.0], Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, fin, fout) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                if rg(*x) {
                    let gx = matmul_raw(g.data(), wv.data(), n, fout, fin);
                    accumulate(&mut grads[x.0], Tensor::new(vec![n, fin], gx)?);
                }
                if rg(*w) {
                    let gt = transpose(g.data(), n, fout);
                    let gw = matmul_raw(&gt, xv.data(), fout, n, fin);
                    accumulate(&mut grads[w.0], Tensor::new(vec![fout, fin], gw)?);
                }
                if let Some(b) = b.filter(|b| rg(*b)) {
                    let mut gb = vec![0.0; fout];
                    for i in 0..n {
                        for (acc, v) in gb.iter_mut().zip(&g.data()[i * fout..(i + 1) * fout]) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads[b.0], Tensor::new(vec![fout], gb)?);
                }
            }
            Op::Conv1d { x, w, b, geo } => {
                let (xv, wv) = (val(*x), val(*w));
                let cg = conv1d_backward(geo, xv.data(), wv.data(), g.data(), rg(*x));
                if let Some(gx) = cg.input {
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), gx)?);
                }
                if rg(*w) {
                    accumulate(&mut grads[w.0], Tensor::new(wv.shape().to_vec(), cg.weight)?);
                }
                if let Some(b) = b.filter(|b| rg(*b)) {
                    accumulate(&mut grads[b.0], Tensor::new(vec![geo.out_channels], cg.bias)?);
                }
            }
            Op::MeanAxis { x, axis } => {
                let xv = val(*x);
                let (outer, n, inner) = split_axis(xv.shape(), *axis);
                let inv = 1.0 / n as f64;
                let mut gx = vec![0.0; xv.len()];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for j in 0..n {
                        let dst = &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), gx)?);
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = &node.value;
                let d = y.shape()[1];
                let mut gx = vec![0.0; y.len()];
                for (i, &norm) in norms.iter().enumerate() {
                    let yr = &y.data()[i * d..(i + 1) * d];
                    let gr = &g.data()[i * d..(i + 1) * d];
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gx[i * d + j] = (gr[j] - yr[j] * proj) / norm;
                    }
                }
                accumulate(&mut grads[x.0], Tensor::new(y.shape().to_vec(), gx)?);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    let n = pv.shape()[*axis];
                    if rg(*p) {
                        let mut gp = Vec::with_capacity(pv.len());
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gp.extend_from_slice(&g.data()[start..start + n * inner]);
                        }
                        accumulate(&mut grads[p.0], Tensor::new(pv.shape().to_vec(), gp)?);
                    }
                    offset += n;
                }
            }
            Op::BroadcastMul { x, g: gate } => {
                let (xv, gv) = (val(*x), val(*gate));
                let inner = xv.len() / gv.len().max(1);
                if rg(*x) {
                    let mut gx = g.data().to_vec();
                    for (chunk, &s) in gx.chunks_mut(inner).zip(gv.data()) {
                        chunk.iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), gx)?);
                }
                if rg(*gate) {
                    let gg: Vec<f64> = g
                        .data()
                        .chunks(inner)
                        .zip(xv.data().chunks(inner))
                        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum())
                        .collect();
                    accumulate(&mut grads[gate.0], Tensor::new(gv.shape().to_vec(), gg)?);
                }
            }
            Op::Reshape(x) => {
                let gx = g.reshape(val(*x).shape())?;
                accumulate(&mut grads[x.0], gx);
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                accumulate(&mut grads[x.0], Tensor::full(val(*x).shape(), s));
            }
            Op::Custom { x, local_grad } => {
                let s = g.data()[0];
                accumulate(&mut grads[x.0], local_grad.map(|v| s * v));
            }
        }
        Ok(())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}
