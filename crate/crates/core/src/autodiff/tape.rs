//! Define-by-run tape and reverse-mode backward pass.

use super::kernels as k;
use super::tensor::{fmt_shape, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, b: Var },
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvT2d { x: Var, w: Var, stride: usize, pad: usize },
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    Clip { x: Var, lo: f64, hi: f64 },
    Scale { x: Var, c: f64 },
    Sum(Var),
    Slice { x: Var, axis: usize, start: usize, len: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Upsample2x(Var),
    SteQuantize { x: Var, bits: u32 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias { .. } => "add_bias",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvT2d { .. } => "conv2d_transpose",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Sqrt(..) => "sqrt",
            Op::Clip { .. } => "clip",
            Op::Scale { .. } => "scale",
            Op::Sum(..) => "sum",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Upsample2x(..) => "upsample2x",
            Op::SteQuantize { .. } => "ste_quantize",
        }
    }

    fn attrs(&self) -> String {
        match self {
            Op::Conv2d { stride, pad, .. } | Op::ConvT2d { stride, pad, .. } => {
                format!(" s{} p{}", stride, pad)
            }
            Op::Clip { lo, hi, .. } => format!(" [{}, {}]", lo, hi),
            Op::Scale { c, .. } => format!(" x{}", c),
            Op::Slice { axis, start, len, .. } => format!(" axis {} {}..{}", axis, start, start + len),
            Op::Concat { axis, .. } => format!(" axis {}", axis),
            Op::SteQuantize { bits, .. } => format!(" bits {}", bits),
            _ => String::new(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::AddBias { x, b } => vec![*x, *b],
            Op::Conv2d { x, w, .. } | Op::ConvT2d { x, w, .. } => vec![*x, *w],
            Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Sqrt(x)
            | Op::Sum(x)
            | Op::Upsample2x(x) => vec![*x],
            Op::Clip { x, .. }
            | Op::Scale { x, .. }
            | Op::Slice { x, .. }
            | Op::SteQuantize { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
        }
    }
}

struct Node<E: Scalar> {
    value: Tensor<E>,
    needs_grad: bool,
    op: Option<Op>,
}

/// Gradients keyed by [`Var`], produced by [`Tape::backward`].
pub struct GradMap<E: Scalar> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> GradMap<E> {
    /// Gradient of the loss w.r.t. `v`, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Records forward operations and replays them backward.
pub struct Tape<E: Scalar> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<E>, needs_grad: bool, op: Option<Op>) -> Var {
        debug_assert!(
            value.all_finite(),
            "{} produced a non-finite value",
            op.as_ref().map(|o| o.name()).unwrap_or("leaf")
        );
        self.nodes.push(Node { value, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that participates in gradient computation (parameters, and
    /// inputs whose gradients are being inspected).
    pub fn param(&mut self, value: Tensor<E>) -> Var {
        self.push(value, true, None)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push(value, false, None)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    /// Same values, gradient flow severed: a fresh leaf with no upstream.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                details: format!("{} vs {}", fmt_shape(sa), fmt_shape(sb)),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = ew2(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, self.needs(a) || self.needs(b), Some(Op::Add(a, b))))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = ew2(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, self.needs(a) || self.needs(b), Some(Op::Sub(a, b))))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = ew2(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, self.needs(a) || self.needs(b), Some(Op::Mul(a, b))))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() != 4 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::Shape {
                op: "add_bias",
                details: format!("{} vs {}", fmt_shape(sx), fmt_shape(sb)),
            });
        }
        let v = k::add_bias(self.value(x), self.value(b));
        Ok(self.push(v, self.needs(x) || self.needs(b), Some(Op::AddBias { x, b })))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                details: format!("{} vs {}", fmt_shape(sa), fmt_shape(sb)),
            });
        }
        let v = k::matmul(self.value(a), self.value(b));
        Ok(self.push(v, self.needs(a) || self.needs(b), Some(Op::MatMul(a, b))))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        let ok = sx.len() == 4
            && sw.len() == 4
            && sw[1] == sx[1]
            && stride >= 1
            && sx[2] + 2 * pad >= sw[2]
            && sx[3] + 2 * pad >= sw[3];
        if !ok {
            return Err(Error::Shape {
                op: "conv2d",
                details: format!(
                    "input {} kernel {} stride {} pad {}",
                    fmt_shape(sx),
                    fmt_shape(sw),
                    stride,
                    pad
                ),
            });
        }
        let v = k::conv2d(self.value(x), self.value(w), stride, pad);
        Ok(self.push(v, self.needs(x) || self.needs(w), Some(Op::Conv2d { x, w, stride, pad })))
    }

    /// Transposed convolution; the kernel is laid out (C_in, C_out, Kh, Kw).
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        let ok = sx.len() == 4
            && sw.len() == 4
            && sw[0] == sx[1]
            && stride >= 1
            && (sx[2] - 1) * stride + sw[2] > 2 * pad
            && (sx[3] - 1) * stride + sw[3] > 2 * pad;
        if !ok {
            return Err(Error::Shape {
                op: "conv2d_transpose",
                details: format!(
                    "input {} kernel {} stride {} pad {}",
                    fmt_shape(sx),
                    fmt_shape(sw),
                    stride,
                    pad
                ),
            });
        }
        let v = k::convt2d(self.value(x), self.value(w), stride, pad);
        Ok(self.push(v, self.needs(x) || self.needs(w), Some(Op::ConvT2d { x, w, stride, pad })))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(k::sigmoid);
        self.push(v, self.needs(x), Some(Op::Sigmoid(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.tanh());
        self.push(v, self.needs(x), Some(Op::Tanh(x)))
    }

    /// Elementwise square root with subgradient 0 at exactly 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.sqrt());
        self.push(v, self.needs(x), Some(Op::Sqrt(x)))
    }

    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (E::of_f64(lo), E::of_f64(hi));
        let v = self.value(x).map(|e| e.max(l).min(h));
        self.push(v, self.needs(x), Some(Op::Clip { x, lo, hi }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cc = E::of_f64(c);
        let v = self.value(x).map(|e| e * cc);
        self.push(v, self.needs(x), Some(Op::Scale { x, c }))
    }

    /// Full reduction to a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), self.needs(x), Some(Op::Sum(x)))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.value(x).shape();
        if axis >= sx.len() || len == 0 || start + len > sx[axis] {
            return Err(Error::Shape {
                op: "slice",
                details: format!("{} axis {} start {} len {}", fmt_shape(sx), axis, start, len),
            });
        }
        let v = k::slice(self.value(x), axis, start, len);
        Ok(self.push(v, self.needs(x), Some(Op::Slice { x, axis, start, len })))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape { op: "concat", details: "no inputs".into() });
        }
        let rank = self.value(xs[0]).shape().len();
        if axis >= rank {
            return Err(Error::Shape {
                op: "concat",
                details: format!("axis {} out of rank {}", axis, rank),
            });
        }
        for v in xs {
            let (s0, sv) = (self.value(xs[0]).shape(), self.value(*v).shape());
            let compatible = sv.len() == rank
                && sv.iter().enumerate().all(|(i, d)| i == axis || *d == s0[i]);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    details: format!("{} vs {}", fmt_shape(s0), fmt_shape(sv)),
                });
            }
        }
        let tensors: Vec<&Tensor<E>> = xs.iter().map(|v| self.value(*v)).collect();
        let v = k::concat(&tensors, axis);
        let needs = xs.iter().any(|v| self.needs(*v));
        Ok(self.push(v, needs, Some(Op::Concat { xs: xs.to_vec(), axis })))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        if self.value(x).shape().len() != 4 {
            return Err(Error::Shape {
                op: "upsample2x",
                details: fmt_shape(self.value(x).shape()),
            });
        }
        let v = k::upsample2x(self.value(x));
        Ok(self.push(v, self.needs(x), Some(Op::Upsample2x(x))))
    }

    /// Uniform quantization to `2^bits` levels on [0, 1); straight-through
    /// backward inside [0, 1], zero outside.
    pub fn ste_quantize(&mut self, x: Var, bits: u32) -> Result<Var> {
        if !(1..=8).contains(&bits) {
            return Err(Error::InvalidBits(bits as u8));
        }
        let levels = E::of_f64((1u32 << bits) as f64);
        let top = E::one() - E::one() / levels;
        let v = self.value(x).map(|e| {
            let clipped = e.max(E::zero()).min(E::one());
            ((clipped * levels).floor() / levels).min(top)
        });
        Ok(self.push(v, self.needs(x), Some(Op::SteQuantize { x, bits })))
    }

    /// One line per node: id, kind, shape, inputs.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let kind = match &node.op {
                Some(op) => format!("{}{}", op.name(), op.attrs()),
                None if node.needs_grad => "param".to_string(),
                None => "const".to_string(),
            };
            let inputs: Vec<usize> =
                node.op.as_ref().map(|o| o.inputs().iter().map(|v| v.0).collect()).unwrap_or_default();
            let _ = writeln!(
                out,
                "%{:<4} {:<22} {:<16} {:?}",
                i,
                kind,
                fmt_shape(node.value.shape()),
                inputs
            );
        }
        out
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate over all
    /// paths; constants and detached values receive none.
    pub fn backward(&self, loss: Var) -> Result<GradMap<E>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalar(fmt_shape(lv.shape())));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), E::one()));

        for i in (0..=loss.0).rev() {
            let Some(op) = self.nodes[i].op.as_ref() else { continue };
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().expect("grad present");
            self.backprop_op(i, op, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(GradMap { grads })
    }

    fn backprop_op(&self, out: usize, op: &Op, g: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) {
        match *op {
            Op::Add(a, b) => {
                self.accum(grads, a, || g.clone());
                self.accum(grads, b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, a, || g.clone());
                self.accum(grads, b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                self.accum(grads, a, || ew2(g, self.value(b), |x, y| x * y));
                self.accum(grads, b, || ew2(g, self.value(a), |x, y| x * y));
            }
            Op::AddBias { x, b } => {
                self.accum(grads, x, || g.clone());
                self.accum(grads, b, || k::bias_grad(g));
            }
            Op::MatMul(a, b) => {
                self.accum(grads, a, || k::matmul_da(g, self.value(b)));
                self.accum(grads, b, || k::matmul_db(g, self.value(a)));
            }
            Op::Conv2d { x, w, stride, pad } => {
                self.accum(grads, x, || {
                    k::conv2d_dx(g, self.value(w), self.value(x).shape(), stride, pad)
                });
                self.accum(grads, w, || {
                    k::conv2d_dw(g, self.value(x), self.value(w).shape(), stride, pad)
                });
            }
            Op::ConvT2d { x, w, stride, pad } => {
                self.accum(grads, x, || {
                    k::convt2d_dx(g, self.value(w), self.value(x).shape(), stride, pad)
                });
                self.accum(grads, w, || {
                    k::convt2d_dw(g, self.value(x), self.value(w).shape(), stride, pad)
                });
            }
            Op::Sigmoid(x) => {
                let y = self.value(Var(out));
                self.accum(grads, x, || ew2(g, y, |gv, yv| gv * yv * (E::one() - yv)));
            }
            Op::Tanh(x) => {
                let y = self.value(Var(out));
                self.accum(grads, x, || ew2(g, y, |gv, yv| gv * (E::one() - yv * yv)));
            }
            Op::Sqrt(x) => {
                let y = self.value(Var(out));
                let half = E::of_f64(0.5);
                self.accum(grads, x, || {
                    ew2(g, y, |gv, yv| if yv > E::zero() { gv * half / yv } else { E::zero() })
                });
            }
            Op::Clip { x, lo, hi } => {
                let (l, h) = (E::of_f64(lo), E::of_f64(hi));
                self.accum(grads, x, || {
                    ew2(g, self.value(x), |gv, xv| {
                        if xv >= l && xv <= h {
                            gv
                        } else {
                            E::zero()
                        }
                    })
                });
            }
            Op::Scale { x, c } => {
                let cc = E::of_f64(c);
                self.accum(grads, x, || g.map(|v| v * cc));
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accum(grads, x, || Tensor::full(self.value(x).shape(), gv));
            }
            Op::Slice { x, axis, start, len } => {
                self.accum(grads, x, || {
                    k::slice_grad(g, self.value(x).shape(), axis, start, len)
                });
            }
            Op::Concat { ref xs, axis } => {
                let shapes: Vec<Vec<usize>> =
                    xs.iter().map(|v| self.value(*v).shape().to_vec()).collect();
                let parts = k::concat_grad(g, &shapes, axis);
                for (v, part) in xs.iter().zip(parts) {
                    self.accum(grads, *v, move || part);
                }
            }
            Op::Upsample2x(x) => {
                self.accum(grads, x, || k::upsample2x_grad(g, self.value(x).shape()));
            }
            Op::SteQuantize { x, .. } => {
                self.accum(grads, x, || {
                    ew2(g, self.value(x), |gv, xv| {
                        if xv >= E::zero() && xv <= E::one() {
                            gv
                        } else {
                            E::zero()
                        }
                    })
                });
            }
        }
    }

    fn accum(&self, grads: &mut [Option<Tensor<E>>], v: Var, make: impl FnOnce() -> Tensor<E>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let g = make();
        match &mut grads[v.0] {
            Some(existing) => {
                for (dst, src) in existing.data_mut().iter_mut().zip(g.data()) {
                    *dst = *dst + *src;
                }
            }
            slot => *slot = Some(g),
        }
    }

}

fn ew2<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}
