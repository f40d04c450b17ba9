//! Recurrent cells: convolutional LSTM and the gated multi-bit spiking
//! neuron, plus plain convolutional blocks. All gate transforms are
//! convolutions so the cells handle image-like inputs.

pub mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Cell type of one network layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Lstm,
    Spiking,
    /// Non-recurrent tanh convolution block.
    Conv,
}

/// Geometry of a layer's input transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub transpose: bool,
}

impl ConvSpec {
    pub fn out_spatial(&self, (h, w): (usize, usize)) -> (usize, usize) {
        if self.transpose {
            (
                (h - 1) * self.stride + self.kernel - 2 * self.pad,
                (w - 1) * self.stride + self.kernel - 2 * self.pad,
            )
        } else {
            (
                (h + 2 * self.pad - self.kernel) / self.stride + 1,
                (w + 2 * self.pad - self.kernel) / self.stride + 1,
            )
        }
    }

    /// Kernel tensor layout: (out, in, k, k) for convolution,
    /// (in, out, k, k) for transposed convolution.
    pub fn weight_shape(&self) -> Vec<usize> {
        if self.transpose {
            vec![self.in_ch, self.out_ch, self.kernel, self.kernel]
        } else {
            vec![self.out_ch, self.in_ch, self.kernel, self.kernel]
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn weight_count(&self) -> usize {
        self.in_ch * self.out_ch * self.kernel * self.kernel
    }

    /// Spec of the hidden-to-gate convolution: stride-1 same-shape, odd
    /// kernel derived from this spec's kernel.
    pub fn hidden_spec(&self) -> ConvSpec {
        let k = if self.kernel % 2 == 1 { self.kernel } else { self.kernel - 1 };
        ConvSpec { in_ch: self.out_ch, out_ch: self.out_ch, kernel: k, stride: 1, pad: k / 2, transpose: false }
    }
}

fn apply_conv<E: Scalar>(tape: &mut Tape<E>, x: Var, w: Var, spec: &ConvSpec) -> Result<Var> {
    if spec.transpose {
        tape.conv2d_transpose(x, w, spec.stride, spec.pad)
    } else {
        tape.conv2d(x, w, spec.stride, spec.pad)
    }
}

fn uniform_fan_in<E: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<E> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// LSTM gate order used throughout parameters and checkpoints.
pub const LSTM_GATES: [&str; 4] = ["f", "i", "c", "o"];
/// Spiking gate order: forget, input, candidate current.
pub const SPIKING_GATES: [&str; 3] = ["f", "i", "c"];

/// Convolutional LSTM parameters: per gate, an input kernel, a hidden kernel
/// and a bias.
#[derive(Debug, Clone)]
pub struct ConvLstmParams<E: Scalar> {
    pub spec: ConvSpec,
    pub wx: [Tensor<E>; 4],
    pub wh: [Tensor<E>; 4],
    pub b: [Tensor<E>; 4],
}

impl<E: Scalar> ConvLstmParams<E> {
    /// Fan-in-scaled uniform init; the forget-gate bias starts at +1.
    pub fn init<R: Rng>(spec: ConvSpec, rng: &mut R) -> Self {
        let hidden = spec.hidden_spec();
        let wx = std::array::from_fn(|_| uniform_fan_in(&spec.weight_shape(), spec.fan_in(), rng));
        let wh = std::array::from_fn(|_| uniform_fan_in(&hidden.weight_shape(), hidden.fan_in(), rng));
        let b = std::array::from_fn(|g| {
            if LSTM_GATES[g] == "f" {
                Tensor::ones(&[spec.out_ch])
            } else {
                Tensor::zeros(&[spec.out_ch])
            }
        });
        Self { spec, wx, wh, b }
    }

    pub fn zeros(spec: ConvSpec) -> Self {
        let hidden = spec.hidden_spec();
        Self {
            spec,
            wx: std::array::from_fn(|_| Tensor::zeros(&spec.weight_shape())),
            wh: std::array::from_fn(|_| Tensor::zeros(&hidden.weight_shape())),
            b: std::array::from_fn(|_| Tensor::zeros(&[spec.out_ch])),
        }
    }

    pub fn param_count(&self) -> usize {
        self.wx.iter().chain(&self.wh).chain(&self.b).map(|t| t.numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<E>, trainable: bool) -> BoundConvLstm {
        let mut leaf = |t: &Tensor<E>| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        BoundConvLstm {
            spec: self.spec,
            wx: std::array::from_fn(|g| leaf(&self.wx[g])),
            wh: std::array::from_fn(|g| leaf(&self.wh[g])),
            b: std::array::from_fn(|g| leaf(&self.b[g])),
        }
    }
}

/// Spiking-neuron parameters. Gates see only the input (no recurrent
/// kernel); the output is quantized to `2^bits` levels.
#[derive(Debug, Clone)]
pub struct SpikingParams<E: Scalar> {
    pub spec: ConvSpec,
    pub w: [Tensor<E>; 3],
    pub b: [Tensor<E>; 3],
    pub bits: u32,
}

impl<E: Scalar> SpikingParams<E> {
    pub fn init<R: Rng>(spec: ConvSpec, bits: u32, rng: &mut R) -> Self {
        let w = std::array::from_fn(|_| uniform_fan_in(&spec.weight_shape(), spec.fan_in(), rng));
        let b = std::array::from_fn(|g| {
            if SPIKING_GATES[g] == "f" {
                Tensor::ones(&[spec.out_ch])
            } else {
                Tensor::zeros(&[spec.out_ch])
            }
        });
        Self { spec, w, b, bits }
    }

    pub fn zeros(spec: ConvSpec, bits: u32) -> Self {
        Self {
            spec,
            w: std::array::from_fn(|_| Tensor::zeros(&spec.weight_shape())),
            b: std::array::from_fn(|_| Tensor::zeros(&[spec.out_ch])),
            bits,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.iter().chain(&self.b).map(|t| t.numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<E>, trainable: bool) -> BoundSpiking {
        let mut leaf = |t: &Tensor<E>| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        BoundSpiking {
            spec: self.spec,
            w: std::array::from_fn(|g| leaf(&self.w[g])),
            b: std::array::from_fn(|g| leaf(&self.b[g])),
            bits: self.bits,
        }
    }
}

/// Plain convolution + tanh, for non-recurrent layers.
#[derive(Debug, Clone)]
pub struct ConvBlockParams<E: Scalar> {
    pub spec: ConvSpec,
    pub w: Tensor<E>,
    pub b: Tensor<E>,
}

impl<E: Scalar> ConvBlockParams<E> {
    pub fn init<R: Rng>(spec: ConvSpec, rng: &mut R) -> Self {
        Self {
            spec,
            w: uniform_fan_in(&spec.weight_shape(), spec.fan_in(), rng),
            b: Tensor::zeros(&[spec.out_ch]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.numel() + self.b.numel()
    }

    pub fn bind(&self, tape: &mut Tape<E>, trainable: bool) -> BoundConvBlock {
        let mut leaf = |t: &Tensor<E>| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        BoundConvBlock { spec: self.spec, w: leaf(&self.w), b: leaf(&self.b) }
    }
}

/// Recurrent state of one layer, generic over tensor-or-var payload so the
/// same shape threads through inference and training.
#[derive(Debug, Clone)]
pub enum LayerState<T> {
    Lstm { h: T, c: T },
    Spiking { c: T, v: T, y: T },
    Stateless,
}

impl<T> LayerState<T> {
    pub fn tensors(&self) -> Vec<&T> {
        match self {
            LayerState::Lstm { h, c } => vec![h, c],
            LayerState::Spiking { c, v, y } => vec![c, v, y],
            LayerState::Stateless => vec![],
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> LayerState<U> {
        match self {
            LayerState::Lstm { h, c } => LayerState::Lstm { h: f(h), c: f(c) },
            LayerState::Spiking { c, v, y } => LayerState::Spiking { c: f(c), v: f(v), y: f(y) },
            LayerState::Stateless => LayerState::Stateless,
        }
    }
}

/// Zero state for a cell with the given output shape.
pub fn zero_state<E: Scalar>(
    kind: CellKind,
    batch: usize,
    out_ch: usize,
    spatial: (usize, usize),
) -> LayerState<Tensor<E>> {
    let shape = [batch, out_ch, spatial.0, spatial.1];
    match kind {
        CellKind::Lstm => LayerState::Lstm { h: Tensor::zeros(&shape), c: Tensor::zeros(&shape) },
        CellKind::Spiking => LayerState::Spiking {
            c: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            y: Tensor::zeros(&shape),
        },
        CellKind::Conv => LayerState::Stateless,
    }
}

pub struct BoundConvLstm {
    pub spec: ConvSpec,
    pub wx: [Var; 4],
    pub wh: [Var; 4],
    pub b: [Var; 4],
}

impl BoundConvLstm {
    /// f = σ(Wfh*h + Wfx*x + bf), i = σ(...), ĉ = tanh(...),
    /// c = f⊙c_prev + i⊙ĉ, o = σ(...), h = o⊙tanh(c).
    pub fn step<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        x: Var,
        state: &LayerState<Var>,
    ) -> Result<(Var, LayerState<Var>)> {
        let LayerState::Lstm { h: h_prev, c: c_prev } = state else {
            return Err(Error::State("expected LSTM state".into()));
        };
        let hidden = self.spec.hidden_spec();
        let mut pre = [Var(0); 4];
        for g in 0..4 {
            let from_x = apply_conv(tape, x, self.wx[g], &self.spec)?;
            let from_h = apply_conv(tape, *h_prev, self.wh[g], &hidden)?;
            let s = tape.add(from_x, from_h)?;
            pre[g] = tape.add_bias(s, self.b[g])?;
        }
        let f = tape.sigmoid(pre[0]);
        let i = tape.sigmoid(pre[1]);
        let c_hat = tape.tanh(pre[2]);
        let o = tape.sigmoid(pre[3]);
        let keep = tape.mul(f, *c_prev)?;
        let write = tape.mul(i, c_hat)?;
        let c = tape.add(keep, write)?;
        let c_act = tape.tanh(c);
        let h = tape.mul(o, c_act)?;
        Ok((h, LayerState::Lstm { h, c }))
    }
}

pub struct BoundSpiking {
    pub spec: ConvSpec,
    pub w: [Var; 3],
    pub b: [Var; 3],
    pub bits: u32,
}

impl BoundSpiking {
    /// f = σ(Wf*x + bf), i = σ(Wi*x + bi), c = f⊙c_prev + i⊙(Wc*x + bc),
    /// v = v_prev - y_prev + tanh(c), y = thres(v) with a uniform quantizer.
    pub fn step<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        x: Var,
        state: &LayerState<Var>,
    ) -> Result<(Var, LayerState<Var>)> {
        let LayerState::Spiking { c: c_prev, v: v_prev, y: y_prev } = state else {
            return Err(Error::State("expected spiking state".into()));
        };
        let mut pre = [Var(0); 3];
        for g in 0..3 {
            let from_x = apply_conv(tape, x, self.w[g], &self.spec)?;
            pre[g] = tape.add_bias(from_x, self.b[g])?;
        }
        let f = tape.sigmoid(pre[0]);
        let i = tape.sigmoid(pre[1]);
        let keep = tape.mul(f, *c_prev)?;
        let write = tape.mul(i, pre[2])?;
        let c = tape.add(keep, write)?;
        let c_act = tape.tanh(c);
        let decay = tape.sub(*v_prev, *y_prev)?;
        let v = tape.add(decay, c_act)?;
        let y = tape.ste_quantize(v, self.bits)?;
        Ok((y, LayerState::Spiking { c, v, y }))
    }
}

pub struct BoundConvBlock {
    pub spec: ConvSpec,
    pub w: Var,
    pub b: Var,
}

impl BoundConvBlock {
    pub fn step<E: Scalar>(&self, tape: &mut Tape<E>, x: Var) -> Result<Var> {
        let z = apply_conv(tape, x, self.w, &self.spec)?;
        let z = tape.add_bias(z, self.b)?;
        Ok(tape.tanh(z))
    }
}
