//! Encoder-decoder flow network built from recurrent cells.
//!
//! Encoder layers downsample 2x per level; decoder layers mirror them with
//! transposed convolutions inside the cell input path. Skip connections
//! concatenate encoder hidden states onto the matching decoder input. The
//! head is a plain 1x1 convolution to two channels with no nonlinearity, so
//! flow magnitude is unbounded. One flow prediction comes out per input
//! step, and recurrent state is threaded explicitly so a stream can be
//! processed with no reset.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{
    checkpoint, zero_state, BoundConvBlock, BoundConvLstm, BoundSpiking, CellKind, ConvBlockParams,
    ConvLstmParams, ConvSpec, LayerState, SpikingParams, LSTM_GATES, SPIKING_GATES,
};

fn default_kernel() -> usize {
    3
}
fn default_bits() -> u32 {
    4
}
fn default_io_channels() -> usize {
    2
}
fn default_true() -> bool {
    true
}

/// Architecture description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub cell: CellKind,
    /// Spiking output resolution in bits (ignored for LSTM).
    #[serde(default = "default_bits")]
    pub bits: u32,
    /// Encoder channel ladder; the decoder mirrors it.
    pub encoder: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_io_channels")]
    pub input_channels: usize,
    #[serde(default = "default_io_channels")]
    pub output_channels: usize,
    #[serde(default = "default_true")]
    pub skip_connections: bool,
    /// Per-layer recurrence toggle (encoders then decoders). `None` makes
    /// every layer recurrent.
    #[serde(default)]
    pub recurrent: Option<Vec<bool>>,
}

impl NetworkConfig {
    pub fn levels(&self) -> usize {
        self.encoder.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() || self.encoder.contains(&0) {
            return Err(Error::Config(format!("bad encoder ladder {:?}", self.encoder)));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::Config("zero input/output channels".into()));
        }
        if self.cell == CellKind::Spiking && !(1..=8).contains(&self.bits) {
            return Err(Error::InvalidBits(self.bits as u8));
        }
        if let Some(r) = &self.recurrent {
            if r.len() != 2 * self.levels() {
                return Err(Error::Config(format!(
                    "recurrent toggle needs {} entries, got {}",
                    2 * self.levels(),
                    r.len()
                )));
            }
        }
        Ok(())
    }

    fn layer_kind(&self, idx: usize) -> CellKind {
        match &self.recurrent {
            Some(r) if !r[idx] => CellKind::Conv,
            _ => self.cell,
        }
    }

    /// Conv specs for all layers, encoders then decoders.
    fn layer_specs(&self) -> Vec<ConvSpec> {
        let levels = self.levels();
        let k = self.kernel;
        let kd = k + 1;
        let mut specs = Vec::with_capacity(2 * levels);
        for i in 0..levels {
            let in_ch = if i == 0 { self.input_channels } else { self.encoder[i - 1] };
            specs.push(ConvSpec {
                in_ch,
                out_ch: self.encoder[i],
                kernel: k,
                stride: 2,
                pad: k / 2,
                transpose: false,
            });
        }
        for j in 0..levels {
            let skip_ch = if self.skip_connections && j >= 1 { self.encoder[levels - 1 - j] } else { 0 };
            let in_ch = if j == 0 { self.encoder[levels - 1] } else { specs[levels + j - 1].out_ch + skip_ch };
            let out_ch = if j + 1 < levels { self.encoder[levels - 2 - j] } else { self.encoder[0] };
            specs.push(ConvSpec {
                in_ch,
                out_ch,
                kernel: kd,
                stride: 2,
                pad: (kd - 2) / 2,
                transpose: true,
            });
        }
        specs
    }
}

/// Parameters of one layer.
#[derive(Debug, Clone)]
pub enum LayerParams<E: Scalar> {
    Lstm(ConvLstmParams<E>),
    Spiking(SpikingParams<E>),
    Conv(ConvBlockParams<E>),
}

impl<E: Scalar> LayerParams<E> {
    pub fn spec(&self) -> &ConvSpec {
        match self {
            LayerParams::Lstm(p) => &p.spec,
            LayerParams::Spiking(p) => &p.spec,
            LayerParams::Conv(p) => &p.spec,
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            LayerParams::Lstm(_) => CellKind::Lstm,
            LayerParams::Spiking(_) => CellKind::Spiking,
            LayerParams::Conv(_) => CellKind::Conv,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerParams::Lstm(p) => p.param_count(),
            LayerParams::Spiking(p) => p.param_count(),
            LayerParams::Conv(p) => p.param_count(),
        }
    }

    fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a Tensor<E>)) {
        match self {
            LayerParams::Lstm(p) => {
                for (g, gate) in LSTM_GATES.iter().enumerate() {
                    f(format!("{name}.wx.{gate}"), &p.wx[g]);
                    f(format!("{name}.wh.{gate}"), &p.wh[g]);
                    f(format!("{name}.b.{gate}"), &p.b[g]);
                }
            }
            LayerParams::Spiking(p) => {
                for (g, gate) in SPIKING_GATES.iter().enumerate() {
                    f(format!("{name}.w.{gate}"), &p.w[g]);
                    f(format!("{name}.b.{gate}"), &p.b[g]);
                }
            }
            LayerParams::Conv(p) => {
                f(format!("{name}.w"), &p.w);
                f(format!("{name}.b"), &p.b);
            }
        }
    }

    fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut Tensor<E>)) {
        match self {
            LayerParams::Lstm(p) => {
                for (g, gate) in LSTM_GATES.iter().enumerate() {
                    f(format!("{name}.wx.{gate}"), &mut p.wx[g]);
                    f(format!("{name}.wh.{gate}"), &mut p.wh[g]);
                    f(format!("{name}.b.{gate}"), &mut p.b[g]);
                }
            }
            LayerParams::Spiking(p) => {
                for (g, gate) in SPIKING_GATES.iter().enumerate() {
                    f(format!("{name}.w.{gate}"), &mut p.w[g]);
                    f(format!("{name}.b.{gate}"), &mut p.b[g]);
                }
            }
            LayerParams::Conv(p) => {
                f(format!("{name}.w"), &mut p.w);
                f(format!("{name}.b"), &mut p.b);
            }
        }
    }
}

/// Final 1x1 projection to flow channels.
#[derive(Debug, Clone)]
pub struct HeadParams<E: Scalar> {
    pub w: Tensor<E>,
    pub b: Tensor<E>,
}

/// A flow network: layer parameters plus the architecture that wires them.
#[derive(Debug, Clone)]
pub struct Network<E: Scalar> {
    pub config: NetworkConfig,
    pub layers: Vec<LayerParams<E>>,
    pub head: HeadParams<E>,
}

impl<E: Scalar> Network<E> {
    /// Deterministic build: same config and seed give bit-identical
    /// parameters.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = config.layer_specs();
        let mut layers = Vec::with_capacity(specs.len());
        for (idx, spec) in specs.iter().enumerate() {
            layers.push(match config.layer_kind(idx) {
                CellKind::Lstm => LayerParams::Lstm(ConvLstmParams::init(*spec, &mut rng)),
                CellKind::Spiking => LayerParams::Spiking(SpikingParams::init(*spec, config.bits, &mut rng)),
                CellKind::Conv => LayerParams::Conv(ConvBlockParams::init(*spec, &mut rng)),
            });
        }
        let head_in = specs.last().expect("nonempty ladder").out_ch;
        let bound = 1.0 / (head_in as f64).sqrt();
        let head = HeadParams {
            w: Tensor::uniform(&[config.output_channels, head_in, 1, 1], -bound, bound, &mut rng),
            b: Tensor::zeros(&[config.output_channels]),
        };
        Ok(Self { config, layers, head })
    }

    pub fn layer_name(idx: usize, levels: usize) -> String {
        if idx < levels {
            format!("enc{idx}")
        } else {
            format!("dec{}", idx - levels)
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<E>)> {
        let levels = self.config.levels();
        let mut out = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.visit(&Self::layer_name(idx, levels), &mut |n, t| out.push((n, t)));
        }
        out.push(("head.w".to_string(), &self.head.w));
        out.push(("head.b".to_string(), &self.head.b));
        out
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<E>)) {
        let levels = self.config.levels();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&Self::layer_name(idx, levels), &mut |n, t| f(&n, t));
        }
        f("head.w", &mut self.head.w);
        f("head.b", &mut self.head.b);
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum::<usize>()
            + self.head.w.numel()
            + self.head.b.numel()
    }

    /// Zero recurrent state for an input of the given size.
    pub fn zero_states(&self, batch: usize, h: usize, w: usize) -> Result<Vec<LayerState<Tensor<E>>>> {
        self.check_spatial(h, w)?;
        let mut states = Vec::with_capacity(self.layers.len());
        let mut spatial = (h, w);
        for layer in &self.layers {
            spatial = layer.spec().out_spatial(spatial);
            states.push(zero_state(layer.kind(), batch, layer.spec().out_ch, spatial));
        }
        Ok(states)
    }

    fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let d = 1usize << self.config.levels();
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by encoder stride product {}",
                h, w, d
            )));
        }
        Ok(())
    }

    /// Register all parameters on a tape; `trainable` decides whether they
    /// can receive gradients.
    pub fn bind(&self, tape: &mut Tape<E>, trainable: bool) -> BoundNet {
        let levels = self.config.levels();
        let mut param_vars = Vec::new();
        let mut leaf = |tape: &mut Tape<E>, name: String, t: &Tensor<E>| -> Var {
            let v = if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
            param_vars.push((name, v));
            v
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let name = Self::layer_name(idx, levels);
            layers.push(match layer {
                LayerParams::Lstm(p) => BoundLayer::Lstm(BoundConvLstm {
                    spec: p.spec,
                    wx: std::array::from_fn(|g| {
                        leaf(tape, format!("{name}.wx.{}", LSTM_GATES[g]), &p.wx[g])
                    }),
                    wh: std::array::from_fn(|g| {
                        leaf(tape, format!("{name}.wh.{}", LSTM_GATES[g]), &p.wh[g])
                    }),
                    b: std::array::from_fn(|g| {
                        leaf(tape, format!("{name}.b.{}", LSTM_GATES[g]), &p.b[g])
                    }),
                }),
                LayerParams::Spiking(p) => BoundLayer::Spiking(BoundSpiking {
                    spec: p.spec,
                    w: std::array::from_fn(|g| {
                        leaf(tape, format!("{name}.w.{}", SPIKING_GATES[g]), &p.w[g])
                    }),
                    b: std::array::from_fn(|g| {
                        leaf(tape, format!("{name}.b.{}", SPIKING_GATES[g]), &p.b[g])
                    }),
                    bits: p.bits,
                }),
                LayerParams::Conv(p) => BoundLayer::Conv(BoundConvBlock {
                    spec: p.spec,
                    w: leaf(tape, format!("{name}.w"), &p.w),
                    b: leaf(tape, format!("{name}.b"), &p.b),
                }),
            });
        }
        let head_w = leaf(tape, "head.w".to_string(), &self.head.w);
        let head_b = leaf(tape, "head.b".to_string(), &self.head.b);
        BoundNet {
            layers,
            head_w,
            head_b,
            levels,
            skip: self.config.skip_connections,
            param_vars,
        }
    }

    /// One prediction for one count frame; states advance by exactly one
    /// step in every recurrent layer.
    pub fn step(
        &self,
        x: &Tensor<E>,
        states: &[LayerState<Tensor<E>>],
    ) -> Result<(Tensor<E>, Vec<LayerState<Tensor<E>>>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let state_vars: Vec<LayerState<Var>> =
            states.iter().map(|s| s.map(|t| tape.constant(t.clone()))).collect();
        let (flow, new_states, _) = bound.step_on_tape(&mut tape, xv, &state_vars)?;
        let out_states = new_states.iter().map(|s| s.map(|v| tape.value(*v).clone())).collect();
        Ok((tape.value(flow).clone(), out_states))
    }

    /// Fold [`Network::step`] over a stream without any state reset; one
    /// prediction per frame. States are threaded through `states` so chunked
    /// and unchunked runs are bit-identical.
    pub fn run_stream(
        &self,
        frames: &[Tensor<E>],
        states: &mut Vec<LayerState<Tensor<E>>>,
    ) -> Result<Vec<Tensor<E>>> {
        if frames.is_empty() {
            return Err(Error::EmptyOutput("run_stream needs at least one frame".into()));
        }
        let mut out = Vec::with_capacity(frames.len());
        for frame in frames {
            let (flow, new_states) = self.step(frame, states)?;
            *states = new_states;
            out.push(flow);
        }
        Ok(out)
    }

    /// Text summary: per-layer kind, spec, state shape, parameter count.
    pub fn summary(&self, input: (usize, usize)) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let levels = self.config.levels();
        let mut spatial = input;
        let _ = writeln!(s, "input  ({} ch, {}x{})", self.config.input_channels, input.0, input.1);
        for (idx, layer) in self.layers.iter().enumerate() {
            spatial = layer.spec().out_spatial(spatial);
            let _ = writeln!(
                s,
                "{:<6} {:?} {} -> {} ch, {}x{}, {} params",
                Self::layer_name(idx, levels),
                layer.kind(),
                layer.spec().in_ch,
                layer.spec().out_ch,
                spatial.0,
                spatial.1,
                layer.param_count()
            );
        }
        let _ = writeln!(
            s,
            "head   1x1 conv {} -> {} ch, {} params",
            self.head.w.shape()[1],
            self.config.output_channels,
            self.head.w.numel() + self.head.b.numel()
        );
        let _ = writeln!(s, "total  {} params", self.param_count());
        s
    }

    /// Save parameters as a CKPT1 checkpoint (f32 on disk).
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_ckpt1_file(path, &self.named_params())
    }

    /// Load parameters for `config` from a CKPT1 checkpoint.
    pub fn load(config: NetworkConfig, path: &Path) -> Result<Self> {
        let mut net = Self::build(config, 0)?;
        let entries = checkpoint::read_ckpt1_file(path)?;
        let mut map: std::collections::BTreeMap<String, Tensor<f32>> = entries.into_iter().collect();
        let mut mismatched = Vec::new();
        net.visit_params_mut(|name, tensor| match map.remove(name) {
            Some(loaded) if loaded.shape() == tensor.shape() => *tensor = loaded.cast(),
            Some(loaded) => mismatched.push(format!(
                "{} shape {:?} vs {:?}",
                name,
                loaded.shape(),
                tensor.shape()
            )),
            None => mismatched.push(format!("{} absent", name)),
        });
        if !mismatched.is_empty() {
            return Err(Error::Config(format!("checkpoint mismatch: {}", mismatched.join(", "))));
        }
        if !map.is_empty() {
            let extra: Vec<String> = map.into_keys().collect();
            return Err(Error::Config(format!("checkpoint has extra tensors: {}", extra.join(", "))));
        }
        Ok(net)
    }
}

pub enum BoundLayer {
    Lstm(BoundConvLstm),
    Spiking(BoundSpiking),
    Conv(BoundConvBlock),
}

impl BoundLayer {
    pub fn kind(&self) -> CellKind {
        match self {
            BoundLayer::Lstm(_) => CellKind::Lstm,
            BoundLayer::Spiking(_) => CellKind::Spiking,
            BoundLayer::Conv(_) => CellKind::Conv,
        }
    }

    pub fn spec(&self) -> &ConvSpec {
        match self {
            BoundLayer::Lstm(l) => &l.spec,
            BoundLayer::Spiking(l) => &l.spec,
            BoundLayer::Conv(l) => &l.spec,
        }
    }
}

/// Per-step record of what each layer consumed, for op counting.
pub struct StepTrace {
    /// Input var of every layer, post skip concatenation.
    pub layer_inputs: Vec<Var>,
    pub head_input: Var,
}

/// A network registered on a tape.
pub struct BoundNet {
    pub layers: Vec<BoundLayer>,
    head_w: Var,
    head_b: Var,
    levels: usize,
    skip: bool,
    param_vars: Vec<(String, Var)>,
}

impl BoundNet {
    pub fn param_vars(&self) -> &[(String, Var)] {
        &self.param_vars
    }

    /// One forward step over the tape. Returns the flow prediction, the
    /// advanced states, and a trace of per-layer inputs.
    pub fn step_on_tape<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        x: Var,
        states: &[LayerState<Var>],
    ) -> Result<(Var, Vec<LayerState<Var>>, StepTrace)> {
        if states.len() != self.layers.len() {
            return Err(Error::State(format!(
                "{} states for {} layers",
                states.len(),
                self.layers.len()
            )));
        }
        let mut new_states = Vec::with_capacity(self.layers.len());
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut enc_h: Vec<Var> = Vec::with_capacity(self.levels);
        let mut cur = x;
        for (idx, (layer, state)) in self.layers.iter().zip(states).enumerate() {
            let is_decoder = idx >= self.levels;
            if is_decoder {
                let j = idx - self.levels;
                if self.skip && j >= 1 {
                    let skip = self.match_spatial(tape, enc_h[self.levels - 1 - j], cur)?;
                    cur = tape.concat(&[cur, skip], 1)?;
                }
            }
            layer_inputs.push(cur);
            let (out, new_state) = match (layer, state) {
                (BoundLayer::Lstm(l), s @ LayerState::Lstm { .. }) => l.step(tape, cur, s)?,
                (BoundLayer::Spiking(l), s @ LayerState::Spiking { .. }) => l.step(tape, cur, s)?,
                (BoundLayer::Conv(l), LayerState::Stateless) => {
                    (l.step(tape, cur)?, LayerState::Stateless)
                }
                (layer, _) => {
                    return Err(Error::State(format!(
                        "layer {} is {:?} but state kind differs",
                        idx,
                        layer.kind()
                    )))
                }
            };
            if !is_decoder {
                enc_h.push(out);
            }
            new_states.push(new_state);
            cur = out;
        }
        let projected = tape.conv2d(cur, self.head_w, 1, 0)?;
        let flow = tape.add_bias(projected, self.head_b)?;
        Ok((flow, new_states, StepTrace { layer_inputs, head_input: cur }))
    }

    /// Nearest-neighbor upsample a skip tensor if it sits one level below
    /// the decoder input resolution.
    fn match_spatial<E: Scalar>(&self, tape: &mut Tape<E>, skip: Var, like: Var) -> Result<Var> {
        let (sh, sw) = {
            let s = tape.value(skip).shape();
            (s[2], s[3])
        };
        let (lh, lw) = {
            let s = tape.value(like).shape();
            (s[2], s[3])
        };
        if (sh, sw) == (lh, lw) {
            Ok(skip)
        } else if (2 * sh, 2 * sw) == (lh, lw) {
            tape.upsample2x(skip)
        } else {
            Err(Error::State(format!(
                "skip tensor {}x{} cannot align with decoder input {}x{}",
                sh, sw, lh, lw
            )))
        }
    }
}
