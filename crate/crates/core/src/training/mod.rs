//! Windowed-BPTT sequential training.
//!
//! Each training sequence is forwarded from zero state over its `l`-count
//! prefix, every recurrent state is detached at the prefix/window boundary,
//! and the loss is accumulated at the `n` target positions only. Gradients
//! therefore never flow into the prefix: the truncation is exact. The
//! traditional baseline is the degenerate l = 0, n = 1 configuration.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::encoding::{augment, normalize_counts, TrainingSequence};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::layers::{zero_state, LayerState};
use crate::model::{BoundNet, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Prefix warmup with gradient truncation at the window boundary.
    Windowed,
    /// Naive chunking: no prefix, one target, state reset per sequence.
    Traditional,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    16
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_clip() -> Option<f64> {
    Some(10.0)
}
fn default_cap() -> u32 {
    8
}
fn default_flips() -> bool {
    true
}

/// Augmentation policy drawn per sequence each epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    #[serde(default = "default_flips")]
    pub flips: bool,
    /// Random crop size (h, w); `None` keeps full frames.
    #[serde(default)]
    pub crop: Option<(usize, usize)>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flips: true, crop: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub m: usize,
    pub n: usize,
    pub l: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub mode: TrainMode,
    #[serde(default)]
    pub seed: u64,
    /// Global-norm gradient clip; `None` disables it.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    /// Count normalization cap for network inputs.
    #[serde(default = "default_cap")]
    pub count_cap: u32,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.n < 1 {
            return Err(Error::Config(format!("m {} and n {} must be >= 1", self.m, self.n)));
        }
        if self.mode == TrainMode::Traditional && (self.l != 0 || self.n != 1) {
            return Err(Error::Config(format!(
                "traditional mode forces l = 0 and n = 1, got l {} n {}",
                self.l, self.n
            )));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be >= 1".into()));
        }
        if self.count_cap == 0 {
            return Err(Error::Config("count_cap must be >= 1".into()));
        }
        Ok(())
    }

    fn check_sequence(&self, seq: &TrainingSequence) -> Result<()> {
        if seq.prefix.len() != self.l || seq.window.len() != self.m * self.n || seq.targets.len() != self.n {
            return Err(Error::Config(format!(
                "sequence shape (l {}, window {}, targets {}) does not match config (l {}, m*n {}, n {})",
                seq.prefix.len(),
                seq.window.len(),
                seq.targets.len(),
                self.l,
                self.m * self.n,
                self.n
            )));
        }
        Ok(())
    }
}

/// Loss breakdown for one sequence. The aggregate equals the sum of the
/// per-target terms.
#[derive(Debug, Clone)]
pub struct SequenceLoss {
    pub per_target: Vec<f64>,
    pub active_pixels: Vec<usize>,
    pub total: f64,
}

/// Per-epoch aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Unnormalized L2 sum over all targets and sequences.
    pub loss: f64,
    /// Loss divided by evaluated pixels (endpoint-error style).
    pub normalized: f64,
    pub sequences: usize,
}

pub type ParamGrads<E> = BTreeMap<String, Tensor<E>>;

/// Sum over valid ground-truth pixels of the Euclidean flow error.
/// Differentiable w.r.t. the prediction with subgradient 0 at exact zero
/// error; invalid pixels contribute nothing. Returns the loss var and the
/// number of valid pixels.
pub fn masked_l2_loss<E: Scalar>(
    tape: &mut Tape<E>,
    pred: Var,
    gt: &FlowField,
) -> Result<(Var, usize)> {
    let shape = tape.value(pred).shape().to_vec();
    if shape.len() != 4 || shape[1] != 2 || shape[2] != gt.height() || shape[3] != gt.width() {
        return Err(Error::Shape {
            op: "masked_l2_loss",
            details: format!("prediction {:?} vs target [1, 2, {}, {}]", shape, gt.height(), gt.width()),
        });
    }
    let target = tape.constant(gt.to_tensor());
    let mask = tape.constant(gt.valid_mask_tensor());
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let u2 = tape.slice(sq, 1, 0, 1)?;
    let v2 = tape.slice(sq, 1, 1, 1)?;
    let sum_sq = tape.add(u2, v2)?;
    let dist = tape.sqrt(sum_sq);
    let masked = tape.mul(dist, mask)?;
    let loss = tape.sum(masked);
    Ok((loss, gt.valid().iter().filter(|&&m| m).count()))
}

/// The forward pass of [`train_sequence`], exposed so tests can inspect
/// per-input gradients. With `track_inputs` the count frames are registered
/// as gradient-carrying leaves.
pub struct SequenceForward {
    pub loss: Var,
    pub prefix_inputs: Vec<Var>,
    pub window_inputs: Vec<Var>,
    pub report: SequenceLoss,
}

pub fn forward_sequence<E: Scalar>(
    tape: &mut Tape<E>,
    bound: &BoundNet,
    seq: &TrainingSequence,
    cfg: &TrainConfig,
    track_inputs: bool,
) -> Result<SequenceForward> {
    cfg.check_sequence(seq)?;
    let first = seq.window.first().ok_or_else(|| Error::Config("empty window".into()))?;
    let (h, w) = (first.height(), first.width());

    let mut spatial = (h, w);
    let mut states: Vec<LayerState<Var>> = bound
        .layers
        .iter()
        .map(|layer| {
            spatial = layer.spec().out_spatial(spatial);
            zero_state::<E>(layer.kind(), 1, layer.spec().out_ch, spatial)
                .map(|t| tape.constant(t.clone()))
        })
        .collect();

    let leaf = |tape: &mut Tape<E>, t: Tensor<E>| if track_inputs { tape.param(t) } else { tape.constant(t) };

    let mut prefix_inputs = Vec::with_capacity(seq.prefix.len());
    for frame in &seq.prefix {
        let x = leaf(tape, normalize_counts(frame, cfg.count_cap));
        prefix_inputs.push(x);
        let (_, new_states, _) = bound.step_on_tape(tape, x, &states)?;
        states = new_states;
    }
    // Gradient truncation: the window sees the prefix only through detached
    // state values.
    states = states.iter().map(|s| s.map(|v| tape.detach(*v))).collect();

    let mut window_inputs = Vec::with_capacity(seq.window.len());
    let mut total: Option<Var> = None;
    let mut per_target = Vec::with_capacity(seq.targets.len());
    let mut active_pixels = Vec::with_capacity(seq.targets.len());
    for (k, frame) in seq.window.iter().enumerate() {
        let x = leaf(tape, normalize_counts(frame, cfg.count_cap));
        window_inputs.push(x);
        let (flow, new_states, _) = bound.step_on_tape(tape, x, &states)?;
        states = new_states;
        if (k + 1) % cfg.m == 0 {
            let target_idx = (k + 1) / cfg.m - 1;
            let (loss, pixels) = masked_l2_loss(tape, flow, &seq.targets[target_idx])?;
            per_target.push(tape.value(loss).item().to_f64_val());
            active_pixels.push(pixels);
            total = Some(match total {
                Some(acc) => tape.add(acc, loss)?,
                None => loss,
            });
        }
    }
    let loss = total.expect("n >= 1 guarantees at least one target");
    let report = SequenceLoss {
        total: per_target.iter().sum(),
        per_target,
        active_pixels,
    };
    Ok(SequenceForward { loss, prefix_inputs, window_inputs, report })
}

/// Forward one sequence from zero state and fill parameter gradients.
/// Parameters that receive no gradient report zeros.
pub fn train_sequence<E: Scalar>(
    net: &Network<E>,
    seq: &TrainingSequence,
    cfg: &TrainConfig,
) -> Result<(ParamGrads<E>, SequenceLoss)> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let fwd = forward_sequence(&mut tape, &bound, seq, cfg, false)?;
    let mut grads = tape.backward(fwd.loss)?;
    let mut out = ParamGrads::new();
    for (name, var) in bound.param_vars() {
        let g = grads
            .take(*var)
            .unwrap_or_else(|| Tensor::zeros(tape.value(*var).shape()));
        out.insert(name.clone(), g);
    }
    Ok((out, fwd.report))
}

/// First and second Adam moments keyed by parameter name.
pub struct AdamState<E: Scalar> {
    pub m: ParamGrads<E>,
    pub v: ParamGrads<E>,
    pub t: u64,
}

impl<E: Scalar> Default for AdamState<E> {
    fn default() -> Self {
        Self { m: BTreeMap::new(), v: BTreeMap::new(), t: 0 }
    }
}

/// Standard bias-corrected Adam update.
pub fn adam_step<E: Scalar>(
    net: &mut Network<E>,
    grads: &ParamGrads<E>,
    state: &mut AdamState<E>,
    cfg: &TrainConfig,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    net.visit_params_mut(|name, param| {
        let Some(g) = grads.get(name) else { return };
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.shape()));
        for i in 0..param.numel() {
            let gi = g.data()[i].to_f64_val();
            let mi = cfg.beta1 * m.data()[i].to_f64_val() + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i].to_f64_val() + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = E::of_f64(mi);
            v.data_mut()[i] = E::of_f64(vi);
            let update = cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
            let p = param.data()[i].to_f64_val() - update;
            param.data_mut()[i] = E::of_f64(p);
        }
    });
}

/// Scale all gradients down if their global L2 norm exceeds `max_norm`.
pub fn clip_grads<E: Scalar>(grads: &mut ParamGrads<E>, max_norm: f64) {
    let norm = grads.values().map(|g| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = E::of_f64(max_norm / norm);
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
}

fn add_scaled<E: Scalar>(acc: &mut ParamGrads<E>, part: &ParamGrads<E>) {
    for (name, g) in part {
        match acc.get_mut(name) {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            None => {
                acc.insert(name.clone(), g.clone());
            }
        }
    }
}

/// Train over shuffled, randomly augmented sequences; deterministic given
/// the config seed. `on_epoch` runs after each optimizer epoch, e.g. to save
/// checkpoints or log a metrics row.
pub fn train_with_callback<E: Scalar>(
    net: &mut Network<E>,
    dataset: &[TrainingSequence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Network<E>, &EpochReport) -> Result<()>,
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for seq in dataset {
        cfg.check_sequence(seq)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::default();
    let mut reports = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        // Fisher-Yates, driven by the epoch RNG stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_pixels = 0usize;
        for chunk in order.chunks(cfg.batch) {
            // Draw augmentations sequentially so the RNG stream is stable,
            // then process the batch in parallel.
            let batch: Vec<TrainingSequence> = chunk
                .iter()
                .map(|&i| {
                    let seq = &dataset[i];
                    let (flip_h, flip_v) = if cfg.augment.flips {
                        (rng.gen_bool(0.5), rng.gen_bool(0.5))
                    } else {
                        (false, false)
                    };
                    let crop = cfg.augment.crop.map(|(ch, cw)| {
                        let frame = &seq.window[0];
                        let y0 = rng.gen_range(0..=frame.height() - ch);
                        let x0 = rng.gen_range(0..=frame.width() - cw);
                        (y0, x0, ch, cw)
                    });
                    augment(seq, flip_h, flip_v, crop)
                })
                .collect::<Result<_>>()?;

            let results: Vec<(ParamGrads<E>, SequenceLoss)> = batch
                .par_iter()
                .map(|seq| train_sequence(net, seq, cfg))
                .collect::<Result<_>>()?;

            let mut grads = ParamGrads::new();
            for (g, loss) in &results {
                add_scaled(&mut grads, g);
                epoch_loss += loss.total;
                epoch_pixels += loss.active_pixels.iter().sum::<usize>();
            }
            let inv = E::of_f64(1.0 / results.len() as f64);
            for g in grads.values_mut() {
                for v in g.data_mut() {
                    *v = *v * inv;
                }
            }
            if let Some(max_norm) = cfg.clip_norm {
                clip_grads(&mut grads, max_norm);
            }
            adam_step(net, &grads, &mut adam, cfg);
        }

        if !epoch_loss.is_finite() {
            return Err(Error::Numerical(format!("epoch {} loss is {}", epoch, epoch_loss)));
        }
        let mut finite = true;
        net.visit_params_mut(|_, t| finite &= t.all_finite());
        if !finite {
            return Err(Error::Numerical(format!("non-finite parameters after epoch {}", epoch)));
        }

        let report = EpochReport {
            epoch,
            loss: epoch_loss,
            normalized: if epoch_pixels > 0 { epoch_loss / epoch_pixels as f64 } else { 0.0 },
            sequences: dataset.len(),
        };
        log::info!(
            "epoch {}: loss {:.4}, per-pixel {:.4}",
            report.epoch,
            report.loss,
            report.normalized
        );
        on_epoch(net, &report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// [`train_with_callback`] without the callback.
pub fn train<E: Scalar>(
    net: &mut Network<E>,
    dataset: &[TrainingSequence],
    cfg: &TrainConfig,
) -> Result<Vec<EpochReport>> {
    train_with_callback(net, dataset, cfg, |_, _| Ok(()))
}

/// Baseline mode: naive chunking into `m`-count sequences with no prefix and
/// a state reset per sequence. The dataset must have been built with
/// l = 0, n = 1.
pub fn train_traditional<E: Scalar>(
    net: &mut Network<E>,
    dataset: &[TrainingSequence],
    cfg: &TrainConfig,
) -> Result<Vec<EpochReport>> {
    let cfg = TrainConfig { mode: TrainMode::Traditional, l: 0, n: 1, ..cfg.clone() };
    cfg.validate()?;
    train(net, dataset, &cfg)
}
