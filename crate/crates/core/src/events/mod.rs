//! Synthetic scene rendering and event-camera emulation.
//!
//! A [`Scene`] moves a strictly positive intensity pattern under a rigid
//! motion; [`render_scene`] samples it into frames with exact per-step flow
//! fields, and [`emit_events`] runs a per-pixel log-intensity accumulator
//! over the frames to produce a DVS-style event stream.

pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;

/// One sensor event: timestamp (µs), pixel, polarity (+1 or -1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub t: u32,
    pub x: u16,
    pub y: u16,
    pub p: i8,
}

impl EventRecord {
    #[inline]
    fn sort_key(&self) -> (u32, u16, u16, i8) {
        (self.t, self.y, self.x, self.p)
    }
}

/// Events for one sensor, sorted by (t, y, x, p).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<EventRecord>,
}

/// Index of the first event that breaks the (t, y, x, p) order, if any.
pub fn first_unsorted(events: &[EventRecord]) -> Option<usize> {
    (1..events.len()).find(|&i| events[i - 1].sort_key() > events[i].sort_key())
}

pub fn sort_events(events: &mut [EventRecord]) {
    events.sort_unstable_by_key(|e| e.sort_key());
}

/// Strictly positive intensity pattern over continuous coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Pattern {
    Uniform { level: f64 },
    /// `mean + contrast * sin(2π(fx x + fy y) + phase)`; positive iff
    /// `mean > contrast`.
    SineGrating { fx: f64, fy: f64, phase: f64, mean: f64, contrast: f64 },
    /// Hard-edged squares of side `cell` alternating between two levels.
    Checkerboard { cell: f64, low: f64, high: f64 },
}

impl Pattern {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Pattern::Uniform { level } => level,
            Pattern::SineGrating { fx, fy, phase, mean, contrast } => {
                mean + contrast * (2.0 * std::f64::consts::PI * (fx * x + fy * y) + phase).sin()
            }
            Pattern::Checkerboard { cell, low, high } => {
                let parity = ((x / cell).floor() + (y / cell).floor()) as i64;
                if parity.rem_euclid(2) == 0 {
                    high
                } else {
                    low
                }
            }
        }
    }
}

/// Rigid per-step motion of the pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    /// Constant translation in pixels per step.
    Translation { u: f64, v: f64 },
    /// Constant rotation in radians per step about `center`
    /// (defaults to the pixel-centered image middle).
    Rotation { omega: f64, center: Option<(f64, f64)> },
}

impl Motion {
    fn center_for(&self, width: usize, height: usize) -> (f64, f64) {
        match self {
            Motion::Rotation { center: Some(c), .. } => *c,
            _ => ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        }
    }

    /// Pattern coordinate seen at pixel `p` after `steps` steps of motion.
    fn inverse_warp(&self, p: (f64, f64), steps: f64, center: (f64, f64)) -> (f64, f64) {
        match *self {
            Motion::Translation { u, v } => (p.0 - steps * u, p.1 - steps * v),
            Motion::Rotation { omega, .. } => {
                let theta = -steps * omega;
                let (dx, dy) = (p.0 - center.0, p.1 - center.1);
                let (s, c) = theta.sin_cos();
                (center.0 + c * dx - s * dy, center.1 + s * dx + c * dy)
            }
        }
    }

    /// Exact displacement over `steps` steps of the point currently at `p`.
    pub fn displacement(&self, p: (f64, f64), steps: f64, center: (f64, f64)) -> (f64, f64) {
        match *self {
            Motion::Translation { u, v } => (steps * u, steps * v),
            Motion::Rotation { omega, .. } => {
                let theta = steps * omega;
                let (dx, dy) = (p.0 - center.0, p.1 - center.1);
                let (s, c) = theta.sin_cos();
                (c * dx - s * dy - dx, s * dx + c * dy - dy)
            }
        }
    }
}

/// A renderable synthetic scene.
///
/// `duration` counts rendered steps; `steps_per_count_interval` rendered
/// steps make up one downstream count interval of `count_interval_us`
/// microseconds. Keep per-step displacement under ~3 px relative to the
/// pattern's finest detail so the event stream stays informative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub pattern: Pattern,
    pub motion: Motion,
    pub duration: usize,
    pub steps_per_count_interval: usize,
    pub count_interval_us: u32,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidScene("zero sensor size".into()));
        }
        if self.duration < 1 {
            return Err(Error::InvalidScene("duration must be >= 1 step".into()));
        }
        if self.steps_per_count_interval == 0 {
            return Err(Error::InvalidScene("steps_per_count_interval must be >= 1".into()));
        }
        if self.count_interval_us == 0
            || self.count_interval_us as usize % self.steps_per_count_interval != 0
        {
            return Err(Error::InvalidScene(format!(
                "count interval {} µs not divisible into {} steps",
                self.count_interval_us, self.steps_per_count_interval
            )));
        }
        Ok(())
    }

    pub fn step_us(&self) -> u32 {
        self.count_interval_us / self.steps_per_count_interval as u32
    }

    pub fn center(&self) -> (f64, f64) {
        self.motion.center_for(self.width, self.height)
    }
}

/// A rendered intensity frame at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFrame {
    pub width: usize,
    pub height: usize,
    pub t_us: u32,
    pub data: Vec<f64>,
}

impl IntensityFrame {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Event-camera response model. `refractory` is the minimum gap in rendered
/// steps between signal events at one pixel (0 disables it); noise events
/// ignore the accumulator and the refractory window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraModel {
    pub theta_pos: f64,
    pub theta_neg: f64,
    #[serde(default)]
    pub refractory: u32,
    #[serde(default)]
    pub noise_rate: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        // Conventional DVS contrast thresholds.
        Self { theta_pos: 0.2, theta_neg: 0.2, refractory: 0, noise_rate: 0.0 }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.theta_pos <= 0.0 || self.theta_neg <= 0.0 {
            return Err(Error::Config(format!(
                "thresholds must be positive, got θ+ {} θ- {}",
                self.theta_pos, self.theta_neg
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!("noise_rate {} outside [0, 1]", self.noise_rate)));
        }
        Ok(())
    }
}

/// Render every step of a scene plus the exact flow field between each pair
/// of consecutive steps (`duration - 1` fields).
pub fn render_scene(scene: &Scene) -> Result<(Vec<IntensityFrame>, Vec<FlowField>)> {
    scene.validate()?;
    let center = scene.center();
    let mut frames = Vec::with_capacity(scene.duration);
    for k in 0..scene.duration {
        let mut data = Vec::with_capacity(scene.width * scene.height);
        for y in 0..scene.height {
            for x in 0..scene.width {
                let src = scene.motion.inverse_warp((x as f64, y as f64), k as f64, center);
                let value = scene.pattern.eval(src.0, src.1);
                if value <= 0.0 || !value.is_finite() {
                    return Err(Error::InvalidScene(format!(
                        "non-positive intensity {} at pixel ({}, {}) step {}",
                        value, x, y, k
                    )));
                }
                data.push(value);
            }
        }
        frames.push(IntensityFrame {
            width: scene.width,
            height: scene.height,
            t_us: k as u32 * scene.step_us(),
            data,
        });
    }
    let flows = (0..scene.duration.saturating_sub(1))
        .map(|k| ground_truth_flow(scene, k as f64, (k + 1) as f64))
        .collect();
    Ok((frames, flows))
}

/// Exact flow between two step instants (fractional steps allowed).
pub fn ground_truth_flow(scene: &Scene, from_step: f64, to_step: f64) -> FlowField {
    let center = scene.center();
    let mut field = FlowField::zero(scene.width, scene.height);
    for y in 0..scene.height {
        for x in 0..scene.width {
            let (dx, dy) =
                scene.motion.displacement((x as f64, y as f64), to_step - from_step, center);
            field.set(x, y, dx as f32, dy as f32, true);
        }
    }
    field
}

/// Emulate a DVS over rendered frames.
///
/// Each pixel keeps a reference log-intensity; every full `θ+` rise emits a
/// +1 event and advances the reference by `θ+` (multiple per step allowed),
/// and symmetrically for `θ-`. Timestamps are frame timestamps. Noise events
/// are Bernoulli(`noise_rate`) per pixel and step with random polarity.
/// Deterministic given (frames, cam, seed).
pub fn emit_events(frames: &[IntensityFrame], cam: &CameraModel, seed: u64) -> Result<EventStream> {
    cam.validate()?;
    if frames.len() < 2 {
        return Err(Error::InsufficientInput(format!(
            "event emission needs >= 2 frames, got {}",
            frames.len()
        )));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    for f in frames {
        if f.width != w || f.height != h {
            return Err(Error::InsufficientInput("frame sizes differ".into()));
        }
        if f.data.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::InvalidScene("non-positive intensity in frame".into()));
        }
    }

    let mut reference: Vec<f64> = frames[0].data.iter().map(|v| v.ln()).collect();
    let mut last_emit: Vec<Option<usize>> = vec![None; w * h];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();

    for (k, frame) in frames.iter().enumerate().skip(1) {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let allowed = match last_emit[i] {
                    Some(s) if cam.refractory > 0 => k - s >= cam.refractory as usize,
                    _ => true,
                };
                if !allowed {
                    continue;
                }
                let diff = frame.data[i].ln() - reference[i];
                let (polarity, theta) = if diff >= cam.theta_pos {
                    (1i8, cam.theta_pos)
                } else if diff <= -cam.theta_neg {
                    (-1i8, cam.theta_neg)
                } else {
                    continue;
                };
                let crossings = (diff.abs() / theta).floor() as usize;
                let count = if cam.refractory > 0 { 1 } else { crossings };
                for _ in 0..count {
                    events.push(EventRecord { t: frame.t_us, x: x as u16, y: y as u16, p: polarity });
                }
                reference[i] += polarity as f64 * theta * count as f64;
                last_emit[i] = Some(k);
            }
        }
        if cam.noise_rate > 0.0 {
            for y in 0..h {
                for x in 0..w {
                    if rng.gen_bool(cam.noise_rate) {
                        let p = if rng.gen_bool(0.5) { 1i8 } else { -1i8 };
                        events.push(EventRecord { t: frame.t_us, x: x as u16, y: y as u16, p });
                    }
                }
            }
        }
    }

    sort_events(&mut events);
    Ok(EventStream { width: w as u16, height: h as u16, events })
}
