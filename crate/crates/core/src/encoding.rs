//! Per-interval event-count encoding and training-sequence assembly.

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::events::{first_unsorted, EventRecord};
use crate::flow::FlowField;

/// Per-pixel, per-polarity event counts over one interval ending at `t_end`.
/// Channel 0 holds positive events, channel 1 negative events; layout is
/// channel-major like the (2, H, W) input tensor it turns into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountFrame {
    width: usize,
    height: usize,
    pub t_end: u32,
    data: Vec<u32>,
}

impl CountFrame {
    pub fn zeros(width: usize, height: usize, t_end: u32) -> Self {
        Self { width, height, t_end, data: vec![0; 2 * width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn idx(&self, channel: usize, x: usize, y: usize) -> usize {
        (channel * self.height + y) * self.width + x
    }

    pub fn get(&self, channel: usize, x: usize, y: usize) -> u32 {
        self.data[self.idx(channel, x, y)]
    }

    pub fn counts(&self) -> &[u32] {
        &self.data
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&c| c as u64).sum()
    }

    /// Events at the pixel across both polarities.
    pub fn at_pixel(&self, x: usize, y: usize) -> u32 {
        self.get(0, x, y) + self.get(1, x, y)
    }

    pub fn bump(&mut self, channel: usize, x: usize, y: usize) {
        let i = self.idx(channel, x, y);
        self.data[i] += 1;
    }

    pub fn flip_horizontal(&mut self) {
        for c in 0..2 {
            for y in 0..self.height {
                let row = (c * self.height + y) * self.width;
                self.data[row..row + self.width].reverse();
            }
        }
    }

    pub fn flip_vertical(&mut self) {
        for c in 0..2 {
            let chan = c * self.height * self.width;
            let (mut lo, mut hi) = (0, self.height - 1);
            while lo < hi {
                for x in 0..self.width {
                    self.data.swap(chan + lo * self.width + x, chan + hi * self.width + x);
                }
                lo += 1;
                hi -= 1;
            }
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height || h == 0 || w == 0 {
            return Err(Error::InvalidCrop(format!(
                "crop ({}, {}, {}, {}) outside {}x{}",
                y0, x0, h, w, self.width, self.height
            )));
        }
        let mut out = CountFrame::zeros(w, h, self.t_end);
        for c in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let i = out.idx(c, x, y);
                    out.data[i] = self.get(c, x0 + x, y0 + y);
                }
            }
        }
        Ok(out)
    }
}

/// Record of the augmentation applied uniformly to one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentRecord {
    pub flip_h: bool,
    pub flip_v: bool,
    /// (y0, x0, h, w) crop window in original coordinates.
    pub crop: Option<(usize, usize, usize, usize)>,
}

/// `l` prefix counts, `m*n` window counts, and `n` targets aligned to window
/// offsets m, 2m, ..., n*m. One augmentation record covers every member.
#[derive(Debug, Clone)]
pub struct TrainingSequence {
    pub prefix: Vec<CountFrame>,
    pub window: Vec<CountFrame>,
    pub targets: Vec<FlowField>,
    pub augmentation: AugmentRecord,
    /// Count index (0-based) of the first window frame in the source stream.
    pub start_count: usize,
}

/// Aggregate a sorted event stream into count frames.
///
/// Frame `k` covers `(k*interval, (k+1)*interval]` microseconds; events at
/// t = 0 are counted in frame 0. Frames run through the last event; use
/// [`count_events_span`] to cover a longer span with trailing zero frames.
pub fn count_events(
    events: &[EventRecord],
    interval_us: u32,
    sensor: (usize, usize),
) -> Result<Vec<CountFrame>> {
    count_events_span(events, interval_us, sensor, 0)
}

/// Like [`count_events`] but guarantees coverage of `span_us` microseconds.
pub fn count_events_span(
    events: &[EventRecord],
    interval_us: u32,
    sensor: (usize, usize),
    span_us: u32,
) -> Result<Vec<CountFrame>> {
    if interval_us == 0 {
        return Err(Error::Config("count interval must be positive".into()));
    }
    if let Some(i) = first_unsorted(events) {
        return Err(Error::UnsortedStream(i));
    }
    let (w, h) = sensor;
    let bucket_of = |t: u32| -> usize {
        if t == 0 {
            0
        } else {
            (t as usize).div_ceil(interval_us as usize) - 1
        }
    };
    let mut n_frames = (span_us as usize).div_ceil(interval_us as usize);
    if let Some(last) = events.last() {
        n_frames = n_frames.max(bucket_of(last.t) + 1);
    }
    let mut frames: Vec<CountFrame> = (0..n_frames)
        .map(|k| CountFrame::zeros(w, h, (k as u32 + 1) * interval_us))
        .collect();
    for e in events {
        if (e.x as usize) >= w || (e.y as usize) >= h {
            return Err(Error::Config(format!(
                "event at ({}, {}) outside sensor {}x{}",
                e.x, e.y, w, h
            )));
        }
        let channel = if e.p > 0 { 0 } else { 1 };
        frames[bucket_of(e.t)].bump(channel, e.x as usize, e.y as usize);
    }
    Ok(frames)
}

/// Clip counts at `cap` and scale to [0, 1]; the network input tensor.
pub fn normalize_counts<E: Scalar>(frame: &CountFrame, cap: u32) -> Tensor<E> {
    debug_assert!(cap >= 1, "cap must be >= 1");
    let inv = 1.0 / cap as f64;
    let data = frame
        .data
        .iter()
        .map(|&c| E::of_f64((c.min(cap) as f64) * inv))
        .collect();
    Tensor::new(vec![1, 2, frame.height, frame.width], data).expect("consistent size")
}

/// Assemble prefix-augmented training sequences.
///
/// `gts[j]` must be the ground truth after count `(j+1)*m` (1-based counts).
/// Each sequence takes `l` prefix counts (zero-padded before the stream
/// start), then `m*n` window counts with the `n` ground truths at window
/// offsets m, 2m, ..., n*m. Consecutive sequences advance by `stride*m`
/// counts. A stream shorter than one window yields zero sequences.
pub fn build_sequences(
    counts: &[CountFrame],
    gts: &[FlowField],
    m: usize,
    n: usize,
    l: usize,
    stride: usize,
) -> Result<Vec<TrainingSequence>> {
    if m < 1 || n < 1 || stride < 1 {
        return Err(Error::Config(format!("m {}, n {}, stride {} must all be >= 1", m, n, stride)));
    }
    let (w, h) = match counts.first() {
        Some(f) => (f.width(), f.height()),
        None => return Ok(Vec::new()),
    };
    let mut sequences = Vec::new();
    let mut start = 0usize;
    loop {
        let gt_base = start / m;
        if start + m * n > counts.len() || gt_base + n > gts.len() {
            break;
        }
        let prefix = (0..l)
            .map(|i| {
                let idx = start as isize - l as isize + i as isize;
                if idx < 0 {
                    CountFrame::zeros(w, h, 0)
                } else {
                    counts[idx as usize].clone()
                }
            })
            .collect();
        let window = counts[start..start + m * n].to_vec();
        let targets = gts[gt_base..gt_base + n].to_vec();
        sequences.push(TrainingSequence {
            prefix,
            window,
            targets,
            augmentation: AugmentRecord::default(),
            start_count: start,
        });
        start += stride * m;
    }
    Ok(sequences)
}

/// Flip/crop every frame and target of a sequence identically. Horizontal
/// flips negate the u channel of targets, vertical flips negate v. The crop
/// is applied first, in original coordinates.
pub fn augment(
    seq: &TrainingSequence,
    flip_h: bool,
    flip_v: bool,
    crop: Option<(usize, usize, usize, usize)>,
) -> Result<TrainingSequence> {
    let transform_frame = |f: &CountFrame| -> Result<CountFrame> {
        let mut out = match crop {
            Some((y0, x0, h, w)) => f.crop(y0, x0, h, w)?,
            None => f.clone(),
        };
        if flip_h {
            out.flip_horizontal();
        }
        if flip_v {
            out.flip_vertical();
        }
        Ok(out)
    };
    let transform_target = |t: &FlowField| -> Result<FlowField> {
        let mut out = match crop {
            Some((y0, x0, h, w)) => t.crop(y0, x0, h, w)?,
            None => t.clone(),
        };
        if flip_h {
            out.flip_horizontal();
        }
        if flip_v {
            out.flip_vertical();
        }
        Ok(out)
    };
    Ok(TrainingSequence {
        prefix: seq.prefix.iter().map(&transform_frame).collect::<Result<_>>()?,
        window: seq.window.iter().map(&transform_frame).collect::<Result<_>>()?,
        targets: seq.targets.iter().map(&transform_target).collect::<Result<_>>()?,
        augmentation: AugmentRecord { flip_h, flip_v, crop },
        start_count: seq.start_count,
    })
}
