//! Continuous-stream evaluation and multiply-operation accounting.
//!
//! Predictions happen at every count; accuracy is measured only at the
//! ground-truth instants, over pixels that saw at least one event in the
//! last [`ACTIVE_WINDOW`] counts and have valid ground truth. Multiply
//! counting distinguishes the dense cost of a layer from the effective cost
//! once multiplies with an exactly-zero input operand are skipped.

use serde::Serialize;

use crate::autodiff::{Scalar, Tape, Tensor};
use crate::encoding::{normalize_counts, CountFrame};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::layers::ConvSpec;
use crate::model::{BoundLayer, Network};

/// Number of most recent count frames consulted by the activity mask.
pub const ACTIVE_WINDOW: usize = 10;

/// Largest k for which kPE is reported.
pub const KPE_MAX: usize = 5;

/// Pixels with at least one event across `recent` (both polarities) and
/// valid ground truth. Fewer than [`ACTIVE_WINDOW`] frames means the stream
/// just started; use whatever is available.
pub fn active_mask(recent: &[CountFrame], gt: &FlowField) -> Vec<bool> {
    let (w, h) = (gt.width(), gt.height());
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            mask[i] = gt.valid()[i] && recent.iter().any(|f| f.at_pixel(x, y) > 0);
        }
    }
    mask
}

fn endpoint_error(pred: &FlowField, gt: &FlowField, i: usize) -> f64 {
    let du = pred.u()[i] as f64 - gt.u()[i] as f64;
    let dv = pred.v()[i] as f64 - gt.v()[i] as f64;
    (du * du + dv * dv).sqrt()
}

/// Mean endpoint error over masked pixels.
pub fn aee(pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..mask.len() {
        if mask[i] {
            total += endpoint_error(pred, gt, i);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoEvaluatedPixels);
    }
    Ok(total / count as f64)
}

/// Percentage of masked pixels with endpoint error strictly greater than k.
pub fn kpe(pred: &FlowField, gt: &FlowField, mask: &[bool], k: usize) -> Result<f64> {
    let (over, count) = kpe_counts(pred, gt, mask, k);
    if count == 0 {
        return Err(Error::NoEvaluatedPixels);
    }
    Ok(100.0 * over as f64 / count as f64)
}

fn kpe_counts(pred: &FlowField, gt: &FlowField, mask: &[bool], k: usize) -> (usize, usize) {
    let mut over = 0usize;
    let mut count = 0usize;
    for i in 0..mask.len() {
        if mask[i] {
            count += 1;
            if endpoint_error(pred, gt, i) > k as f64 {
                over += 1;
            }
        }
    }
    (over, count)
}

/// Accuracy at one ground-truth instant.
#[derive(Debug, Clone, Serialize)]
pub struct GtEval {
    pub gt_index: usize,
    /// Count index of the prediction that was compared.
    pub count_index: usize,
    pub aee: f64,
    /// kPE for k = 1..=KPE_MAX.
    pub kpe: Vec<f64>,
    pub pixels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Mean endpoint error, weighted by evaluated pixels per instant.
    pub aee: f64,
    /// Aggregate kPE for k = 1..=KPE_MAX over all evaluated pixels.
    pub kpe: Vec<f64>,
    pub per_gt: Vec<GtEval>,
    pub evaluated_pixels: usize,
    /// Ground-truth instants whose activity mask selected zero pixels.
    pub skipped_empty: usize,
}

/// Configuration for continuous evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    /// Counts per ground-truth instant.
    pub m: usize,
    /// Count normalization cap (must match training).
    pub count_cap: u32,
}

/// Run the network over the whole stream once, with no reset, and score the
/// predictions at every ground-truth instant. Also returns the predicted
/// flow fields at those instants.
pub fn evaluate_stream<E: Scalar>(
    net: &Network<E>,
    counts: &[CountFrame],
    gts: &[FlowField],
    cfg: EvalConfig,
) -> Result<(EvalReport, Vec<FlowField>)> {
    if gts.is_empty() {
        return Err(Error::Alignment("no ground truths".into()));
    }
    if cfg.m == 0 || counts.len() < cfg.m * gts.len() {
        return Err(Error::Alignment(format!(
            "{} counts cannot cover {} ground truths every {} counts",
            counts.len(),
            gts.len(),
            cfg.m
        )));
    }
    let first = &counts[0];
    let mut states = net.zero_states(1, first.height(), first.width())?;
    let frames: Vec<Tensor<E>> = counts.iter().map(|f| normalize_counts(f, cfg.count_cap)).collect();
    let flows = net.run_stream(&frames, &mut states)?;

    let mut per_gt = Vec::with_capacity(gts.len());
    let mut predictions = Vec::with_capacity(gts.len());
    let mut total_err = 0.0;
    let mut total_pixels = 0usize;
    let mut over = vec![0usize; KPE_MAX];
    let mut skipped = 0usize;
    for (j, gt) in gts.iter().enumerate() {
        let count_index = (j + 1) * cfg.m - 1;
        let pred = FlowField::from_tensor(&flows[count_index])?;
        let lo = count_index + 1 - ACTIVE_WINDOW.min(count_index + 1);
        let mask = active_mask(&counts[lo..=count_index], gt);
        match aee(&pred, gt, &mask) {
            Ok(value) => {
                let pixels = mask.iter().filter(|&&m| m).count();
                let mut ks = Vec::with_capacity(KPE_MAX);
                for k in 1..=KPE_MAX {
                    let (o, _) = kpe_counts(&pred, gt, &mask, k);
                    over[k - 1] += o;
                    ks.push(100.0 * o as f64 / pixels as f64);
                }
                total_err += value * pixels as f64;
                total_pixels += pixels;
                per_gt.push(GtEval { gt_index: j, count_index, aee: value, kpe: ks, pixels });
            }
            Err(Error::NoEvaluatedPixels) => skipped += 1,
            Err(e) => return Err(e),
        }
        predictions.push(pred);
    }
    if total_pixels == 0 {
        return Err(Error::NoEvaluatedPixels);
    }
    let report = EvalReport {
        aee: total_err / total_pixels as f64,
        kpe: over.iter().map(|&o| 100.0 * o as f64 / total_pixels as f64).collect(),
        per_gt,
        evaluated_pixels: total_pixels,
        skipped_empty: skipped,
    };
    Ok((report, predictions))
}

/// Write per-instant rows plus an aggregate row.
pub fn eval_report_csv<W: std::io::Write>(report: &EvalReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["gt_index".to_string(), "count_index".into(), "aee".into(), "pixels".into()];
    for k in 1..=KPE_MAX {
        header.push(format!("{}pe", k));
    }
    w.write_record(&header).map_err(csv_err)?;
    for g in &report.per_gt {
        let mut row = vec![
            g.gt_index.to_string(),
            g.count_index.to_string(),
            format!("{:.6}", g.aee),
            g.pixels.to_string(),
        ];
        for v in &g.kpe {
            row.push(format!("{:.3}", v));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let mut total = vec![
        "all".to_string(),
        String::new(),
        format!("{:.6}", report.aee),
        report.evaluated_pixels.to_string(),
    ];
    for v in &report.kpe {
        total.push(format!("{:.3}", v));
    }
    w.write_record(&total).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {}", e))
}

/// Multiply counts for one layer, accumulated over a stream.
#[derive(Debug, Clone, Serialize)]
pub struct LayerOpCount {
    pub name: String,
    pub kind: String,
    /// All multiplies, counting padding taps of ordinary convolutions.
    pub dense: u64,
    /// Multiplies whose input operand was nonzero; recurrent-path and
    /// elementwise multiplies are carried over unchanged.
    pub effective: u64,
    /// Mean nonzero fraction of this layer's input elements per step.
    pub input_nonzero_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OpCountReport {
    pub steps: usize,
    pub layers: Vec<LayerOpCount>,
    pub dense_total: u64,
    pub effective_total: u64,
    /// effective_total / reference dense_total, when a reference was given.
    pub ratio_vs_reference: Option<f64>,
    /// Recurrent-path multiplies are always counted dense.
    pub note: String,
}

impl OpCountReport {
    /// Table-style normalization against a reference network's dense cost.
    pub fn normalize_against(&mut self, reference: &OpCountReport) {
        self.ratio_vs_reference = Some(self.effective_total as f64 / reference.dense_total as f64);
    }
}

/// Number of multiplies a single input element at 1-d position `i`
/// participates in, per (in-channel, out-channel) kernel pair.
fn taps_1d(i: usize, out_len: usize, k: usize, stride: usize, pad: usize, transpose: bool) -> u64 {
    let mut taps = 0u64;
    for kk in 0..k {
        if transpose {
            // Scatter target o = i*stride + kk - pad must land in bounds.
            let o = i * stride + kk;
            if o >= pad && o - pad < out_len {
                taps += 1;
            }
        } else {
            // Gather: o*stride + kk - pad == i for some in-range o.
            if i + pad >= kk {
                let num = i + pad - kk;
                if num % stride == 0 && num / stride < out_len {
                    taps += 1;
                }
            }
        }
    }
    taps
}

/// Per-row and per-column multiply multiplicities over a (H, W) input plane.
fn multiplicity_map(spec: &ConvSpec, in_spatial: (usize, usize)) -> (Vec<u64>, Vec<u64>) {
    let (oh, ow) = spec.out_spatial(in_spatial);
    let rows = (0..in_spatial.0)
        .map(|i| taps_1d(i, oh, spec.kernel, spec.stride, spec.pad, spec.transpose))
        .collect();
    let cols = (0..in_spatial.1)
        .map(|i| taps_1d(i, ow, spec.kernel, spec.stride, spec.pad, spec.transpose))
        .collect();
    (rows, cols)
}

/// Count multiplies of one conv application. `None` selects the dense
/// count; a tensor selects the effective count over its nonzero elements.
fn conv_mults<E: Scalar>(spec: &ConvSpec, in_spatial: (usize, usize), x: Option<&Tensor<E>>) -> u64 {
    match x {
        None if !spec.transpose => {
            // Dense gather form: every output element takes k*k*in_ch taps.
            let (oh, ow) = spec.out_spatial(in_spatial);
            (spec.kernel * spec.kernel * spec.in_ch * spec.out_ch * oh * ow) as u64
        }
        None => {
            // Dense scatter form: in-bounds taps of every input element.
            let (rows, cols) = multiplicity_map(spec, in_spatial);
            let per_plane: u64 = rows.iter().map(|r| cols.iter().map(|c| r * c).sum::<u64>()).sum();
            per_plane * (spec.in_ch * spec.out_ch) as u64
        }
        Some(x) => {
            let (rows, cols) = multiplicity_map(spec, in_spatial);
            let (h, w) = in_spatial;
            let mut total = 0u64;
            for c in 0..spec.in_ch {
                for r in 0..h {
                    let base = (c * h + r) * w;
                    let rt = rows[r];
                    for col in 0..w {
                        if x.data()[base + col] != E::zero() {
                            total += rt * cols[col];
                        }
                    }
                }
            }
            total * spec.out_ch as u64
        }
    }
}

fn nonzero_fraction<E: Scalar>(x: &Tensor<E>) -> f64 {
    let nz = x.data().iter().filter(|&&v| v != E::zero()).count();
    nz as f64 / x.numel().max(1) as f64
}

/// Count dense and effective multiplies of a full forward pass over a count
/// stream. Input-path convolutions skip multiplies whose input operand is
/// exactly zero; hidden-path (recurrent) convolutions are counted dense;
/// elementwise gate multiplies count one per element.
pub fn count_mult_ops<E: Scalar>(
    net: &Network<E>,
    counts: &[CountFrame],
    count_cap: u32,
) -> Result<OpCountReport> {
    if counts.is_empty() {
        return Err(Error::EmptyOutput("op counting needs at least one frame".into()));
    }
    let (h, w) = (counts[0].height(), counts[0].width());
    let levels = net.config.levels();

    let mut names: Vec<String> =
        (0..net.layers.len()).map(|i| Network::<E>::layer_name(i, levels)).collect();
    names.push("head".into());
    let mut kinds: Vec<String> = net.layers.iter().map(|l| format!("{:?}", l.kind())).collect();
    kinds.push("Conv".into());
    let mut dense = vec![0u64; names.len()];
    let mut effective = vec![0u64; names.len()];
    let mut nz_accum = vec![0f64; names.len()];

    let mut carried = net.zero_states(1, h, w)?;
    for frame in counts {
        // Fresh tape per step keeps memory flat; states carry over as values.
        let mut tape: Tape<E> = Tape::new();
        let bound = net.bind(&mut tape, false);
        let states: Vec<_> = carried.iter().map(|s| s.map(|t| tape.constant(t.clone()))).collect();
        let x = tape.constant(normalize_counts(frame, count_cap));
        let (_, new_states, trace) = bound.step_on_tape(&mut tape, x, &states)?;
        carried = new_states.iter().map(|s| s.map(|v| tape.value(*v).clone())).collect();

        for (idx, (layer, input)) in bound.layers.iter().zip(&trace.layer_inputs).enumerate() {
            let xin = tape.value(*input);
            let spatial = (xin.shape()[2], xin.shape()[3]);
            let spec = layer.spec();
            let out_spatial = spec.out_spatial(spatial);
            let state_elems = (spec.out_ch * out_spatial.0 * out_spatial.1) as u64;
            let (n_input_convs, hidden_dense, elementwise) = match layer {
                BoundLayer::Lstm(_) => {
                    let hspec = spec.hidden_spec();
                    (4u64, 4 * conv_mults::<E>(&hspec, out_spatial, None), 3 * state_elems)
                }
                BoundLayer::Spiking(_) => (3u64, 0, 2 * state_elems),
                BoundLayer::Conv(_) => (1u64, 0, 0),
            };
            let dense_conv = conv_mults::<E>(spec, spatial, None);
            let eff_conv = conv_mults(spec, spatial, Some(xin));
            dense[idx] += n_input_convs * dense_conv + hidden_dense + elementwise;
            effective[idx] += n_input_convs * eff_conv + hidden_dense + elementwise;
            nz_accum[idx] += nonzero_fraction(xin);
        }

        let head_in = tape.value(trace.head_input);
        let head_spec = ConvSpec {
            in_ch: head_in.shape()[1],
            out_ch: net.config.output_channels,
            kernel: 1,
            stride: 1,
            pad: 0,
            transpose: false,
        };
        let head_spatial = (head_in.shape()[2], head_in.shape()[3]);
        let hi = names.len() - 1;
        dense[hi] += conv_mults::<E>(&head_spec, head_spatial, None);
        effective[hi] += conv_mults(&head_spec, head_spatial, Some(head_in));
        nz_accum[hi] += nonzero_fraction(head_in);
    }

    let steps = counts.len();
    let layers: Vec<LayerOpCount> = names
        .iter()
        .zip(kinds)
        .zip(dense.iter().zip(&effective))
        .zip(&nz_accum)
        .map(|(((name, kind), (d, e)), nz)| LayerOpCount {
            name: name.clone(),
            kind,
            dense: *d,
            effective: *e,
            input_nonzero_fraction: nz / steps as f64,
        })
        .collect();
    Ok(OpCountReport {
        steps,
        dense_total: dense.iter().sum(),
        effective_total: effective.iter().sum(),
        layers,
        ratio_vs_reference: None,
        note: "recurrent-path multiplies counted dense".into(),
    })
}

/// Write one row per layer plus a totals row.
pub fn op_report_csv<W: std::io::Write>(report: &OpCountReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "kind", "dense", "effective", "input_nonzero_fraction"])
        .map_err(csv_err)?;
    for l in &report.layers {
        w.write_record([
            l.name.as_str(),
            l.kind.as_str(),
            &l.dense.to_string(),
            &l.effective.to_string(),
            &format!("{:.6}", l.input_nonzero_fraction),
        ])
        .map_err(csv_err)?;
    }
    w.write_record([
        "total",
        "",
        &report.dense_total.to_string(),
        &report.effective_total.to_string(),
        "",
    ])
    .map_err(csv_err)?;
    w.flush()?;
    Ok(())
}
