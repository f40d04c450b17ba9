//! Color-wheel rendering of flow fields (hue = direction, saturation =
//! magnitude). Invalid pixels render black.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::flow::FlowField;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// Render a flow field. `max_magnitude` fixes the saturation scale; `None`
/// normalizes to the field's own maximum.
pub fn flow_to_image(flow: &FlowField, max_magnitude: Option<f64>) -> RgbImage {
    let (w, h) = (flow.width(), flow.height());
    let max_mag = max_magnitude.unwrap_or_else(|| {
        (0..w * h)
            .filter(|&i| flow.valid()[i])
            .map(|i| ((flow.u()[i] as f64).powi(2) + (flow.v()[i] as f64).powi(2)).sqrt())
            .fold(0.0, f64::max)
    });
    let scale = if max_mag > 0.0 { max_mag } else { 1.0 };
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = if flow.valid()[i] {
                let (u, v) = (flow.u()[i] as f64, flow.v()[i] as f64);
                let mag = (u * u + v * v).sqrt();
                let hue = v.atan2(u).to_degrees();
                hsv_to_rgb(hue, (mag / scale).min(1.0), 1.0)
            } else {
                [0, 0, 0]
            };
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

pub fn write_flow_png(flow: &FlowField, path: &Path, max_magnitude: Option<f64>) -> Result<()> {
    flow_to_image(flow, max_magnitude)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| crate::error::Error::Format(format!("png: {}", e)))
}
