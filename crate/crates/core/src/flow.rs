//! Dense optical-flow fields with validity masks.

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-pixel (u, v) displacement in pixels, plus a validity mask. Invalid
/// pixels are excluded from every loss and metric.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(Error::Shape {
                op: "FlowField::new",
                details: format!(
                    "{}x{} needs {} entries, got u {} v {} valid {}",
                    width,
                    height,
                    n,
                    u.len(),
                    v.len(),
                    valid.len()
                ),
            });
        }
        Ok(Self { width, height, u, v, valid })
    }

    /// All-valid constant field.
    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        let n = width * height;
        Self { width, height, u: vec![u; n], v: vec![v; n], valid: vec![true; n] }
    }

    pub fn zero(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn u_mut(&mut self) -> &mut [f32] {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut [f32] {
        &mut self.v
    }

    pub fn valid_mut(&mut self) -> &mut [bool] {
        &mut self.valid
    }

    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32, valid: bool) {
        let i = self.idx(x, y);
        self.u[i] = u;
        self.v[i] = v;
        self.valid[i] = valid;
    }

    /// (1, 2, H, W) tensor with zeros at invalid pixels, so losses stay
    /// finite; exclusion is the mask's job.
    pub fn to_tensor<E: Scalar>(&self) -> Tensor<E> {
        let n = self.width * self.height;
        let mut data = Vec::with_capacity(2 * n);
        for i in 0..n {
            data.push(E::of_f64(if self.valid[i] { self.u[i] as f64 } else { 0.0 }));
        }
        for i in 0..n {
            data.push(E::of_f64(if self.valid[i] { self.v[i] as f64 } else { 0.0 }));
        }
        Tensor::new(vec![1, 2, self.height, self.width], data).expect("consistent size")
    }

    /// (1, 1, H, W) {0, 1} mask tensor over valid pixels.
    pub fn valid_mask_tensor<E: Scalar>(&self) -> Tensor<E> {
        let data = self.valid.iter().map(|&m| if m { E::one() } else { E::zero() }).collect();
        Tensor::new(vec![1, 1, self.height, self.width], data).expect("consistent size")
    }

    /// Read a (1, 2, H, W) prediction tensor back into a flow field.
    pub fn from_tensor<E: Scalar>(t: &Tensor<E>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 2 {
            return Err(Error::Shape {
                op: "FlowField::from_tensor",
                details: format!("expected [1, 2, H, W], got {:?}", s),
            });
        }
        let (h, w) = (s[2], s[3]);
        let n = h * w;
        let d = t.data();
        let u = d[..n].iter().map(|e| e.to_f64_val() as f32).collect();
        let v = d[n..2 * n].iter().map(|e| e.to_f64_val() as f32).collect();
        Ok(Self { width: w, height: h, u, v, valid: vec![true; n] })
    }

    /// Mean magnitude over valid pixels.
    pub fn mean_magnitude(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..self.u.len() {
            if self.valid[i] {
                total += ((self.u[i] as f64).powi(2) + (self.v[i] as f64).powi(2)).sqrt();
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    pub fn flip_horizontal(&mut self) {
        for y in 0..self.height {
            let row = y * self.width;
            self.u[row..row + self.width].reverse();
            self.v[row..row + self.width].reverse();
            self.valid[row..row + self.width].reverse();
        }
        for u in &mut self.u {
            *u = -*u;
        }
    }

    pub fn flip_vertical(&mut self) {
        for x in 0..self.width {
            let mut lo = 0;
            let mut hi = self.height - 1;
            while lo < hi {
                let (a, b) = (lo * self.width + x, hi * self.width + x);
                self.u.swap(a, b);
                self.v.swap(a, b);
                self.valid.swap(a, b);
                lo += 1;
                hi -= 1;
            }
        }
        for v in &mut self.v {
            *v = -*v;
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height || h == 0 || w == 0 {
            return Err(Error::InvalidCrop(format!(
                "crop ({}, {}, {}, {}) outside {}x{}",
                y0, x0, h, w, self.width, self.height
            )));
        }
        let mut out = FlowField::zero(w, h);
        for y in 0..h {
            for x in 0..w {
                let src = (y0 + y) * self.width + (x0 + x);
                let dst = y * w + x;
                out.u[dst] = self.u[src];
                out.v[dst] = self.v[src];
                out.valid[dst] = self.valid[src];
            }
        }
        Ok(out)
    }
}
