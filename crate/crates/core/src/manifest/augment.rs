use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imaging::Image;

/// Label-preserving training augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Rotation angle drawn uniformly from `±rotation_deg`, reflect-padded.
    pub rotation_deg: f64,
    pub erase_prob: f64,
    /// Erased rectangle covers this fraction range of the image area.
    pub erase_area: (f64, f64),
    /// Additive shift drawn uniformly from `±intensity_shift` times the value range.
    pub intensity_shift: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            rotation_deg: 15.0,
            erase_prob: 0.25,
            erase_area: (0.02, 0.10),
            intensity_shift: 0.1,
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            rotation_deg: 0.0,
            erase_prob: 0.0,
            erase_area: (0.0, 0.0),
            intensity_shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.hflip_prob, self.vflip_prob, self.erase_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::Invalid(format!("probability {p} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.erase_area;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(CoreError::Invalid(format!("erase area range {lo}..{hi} is invalid")));
        }
        if self.rotation_deg < 0.0 || self.intensity_shift < 0.0 {
            return Err(CoreError::Invalid("rotation and shift magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

fn dims(img: &Image) -> (usize, usize, usize) {
    let s = img.shape();
    (s[0], s[1], s[2])
}

pub fn hflip(img: &Image) -> Image {
    let (_, _, w) = dims(img);
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

pub fn vflip(img: &Image) -> Image {
    let (_, h, w) = dims(img);
    let mut out = img.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        for y in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
    out
}

/// Mirror a continuous coordinate into `[0, n-1]`.
fn reflect_coord(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f64;
    let m = v.rem_euclid(period);
    if m > (n - 1) as f64 {
        period - m
    } else {
        m
    }
}

/// Rotate about the image center with bilinear sampling and reflected borders.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    let (c, h, w) = dims(img);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = img.data();
    let mut out = img.clone();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse mapping
            let sx = reflect_coord(cos * dx + sin * dy + cx, w);
            let sy = reflect_coord(-sin * dx + cos * dy + cy, h);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for ch in 0..c {
                let p = &src[ch * h * w..][..h * w];
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                dst[(ch * h + y) * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Apply the augmentation pipeline: flips, rotation, random erasing,
/// intensity shift, then clamp to `[-1, 1]`.
pub fn augment<R: Rng + ?Sized>(img: &Image, spec: &AugmentationSpec, rng: &mut R) -> Image {
    let (c, h, w) = dims(img);
    let mut out = img.clone();
    if spec.hflip_prob > 0.0 && rng.random::<f64>() < spec.hflip_prob {
        out = hflip(&out);
    }
    if spec.vflip_prob > 0.0 && rng.random::<f64>() < spec.vflip_prob {
        out = vflip(&out);
    }
    if spec.rotation_deg > 0.0 {
        let angle = rng.random_range(-spec.rotation_deg..=spec.rotation_deg);
        out = rotate(&out, angle);
    }
    if spec.erase_prob > 0.0 && rng.random::<f64>() < spec.erase_prob {
        let (lo, hi) = spec.erase_area;
        let area = rng.random_range(lo..=hi) * (h * w) as f64;
        let log_ratio = rng.random_range((0.3f64).ln()..=(3.3f64).ln());
        let ratio = log_ratio.exp();
        let eh = ((area * ratio).sqrt().round() as usize).clamp(1, h);
        let ew = ((area / ratio).sqrt().round() as usize).clamp(1, w);
        let top = rng.random_range(0..=h - eh);
        let left = rng.random_range(0..=w - ew);
        let data = out.data_mut();
        for ch in 0..c {
            let plane = &mut data[ch * h * w..][..h * w];
            let mean = plane.iter().sum::<f32>() / (h * w) as f32;
            for y in top..top + eh {
                plane[y * w + left..y * w + left + ew].fill(mean);
            }
        }
    }
    if spec.intensity_shift > 0.0 {
        // value range [-1, 1] has width 2
        let delta = (rng.random_range(-spec.intensity_shift..=spec.intensity_shift) * 2.0) as f32;
        out.data_mut().iter_mut().for_each(|v| *v += delta);
    }
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    out
}
