use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::manifest::{CellClass, ClassLabel, DatasetManifest, Domain, FlowerClass, ImageRecord, NUM_CLASSES};
use crate::seeding::derive_seed;

/// Color-separable stand-ins for both domains: class `k` is drawn with hue
/// `k/7` of the color wheel, as a disk (cells) or a petal rosette (flowers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDomainSpec {
    pub per_class: usize,
    pub image_size: usize,
    /// Standard deviation of additive pixel noise, in `[0, 1]` intensity units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticDomainSpec {
    fn default() -> Self {
        Self {
            per_class: 200,
            image_size: 32,
            noise_sigma: 0.03,
            seed: 0,
        }
    }
}

impl SyntheticDomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(CoreError::Invalid(format!("image size {} below 16", self.image_size)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(CoreError::Invalid(format!("invalid noise sigma {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Fully saturated-ish RGB for a hue in `[0, 1)`.
pub fn class_color(class: usize) -> [f64; 3] {
    hsv_to_rgb(class as f64 / NUM_CLASSES as f64, 0.85, 0.9)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

const CELL_BACKGROUND: [f64; 3] = [0.82, 0.80, 0.84];
const FLOWER_BACKGROUND: [f64; 3] = [0.25, 0.42, 0.22];
const FLOWER_CENTER: [f64; 3] = [0.95, 0.85, 0.25];

fn render(size: usize, noise: f64, rng: &mut ChaCha8Rng, color_at: impl Fn(f64, f64) -> [f64; 3]) -> RgbImage {
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let c = color_at(x as f64 + 0.5, y as f64 + 0.5);
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let n = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
                px[ch] = ((c[ch] + n).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

/// A filled disk of the class color on a pale background.
pub fn render_cell(class: usize, size: usize, noise: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let s = size as f64;
    let (cx, cy) = (s / 2.0 + rng.random_range(-0.1..0.1) * s, s / 2.0 + rng.random_range(-0.1..0.1) * s);
    let r = s * rng.random_range(0.25..0.34);
    let fg = class_color(class);
    render(size, noise, rng, |x, y| {
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        let t = (r - d + 0.5).clamp(0.0, 1.0);
        std::array::from_fn(|i| t * fg[i] + (1.0 - t) * CELL_BACKGROUND[i])
    })
}

/// A rosette of petals in the class color around a yellow center on green.
pub fn render_flower(class: usize, size: usize, noise: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let s = size as f64;
    let (cx, cy) = (s / 2.0 + rng.random_range(-0.06..0.06) * s, s / 2.0 + rng.random_range(-0.06..0.06) * s);
    let petals = rng.random_range(5..=8) as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let outer = s * rng.random_range(0.36..0.45);
    let inner = s * 0.1;
    let fg = class_color(class);
    render(size, noise, rng, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        let d = (dx * dx + dy * dy).sqrt();
        if d <= inner {
            return FLOWER_CENTER;
        }
        let theta = dy.atan2(dx) + phase;
        let reach = outer * (0.35 + 0.65 * (0.5 * petals * theta).cos().abs());
        if d <= reach {
            fg
        } else {
            FLOWER_BACKGROUND
        }
    })
}

/// Render both fixture domains under `root/<domain>/<class>/<id>.png` and
/// return their manifests (unsplit).
pub fn generate_synthetic_domains(spec: &SyntheticDomainSpec, root: &Path) -> Result<(DatasetManifest, DatasetManifest)> {
    spec.validate()?;
    let mut cells = Vec::with_capacity(NUM_CLASSES * spec.per_class);
    let mut flowers = Vec::with_capacity(NUM_CLASSES * spec.per_class);
    for k in 0..NUM_CLASSES {
        let (cell, flower) = (CellClass::ALL[k], FlowerClass::ALL[k]);
        for i in 0..spec.per_class {
            let id = format!("{}_{i:05}", cell.name());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("synthetic.cell.{id}")));
            let path = root.join("cell").join(cell.name()).join(format!("{id}.png"));
            write_png(&path, &render_cell(k, spec.image_size, spec.noise_sigma, &mut rng))?;
            cells.push(ImageRecord::new(id, path, ClassLabel::Cell(cell)));

            let id = format!("{}_{i:05}", flower.name());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("synthetic.flower.{id}")));
            let path = root.join("flower").join(flower.name()).join(format!("{id}.png"));
            write_png(&path, &render_flower(k, spec.image_size, spec.noise_sigma, &mut rng))?;
            flowers.push(ImageRecord::new(id, path, ClassLabel::Flower(flower)));
        }
    }
    Ok((
        DatasetManifest::new(Domain::Cell, spec.seed, cells)?,
        DatasetManifest::new(Domain::Flower, spec.seed, flowers)?,
    ))
}

fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    crate::imaging::save_rgb8(path, img)
}
