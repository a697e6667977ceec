//! 8-bit RGB files <-> `[3, h, w]` float tensors in `[-1, 1]`.

use std::path::{Path, PathBuf};

use cellbloom_nn::Tensor;
use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};

use crate::error::{CoreError, IoContext, Result};

/// Channel-first RGB image with values in `[-1, 1]`.
pub type Image = Tensor<f32>;

pub fn from_rgb(img: &RgbImage) -> Image {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("shape")
}

pub fn to_rgb(img: &Image) -> RgbImage {
    let shape = img.shape();
    assert!(shape.len() == 3 && shape[0] == 3, "expected [3, h, w], got {shape:?}");
    let (h, w) = (shape[1], shape[2]);
    let d = img.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            let v = d[(c * h + y as usize) * w + x as usize];
            ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| CoreError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_rgb8(path: &Path) -> Result<RgbImage> {
    Ok(open(path)?.to_rgb8())
}

/// Load an image; when `size` is given and differs, center-crop to a square
/// and resize to `size × size`.
pub fn load_image(path: &Path, size: Option<usize>) -> Result<Image> {
    let mut img = load_rgb8(path)?;
    if let Some(s) = size {
        let (w, h) = img.dimensions();
        if (w as usize, h as usize) != (s, s) {
            let side = w.min(h);
            let cropped = image::imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side).to_image();
            img = image::imageops::resize(&cropped, s as u32, s as u32, FilterType::Triangle);
        }
    }
    Ok(from_rgb(&img))
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    save_rgb8(path, &to_rgb(img))
}

/// Write an 8-bit image, creating parent directories.
pub fn save_rgb8(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    img.save(path).map_err(|source| CoreError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Indexable collection of same-sized images, either held in memory or
/// decoded from disk on access.
#[derive(Debug, Clone)]
pub enum ImageSet {
    Memory(Vec<Image>),
    Files { paths: Vec<PathBuf>, size: usize },
}

impl ImageSet {
    /// Decode all `paths` at `size` up front.
    pub fn preload(paths: &[PathBuf], size: usize) -> Result<Self> {
        let images = paths.iter().map(|p| load_image(p, Some(size))).collect::<Result<Vec<_>>>()?;
        Ok(Self::Memory(images))
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Memory(v) => v.len(),
            Self::Files { paths, .. } => paths.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<Image> {
        match self {
            Self::Memory(v) => Ok(v[i].clone()),
            Self::Files { paths, size } => load_image(&paths[i], Some(*size)),
        }
    }

    /// Stack the selected images into `[n, 3, h, w]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let items = indices.iter().map(|&i| self.get(i)).collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&items)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_roundtrip_is_exact() {
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([(x * 50) as u8, (y * 60) as u8, 255]));
        let t = from_rgb(&img);
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(to_rgb(&t), img);
    }

    #[test]
    fn load_resizes_to_square() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        RgbImage::from_pixel(40, 30, image::Rgb([10, 20, 30])).save(&p).unwrap();
        let t = load_image(&p, Some(16)).unwrap();
        assert_eq!(t.shape(), &[3, 16, 16]);
        let t = load_image(&p, None).unwrap();
        assert_eq!(t.shape(), &[3, 30, 40]);
    }
}
