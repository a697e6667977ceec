use std::path::Path;

use cellbloom_nn::{io, Sequential, Tensor};

use super::checkpoint::{read_config, TransferCheckpoint};
use super::config::TransferConfig;
use crate::error::{CoreError, Result};
use crate::imaging::Image;
use crate::manifest::Domain;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    CellToFlower,
    FlowerToCell,
}

impl Direction {
    pub fn from_domain(start: Domain) -> Self {
        match start {
            Domain::Cell => Self::CellToFlower,
            Domain::Flower => Self::FlowerToCell,
        }
    }

    pub fn reverse(self) -> Self {
        match self {
            Self::CellToFlower => Self::FlowerToCell,
            Self::FlowerToCell => Self::CellToFlower,
        }
    }
}

/// Something that maps images between the two domains of one pair.
pub trait Translator: Send + Sync {
    fn translate(&self, images: &[Image], direction: Direction) -> Result<Vec<Image>>;

    /// Stable text identifying the model, digested into experiment reports.
    fn describe(&self) -> String;

    fn reconstruct(&self, images: &[Image], start: Domain) -> Result<Vec<Image>> {
        let there = Direction::from_domain(start);
        let mid = self.translate(images, there)?;
        self.translate(&mid, there.reverse())
    }
}

/// Returns images unchanged in both directions; the control arm of an experiment.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, images: &[Image], _direction: Direction) -> Result<Vec<Image>> {
        Ok(images.to_vec())
    }

    fn describe(&self) -> String {
        "identity".into()
    }
}

/// The two generators of a trained pair, for inference.
#[derive(Debug, Clone)]
pub struct TransferModel {
    pub config: TransferConfig,
    g_ab: Sequential<f32>,
    g_ba: Sequential<f32>,
}

const INFER_CHUNK: usize = 32;

impl TransferModel {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = read_config(dir)?;
        config.validate()?;
        let fresh = super::step::CycleNets::<f32>::new(&config);
        let (mut g_ab, mut g_ba) = (fresh.g_ab, fresh.g_ba);
        io::load_state(&dir.join("g_ab.safetensors"), &mut g_ab)?;
        io::load_state(&dir.join("g_ba.safetensors"), &mut g_ba)?;
        Ok(Self { config, g_ab, g_ba })
    }

    pub fn from_checkpoint(ck: &TransferCheckpoint) -> Self {
        Self {
            config: ck.config.clone(),
            g_ab: ck.nets.g_ab.clone(),
            g_ba: ck.nets.g_ba.clone(),
        }
    }

    fn check(&self, img: &Image) -> Result<()> {
        let s = self.config.image_size;
        if img.shape() != [3, s, s] {
            return Err(CoreError::Invalid(format!(
                "expected image of shape [3, {s}, {s}], got {:?}",
                img.shape()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, img: &Image, direction: Direction) -> Result<Image> {
        Ok(self.translate(std::slice::from_ref(img), direction)?.remove(0))
    }

    pub fn reconstruct_one(&self, img: &Image, start: Domain) -> Result<Image> {
        Ok(Translator::reconstruct(self, std::slice::from_ref(img), start)?.remove(0))
    }
}

impl Translator for TransferModel {
    fn describe(&self) -> String {
        serde_json::to_string(&self.config).unwrap_or_default()
    }

    fn translate(&self, images: &[Image], direction: Direction) -> Result<Vec<Image>> {
        images.iter().try_for_each(|i| self.check(i))?;
        let g = match direction {
            Direction::CellToFlower => &self.g_ab,
            Direction::FlowerToCell => &self.g_ba,
        };
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_CHUNK) {
            let y = g.infer(&Tensor::stack(chunk)?)?;
            out.extend(y.unstack());
        }
        Ok(out)
    }
}
