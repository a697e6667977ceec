use cellbloom_nn::{Real, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{CoreError, Result};
use crate::seeding::RngState;

/// History buffer of generated images fed to a discriminator.
#[derive(Debug, Clone)]
pub struct ImagePool<T> {
    capacity: usize,
    images: Vec<Tensor<T>>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl<T: Real> ImagePool<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            images: Vec::with_capacity(capacity),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }

    /// Pass a batch `[n, c, h, w]` through the pool. While below capacity
    /// each image is stored and returned as is; once full, each image is with
    /// probability 0.5 swapped for a uniformly chosen stored one.
    pub fn query(&mut self, fakes: &Tensor<T>) -> Result<Tensor<T>> {
        if self.capacity == 0 {
            return Ok(fakes.clone());
        }
        let items = fakes.unstack();
        let mut out = Vec::with_capacity(items.len());
        for img in items {
            if self.images.len() < self.capacity {
                self.images.push(img.clone());
                out.push(img);
            } else if self.rng.random::<f64>() > 0.5 {
                let k = self.rng.random_range(0..self.images.len());
                out.push(std::mem::replace(&mut self.images[k], img));
            } else {
                out.push(img);
            }
        }
        Ok(Tensor::stack(&out)?)
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(self.seed, &self.rng)
    }

    pub fn restore(capacity: usize, images: Vec<Tensor<T>>, state: &RngState) -> Result<Self> {
        if images.len() > capacity {
            return Err(CoreError::Invalid(format!(
                "pool holds {} images but capacity is {capacity}",
                images.len()
            )));
        }
        let rng = state
            .restore()
            .ok_or_else(|| CoreError::Invalid(format!("bad rng position {:?}", state.word_pos)))?;
        Ok(Self {
            capacity,
            images,
            seed: state.seed,
            rng,
        })
    }
}
