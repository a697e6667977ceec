use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::manifest::{CellClass, ClassPairMap, FlowerClass};

/// Residual encoder/decoder generator shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub channels: usize,
    pub base_width: usize,
    pub downsample: usize,
    pub residual_blocks: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            channels: 3,
            base_width: 64,
            downsample: 2,
            residual_blocks: 6,
        }
    }
}

/// Patch discriminator shape: `stride2_layers` stride-2 stages then two stride-1 convolutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub channels: usize,
    pub base_width: usize,
    pub stride2_layers: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            channels: 3,
            base_width: 64,
            stride2_layers: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub cell_class: CellClass,
    pub flower_class: FlowerClass,
    pub epochs: usize,
    /// Epochs at the base rate before the linear decay to zero.
    pub constant_lr_epochs: usize,
    pub image_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub pool_capacity: usize,
    pub init_std: f64,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub seed: u64,
}

impl TransferConfig {
    /// Defaults for the pair of `cell` under `pm`: 200 epochs (100 constant,
    /// 100 decaying), 64×64 inputs, batch 32, Adam(2e-4, 0.5, 0.999),
    /// cycle weight 10, no identity term, pool of 50.
    pub fn for_pair(cell: CellClass, pm: &ClassPairMap) -> Self {
        Self {
            cell_class: cell,
            flower_class: pm.map_class(cell),
            epochs: 200,
            constant_lr_epochs: 100,
            image_size: 64,
            batch_size: 32,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda_cycle: 10.0,
            lambda_identity: 0.0,
            pool_capacity: 50,
            init_std: 0.02,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Invalid(m));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.constant_lr_epochs > self.epochs {
            return fail(format!(
                "constant_lr_epochs {} exceeds epochs {}",
                self.constant_lr_epochs, self.epochs
            ));
        }
        if self.batch_size < 1 {
            return fail("batch size must be at least 1".into());
        }
        if self.lambda_cycle < 0.0 || self.lambda_identity < 0.0 {
            return fail("loss weights must be non-negative".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("invalid learning rate {}", self.lr));
        }
        let factor = 1usize << self.generator.downsample;
        if self.image_size == 0 || self.image_size % factor != 0 {
            return fail(format!(
                "image size {} must be a positive multiple of {factor}",
                self.image_size
            ));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: constant, then linear decay reaching 0
/// at the final epoch.
pub fn lr_at(epoch: usize, cfg: &TransferConfig) -> Result<f64> {
    if epoch < 1 || epoch > cfg.epochs {
        return Err(CoreError::Invalid(format!("epoch {epoch} outside 1..={}", cfg.epochs)));
    }
    if epoch <= cfg.constant_lr_epochs {
        return Ok(cfg.lr);
    }
    let decay = (cfg.epochs - cfg.constant_lr_epochs) as f64;
    Ok(cfg.lr * (1.0 - (epoch - cfg.constant_lr_epochs) as f64 / decay))
}
