use std::fs;
use std::path::{Path, PathBuf};

use cellbloom_nn::{io, Adam, Parameters, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{lr_at, TransferConfig};
use super::pool::ImagePool;
use super::step::{CycleNets, LossRecord};
use crate::error::{CoreError, IoContext, Result};
use crate::imaging::ImageSet;
use crate::manifest::{DatasetManifest, Split};
use crate::seeding::{derive_seed, RngState};

/// One row of the loss-history CSV: per-epoch means of each loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    #[serde(rename = "loss_G_adv_ab")]
    pub loss_g_adv_ab: f64,
    #[serde(rename = "loss_G_adv_ba")]
    pub loss_g_adv_ba: f64,
    pub loss_cycle_a: f64,
    pub loss_cycle_b: f64,
    #[serde(rename = "loss_D_a")]
    pub loss_d_a: f64,
    #[serde(rename = "loss_D_b")]
    pub loss_d_b: f64,
    pub lr: f64,
}

impl HistoryRow {
    fn mean_of(epoch: usize, lr: f64, steps: &[LossRecord]) -> Self {
        let n = steps.len().max(1) as f64;
        let m = |f: fn(&LossRecord) -> f64| steps.iter().map(f).sum::<f64>() / n;
        Self {
            epoch,
            loss_g_adv_ab: m(|r| r.adv_ab),
            loss_g_adv_ba: m(|r| r.adv_ba),
            loss_cycle_a: m(|r| r.cycle_a),
            loss_cycle_b: m(|r| r.cycle_b),
            loss_d_a: m(|r| r.d_a),
            loss_d_b: m(|r| r.d_b),
            lr,
        }
    }

    /// Mean of the two cycle terms.
    pub fn cycle_mean(&self) -> f64 {
        0.5 * (self.loss_cycle_a + self.loss_cycle_b)
    }
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<HistoryRow>, _>>()?)
}

#[derive(Debug, Serialize, Deserialize)]
struct StateFile {
    epoch: usize,
    data_rng: RngState,
    pool_a: RngState,
    pool_b: RngState,
}

/// Complete state of one pair's training run.
#[derive(Debug, Clone)]
pub struct TransferCheckpoint {
    pub config: TransferConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub nets: CycleNets<f32>,
    opt_g_ab: Adam<f32>,
    opt_g_ba: Adam<f32>,
    opt_d_a: Adam<f32>,
    opt_d_b: Adam<f32>,
    pool_a: ImagePool<f32>,
    pool_b: ImagePool<f32>,
    data_seed: u64,
    data_rng: ChaCha8Rng,
    pub history: Vec<HistoryRow>,
}

const NETS: [&str; 4] = ["g_ab", "g_ba", "d_a", "d_b"];

impl TransferCheckpoint {
    pub fn new(config: TransferConfig) -> Result<Self> {
        config.validate()?;
        let adam = || Adam::new(config.lr, config.beta1, config.beta2);
        let data_seed = derive_seed(config.seed, "data");
        Ok(Self {
            nets: CycleNets::new(&config),
            opt_g_ab: adam(),
            opt_g_ba: adam(),
            opt_d_a: adam(),
            opt_d_b: adam(),
            pool_a: ImagePool::new(config.pool_capacity, derive_seed(config.seed, "pool.a")),
            pool_b: ImagePool::new(config.pool_capacity, derive_seed(config.seed, "pool.b")),
            data_seed,
            data_rng: ChaCha8Rng::seed_from_u64(data_seed),
            epoch: 0,
            history: Vec::new(),
            config,
        })
    }

    fn set_lr(&mut self, lr: f64) {
        for o in [&mut self.opt_g_ab, &mut self.opt_g_ba, &mut self.opt_d_a, &mut self.opt_d_b] {
            o.lr = lr;
        }
    }

    /// One optimization step: generators first on the generator objective,
    /// then discriminators on real batches and pool-filtered fakes.
    pub fn train_step(&mut self, real_a: &Tensor<f32>, real_b: &Tensor<f32>) -> Result<LossRecord> {
        let cfg = &self.config;
        self.nets.zero_grad();
        let g = self
            .nets
            .generator_pass(real_a, real_b, cfg.lambda_cycle, cfg.lambda_identity)?;
        self.opt_g_ab.step(&mut self.nets.g_ab);
        self.opt_g_ba.step(&mut self.nets.g_ba);

        self.nets.d_a.zero_grad();
        self.nets.d_b.zero_grad();
        let pooled_a = self.pool_a.query(&g.fake_a)?;
        let pooled_b = self.pool_b.query(&g.fake_b)?;
        let (d_a, d_b) = self.nets.discriminator_pass(real_a, real_b, &pooled_a, &pooled_b)?;
        self.opt_d_a.step(&mut self.nets.d_a);
        self.opt_d_b.step(&mut self.nets.d_b);

        Ok(LossRecord {
            adv_ab: g.adv_ab as f64,
            adv_ba: g.adv_ba as f64,
            cycle_a: g.cycle_a as f64,
            cycle_b: g.cycle_b as f64,
            identity_a: g.identity_a as f64,
            identity_b: g.identity_b as f64,
            d_a: d_a as f64,
            d_b: d_b as f64,
        })
    }

    /// Batch orders for one epoch. The larger side is permuted; the smaller
    /// side is drawn with replacement to the same length.
    fn epoch_plan(&mut self, na: usize, nb: usize) -> (Vec<usize>, Vec<usize>) {
        let len = na.max(nb);
        let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
            if n == len {
                let mut v: Vec<usize> = (0..n).collect();
                v.shuffle(rng);
                v
            } else {
                (0..len).map(|_| rng.random_range(0..n)).collect()
            }
        };
        let a = draw(na, &mut self.data_rng);
        let b = draw(nb, &mut self.data_rng);
        (a, b)
    }

    /// Train the next epoch and append its mean losses to the history.
    pub fn train_epoch(&mut self, cells: &ImageSet, flowers: &ImageSet) -> Result<HistoryRow> {
        if cells.is_empty() || flowers.is_empty() {
            return Err(CoreError::Invalid("empty training split".into()));
        }
        let epoch = self.epoch + 1;
        let lr = lr_at(epoch, &self.config)?;
        self.set_lr(lr);
        let (order_a, order_b) = self.epoch_plan(cells.len(), flowers.len());
        let bs = self.config.batch_size;
        let mut steps = Vec::new();
        for (ia, ib) in order_a.chunks(bs).zip(order_b.chunks(bs)) {
            let a = cells.batch(ia)?;
            let b = flowers.batch(ib)?;
            steps.push(self.train_step(&a, &b)?);
        }
        let row = HistoryRow::mean_of(epoch, lr, &steps);
        tracing::debug!(epoch, cycle = row.cycle_mean(), "epoch done");
        self.history.push(row);
        self.epoch = epoch;
        Ok(row)
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let cfg_path = dir.join("config.json");
        fs::write(&cfg_path, serde_json::to_vec_pretty(&self.config)?).at(&cfg_path)?;
        let state = StateFile {
            epoch: self.epoch,
            data_rng: RngState::capture(self.data_seed, &self.data_rng),
            pool_a: self.pool_a.rng_state(),
            pool_b: self.pool_b.rng_state(),
        };
        let state_path = dir.join("state.json");
        fs::write(&state_path, serde_json::to_vec_pretty(&state)?).at(&state_path)?;
        write_history(&dir.join("history.csv"), &self.history)?;

        let nets = [&mut self.nets.g_ab, &mut self.nets.g_ba, &mut self.nets.d_a, &mut self.nets.d_b];
        let opts = [&self.opt_g_ab, &self.opt_g_ba, &self.opt_d_a, &self.opt_d_b];
        for ((name, net), opt) in NETS.iter().zip(nets).zip(opts) {
            io::save_state(&dir.join(format!("{name}.safetensors")), net)?;
            io::save_tensors(&dir.join(format!("optim_{name}.safetensors")), &opt.state_tensors())?;
        }
        for (name, pool) in [("pool_a", &self.pool_a), ("pool_b", &self.pool_b)] {
            let tensors: Vec<(String, Tensor<f32>)> = if pool.is_empty() {
                Vec::new()
            } else {
                vec![("images".to_string(), Tensor::stack(pool.images())?)]
            };
            io::save_tensors(&dir.join(format!("{name}.safetensors")), &tensors)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = read_config(dir)?;
        let mut ck = Self::new(config)?;
        let state_path = dir.join("state.json");
        let state: StateFile = serde_json::from_slice(&fs::read(&state_path).at(&state_path)?)?;
        ck.epoch = state.epoch;
        ck.data_seed = state.data_rng.seed;
        ck.data_rng = state
            .data_rng
            .restore()
            .ok_or_else(|| CoreError::Invalid("bad data rng state".into()))?;
        ck.history = read_history(&dir.join("history.csv"))?;
        if ck.history.len() != ck.epoch {
            return Err(CoreError::Invalid(format!(
                "history has {} rows but checkpoint epoch is {}",
                ck.history.len(),
                ck.epoch
            )));
        }
        let nets = [&mut ck.nets.g_ab, &mut ck.nets.g_ba, &mut ck.nets.d_a, &mut ck.nets.d_b];
        let opts = [&mut ck.opt_g_ab, &mut ck.opt_g_ba, &mut ck.opt_d_a, &mut ck.opt_d_b];
        for ((name, net), opt) in NETS.iter().zip(nets).zip(opts) {
            io::load_state(&dir.join(format!("{name}.safetensors")), net)?;
            let tensors = io::load_tensors(&dir.join(format!("optim_{name}.safetensors")))?;
            opt.load_state(net, &tensors)?;
        }
        let cap = ck.config.pool_capacity;
        ck.pool_a = ImagePool::restore(cap, load_pool(&dir.join("pool_a.safetensors"))?, &state.pool_a)?;
        ck.pool_b = ImagePool::restore(cap, load_pool(&dir.join("pool_b.safetensors"))?, &state.pool_b)?;
        Ok(ck)
    }
}

fn load_pool(path: &Path) -> Result<Vec<Tensor<f32>>> {
    let tensors = io::load_tensors::<f32>(path)?;
    Ok(match tensors.into_iter().find(|(n, _)| n == "images") {
        Some((_, t)) => t.unstack(),
        None => Vec::new(),
    })
}

pub fn read_config(dir: &Path) -> Result<TransferConfig> {
    let path = dir.join("config.json");
    if !path.exists() {
        return Err(CoreError::MissingCheckpoint(dir.display().to_string()));
    }
    Ok(serde_json::from_slice(&fs::read(&path).at(&path)?)?)
}

/// Output and resume behaviour of [`train_pair`].
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoint directory; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Write a checkpoint every this many epochs (the final epoch is always written).
    pub checkpoint_every: Option<usize>,
    /// Continue from the checkpoint in `out_dir` when one exists.
    pub resume: bool,
    /// Stop after this epoch instead of `config.epochs`.
    pub until_epoch: Option<usize>,
    /// Decode images lazily instead of holding the training split in memory.
    pub stream_images: bool,
}

/// Training-split image paths of one class from a manifest.
fn training_paths(m: &DatasetManifest, class_index: usize, what: &str) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = m
        .records()
        .iter()
        .filter(|r| r.split == Split::Train && r.class_label.map(|c| c.index()) == Some(class_index))
        .map(|r| r.path.clone())
        .collect();
    if paths.is_empty() {
        return Err(CoreError::Invalid(format!("no training {what} images")));
    }
    Ok(paths)
}

/// Train the configured cell/flower pair from manifests.
pub fn train_pair(
    cfg: &TransferConfig,
    cells: &DatasetManifest,
    flowers: &DatasetManifest,
    opts: &TrainOptions,
) -> Result<TransferCheckpoint> {
    cfg.validate()?;
    let a = training_paths(cells, cfg.cell_class.index(), cfg.cell_class.name())?;
    let b = training_paths(flowers, cfg.flower_class.index(), cfg.flower_class.name())?;
    let (a, b) = if opts.stream_images {
        (
            ImageSet::Files { paths: a, size: cfg.image_size },
            ImageSet::Files { paths: b, size: cfg.image_size },
        )
    } else {
        (ImageSet::preload(&a, cfg.image_size)?, ImageSet::preload(&b, cfg.image_size)?)
    };
    train_pair_on(cfg, &a, &b, opts)
}

/// Train on already assembled image sets.
pub fn train_pair_on(
    cfg: &TransferConfig,
    cells: &ImageSet,
    flowers: &ImageSet,
    opts: &TrainOptions,
) -> Result<TransferCheckpoint> {
    if cells.is_empty() || flowers.is_empty() {
        return Err(CoreError::Invalid("empty training split".into()));
    }
    let mut ck = match &opts.out_dir {
        Some(dir) if opts.resume && dir.join("state.json").exists() => {
            let ck = TransferCheckpoint::load(dir)?;
            if &ck.config != cfg {
                return Err(CoreError::Invalid(format!(
                    "checkpoint in {} was trained with a different config",
                    dir.display()
                )));
            }
            ck
        }
        _ => TransferCheckpoint::new(cfg.clone())?,
    };
    let last = opts.until_epoch.unwrap_or(cfg.epochs).min(cfg.epochs);
    while ck.epoch < last {
        let row = ck.train_epoch(cells, flowers)?;
        tracing::info!(
            pair = %cfg.cell_class,
            epoch = row.epoch,
            cycle = row.cycle_mean(),
            d_a = row.loss_d_a,
            d_b = row.loss_d_b,
            "transfer epoch"
        );
        if let (Some(dir), Some(every)) = (&opts.out_dir, opts.checkpoint_every) {
            if every > 0 && ck.epoch % every == 0 && ck.epoch != last {
                ck.save(dir)?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        ck.save(dir)?;
    }
    Ok(ck)
}
