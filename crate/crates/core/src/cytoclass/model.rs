use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use cellbloom_nn::loss::{softmax, softmax_cross_entropy};
use cellbloom_nn::{io, Adam, BatchNorm2d, Conv2d, Init, Layer, Parameters, Residual, Sequential, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, IoContext, Result};
use crate::imaging::{Image, ImageSet};
use crate::manifest::{augment, AugmentationSpec, CellClass, DatasetManifest, Domain, Split, NUM_CLASSES};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub image_size: usize,
    /// Channels of the first residual stage; later stages double it.
    pub base_width: usize,
    /// Optional safetensors file with initial weights for the whole network.
    pub pretrained_weights: Option<PathBuf>,
    pub augmentation: AugmentationSpec,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 3e-3,
            batch_size: 64,
            image_size: 64,
            base_width: 64,
            pretrained_weights: None,
            augmentation: AugmentationSpec::default(),
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(CoreError::Invalid("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(CoreError::Invalid("batch size must be at least 2 for batch normalization".into()));
        }
        if self.image_size < 32 {
            return Err(CoreError::Invalid(format!("image size {} below 32", self.image_size)));
        }
        if self.base_width == 0 {
            return Err(CoreError::Invalid("base width must be positive".into()));
        }
        self.augmentation.validate()
    }
}

fn conv_bn(net: Sequential<f32>, name: &str, cin: usize, cout: usize, k: usize, s: usize, rng: &mut ChaCha8Rng) -> Sequential<f32> {
    net.with(
        name.to_string(),
        Layer::Conv(Conv2d::new(cin, cout, k, s, k / 2, false, Init::KaimingNormalFanOut, rng)),
    )
    .with(format!("{name}_bn"), Layer::BatchNorm(BatchNorm2d::new(cout)))
}

fn basic_block(cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Layer<f32> {
    let body = conv_bn(Sequential::new(), "conv1", cin, cout, 3, stride, rng).with("relu", Layer::Relu);
    let body = conv_bn(body, "conv2", cout, cout, 3, 1, rng);
    let shortcut = (stride != 1 || cin != cout).then(|| conv_bn(Sequential::new(), "conv", cin, cout, 1, stride, rng));
    Layer::Residual(Box::new(Residual {
        body,
        shortcut,
        post_relu: true,
    }))
}

/// 18-layer residual classifier: 7×7 stride-2 stem with max pooling, four
/// stages of two basic blocks, global average pooling, and a linear head
/// (a 1×1 convolution on the pooled features).
pub fn build_resnet18(classes: usize, base_width: usize, rng: &mut ChaCha8Rng) -> Sequential<f32> {
    let mut net = conv_bn(Sequential::new(), "stem", 3, base_width, 7, 2, rng)
        .with("stem_relu", Layer::Relu)
        .with("stem_pool", Layer::MaxPool { kernel: 3, stride: 2, pad: 1 });
    let mut cin = base_width;
    for stage in 0..4 {
        let cout = base_width << stage;
        let stride = if stage == 0 { 1 } else { 2 };
        net.push(format!("layer{}.0", stage + 1), basic_block(cin, cout, stride, rng));
        net.push(format!("layer{}.1", stage + 1), basic_block(cout, cout, 1, rng));
        cin = cout;
    }
    net.push("pool", Layer::GlobalAvgPool);
    net.push(
        "fc",
        Layer::Conv(Conv2d::new(cin, classes, 1, 1, 0, true, Init::UniformFanIn, rng)),
    );
    net
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// A trained seven-class cell classifier.
#[derive(Debug, Clone)]
pub struct CellClassifier {
    pub config: ClassifierConfig,
    pub history: Vec<ClassifierEpoch>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    net: Sequential<f32>,
}

/// Class probabilities and the predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: [f32; NUM_CLASSES],
    pub class: CellClass,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 64;

impl CellClassifier {
    pub fn untrained(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "classifier.init"));
        let mut net = build_resnet18(NUM_CLASSES, config.base_width, &mut rng);
        if let Some(path) = &config.pretrained_weights {
            io::load_state(path, &mut net)?;
        }
        Ok(Self {
            config,
            history: Vec::new(),
            best_epoch: 0,
            net,
        })
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

    /// Raw class scores for a batch, in inference mode.
    pub fn logits(&self, images: &[Image]) -> Result<Vec<[f32; NUM_CLASSES]>> {
        images.iter().try_for_each(|i| self.check(i))?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let y = self.net.infer(&Tensor::stack(chunk)?)?;
            out.extend(y.data().chunks(NUM_CLASSES).map(|c| std::array::from_fn(|i| c[i])));
        }
        Ok(out)
    }

    pub fn predict_batch(&self, images: &[Image]) -> Result<Vec<Prediction>> {
        Ok(self
            .logits(images)?
            .into_iter()
            .map(|l| {
                let p = softmax(&l, NUM_CLASSES);
                let probabilities: [f32; NUM_CLASSES] = std::array::from_fn(|i| p[i]);
                let class = CellClass::from_index(argmax_lowest(&probabilities)).expect("class index");
                Prediction { probabilities, class }
            })
            .collect())
    }

    pub fn predict(&self, img: &Image) -> Result<Prediction> {
        Ok(self.predict_batch(std::slice::from_ref(img))?.remove(0))
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let cfg = dir.join("classifier_config.json");
        fs::write(&cfg, serde_json::to_vec_pretty(&self.config)?).at(&cfg)?;
        let meta = dir.join("classifier_history.json");
        let body = serde_json::json!({ "best_epoch": self.best_epoch, "epochs": self.history });
        fs::write(&meta, serde_json::to_vec_pretty(&body)?).at(&meta)?;
        io::save_state(&dir.join("classifier.safetensors"), &mut self.net)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = dir.join("classifier_config.json");
        if !cfg.exists() {
            return Err(CoreError::MissingCheckpoint(dir.display().to_string()));
        }
        let mut config: ClassifierConfig = serde_json::from_slice(&fs::read(&cfg).at(&cfg)?)?;
        config.pretrained_weights = None;
        let mut model = Self::untrained(config)?;
        io::load_state(&dir.join("classifier.safetensors"), &mut model.net)?;
        let meta = dir.join("classifier_history.json");
        if meta.exists() {
            #[derive(Deserialize)]
            struct Meta {
                best_epoch: usize,
                epochs: Vec<ClassifierEpoch>,
            }
            let m: Meta = serde_json::from_slice(&fs::read(&meta).at(&meta)?)?;
            model.best_epoch = m.best_epoch;
            model.history = m.epochs;
        }
        Ok(model)
    }
}

/// Deduplicated images behind a list of records, so oversampled duplicates
/// share one decoded copy.
struct Indexed {
    set: ImageSet,
    slots: Vec<usize>,
    labels: Vec<usize>,
}

fn index_split(m: &DatasetManifest, split: Split, size: usize) -> Result<Indexed> {
    let mut unique: Vec<PathBuf> = Vec::new();
    let mut seen: HashMap<PathBuf, usize> = HashMap::new();
    let (mut slots, mut labels) = (Vec::new(), Vec::new());
    for r in m.records().iter().filter(|r| r.split == split) {
        let Some(class) = r.cell_class() else { continue };
        let slot = *seen.entry(r.path.clone()).or_insert_with(|| {
            unique.push(r.path.clone());
            unique.len() - 1
        });
        slots.push(slot);
        labels.push(class.index());
    }
    Ok(Indexed {
        set: ImageSet::preload(&unique, size)?,
        slots,
        labels,
    })
}

fn accuracy(model: &CellClassifier, data: &Indexed) -> Result<f64> {
    if data.slots.is_empty() {
        return Ok(0.0);
    }
    let images = data.slots.iter().map(|&s| data.set.get(s)).collect::<Result<Vec<_>>>()?;
    let preds = model.predict_batch(&images)?;
    let correct = preds.iter().zip(&data.labels).filter(|(p, l)| p.class.index() == **l).count();
    Ok(correct as f64 / data.slots.len() as f64)
}

/// Train on the manifest's training split (augmenting every draw) and select
/// the epoch with the best validation-split accuracy, ties to the earlier.
pub fn train_classifier(manifest: &DatasetManifest, config: &ClassifierConfig) -> Result<CellClassifier> {
    config.validate()?;
    if manifest.domain() != Domain::Cell {
        return Err(CoreError::Invalid("classifier training needs a cell manifest".into()));
    }
    let train = index_split(manifest, Split::Train, config.image_size)?;
    for c in CellClass::ALL {
        if !train.labels.contains(&c.index()) {
            return Err(CoreError::MissingClass(c.name().to_string()));
        }
    }
    let val = index_split(manifest, Split::Val, config.image_size)?;

    let mut model = CellClassifier::untrained(config.clone())?;
    let mut opt = Adam::new(config.lr, 0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "classifier.data"));
    let mut best: Option<(f64, Sequential<f32>)> = None;
    let mut order: Vec<usize> = (0..train.slots.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let images = batch
                .iter()
                .map(|&i| Ok(augment(&train.set.get(train.slots[i])?, &config.augmentation, &mut rng)))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            model.net.zero_grad();
            let (logits, cache) = model.net.forward_train(&Tensor::stack(&images)?)?;
            let (loss, grad) = softmax_cross_entropy(logits.data(), NUM_CLASSES, &labels)?;
            if !loss.is_finite() {
                return Err(CoreError::NonFinite("classifier loss".into()));
            }
            model.net.backward(cache, Tensor::from_vec(logits.shape(), grad)?);
            opt.step(&mut model.net);
            loss_sum += loss as f64 * batch.len() as f64;
            seen += batch.len();
        }
        let val_accuracy = accuracy(&model, &val)?;
        let train_loss = loss_sum / seen.max(1) as f64;
        tracing::info!(epoch, train_loss, val_accuracy, "classifier epoch");
        model.history.push(ClassifierEpoch {
            epoch,
            train_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, model.net.clone()));
            model.best_epoch = epoch;
        }
    }
    if let Some((_, net)) = best {
        model.net = net;
    }
    Ok(model)
}
