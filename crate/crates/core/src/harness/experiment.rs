use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cytoclass::{confusion_of, CellClassifier, ConfusionMatrix};
use crate::error::{CoreError, IoContext, Result};
use crate::imaging::{load_image, save_image, Image};
use crate::manifest::{CellClass, ClassLabel, DatasetManifest, Domain, ImageRecord, Split, NUM_CLASSES};
use crate::transfer::{cycle_loss, Direction, Translator};

/// One translator per cell class, routed by each record's true label.
pub type TranslatorSet = BTreeMap<CellClass, Box<dyn Translator>>;

/// Suffix appended to an original record id to name its reconstruction.
pub const RECONSTRUCTED_SUFFIX: &str = "~rec";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    pub per_image: Vec<(String, f64)>,
    pub mean: f64,
}

/// Mean absolute error per image between originals and their
/// reconstructions, matched by id.
pub fn reconstruction_metrics(originals: &[(String, Image)], reconstructions: &[(String, Image)]) -> Result<ReconstructionMetrics> {
    if originals.len() != reconstructions.len() {
        return Err(CoreError::Invalid(format!(
            "{} originals but {} reconstructions",
            originals.len(),
            reconstructions.len()
        )));
    }
    let by_id: HashMap<&str, &Image> = reconstructions.iter().map(|(id, img)| (id.as_str(), img)).collect();
    let mut per_image = Vec::with_capacity(originals.len());
    for (id, orig) in originals {
        let rec = by_id
            .get(id.as_str())
            .ok_or_else(|| CoreError::Invalid(format!("no reconstruction for {id}")))?;
        per_image.push((id.clone(), cycle_loss(orig, rec)? as f64));
    }
    let mean = if per_image.is_empty() {
        0.0
    } else {
        per_image.iter().map(|(_, v)| v).sum::<f64>() / per_image.len() as f64
    };
    Ok(ReconstructionMetrics { per_image, mean })
}

/// Output of [`build_reconstructed_testset`].
#[derive(Debug, Clone)]
pub struct ReconstructedSet {
    pub manifest: DatasetManifest,
    /// Mean cycle L1 per routed class.
    pub pair_l1: BTreeMap<CellClass, f64>,
}

/// Send every labeled record cell → flower → cell through its class's
/// translator. Reconstructions are written to
/// `out_dir/<class>/<id>~rec.png`; when `triplet_dir` is given the
/// original, flower and reconstruction are also dumped side by side.
pub fn build_reconstructed_testset(
    cell_test: &DatasetManifest,
    translators: &TranslatorSet,
    image_size: usize,
    out_dir: &Path,
    triplet_dir: Option<&Path>,
) -> Result<ReconstructedSet> {
    let mut groups: BTreeMap<CellClass, Vec<&ImageRecord>> = BTreeMap::new();
    for r in cell_test.records() {
        let class = r
            .cell_class()
            .ok_or_else(|| CoreError::Invalid(format!("record {} has no cell class", r.id)))?;
        groups.entry(class).or_default().push(r);
    }
    for class in groups.keys() {
        if !translators.contains_key(class) {
            return Err(CoreError::MissingCheckpoint(class.name().to_string()));
        }
    }
    let mut out_records: HashMap<String, ImageRecord> = HashMap::new();
    let mut pair_l1 = BTreeMap::new();
    for (class, records) in &groups {
        let tr = &translators[class];
        let originals = records
            .iter()
            .map(|r| load_image(&r.path, Some(image_size)))
            .collect::<Result<Vec<_>>>()?;
        let flowers = tr.translate(&originals, Direction::CellToFlower)?;
        let recs = tr.translate(&flowers, Direction::FlowerToCell)?;
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let metrics = reconstruction_metrics(
            &ids.iter().cloned().zip(originals.iter().cloned()).collect::<Vec<_>>(),
            &ids.iter().cloned().zip(recs.iter().cloned()).collect::<Vec<_>>(),
        )?;
        pair_l1.insert(*class, metrics.mean);
        for (i, r) in records.iter().enumerate() {
            let id = format!("{}{RECONSTRUCTED_SUFFIX}", r.id);
            let path = out_dir.join(class.name()).join(format!("{id}.png"));
            save_image(&path, &recs[i])?;
            if let Some(t) = triplet_dir {
                let base = t.join(class.name());
                save_image(&base.join(format!("{}_real.png", r.id)), &originals[i])?;
                save_image(&base.join(format!("{}_flower.png", r.id)), &flowers[i])?;
                save_image(&base.join(format!("{}_reconstructed.png", r.id)), &recs[i])?;
            }
            let mut rec = ImageRecord::new(id, path, ClassLabel::Cell(*class));
            rec.split = r.split;
            rec.derived_from = Some(r.id.clone());
            out_records.insert(r.id.clone(), rec);
        }
    }
    // Keep the input order.
    let records = cell_test
        .records()
        .iter()
        .map(|r| out_records.remove(&r.id).expect("every record routed"))
        .collect();
    Ok(ReconstructedSet {
        manifest: DatasetManifest::new(Domain::Cell, cell_test.seed(), records)?,
        pair_l1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    #[serde(rename = "macro")]
    pub macro_avg: f64,
}

impl Accuracy {
    fn of(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            overall: cm
                .overall_accuracy()
                .ok_or_else(|| CoreError::Invalid("empty test set".into()))?,
            macro_avg: cm.macro_accuracy().unwrap_or(0.0),
        })
    }
}

/// Classifier accuracy on real versus reconstructed test cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub test_size: usize,
    pub acc_real: Accuracy,
    pub acc_reconstructed: Accuracy,
    pub cm_real: Vec<Vec<u64>>,
    pub cm_reconstructed: Vec<Vec<u64>>,
    pub recall_real: Vec<Option<f64>>,
    pub recall_reconstructed: Vec<Option<f64>>,
    /// Mean cycle reconstruction L1 of the test cells, per pair.
    pub pair_cycle_l1: BTreeMap<String, f64>,
    pub mean_cycle_l1: f64,
    /// SHA-256 of each model's description, keyed by pair or `classifier`.
    pub config_digests: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

impl ExperimentReport {
    pub fn accuracy_gap(&self) -> f64 {
        (self.acc_real.overall - self.acc_reconstructed.overall).abs()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).at(parent)?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?).at(path)?;
        let names = CellClass::ALL.map(|c| c.name());
        let stem = path.with_extension("");
        for (tag, cm) in [("real", &self.cm_real), ("reconstructed", &self.cm_reconstructed)] {
            let csv = PathBuf::from(format!("{}_cm_{tag}.csv", stem.display()));
            fs::write(&csv, ConfusionMatrix::from_rows(cm.clone())?.to_csv(&names)).at(&csv)?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path).at(path)?)?)
    }
}

fn digest(text: &str) -> String {
    let d = Sha256::digest(text.as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Where reconstructions (and the report, if written by the caller) go.
    pub work_dir: PathBuf,
    pub triplets: bool,
    /// Stamp start and finish times; off keeps reports byte-reproducible.
    pub timestamps: bool,
}

/// Evaluate `classifier` on the test split of `cells` and on its
/// reconstruction through `translators`.
pub fn run_experiment(
    cells: &DatasetManifest,
    translators: &TranslatorSet,
    classifier: &CellClassifier,
    opts: &ExperimentOptions,
) -> Result<ExperimentReport> {
    let now = || chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let started_at = opts.timestamps.then(now);
    let test = cells.with_split(Split::Test).filter(|r| r.cell_class().is_some());
    if test.is_empty() {
        return Err(CoreError::Invalid("no labeled test records".into()));
    }
    let size = classifier.config.image_size;
    let triplet_dir = opts.triplets.then(|| opts.work_dir.join("triplets"));
    let rebuilt = build_reconstructed_testset(
        &test,
        translators,
        size,
        &opts.work_dir.join("reconstructed"),
        triplet_dir.as_deref(),
    )?;
    rebuilt.manifest.write_jsonl(&opts.work_dir.join("reconstructed.jsonl"))?;

    let confusion = |m: &DatasetManifest| -> Result<ConfusionMatrix> {
        let images = m
            .records()
            .iter()
            .map(|r| load_image(&r.path, Some(size)))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<CellClass> = m.records().iter().filter_map(|r| r.cell_class()).collect();
        confusion_of(classifier, &images, &labels)
    };
    let cm_real = confusion(&test)?;
    let cm_rec = confusion(&rebuilt.manifest)?;
    debug_assert_eq!(cm_real.total(), cm_rec.total());

    let mut config_digests = BTreeMap::new();
    for (class, tr) in translators.iter().filter(|(c, _)| rebuilt.pair_l1.contains_key(*c)) {
        config_digests.insert(class.name().to_string(), digest(&tr.describe()));
    }
    config_digests.insert(
        "classifier".to_string(),
        digest(&serde_json::to_string(&classifier.config)?),
    );
    let pair_cycle_l1: BTreeMap<String, f64> =
        rebuilt.pair_l1.iter().map(|(c, v)| (c.name().to_string(), *v)).collect();
    let mean_cycle_l1 = pair_cycle_l1.values().sum::<f64>() / pair_cycle_l1.len().max(1) as f64;
    debug_assert_eq!(cm_real.classes(), NUM_CLASSES);
    Ok(ExperimentReport {
        test_size: test.len(),
        acc_real: Accuracy::of(&cm_real)?,
        acc_reconstructed: Accuracy::of(&cm_rec)?,
        recall_real: cm_real.per_class_recall(),
        recall_reconstructed: cm_rec.per_class_recall(),
        cm_real: cm_real.rows().to_vec(),
        cm_reconstructed: cm_rec.rows().to_vec(),
        pair_cycle_l1,
        mean_cycle_l1,
        config_digests,
        started_at,
        finished_at: opts.timestamps.then(now),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cellbloom_nn::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(v: f32) -> Image {
        Tensor::full(&[3, 4, 4], v)
    }

    #[test]
    fn metrics_identity_and_offset() {
        let a = vec![("x".to_string(), img(0.1)), ("y".to_string(), img(-0.3))];
        assert_eq!(reconstruction_metrics(&a, &a).unwrap().mean, 0.0);
        let shifted: Vec<_> = a.iter().map(|(id, i)| (id.clone(), i.map(|v| (v + 0.2).clamp(-1.0, 1.0)))).collect();
        let m = reconstruction_metrics(&a, &shifted).unwrap();
        assert!((m.mean - 0.2).abs() < 1e-6);
    }

    #[test]
    fn metrics_match_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rand_img = || Tensor::from_vec(&[3, 4, 4], (0..48).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
        let a: Vec<_> = (0..5).map(|i| (format!("r{i}"), rand_img())).collect();
        let b: Vec<_> = (0..5).map(|i| (format!("r{i}"), rand_img())).collect();
        let m = reconstruction_metrics(&a, &b).unwrap();
        let mut total = 0.0f64;
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            let mut s = 0.0f64;
            for k in 0..48 {
                s += (x.data()[k] as f64 - y.data()[k] as f64).abs();
            }
            total += s / 48.0;
        }
        assert!((m.mean - total / 5.0).abs() < 1e-6);
    }

    #[test]
    fn metrics_reject_id_mismatch() {
        let a = vec![("x".to_string(), img(0.0))];
        let b = vec![("z".to_string(), img(0.0))];
        assert!(reconstruction_metrics(&a, &b).is_err());
        assert!(reconstruction_metrics(&a, &[]).is_err());
    }
}
