use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::confusion::ConfusionMatrix;
use super::model::CellClassifier;
use crate::error::{CoreError, IoContext, Result};
use crate::imaging::{load_image, Image};
use crate::manifest::{CellClass, DatasetManifest, Domain, NUM_CLASSES};

/// Classifier performance on one labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_tag: String,
    pub overall_accuracy: f64,
    pub macro_accuracy: f64,
    /// `null` for classes absent from the evaluated set.
    pub per_class_recall: Vec<Option<f64>>,
    pub confusion_matrix: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_confusion(dataset_tag: impl Into<String>, cm: &ConfusionMatrix) -> Result<Self> {
        let overall = cm
            .overall_accuracy()
            .ok_or_else(|| CoreError::Invalid("nothing was evaluated".into()))?;
        Ok(Self {
            dataset_tag: dataset_tag.into(),
            overall_accuracy: overall,
            macro_accuracy: cm.macro_accuracy().unwrap_or(0.0),
            per_class_recall: cm.per_class_recall(),
            confusion_matrix: cm.rows().to_vec(),
        })
    }

    pub fn confusion(&self) -> Result<ConfusionMatrix> {
        ConfusionMatrix::from_rows(self.confusion_matrix.clone())
    }

    /// Write `<stem>.json` and `<stem>_confusion.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_vec_pretty(self)?).at(&json)?;
        let csv = dir.join(format!("{stem}_confusion.csv"));
        let names = CellClass::ALL.map(|c| c.name());
        fs::write(&csv, self.confusion()?.to_csv(&names)).at(&csv)?;
        Ok(())
    }
}

/// Confusion matrix of `model` over already loaded labeled images.
pub fn confusion_of(model: &CellClassifier, images: &[Image], labels: &[CellClass]) -> Result<ConfusionMatrix> {
    let preds = model.predict_batch(images)?;
    ConfusionMatrix::from_pairs(
        NUM_CLASSES,
        labels.iter().zip(&preds).map(|(t, p)| (t.index(), p.class.index())),
    )
}

/// Evaluate every labeled record of a cell manifest (callers pick the split).
pub fn evaluate(model: &CellClassifier, manifest: &DatasetManifest, dataset_tag: &str) -> Result<EvalReport> {
    if manifest.domain() != Domain::Cell {
        return Err(CoreError::Invalid("evaluation needs a cell manifest".into()));
    }
    let labeled: Vec<_> = manifest.records().iter().filter_map(|r| Some((r, r.cell_class()?))).collect();
    if labeled.is_empty() {
        return Err(CoreError::Invalid("cannot evaluate an empty manifest".into()));
    }
    let size = model.config.image_size;
    let images = labeled
        .iter()
        .map(|(r, _)| load_image(&r.path, Some(size)))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<CellClass> = labeled.iter().map(|(_, c)| *c).collect();
    EvalReport::from_confusion(dataset_tag, &confusion_of(model, &images, &labels)?)
}
