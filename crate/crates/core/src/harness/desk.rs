use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, ExperimentOptions, ExperimentReport, TranslatorSet};
use super::synthetic::{generate_synthetic_domains, SyntheticDomainSpec};
use crate::cytoclass::{train_classifier, CellClassifier, ClassifierConfig};
use crate::error::{IoContext, Result};
use crate::manifest::{oversample_training, split_manifest, CellClass, ClassPairMap, DatasetManifest, SplitRatios};
use crate::seeding::derive_seed;
use crate::transfer::{train_pair, HistoryRow, TrainOptions, TransferConfig, TransferModel, Translator};

/// Everything needed to replicate the experiment on the synthetic fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub seed: u64,
    pub synthetic: SyntheticDomainSpec,
    pub transfer: TransferConfig,
    pub classifier: ClassifierConfig,
    pub oversample_floor: usize,
    /// Pairs to train; `None` means all seven.
    pub classes: Option<Vec<CellClass>>,
}

impl Default for DeskConfig {
    fn default() -> Self {
        let mut transfer = TransferConfig::for_pair(CellClass::ALL[0], &ClassPairMap::default());
        transfer.epochs = 20;
        transfer.constant_lr_epochs = 10;
        transfer.image_size = 32;
        transfer.batch_size = 16;
        transfer.generator.base_width = 8;
        transfer.generator.residual_blocks = 2;
        transfer.discriminator.base_width = 8;
        let classifier = ClassifierConfig {
            image_size: 32,
            base_width: 16,
            ..ClassifierConfig::default()
        };
        Self {
            seed: 0,
            synthetic: SyntheticDomainSpec::default(),
            transfer,
            classifier,
            oversample_floor: 200,
            classes: None,
        }
    }
}

impl DeskConfig {
    /// Transfer config for one pair, with the pair's own seed.
    pub fn pair_config(&self, cell: CellClass) -> TransferConfig {
        let pm = ClassPairMap::default();
        TransferConfig {
            cell_class: cell,
            flower_class: pm.map_class(cell),
            seed: derive_seed(self.seed, &format!("transfer.{}", cell.name())),
            ..self.transfer.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskOutcome {
    pub report: ExperimentReport,
    pub histories: BTreeMap<CellClass, Vec<HistoryRow>>,
    pub classifier: CellClassifier,
    pub cells: DatasetManifest,
    pub flowers: DatasetManifest,
}

impl DeskOutcome {
    /// Per-pair mean cycle loss of the first and last epoch.
    pub fn cycle_trend(&self) -> BTreeMap<CellClass, (f64, f64)> {
        self.histories
            .iter()
            .filter_map(|(c, h)| Some((*c, (h.first()?.cycle_mean(), h.last()?.cycle_mean()))))
            .collect()
    }
}

/// Generate the fixture, train every pair and the classifier, and run the
/// experiment. Layout under `work_dir`: `data/`, `transfer/<class>/`,
/// `classifier/`, `experiment/` and `report.json`.
pub fn run_desk_pipeline(cfg: &DeskConfig, work_dir: &Path) -> Result<DeskOutcome> {
    fs::create_dir_all(work_dir).at(work_dir)?;
    fs::write(work_dir.join("desk_config.json"), serde_json::to_vec_pretty(cfg)?).at(work_dir)?;
    let spec = SyntheticDomainSpec {
        seed: derive_seed(cfg.seed, "synthetic"),
        ..cfg.synthetic.clone()
    };
    let (cells, flowers) = generate_synthetic_domains(&spec, &work_dir.join("data"))?;
    let split_seed = derive_seed(cfg.seed, "split");
    let cells = split_manifest(&cells, SplitRatios::default(), split_seed)?;
    let flowers = split_manifest(&flowers, SplitRatios::default(), split_seed)?;
    cells.write_jsonl(&work_dir.join("cells.jsonl"))?;
    flowers.write_jsonl(&work_dir.join("flowers.jsonl"))?;

    let classes = cfg.classes.clone().unwrap_or_else(|| CellClass::ALL.to_vec());
    let mut translators: TranslatorSet = BTreeMap::new();
    let mut histories = BTreeMap::new();
    for cell in classes {
        let pair = cfg.pair_config(cell);
        let opts = TrainOptions {
            out_dir: Some(work_dir.join("transfer").join(cell.name())),
            ..TrainOptions::default()
        };
        tracing::info!(class = cell.name(), "training pair");
        let ck = train_pair(&pair, &cells, &flowers, &opts)?;
        histories.insert(cell, ck.history.clone());
        translators.insert(cell, Box::new(TransferModel::from_checkpoint(&ck)) as Box<dyn Translator>);
    }

    let train_cells = oversample_training(&cells, cfg.oversample_floor, derive_seed(cfg.seed, "oversample"))?;
    let cls_cfg = ClassifierConfig {
        seed: derive_seed(cfg.seed, "classifier"),
        ..cfg.classifier.clone()
    };
    tracing::info!("training classifier");
    let mut classifier = train_classifier(&train_cells, &cls_cfg)?;
    classifier.save(&work_dir.join("classifier"))?;

    let tested = cells.filter(|r| r.cell_class().is_some_and(|c| translators.contains_key(&c)));
    let report = run_experiment(
        &tested,
        &translators,
        &classifier,
        &ExperimentOptions {
            work_dir: work_dir.join("experiment"),
            triplets: false,
            timestamps: false,
        },
    )?;
    report.write(&work_dir.join("report.json"))?;
    Ok(DeskOutcome {
        report,
        histories,
        classifier,
        cells,
        flowers,
    })
}

/// History CSV of one pair inside a desk work directory.
pub fn desk_history_path(work_dir: &Path, cell: CellClass) -> PathBuf {
    work_dir.join("transfer").join(cell.name()).join("history.csv")
}
