use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cellbloom_core::harness::TranslatorSet;
use cellbloom_core::imaging::{load_image, save_image};
use cellbloom_core::manifest::{CellClass, ClassPairMap, DatasetManifest, Domain, FlowerClass, ImageRecord};
use cellbloom_core::transfer::Direction;
use cellbloom_core::CoreError;

use crate::error::{ServeError, ServeResult};
use crate::store::TaskStore;

pub const DEFAULT_REQUIRED_ANNOTATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Complete,
}

/// Where a task's flower image came from. Never sent to annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub source_path: PathBuf,
    pub cell_class: CellClass,
    pub flower_class: FlowerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: u64,
    /// File name inside the store's image directory.
    pub image: String,
    pub provenance: Provenance,
    pub required_annotations: usize,
    pub status: TaskStatus,
}

impl AnnotationTask {
    pub fn view(&self) -> TaskView {
        TaskView {
            task_id: self.task_id,
            image_url: format!("/api/images/{}", self.task_id),
            classes: FlowerClass::ALL.map(|f| f.name().to_string()),
        }
    }
}

/// The annotator-facing part of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: u64,
    pub image_url: String,
    pub classes: [String; 7],
}

/// Render every labeled cell of `cells` into its paired flower domain and
/// initialize a task store in `data_dir`. Task ids follow manifest order
/// starting at 1.
pub fn create_tasks(
    cells: &DatasetManifest,
    translators: &TranslatorSet,
    pm: &ClassPairMap,
    required_annotations: usize,
    image_size: usize,
    data_dir: &Path,
) -> ServeResult<TaskStore> {
    if cells.domain() != Domain::Cell {
        return Err(ServeError::Invalid("tasks are made from a cell manifest".into()));
    }
    if required_annotations == 0 {
        return Err(ServeError::Invalid("required annotations must be at least 1".into()));
    }
    let mut groups: BTreeMap<CellClass, Vec<(usize, &ImageRecord)>> = BTreeMap::new();
    for (i, r) in cells.records().iter().enumerate() {
        let class = r
            .cell_class()
            .ok_or_else(|| ServeError::Invalid(format!("record {} has no cell class", r.id)))?;
        groups.entry(class).or_default().push((i, r));
    }
    if let Some(missing) = groups.keys().find(|c| !translators.contains_key(c)) {
        return Err(CoreError::MissingCheckpoint(missing.name().to_string()).into());
    }
    let images_dir = data_dir.join(TaskStore::IMAGE_DIR);
    let mut tasks: Vec<Option<AnnotationTask>> = vec![None; cells.len()];
    for (class, records) in &groups {
        let originals = records
            .iter()
            .map(|(_, r)| load_image(&r.path, Some(image_size)))
            .collect::<Result<Vec<_>, _>>()?;
        let flowers = translators[class].translate(&originals, Direction::CellToFlower)?;
        for ((i, r), flower) in records.iter().zip(&flowers) {
            let task_id = *i as u64 + 1;
            let image = format!("{task_id:06}.png");
            save_image(&images_dir.join(&image), flower)?;
            tasks[*i] = Some(AnnotationTask {
                task_id,
                image,
                provenance: Provenance {
                    source_id: r.id.clone(),
                    source_path: r.path.clone(),
                    cell_class: *class,
                    flower_class: pm.map_class(*class),
                },
                required_annotations,
                status: TaskStatus::Open,
            });
        }
    }
    TaskStore::create(data_dir, pm.clone(), tasks.into_iter().flatten().collect())
}
