//! Typed image manifests: class pairing, ingest, splits, oversampling and
//! augmentation policy.

mod augment;
mod classes;
mod ingest;
mod record;
mod split;

pub use augment::{augment, hflip, rotate, vflip, AugmentationSpec};
pub use classes::{CellClass, ClassPairMap, FlowerClass, NUM_CLASSES};
pub use ingest::{
    crop_origin, ingest_cells, ingest_flowers, read_annotations, BoxAnnotation, FlowerAliases, IngestReport,
    DEFAULT_PATCH_SIZE, MIN_PATCH_SIZE,
};
pub use record::{Census, ClassLabel, DatasetManifest, Domain, ImageRecord, SourceBox, Split};
pub use split::{order_key, oversample_training, split_manifest, SplitRatios};

/// Flower class paired with `c`.
pub fn map_class(c: CellClass, pm: &ClassPairMap) -> FlowerClass {
    pm.map_class(c)
}

/// Cell class paired with `f`.
pub fn unmap_class(f: FlowerClass, pm: &ClassPairMap) -> CellClass {
    pm.unmap_class(f)
}
