use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tracing::warn;

use super::classes::{CellClass, FlowerClass};
use super::record::{ClassLabel, DatasetManifest, Domain, ImageRecord, SourceBox};
use crate::error::{CoreError, IoContext, Result};
use crate::imaging;

pub const MIN_PATCH_SIZE: usize = 16;
pub const DEFAULT_PATCH_SIZE: usize = 64;

/// One bounding-box annotation from an exported annotation document.
#[derive(Debug, Clone, Deserialize)]
pub struct BoxAnnotation {
    pub slide: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AnnotationDocument {
    List(Vec<BoxAnnotation>),
    Wrapped { annotations: Vec<BoxAnnotation> },
}

pub fn read_annotations(path: &Path) -> Result<Vec<BoxAnnotation>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let doc: AnnotationDocument = serde_json::from_str(&text)?;
    Ok(match doc {
        AnnotationDocument::List(v) => v,
        AnnotationDocument::Wrapped { annotations } => annotations,
    })
}

/// Square crop of side `patch` centered on the box center, shifted (never
/// shrunk) to lie inside a `width × height` image. Returns the top-left
/// corner, or `None` when the box lies entirely outside the image.
pub fn crop_origin(b: &BoxAnnotation, width: usize, height: usize, patch: usize) -> Option<(usize, usize)> {
    let (wf, hf) = (width as f64, height as f64);
    if b.x + b.w <= 0.0 || b.y + b.h <= 0.0 || b.x >= wf || b.y >= hf {
        return None;
    }
    let cx = (b.x + b.w / 2.0).floor() as i64;
    let cy = (b.y + b.h / 2.0).floor() as i64;
    let half = (patch / 2) as i64;
    let x0 = (cx - half).clamp(0, (width - patch) as i64);
    let y0 = (cy - half).clamp(0, (height - patch) as i64);
    Some((x0 as usize, y0 as usize))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub written: usize,
    /// Boxes entirely outside their slide image.
    pub skipped_outside: usize,
    /// Entries without a class label.
    pub skipped_unlabeled: usize,
}

fn resolve_slide(image_root: &Path, slide: &str) -> Option<PathBuf> {
    let direct = image_root.join(slide);
    if direct.is_file() {
        return Some(direct);
    }
    ["png", "jpg", "jpeg", "PNG", "JPG", "JPEG"]
        .iter()
        .map(|ext| image_root.join(format!("{slide}.{ext}")))
        .find(|p| p.is_file())
}

fn slide_stem(slide: &str) -> String {
    let stem = Path::new(slide).file_stem().and_then(|s| s.to_str()).unwrap_or(slide);
    stem.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Crop one patch per labeled annotation into `<out_root>/cell/<class>/<id>.png`.
pub fn ingest_cells(
    annotation_file: &Path,
    image_root: &Path,
    patch_size: usize,
    out_root: &Path,
    seed: u64,
) -> Result<(DatasetManifest, IngestReport)> {
    if patch_size < MIN_PATCH_SIZE {
        return Err(CoreError::Invalid(format!(
            "patch size {patch_size} is below the minimum of {MIN_PATCH_SIZE}"
        )));
    }
    let entries = read_annotations(annotation_file)?;
    let mut report = IngestReport::default();

    // Resolve and parse everything before touching pixels.
    let mut work: BTreeMap<PathBuf, Vec<(usize, CellClass)>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        let Some(label) = e.label.as_deref() else {
            report.skipped_unlabeled += 1;
            continue;
        };
        let class: CellClass = label
            .parse()
            .map_err(|_| CoreError::Ingest(format!("entry {i} (slide `{}`): unknown label `{label}`", e.slide)))?;
        let path = resolve_slide(image_root, &e.slide).ok_or_else(|| {
            CoreError::Ingest(format!(
                "entry {i}: image for slide `{}` not found under {}",
                e.slide,
                image_root.display()
            ))
        })?;
        work.entry(path).or_default().push((i, class));
    }

    let mut records: Vec<(usize, ImageRecord)> = Vec::new();
    for (slide_path, items) in work {
        let img = imaging::load_rgb8(&slide_path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w < patch_size || h < patch_size {
            return Err(CoreError::Ingest(format!(
                "slide {} ({w}x{h}) is smaller than patch size {patch_size}",
                slide_path.display()
            )));
        }
        for (i, class) in items {
            let e = &entries[i];
            let Some((x0, y0)) = crop_origin(e, w, h, patch_size) else {
                report.skipped_outside += 1;
                continue;
            };
            let id = format!("{}_{i:06}", slide_stem(&e.slide));
            let patch = image::imageops::crop_imm(&img, x0 as u32, y0 as u32, patch_size as u32, patch_size as u32).to_image();
            let out = out_root.join("cell").join(class.name()).join(format!("{id}.png"));
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).at(parent)?;
            }
            patch.save(&out).map_err(|source| CoreError::Image {
                path: out.clone(),
                source,
            })?;
            let mut rec = ImageRecord::new(id, out, class.into());
            rec.source = Some(SourceBox {
                slide: e.slide.clone(),
                x: e.x,
                y: e.y,
                w: e.w,
                h: e.h,
            });
            records.push((i, rec));
        }
    }
    if report.skipped_outside > 0 {
        warn!(count = report.skipped_outside, "skipped boxes outside their slide");
    }
    records.sort_by_key(|(i, _)| *i);
    report.written = records.len();
    let manifest = DatasetManifest::new(Domain::Cell, seed, records.into_iter().map(|(_, r)| r).collect())?;
    Ok((manifest, report))
}

/// Maps directory names (case-insensitive) to flower classes.
#[derive(Debug, Clone)]
pub struct FlowerAliases(HashMap<String, FlowerClass>);

impl Default for FlowerAliases {
    fn default() -> Self {
        let mut m = HashMap::new();
        for f in FlowerClass::ALL {
            m.insert(f.name().to_string(), f);
            m.insert(format!("{}s", f.name()), f);
        }
        for (alias, f) in [
            ("coltsfoots", FlowerClass::Coltsfoot),
            ("colts_foot", FlowerClass::Coltsfoot),
            ("wind_flower", FlowerClass::Windflower),
            ("anemone", FlowerClass::Windflower),
            ("sun_flower", FlowerClass::Sunflower),
            ("narcissus", FlowerClass::Daffodil),
        ] {
            m.insert(alias.to_string(), f);
        }
        Self(m)
    }
}

impl FlowerAliases {
    pub fn empty() -> Self {
        Self(HashMap::new())
    }

    pub fn insert(&mut self, alias: &str, class: FlowerClass) {
        self.0.insert(alias.to_lowercase(), class);
    }

    pub fn resolve(&self, dir_name: &str) -> Option<FlowerClass> {
        self.0.get(&dir_name.to_lowercase()).copied()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .at(dir)?;
    v.retain(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')));
    v.sort();
    Ok(v)
}

/// One record per image found in `<image_root>/<class dir>/`.
pub fn ingest_flowers(image_root: &Path, aliases: &FlowerAliases, seed: u64) -> Result<DatasetManifest> {
    let mut classes = Vec::new();
    let mut unknown = Vec::new();
    for dir in sorted_entries(image_root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        match aliases.resolve(&name) {
            Some(f) => classes.push((dir, f)),
            None => unknown.push(name),
        }
    }
    if !unknown.is_empty() {
        return Err(CoreError::UnknownFlowerDirs(unknown));
    }
    let mut records = Vec::new();
    for (dir, class) in classes {
        for file in sorted_entries(&dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let id = format!("{}_{stem}", class.name());
            records.push(ImageRecord::new(id, file, ClassLabel::Flower(class)));
        }
    }
    DatasetManifest::new(Domain::Flower, seed, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbox(x: f64, y: f64, w: f64, h: f64) -> BoxAnnotation {
        BoxAnnotation {
            slide: "s".into(),
            x,
            y,
            w,
            h,
            label: Some("macrophage".into()),
        }
    }

    #[test]
    fn centered_crop() {
        // center (50, 50)
        assert_eq!(crop_origin(&bbox(40.0, 40.0, 20.0, 20.0), 100, 100, 32), Some((34, 34)));
    }

    #[test]
    fn crop_is_shifted_inside() {
        // center (5, 5)
        assert_eq!(crop_origin(&bbox(0.0, 0.0, 10.0, 10.0), 100, 100, 32), Some((0, 0)));
        // center (98, 97)
        assert_eq!(crop_origin(&bbox(96.0, 95.0, 4.0, 4.0), 100, 100, 32), Some((68, 68)));
    }

    #[test]
    fn box_outside_is_none() {
        assert_eq!(crop_origin(&bbox(120.0, 10.0, 5.0, 5.0), 100, 100, 32), None);
        assert_eq!(crop_origin(&bbox(-10.0, 10.0, 10.0, 5.0), 100, 100, 32), None);
    }

    #[test]
    fn aliases_are_case_insensitive() {
        let a = FlowerAliases::default();
        assert_eq!(a.resolve("Sunflowers"), Some(FlowerClass::Sunflower));
        assert_eq!(a.resolve("roses"), None);
    }
}
