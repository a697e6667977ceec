use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classes::{CellClass, FlowerClass, NUM_CLASSES};
use crate::error::{CoreError, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Cell,
    Flower,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Cell => "cell",
            Domain::Flower => "flower",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Cell => Domain::Flower,
            Domain::Flower => Domain::Cell,
        }
    }

    /// Canonical class names of this domain, in index order.
    pub fn class_names(self) -> [&'static str; NUM_CLASSES] {
        match self {
            Domain::Cell => CellClass::ALL.map(|c| c.name()),
            Domain::Flower => FlowerClass::ALL.map(|f| f.name()),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

/// A class of either domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    Cell(CellClass),
    Flower(FlowerClass),
}

impl ClassLabel {
    pub fn domain(self) -> Domain {
        match self {
            ClassLabel::Cell(_) => Domain::Cell,
            ClassLabel::Flower(_) => Domain::Flower,
        }
    }

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Cell(c) => c.index(),
            ClassLabel::Flower(f) => f.index(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Cell(c) => c.name(),
            ClassLabel::Flower(f) => f.name(),
        }
    }

    pub fn parse(domain: Domain, name: &str) -> Result<Self> {
        Ok(match domain {
            Domain::Cell => ClassLabel::Cell(name.parse()?),
            Domain::Flower => ClassLabel::Flower(name.parse()?),
        })
    }

    pub fn from_index(domain: Domain, i: usize) -> Option<Self> {
        match domain {
            Domain::Cell => CellClass::from_index(i).map(ClassLabel::Cell),
            Domain::Flower => FlowerClass::from_index(i).map(ClassLabel::Flower),
        }
    }

    pub fn as_cell(self) -> Option<CellClass> {
        match self {
            ClassLabel::Cell(c) => Some(c),
            ClassLabel::Flower(_) => None,
        }
    }

    pub fn as_flower(self) -> Option<FlowerClass> {
        match self {
            ClassLabel::Flower(f) => Some(f),
            ClassLabel::Cell(_) => None,
        }
    }
}

impl From<CellClass> for ClassLabel {
    fn from(c: CellClass) -> Self {
        ClassLabel::Cell(c)
    }
}

impl From<FlowerClass> for ClassLabel {
    fn from(f: FlowerClass) -> Self {
        ClassLabel::Flower(f)
    }
}

/// Bounding box of a record in its source slide, in source pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBox {
    pub slide: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub domain: Domain,
    pub class_label: Option<ClassLabel>,
    pub split: Split,
    pub source: Option<SourceBox>,
    /// Id of the record whose pixels this one reuses (oversampling duplicates,
    /// reconstructions, crowd labels).
    pub derived_from: Option<String>,
    /// Fraction of annotators agreeing with `class_label` for crowd labels.
    pub agreement: Option<f64>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>, label: ClassLabel) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            domain: label.domain(),
            class_label: Some(label),
            split: Split::Unassigned,
            source: None,
            derived_from: None,
            agreement: None,
        }
    }

    pub fn cell_class(&self) -> Option<CellClass> {
        self.class_label.and_then(ClassLabel::as_cell)
    }

    pub fn flower_class(&self) -> Option<FlowerClass> {
        self.class_label.and_then(ClassLabel::as_flower)
    }
}

/// On-disk line format of a record.
#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    id: String,
    path: PathBuf,
    domain: Domain,
    class: Option<String>,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<SourceBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    derived_from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    agreement: Option<f64>,
}

impl From<&ImageRecord> for RecordRow {
    fn from(r: &ImageRecord) -> Self {
        Self {
            id: r.id.clone(),
            path: r.path.clone(),
            domain: r.domain,
            class: r.class_label.map(|c| c.name().to_string()),
            split: r.split,
            source: r.source.clone(),
            derived_from: r.derived_from.clone(),
            agreement: r.agreement,
        }
    }
}

impl TryFrom<RecordRow> for ImageRecord {
    type Error = CoreError;

    fn try_from(row: RecordRow) -> Result<Self> {
        let class_label = row.class.as_deref().map(|c| ClassLabel::parse(row.domain, c)).transpose()?;
        Ok(Self {
            id: row.id,
            path: row.path,
            domain: row.domain,
            class_label,
            split: row.split,
            source: row.source,
            derived_from: row.derived_from,
            agreement: row.agreement,
        })
    }
}

/// Per-class record counts in canonical class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Census {
    pub counts: [usize; NUM_CLASSES],
    pub unlabeled: usize,
}

impl Census {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a ImageRecord>) -> Self {
        let mut c = Census::default();
        for r in records {
            match r.class_label {
                Some(l) => c.counts[l.index()] += 1,
                None => c.unlabeled += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.unlabeled
    }

    pub fn get(&self, label: ClassLabel) -> usize {
        self.counts[label.index()]
    }

    fn to_map(self, domain: Domain) -> BTreeMap<String, usize> {
        let mut m: BTreeMap<String, usize> = domain
            .class_names()
            .iter()
            .zip(self.counts)
            .map(|(n, c)| (n.to_string(), c))
            .collect();
        if self.unlabeled > 0 {
            m.insert("unlabeled".into(), self.unlabeled);
        }
        m
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    domain: Domain,
    seed: u64,
    census: BTreeMap<String, usize>,
    total: usize,
}

/// Typed, validated collection of records of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    domain: Domain,
    seed: u64,
    records: Vec<ImageRecord>,
    census: Census,
}

impl DatasetManifest {
    /// Validates label domains and id uniqueness and computes the census.
    pub fn new(domain: Domain, seed: u64, records: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.domain != domain {
                return Err(CoreError::Invalid(format!(
                    "record `{}` has domain {} in a {domain} manifest",
                    r.id, r.domain
                )));
            }
            if let Some(l) = r.class_label {
                if l.domain() != domain {
                    return Err(CoreError::Invalid(format!(
                        "record `{}` has a {} label in a {domain} manifest",
                        r.id,
                        l.domain()
                    )));
                }
            }
            if !seen.insert(r.id.as_str()) {
                return Err(CoreError::Invalid(format!("duplicate record id `{}`", r.id)));
            }
        }
        let census = Census::of(&records);
        Ok(Self {
            domain,
            seed,
            records,
            census,
        })
    }

    pub fn empty(domain: Domain, seed: u64) -> Self {
        Self::new(domain, seed, Vec::new()).expect("empty manifest is valid")
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn census(&self) -> &Census {
        &self.census
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Census restricted to one split.
    pub fn split_census(&self, split: Split) -> Census {
        Census::of(self.records.iter().filter(|r| r.split == split))
    }

    /// New manifest with the records matching `keep`.
    pub fn filter(&self, keep: impl Fn(&ImageRecord) -> bool) -> Self {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Self::new(self.domain, self.seed, records).expect("subset of a valid manifest is valid")
    }

    pub fn with_split(&self, split: Split) -> Self {
        self.filter(|r| r.split == split)
    }

    pub fn with_class(&self, label: ClassLabel) -> Self {
        self.filter(|r| r.class_label == Some(label))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).at(parent)?;
        }
        let base = path.parent().unwrap_or(Path::new(""));
        std::fs::write(path, self.encode(Some(base))?).at(path)
    }

    /// Header line followed by one line per record, paths as stored.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        self.encode(None)
    }

    /// With a `base`, image paths under it are written relative to it and
    /// other relative paths are made absolute, so the file can be moved
    /// together with its images.
    fn encode(&self, base: Option<&Path>) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        let header = ManifestHeader {
            domain: self.domain,
            seed: self.seed,
            census: self.census.to_map(self.domain),
            total: self.census.total(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.push(b'\n');
        for r in &self.records {
            let mut row = RecordRow::from(r);
            if let Some(base) = base {
                row.path = match row.path.strip_prefix(base) {
                    Ok(rel) if !base.as_os_str().is_empty() => rel.to_path_buf(),
                    _ if row.path.is_relative() => std::path::absolute(&row.path).at(&row.path)?,
                    _ => row.path,
                };
            }
            serde_json::to_writer(&mut w, &row)?;
            w.push(b'\n');
        }
        Ok(w)
    }

    /// Read a manifest, checking that the stored census matches a recount.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::decode(&text, &path.display().to_string(), path.parent())
    }

    /// Parse the output of [`DatasetManifest::to_jsonl`]; `origin` names the source in errors.
    pub fn parse_jsonl(text: &str, origin: &str) -> Result<Self> {
        Self::decode(text, origin, None)
    }

    fn decode(text: &str, origin: &str, base: Option<&Path>) -> Result<Self> {
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| CoreError::Invalid(format!("{origin} is empty")))?;
        let header: ManifestHeader = serde_json::from_str(header_line)?;
        let mut records = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut row: RecordRow = serde_json::from_str(line)?;
            if let Some(base) = base.filter(|_| row.path.is_relative()) {
                row.path = base.join(&row.path);
            }
            records.push(ImageRecord::try_from(row)?);
        }
        let m = Self::new(header.domain, header.seed, records)?;
        if m.census.to_map(m.domain) != header.census || header.total != m.len() {
            return Err(CoreError::Invalid(format!("{origin}: stored census does not match records")));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, c: CellClass) -> ImageRecord {
        ImageRecord::new(id, format!("/tmp/{id}.png"), c.into())
    }

    #[test]
    fn rejects_duplicate_ids_and_wrong_domain() {
        let dup = vec![rec("a", CellClass::Macrophage), rec("a", CellClass::Lymphocyte)];
        assert!(DatasetManifest::new(Domain::Cell, 0, dup).is_err());
        let wrong = vec![ImageRecord::new("f", "/x.png", FlowerClass::Daisy.into())];
        assert!(DatasetManifest::new(Domain::Cell, 0, wrong).is_err());
    }

    #[test]
    fn jsonl_roundtrip_preserves_everything() {
        let mut r = rec("a", CellClass::MastCell);
        r.split = Split::Test;
        r.source = Some(SourceBox {
            slide: "s1".into(),
            x: 1.0,
            y: 2.0,
            w: 3.0,
            h: 4.0,
        });
        let mut u = rec("b", CellClass::Eosinophil);
        u.class_label = None;
        u.derived_from = Some("a".into());
        let m = DatasetManifest::new(Domain::Cell, 42, vec![r, u]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        m.write_jsonl(&path).unwrap();
        let back = DatasetManifest::read_jsonl(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.census().unlabeled, 1);
        assert_eq!(back.census().get(CellClass::MastCell.into()), 1);

        let text = std::fs::read_to_string(&path).unwrap();
        let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(header["seed"], 42);
        assert_eq!(header["census"]["mast_cell"], 1);
    }

    #[test]
    fn tampered_census_is_rejected() {
        let m = DatasetManifest::new(Domain::Cell, 1, vec![rec("a", CellClass::Neutrophil)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        m.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("\"neutrophil\":1", "\"neutrophil\":2");
        std::fs::write(&path, text).unwrap();
        assert!(DatasetManifest::read_jsonl(&path).is_err());
    }
}
