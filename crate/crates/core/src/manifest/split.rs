use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::record::{ClassLabel, DatasetManifest, ImageRecord, Split};
use crate::error::{CoreError, Result};

/// Guards `floor(n * ratio)` against ratios like 0.29 that are not exact in binary.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            test: 0.1,
            val: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.test, self.val];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(CoreError::Invalid(format!("split ratios must lie in [0, 1]: {self:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CoreError::Invalid(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// `(train, test, val)` counts for a class of `n` records; train takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let take = |r: f64| ((n as f64) * r + FLOOR_SLACK).floor() as usize;
        let test = take(self.test);
        let val = take(self.val);
        (n - test - val, test, val)
    }
}

/// Stable pseudo-random sort key of a record id under a seed.
pub fn order_key(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn class_key(r: &ImageRecord) -> Option<usize> {
    r.class_label.map(ClassLabel::index)
}

fn class_name(m: &DatasetManifest, key: Option<usize>) -> String {
    key.map(|i| m.domain().class_names()[i].to_string())
        .unwrap_or_else(|| "unlabeled".into())
}

/// Stratified split: per class, records ordered by [`order_key`] are assigned
/// train, then test, then val.
pub fn split_manifest(m: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, r) in m.records().iter().enumerate() {
        groups.entry(class_key(r)).or_default().push(i);
    }
    let mut records = m.records().to_vec();
    for (key, mut idx) in groups {
        if idx.len() < 3 {
            return Err(CoreError::TooFewRecords(class_name(m, key), idx.len()));
        }
        idx.sort_by_cached_key(|&i| (order_key(seed, &records[i].id), records[i].id.clone()));
        let (train, test, _) = ratios.counts(idx.len());
        for (pos, &i) in idx.iter().enumerate() {
            records[i].split = if pos < train {
                Split::Train
            } else if pos < train + test {
                Split::Test
            } else {
                Split::Val
            };
        }
    }
    DatasetManifest::new(m.domain(), seed, records)
}

/// Duplicate training records (sampled with replacement) of every class below
/// `floor_count` until it has exactly `floor_count` training entries.
pub fn oversample_training(m: &DatasetManifest, floor_count: usize, seed: u64) -> Result<DatasetManifest> {
    if m.records().iter().any(|r| r.split == Split::Unassigned) {
        return Err(CoreError::Invalid("oversampling needs split assignments".into()));
    }
    let mut train_by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut present: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, r) in m.records().iter().enumerate() {
        let Some(key) = class_key(r) else { continue };
        *present.entry(key).or_default() += 1;
        if r.split == Split::Train {
            train_by_class.entry(key).or_default().push(i);
        }
    }
    let mut ids: HashSet<String> = m.records().iter().map(|r| r.id.clone()).collect();
    let mut records = m.records().to_vec();
    for &key in present.keys() {
        let train = train_by_class.get(&key).map(Vec::as_slice).unwrap_or_default();
        if train.is_empty() {
            return Err(CoreError::Invalid(format!(
                "class `{}` has no training records to oversample",
                class_name(m, Some(key))
            )));
        }
        if train.len() >= floor_count {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (key as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for k in 0..floor_count - train.len() {
            let src = &m.records()[train[rng.random_range(0..train.len())]];
            let mut n = k;
            let id = loop {
                let candidate = format!("{}~dup{n}", src.id);
                if !ids.contains(&candidate) {
                    break candidate;
                }
                n += floor_count;
            };
            ids.insert(id.clone());
            let mut dup = src.clone();
            dup.derived_from = Some(src.derived_from.clone().unwrap_or_else(|| src.id.clone()));
            dup.id = id;
            records.push(dup);
        }
    }
    DatasetManifest::new(m.domain(), m.seed(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{CellClass, Domain};

    fn manifest(counts: &[(CellClass, usize)]) -> DatasetManifest {
        let mut records = Vec::new();
        for &(c, n) in counts {
            for i in 0..n {
                records.push(ImageRecord::new(format!("{c}-{i}"), format!("/p/{c}/{i}.png"), c.into()));
            }
        }
        DatasetManifest::new(Domain::Cell, 0, records).unwrap()
    }

    #[test]
    fn eighty_splits_64_8_8() {
        let m = split_manifest(&manifest(&[(CellClass::Macrophage, 80)]), SplitRatios::default(), 3).unwrap();
        assert_eq!(m.split_census(Split::Train).total(), 64);
        assert_eq!(m.split_census(Split::Test).total(), 8);
        assert_eq!(m.split_census(Split::Val).total(), 8);
    }

    #[test]
    fn split_counts_match_enumerated_floor_rule() {
        // Independent enumeration: count k with k < floor-boundaries by integer arithmetic.
        for n in 3..500usize {
            let (train, test, val) = SplitRatios::default().counts(n);
            let exact_tenth = n / 10; // floor(n * 0.1) in integers
            assert_eq!((test, val), (exact_tenth, exact_tenth), "n={n}");
            assert_eq!(train, n - 2 * exact_tenth);
        }
        assert_eq!(SplitRatios::default().counts(310), (248, 31, 31));
    }

    #[test]
    fn too_few_records_is_an_error() {
        let err = split_manifest(&manifest(&[(CellClass::Eosinophil, 2)]), SplitRatios::default(), 0).unwrap_err();
        assert!(matches!(err, CoreError::TooFewRecords(ref c, 2) if c == "eosinophil"));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let bad = SplitRatios {
            train: 0.8,
            test: 0.1,
            val: 0.2,
        };
        assert!(split_manifest(&manifest(&[(CellClass::Macrophage, 10)]), bad, 0).is_err());
    }

    #[test]
    fn oversampling_rule() {
        let m = manifest(&[(CellClass::Macrophage, 150), (CellClass::Lymphocyte, 2500)]);
        let m = DatasetManifest::new(
            Domain::Cell,
            0,
            m.into_records()
                .into_iter()
                .map(|mut r| {
                    r.split = Split::Train;
                    r
                })
                .collect(),
        )
        .unwrap();
        let o = oversample_training(&m, 2000, 9).unwrap();
        let c = o.split_census(Split::Train);
        assert_eq!(c.get(CellClass::Macrophage.into()), 2000);
        assert_eq!(c.get(CellClass::Lymphocyte.into()), 2500);
        // duplicates resolve to originals
        for r in o.records().iter().filter(|r| r.derived_from.is_some()) {
            let orig = m.get(r.derived_from.as_deref().unwrap()).unwrap();
            assert_eq!(orig.path, r.path);
        }
        // a second pass is a no-op
        assert_eq!(oversample_training(&o, 2000, 9).unwrap(), o);
    }

    #[test]
    fn zero_training_records_is_an_error() {
        let m = split_manifest(&manifest(&[(CellClass::Macrophage, 10)]), SplitRatios::default(), 0).unwrap();
        let m = m.filter(|r| r.split != Split::Train);
        assert!(oversample_training(&m, 20, 0).is_err());
    }
}
