use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Square count matrix: rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new(classes);
        for (t, p) in pairs {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(CoreError::Invalid("confusion matrix must be square".into()));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.classes();
        if truth >= n || predicted >= n {
            return Err(CoreError::Invalid(format!(
                "class pair ({truth}, {predicted}) outside a {n}-class matrix"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    /// `trace / total`, or `None` for an empty matrix.
    pub fn overall_accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// Recall per true class; `None` where the class has no samples.
    pub fn per_class_recall(&self) -> Vec<Option<f64>> {
        (0..self.classes())
            .map(|i| {
                let row = self.row_total(i);
                (row > 0).then(|| self.counts[i][i] as f64 / row as f64)
            })
            .collect()
    }

    /// Mean recall over the classes that have samples.
    pub fn macro_accuracy(&self) -> Option<f64> {
        let present: Vec<f64> = self.per_class_recall().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }

    /// CSV with a header row of class names and one labeled row per true class.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = String::from("true\\predicted");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(names.get(i).copied().unwrap_or("?"));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
