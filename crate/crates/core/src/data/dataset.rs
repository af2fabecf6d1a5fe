use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// One label column: class indices in `0..arity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelColumn {
    pub name: String,
    pub arity: usize,
    pub values: Vec<usize>,
}

impl LabelColumn {
    /// Output width a classifier needs for this column.
    pub fn output_width(&self) -> usize {
        if self.arity == 2 {
            1
        } else {
            self.arity
        }
    }

    /// Targets for the given rows: a 0/1 column for binary labels, one-hot otherwise.
    pub fn targets(&self, rows: &[usize]) -> Tensor2 {
        let width = self.output_width();
        let mut t = Tensor2::zeros(rows.len(), width);
        for (r, &i) in rows.iter().enumerate() {
            let v = self.values[i];
            if width == 1 {
                t.set(r, 0, v as f64);
            } else {
                t.set(r, v, 1.0);
            }
        }
        t
    }
}

/// Feature matrix with one or more label columns and optional subject ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub features: Tensor2,
    pub labels: Vec<LabelColumn>,
    pub subject_ids: Option<Vec<u32>>,
}

impl TabularDataset {
    pub fn new(
        features: Tensor2,
        labels: Vec<LabelColumn>,
        subject_ids: Option<Vec<u32>>,
    ) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            subject_ids,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        for col in &self.labels {
            if col.values.len() != n {
                return Err(Error::Ingestion(format!(
                    "label column `{}` has {} rows, features have {n}",
                    col.name,
                    col.values.len()
                )));
            }
            if col.arity < 2 {
                return Err(Error::Ingestion(format!(
                    "label column `{}` needs at least two classes",
                    col.name
                )));
            }
            if let Some(bad) = col.values.iter().find(|v| **v >= col.arity) {
                return Err(Error::Ingestion(format!(
                    "label column `{}` holds class {bad} outside 0..{}",
                    col.name, col.arity
                )));
            }
        }
        if let Some(s) = &self.subject_ids {
            if s.len() != n {
                return Err(Error::Ingestion(format!(
                    "subject column has {} rows, features have {n}",
                    s.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn task_count(&self) -> usize {
        self.labels.len()
    }

    pub fn task_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }

    /// Row-wise concatenation of two datasets with identical label layouts.
    pub fn concat(&self, other: &TabularDataset) -> Result<Self> {
        if self.labels.len() != other.labels.len()
            || self
                .labels
                .iter()
                .zip(&other.labels)
                .any(|(a, b)| a.name != b.name || a.arity != b.arity)
        {
            return Err(Error::Ingestion("label layouts differ".into()));
        }
        let features = Tensor2::vstack(&[&self.features, &other.features])
            .map_err(|_| Error::Ingestion("feature widths differ".into()))?;
        let labels = self
            .labels
            .iter()
            .zip(&other.labels)
            .map(|(a, b)| LabelColumn {
                name: a.name.clone(),
                arity: a.arity,
                values: a.values.iter().chain(&b.values).copied().collect(),
            })
            .collect();
        let subject_ids = match (&self.subject_ids, &other.subject_ids) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (None, None) => None,
            _ => return Err(Error::Ingestion("only one side has subject ids".into())),
        };
        Self::new(features, labels, subject_ids)
    }

    /// Standardizes each feature column to zero mean and unit variance.
    pub fn standardize(&mut self) {
        let (n, d) = self.features.shape();
        if n == 0 {
            return;
        }
        for c in 0..d {
            let mean = (0..n).map(|r| self.features.get(r, c)).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|r| (self.features.get(r, c) - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in 0..n {
                let v = self.features.get(r, c);
                self.features.set(r, c, (v - mean) / sd);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(arity: usize, values: Vec<usize>) -> LabelColumn {
        LabelColumn {
            name: "y".into(),
            arity,
            values,
        }
    }

    #[test]
    fn binary_targets_are_a_single_column() {
        let t = col(2, vec![1, 0, 1]).targets(&[2, 1]);
        assert_eq!(t.shape(), (2, 1));
        assert_eq!(t.data(), &[1.0, 0.0]);
    }

    #[test]
    fn multiclass_targets_are_one_hot() {
        let t = col(6, vec![5, 0]).targets(&[0, 1]);
        assert_eq!(t.shape(), (2, 6));
        assert_eq!(t.row(0), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.row(1), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn validate_catches_length_and_range() {
        let x = Tensor2::zeros(2, 1);
        assert!(TabularDataset::new(x.clone(), vec![col(2, vec![0])], None).is_err());
        assert!(TabularDataset::new(x.clone(), vec![col(2, vec![0, 2])], None).is_err());
        assert!(TabularDataset::new(x, vec![col(2, vec![0, 1])], Some(vec![1])).is_err());
    }

    #[test]
    fn standardize_centers_columns() {
        let x = Tensor2::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let mut ds = TabularDataset::new(x, vec![], None).unwrap();
        ds.standardize();
        assert_eq!(ds.features.data(), &[-1.0, 0.0, 1.0, 0.0]);
    }
}
