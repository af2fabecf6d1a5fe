//! Precomputed feature vectors standing in for a frozen extractor.
//!
//! File layout: a header line `rows cols`, then one whitespace-separated row
//! per dataset row, index-aligned with the dataset.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor2;

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEmbeddings {
    table: Tensor2,
}

impl FrozenEmbeddings {
    pub fn new(table: Tensor2) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &Tensor2 {
        &self.table
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    /// Replaces the dataset's features by the embedding rows.
    pub fn apply(&self, dataset: &TabularDataset) -> Result<TabularDataset> {
        if self.table.rows() != dataset.len() {
            return Err(Error::Ingestion(format!(
                "{} embedding rows for {} dataset rows",
                self.table.rows(),
                dataset.len()
            )));
        }
        let mut out = dataset.clone();
        out.features = self.table.clone();
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = format!("{} {}\n", self.table.rows(), self.table.cols());
        for r in 0..self.table.rows() {
            let row = self.table.row(r);
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                write!(s, "{v:?}").expect("string write");
            }
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

pub fn load_frozen_embeddings(path: impl AsRef<Path>) -> Result<FrozenEmbeddings> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing `rows cols` header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(1, format!("bad header `{header}`")))?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(
            1,
            format!("header must be `rows cols`, got `{header}`"),
        ));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (idx, line) in lines {
        let before = data.len();
        for field in line.split_whitespace() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("non-numeric field `{field}`")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Ingestion(format!(
                "line {} of {} has {} values, header declares {cols}",
                idx + 1,
                path.display(),
                data.len() - before
            )));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Ingestion(format!(
            "{} declares {rows} rows but holds {seen}",
            path.display()
        )));
    }
    Ok(FrozenEmbeddings::new(Tensor2::from_vec(rows, cols, data)?))
}
