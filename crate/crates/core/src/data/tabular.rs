//! Delimiter-separated numeric text, plus the UCI HAR directory layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{LabelColumn, TabularDataset};
use crate::error::{Error, Result};
use crate::nn::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    /// Any run of spaces or tabs.
    #[default]
    Whitespace,
    Comma,
    Tab,
    Semicolon,
}

impl Delimiter {
    fn split<'a>(self, line: &'a str) -> Box<dyn Iterator<Item = &'a str> + 'a> {
        match self {
            Delimiter::Whitespace => Box::new(line.split_whitespace()),
            Delimiter::Comma => Box::new(line.split(',').map(str::trim)),
            Delimiter::Tab => Box::new(line.split('\t').map(str::trim)),
            Delimiter::Semicolon => Box::new(line.split(';').map(str::trim)),
        }
    }
}

/// A label column inside a tabular file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub column: usize,
    pub name: String,
    pub arity: usize,
    /// Smallest label value as written in the file (HAR activities start at 1).
    #[serde(default)]
    pub base: i64,
}

/// Column roles of a tabular file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSchema {
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default)]
    pub has_header: bool,
    /// Feature columns; every column not used as a label or subject when absent.
    #[serde(default)]
    pub feature_columns: Option<Vec<usize>>,
    pub labels: Vec<LabelSpec>,
    #[serde(default)]
    pub subject_column: Option<usize>,
}

/// Numeric rows of a file with the line number each came from.
struct NumericTable {
    path: PathBuf,
    rows: Vec<(usize, Vec<f64>)>,
}

fn read_numeric(path: &Path, delimiter: Delimiter, has_header: bool) -> Result<NumericTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if has_header && idx == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut values = Vec::new();
        for field in delimiter.split(line) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                detail: format!("non-numeric field `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    detail: format!("non-finite value `{field}`"),
                });
            }
            values.push(v);
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    detail: format!("{} fields, expected {w}", values.len()),
                })
            }
            _ => {}
        }
        rows.push((line_no, values));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            detail: "file contains no data rows".into(),
        });
    }
    Ok(NumericTable {
        path: path.to_path_buf(),
        rows,
    })
}

impl NumericTable {
    fn width(&self) -> usize {
        self.rows[0].1.len()
    }

    fn label(&self, spec: &LabelSpec) -> Result<LabelColumn> {
        let mut values = Vec::with_capacity(self.rows.len());
        for (line, row) in &self.rows {
            let raw = *row.get(spec.column).ok_or_else(|| Error::Parse {
                path: self.path.clone(),
                line: *line,
                detail: format!("label column {} is missing", spec.column),
            })?;
            let lo = spec.base as f64;
            let hi = spec.base as f64 + spec.arity as f64 - 1.0;
            if raw.fract() != 0.0 || raw < lo || raw > hi {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line: *line,
                    detail: format!(
                        "label `{}` value {raw} outside {}..={}",
                        spec.name, spec.base, hi as i64
                    ),
                });
            }
            values.push((raw - lo) as usize);
        }
        Ok(LabelColumn {
            name: spec.name.clone(),
            arity: spec.arity,
            values,
        })
    }

    fn subjects(&self, column: usize) -> Result<Vec<u32>> {
        self.rows
            .iter()
            .map(|(line, row)| {
                let v = row[column];
                if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                    Err(Error::Parse {
                        path: self.path.clone(),
                        line: *line,
                        detail: format!("subject id {v} is not a non-negative integer"),
                    })
                } else {
                    Ok(v as u32)
                }
            })
            .collect()
    }

    fn features(&self, columns: &[usize]) -> Result<Tensor2> {
        let mut data = Vec::with_capacity(self.rows.len() * columns.len());
        for (_, row) in &self.rows {
            data.extend(columns.iter().map(|&c| row[c]));
        }
        Tensor2::from_vec(self.rows.len(), columns.len(), data)
    }
}

/// Loads one delimiter-separated file according to `schema`.
pub fn load_tabular(path: impl AsRef<Path>, schema: &TabularSchema) -> Result<TabularDataset> {
    let path = path.as_ref();
    let table = read_numeric(path, schema.delimiter, schema.has_header)?;
    let width = table.width();
    let mut reserved: Vec<usize> = schema.labels.iter().map(|l| l.column).collect();
    reserved.extend(schema.subject_column);
    if let Some(bad) = reserved.iter().find(|c| **c >= width) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: table.rows[0].0,
            detail: format!("column {bad} does not exist ({width} columns)"),
        });
    }
    let columns: Vec<usize> = match &schema.feature_columns {
        Some(cols) => {
            if let Some(bad) = cols.iter().find(|c| **c >= width) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: table.rows[0].0,
                    detail: format!("feature column {bad} does not exist ({width} columns)"),
                });
            }
            cols.clone()
        }
        None => (0..width).filter(|c| !reserved.contains(c)).collect(),
    };
    let labels = schema
        .labels
        .iter()
        .map(|l| table.label(l))
        .collect::<Result<Vec<_>>>()?;
    let subjects = schema
        .subject_column
        .map(|c| table.subjects(c))
        .transpose()?;
    TabularDataset::new(table.features(&columns)?, labels, subjects)
}

/// Number of activity classes in HAR.
pub const HAR_CLASSES: usize = 6;
/// Feature vector length in HAR.
pub const HAR_FEATURES: usize = 561;

/// Which half of the published HAR partition to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarSplit {
    Train,
    Test,
}

impl HarSplit {
    fn name(self) -> &'static str {
        match self {
            HarSplit::Train => "train",
            HarSplit::Test => "test",
        }
    }
}

/// Reads `<root>/<split>/{X,y,subject}_<split>.txt` from an unpacked UCI HAR archive.
pub fn load_har(root: impl AsRef<Path>, split: HarSplit) -> Result<TabularDataset> {
    let dir = root.as_ref().join(split.name());
    let name = split.name();
    let x = read_numeric(
        &dir.join(format!("X_{name}.txt")),
        Delimiter::Whitespace,
        false,
    )?;
    let y = read_numeric(
        &dir.join(format!("y_{name}.txt")),
        Delimiter::Whitespace,
        false,
    )?;
    let s = read_numeric(
        &dir.join(format!("subject_{name}.txt")),
        Delimiter::Whitespace,
        false,
    )?;
    for other in [&y, &s] {
        if other.rows.len() != x.rows.len() {
            let shorter = x.rows.len().min(other.rows.len());
            return Err(Error::Parse {
                path: other.path.clone(),
                line: shorter + 1,
                detail: format!(
                    "{} rows but {} has {}",
                    other.rows.len(),
                    x.path.display(),
                    x.rows.len()
                ),
            });
        }
    }
    let label = y.label(&LabelSpec {
        column: 0,
        name: "activity".into(),
        arity: HAR_CLASSES,
        base: 1,
    })?;
    let features = x.features(&(0..x.width()).collect::<Vec<_>>())?;
    TabularDataset::new(features, vec![label], Some(s.subjects(0)?))
}

/// Both published HAR halves pooled into one dataset.
pub fn load_har_pooled(root: impl AsRef<Path>) -> Result<TabularDataset> {
    let root = root.as_ref();
    load_har(root, HarSplit::Train)?.concat(&load_har(root, HarSplit::Test)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn schema() -> TabularSchema {
        TabularSchema {
            delimiter: Delimiter::Comma,
            has_header: true,
            feature_columns: None,
            labels: vec![LabelSpec {
                column: 2,
                name: "activity".into(),
                arity: 6,
                base: 1,
            }],
            subject_column: Some(3),
        }
    }

    #[test]
    fn three_row_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "f1,f2,label,subject\n0.5,-1.25,1,7\n2,3.5,6,7\n-0.125,0,3,9\n",
        );
        let ds = load_tabular(&p, &schema()).unwrap();
        assert_eq!(ds.features.shape(), (3, 2));
        assert_eq!(ds.features.data(), &[0.5, -1.25, 2.0, 3.5, -0.125, 0.0]);
        assert_eq!(ds.labels[0].values, vec![0, 5, 2]);
        assert_eq!(ds.subject_ids, Some(vec![7, 7, 9]));
        let t = ds.labels[0].targets(&[1]);
        assert_eq!(t.row(0), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", "");
        assert!(matches!(
            load_tabular(&p, &schema()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn non_numeric_field_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "b.csv", "h\n1,2,3,4\n1,x,3,4\n");
        match load_tabular(&p, &schema()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_out_of_range_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "h\n1,2,3,4\n1,2,7,4\n");
        match load_tabular(&p, &schema()) {
            Err(Error::Parse { line, detail, .. }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("outside"));
            }
            other => panic!("{other:?}"),
        }
    }

    fn har_fixture(root: &Path, split: &str, x: &str, y: &str, s: &str) {
        let d = root.join(split);
        fs::create_dir_all(&d).unwrap();
        write(&d, &format!("X_{split}.txt"), x);
        write(&d, &format!("y_{split}.txt"), y);
        write(&d, &format!("subject_{split}.txt"), s);
    }

    #[test]
    fn har_layout_loads() {
        let dir = tempfile::tempdir().unwrap();
        har_fixture(
            dir.path(),
            "train",
            "  1.0e-01 -2.5e-01  3.0\n 4.0  5.0 -6.0\n",
            "1\n6\n",
            "1\n3\n",
        );
        let ds = load_har(dir.path(), HarSplit::Train).unwrap();
        assert_eq!(ds.features.shape(), (2, 3));
        assert_eq!(ds.labels[0].values, vec![0, 5]);
        assert_eq!(ds.subject_ids.as_deref(), Some(&[1, 3][..]));
    }

    #[test]
    fn har_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        har_fixture(dir.path(), "test", "1 2\n3 4\n", "1\n", "1\n2\n");
        match load_har(dir.path(), HarSplit::Test) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn har_label_outside_one_to_six() {
        let dir = tempfile::tempdir().unwrap();
        har_fixture(dir.path(), "train", "1 2\n3 4\n", "1\n0\n", "1\n2\n");
        assert!(matches!(
            load_har(dir.path(), HarSplit::Train),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
