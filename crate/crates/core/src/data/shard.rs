use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::seed::rng_from_seed;

/// Rows of a dataset with the features and targets of one label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub rows: Vec<usize>,
    pub features: Tensor2,
    pub targets: Tensor2,
}

impl Split {
    pub fn new(dataset: &TabularDataset, label: usize, rows: Vec<usize>) -> Self {
        Self {
            features: dataset.features.select_rows(&rows),
            targets: dataset.labels[label].targets(&rows),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Concatenates splits that share feature and target widths.
    pub fn concat(parts: &[&Split]) -> Result<Split> {
        let rows = parts.iter().flat_map(|p| p.rows.iter().copied()).collect();
        let features = Tensor2::vstack(&parts.iter().map(|p| &p.features).collect::<Vec<_>>())?;
        let targets = Tensor2::vstack(&parts.iter().map(|p| &p.targets).collect::<Vec<_>>())?;
        Ok(Split {
            rows,
            features,
            targets,
        })
    }
}

/// One client's private data: only the label column of its task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    pub client_id: usize,
    /// Federation task group.
    pub task_id: usize,
    /// Index of the dataset label column the targets come from.
    pub label: usize,
    pub train: Split,
    pub test: Split,
}

fn train_count(n: usize, train_fraction: f64) -> usize {
    let k = (n as f64 * train_fraction).round() as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        n
    }
}

fn check_fraction(train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside (0, 1]"
        )));
    }
    Ok(())
}

fn make_shard(
    dataset: &TabularDataset,
    client_id: usize,
    task_id: usize,
    label: usize,
    rows: &[usize],
    train_fraction: f64,
) -> Shard {
    let k = if train_fraction >= 1.0 {
        rows.len()
    } else {
        train_count(rows.len(), train_fraction)
    };
    Shard {
        client_id,
        task_id,
        label,
        train: Split::new(dataset, label, rows[..k].to_vec()),
        test: Split::new(dataset, label, rows[k..].to_vec()),
    }
}

/// Shuffles rows once and deals them evenly to `clients` clients in `tasks` equal groups.
///
/// Clients `g * (clients / tasks) ..` form group `g`, which reads label column `g`.
pub fn partition_uniform(
    dataset: &TabularDataset,
    clients: usize,
    tasks: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<Vec<Shard>> {
    check_fraction(train_fraction)?;
    if clients == 0 || tasks == 0 {
        return Err(Error::Config(
            "client and task counts must be positive".into(),
        ));
    }
    if !clients.is_multiple_of(tasks) {
        return Err(Error::Config(format!(
            "{clients} clients cannot form {tasks} equal task groups"
        )));
    }
    if tasks > dataset.task_count() {
        return Err(Error::Config(format!(
            "{tasks} task groups but the dataset has {} label columns",
            dataset.task_count()
        )));
    }
    if dataset.len() < clients {
        return Err(Error::Config(format!(
            "{} rows cannot feed {clients} clients",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));

    let per_group = clients / tasks;
    let base = dataset.len() / clients;
    let extra = dataset.len() % clients;
    let mut start = 0;
    let mut shards = Vec::with_capacity(clients);
    for m in 0..clients {
        let size = base + usize::from(m < extra);
        let task = m / per_group;
        shards.push(make_shard(
            dataset,
            m,
            task,
            task,
            &order[start..start + size],
            train_fraction,
        ));
        start += size;
    }
    Ok(shards)
}

/// One shard per subject id (ascending); each subject is its own task group.
pub fn partition_by_subject(
    dataset: &TabularDataset,
    label: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<Vec<Shard>> {
    check_fraction(train_fraction)?;
    let subjects = dataset
        .subject_ids
        .as_ref()
        .ok_or_else(|| Error::Config("dataset has no subject column".into()))?;
    if label >= dataset.task_count() {
        return Err(Error::Config(format!(
            "label column {label} does not exist"
        )));
    }
    let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (row, s) in subjects.iter().enumerate() {
        by_subject.entry(*s).or_default().push(row);
    }
    let mut rng = rng_from_seed(seed);
    Ok(by_subject
        .into_values()
        .enumerate()
        .map(|(i, mut rows)| {
            rows.shuffle(&mut rng);
            make_shard(dataset, i, i, label, &rows, train_fraction)
        })
        .collect())
}
