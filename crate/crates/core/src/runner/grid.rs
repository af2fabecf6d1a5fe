use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, GridPoint, ScenarioKind};
use super::metrics::{write_metrics, MetricsLog};
use super::scenario::{run_prepared, PreparedData};
use crate::error::{Error, Result};

pub const GRID_FILE: &str = "grid.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PointStatus {
    Completed { final_mean_accuracy: f64 },
    Diverged { client: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub point: GridPoint,
    pub status: PointStatus,
    /// `None` for diverged points.
    pub log: Option<MetricsLog>,
}

/// Every grid point of one scenario and the selected one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub scenario: ScenarioKind,
    pub runs: Vec<GridRun>,
    /// Index into `runs` of the highest final mean accuracy; ties go to the lower index.
    pub best: Option<usize>,
}

impl GridOutcome {
    pub fn best_run(&self) -> Option<&GridRun> {
        self.best.map(|i| &self.runs[i])
    }

    pub fn best_log(&self) -> Option<&MetricsLog> {
        self.best_run().and_then(|r| r.log.as_ref())
    }
}

fn select_best(runs: &[GridRun]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in runs.iter().enumerate() {
        if let PointStatus::Completed {
            final_mean_accuracy: a,
        } = r.status
        {
            if a.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Runs every grid point of one scenario; points run in parallel.
///
/// A point whose client diverges is recorded and excluded from selection.
/// Any other error aborts the search.
pub fn grid_search_prepared(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    kind: ScenarioKind,
) -> Result<GridOutcome> {
    let points = cfg.expand_grid();
    let runs = points
        .par_iter()
        .map(|p| {
            let hp = cfg.hyperparams_at(p);
            match run_prepared(cfg, data, kind, &hp) {
                Ok(log) => Ok(GridRun {
                    point: *p,
                    status: PointStatus::Completed {
                        final_mean_accuracy: log.final_mean_accuracy(),
                    },
                    log: Some(log),
                }),
                Err(Error::Diverged { client }) => {
                    warn!("{kind} grid point {} diverged at client {client}", p.index);
                    Ok(GridRun {
                        point: *p,
                        status: PointStatus::Diverged { client },
                        log: None,
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridOutcome {
        scenario: kind,
        best: select_best(&runs),
        runs,
    })
}

/// Writes `grid.csv` plus `point_<i>/metrics.csv` for every completed point.
pub fn write_grid(outcome: &GridOutcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut s = String::from(
        "index,seed,learning_rate,local_epochs,clients_per_group,batch_size,status,final_mean_accuracy,selected\n",
    );
    for (i, r) in outcome.runs.iter().enumerate() {
        let p = &r.point;
        let (status, acc) = match &r.status {
            PointStatus::Completed {
                final_mean_accuracy,
            } => ("completed".to_string(), final_mean_accuracy.to_string()),
            PointStatus::Diverged { client } => {
                (format!("diverged_client_{client}"), String::new())
            }
        };
        writeln!(
            s,
            "{},{},{},{},{},{},{status},{acc},{}",
            p.index,
            p.seed,
            p.learning_rate,
            p.local_epochs,
            p.clients_per_group,
            p.batch_size,
            u8::from(outcome.best == Some(i))
        )
        .unwrap();
        if let Some(log) = &r.log {
            write_metrics(log, dir.join(format!("point_{}", p.index)))?;
        }
    }
    let path = dir.join(GRID_FILE);
    fs::write(&path, s).map_err(|e| Error::io(&path, e))
}
