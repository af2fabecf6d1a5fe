//! Experiment orchestration: config parsing, the five compared scenarios,
//! grid search and metrics files.
//!
//! Output layout under the experiment directory:
//!
//! ```text
//! <out>/<scenario>/metrics.csv       per-round metrics of the run (or selected grid point)
//! <out>/<scenario>/timing.csv        per-round wall-clock
//! <out>/<scenario>/grid/grid.csv     one row per grid point (grid mode only)
//! <out>/summary.csv, report.txt      scenario × task final accuracies
//! <out>/report_timing.csv            wall-clock per scenario
//! ```

mod config;
mod grid;
mod metrics;
mod scenario;

use std::path::Path;

use log::info;

pub use config::{
    parse_config, ClientLayout, ClientsConfig, DataSource, DatasetConfig, ExperimentConfig,
    FederationConfig, GridConfig, GridPoint, HarSource, ModelConfig, PartitionConfig, ScenarioKind,
    TabularSource,
};
pub use grid::{grid_search_prepared, write_grid, GridOutcome, GridRun, PointStatus, GRID_FILE};
pub use metrics::{
    read_metrics, write_metrics, write_report, MetricsLog, METRICS_FILE, REPORT_FILE,
    REPORT_TIMING_FILE, SUMMARY_FILE, TIMING_FILE,
};
pub use scenario::{prepare_data, run_prepared, run_scenario, PreparedData};

use crate::error::{Error, Result};

/// Grid search for one scenario, loading the data first.
pub fn grid_search(cfg: &ExperimentConfig, kind: ScenarioKind) -> Result<GridOutcome> {
    let data = prepare_data(cfg)?;
    grid_search_prepared(cfg, &data, kind)
}

/// Runs every configured scenario and writes metrics plus the comparison report.
///
/// With `grid` set, each scenario is grid-searched and its selected point's
/// metrics become the scenario's metrics.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, grid: bool) -> Result<Vec<MetricsLog>> {
    let data = prepare_data(cfg)?;
    info!(
        "{} rows, {} clients, {} tasks",
        data.dataset.len(),
        data.shards.len(),
        data.task_count()
    );
    let mut logs = Vec::with_capacity(cfg.scenarios.len());
    for &kind in &cfg.scenarios {
        let dir = out.join(kind.as_str());
        let log = if grid {
            let outcome = grid_search_prepared(cfg, &data, kind)?;
            write_grid(&outcome, dir.join("grid"))?;
            outcome
                .best_log()
                .cloned()
                .ok_or_else(|| Error::Config(format!("every grid point of {kind} diverged")))?
        } else {
            run_prepared(cfg, &data, kind, &cfg.hyperparams())?
        };
        info!(
            "{kind}: final mean accuracy {:.4}",
            log.final_mean_accuracy()
        );
        write_metrics(&log, &dir)?;
        logs.push(log);
    }
    write_report(&logs, out)?;
    Ok(logs)
}

/// Rebuilds the comparison report from the scenario directories under `out`.
pub fn report_from_dir(out: &Path) -> Result<Vec<MetricsLog>> {
    let logs = ScenarioKind::ALL
        .into_iter()
        .filter(|k| out.join(k.as_str()).join(METRICS_FILE).is_file())
        .map(|k| read_metrics(out.join(k.as_str()), k))
        .collect::<Result<Vec<_>>>()?;
    if logs.is_empty() {
        return Err(Error::Config(format!(
            "no scenario metrics found under {}",
            out.display()
        )));
    }
    write_report(&logs, out)?;
    Ok(logs)
}
