use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ScenarioKind;
use crate::error::{Error, Result};
use crate::federation::{RoundRecord, Score};

/// Per-round test metrics of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub scenario: ScenarioKind,
    pub task_names: Vec<String>,
    pub records: Vec<RoundRecord>,
}

impl MetricsLog {
    pub fn final_record(&self) -> Option<&RoundRecord> {
        self.records.last()
    }

    /// Mean of per-task accuracies after the last round (NaN when empty).
    pub fn final_mean_accuracy(&self) -> f64 {
        self.final_record()
            .map_or(f64::NAN, RoundRecord::mean_accuracy)
    }

    pub fn final_task_accuracy(&self) -> Vec<f64> {
        self.final_record()
            .map(RoundRecord::task_accuracy)
            .unwrap_or_else(|| vec![f64::NAN; self.task_names.len()])
    }

    pub fn total_wall_clock(&self) -> f64 {
        self.records.iter().map(|r| r.wall_clock_secs).sum()
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_TIMING_FILE: &str = "report_timing.csv";

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `metrics.csv` (deterministic) and `timing.csv` (wall-clock) into `dir`.
///
/// Metrics columns: `round,train_loss,mean_accuracy`, then per task
/// `<task>_correct,<task>_total,<task>_accuracy,<task>_loss`.
pub fn write_metrics(log: &MetricsLog, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let mut s = String::from("round,train_loss,mean_accuracy");
    for name in &log.task_names {
        write!(
            s,
            ",{name}_correct,{name}_total,{name}_accuracy,{name}_loss"
        )
        .unwrap();
    }
    s.push('\n');
    for r in &log.records {
        write!(s, "{},{},{}", r.round, r.train_loss, r.mean_accuracy()).unwrap();
        for t in &r.task_scores {
            write!(
                s,
                ",{},{},{},{}",
                t.correct,
                t.total,
                t.accuracy(),
                t.mean_loss()
            )
            .unwrap();
        }
        s.push('\n');
    }
    write_file(&dir.join(METRICS_FILE), &s)?;

    let mut t = String::from("round,wall_clock_secs\n");
    for r in &log.records {
        writeln!(t, "{},{}", r.round, r.wall_clock_secs).unwrap();
    }
    write_file(&dir.join(TIMING_FILE), &t)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail: format!("cannot parse `{field}`"),
    })
}

/// Reads back a log written by [`write_metrics`]; wall-clock comes from `timing.csv` when present.
pub fn read_metrics(dir: impl AsRef<Path>, scenario: ScenarioKind) -> Result<MetricsLog> {
    let dir = dir.as_ref();
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: 1,
            detail: "empty metrics file".into(),
        })?
        .split(',')
        .collect();
    if header.len() < 3 || !(header.len() - 3).is_multiple_of(4) {
        return Err(Error::Parse {
            path: path.clone(),
            line: 1,
            detail: "unexpected metrics header".into(),
        });
    }
    let task_names: Vec<String> = header[3..]
        .chunks(4)
        .map(|c| c[0].trim_end_matches("_correct").to_string())
        .collect();
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(Error::Parse {
                path: path.clone(),
                line: line_no,
                detail: format!("{} fields, header has {}", f.len(), header.len()),
            });
        }
        let task_scores = f[3..]
            .chunks(4)
            .map(|c| {
                let correct: usize = parse_field(&path, line_no, c[0])?;
                let total: usize = parse_field(&path, line_no, c[1])?;
                let loss: f64 = parse_field(&path, line_no, c[3])?;
                Ok(Score {
                    correct,
                    total,
                    loss_sum: if total == 0 { 0.0 } else { loss * total as f64 },
                })
            })
            .collect::<Result<_>>()?;
        records.push(RoundRecord {
            round: parse_field(&path, line_no, f[0])?,
            task_scores,
            train_loss: parse_field(&path, line_no, f[1])?,
            wall_clock_secs: 0.0,
        });
    }
    let timing = dir.join(TIMING_FILE);
    if let Ok(t) = fs::read_to_string(&timing) {
        for (rec, line) in records.iter_mut().zip(t.lines().skip(1)) {
            if let Some((_, secs)) = line.split_once(',') {
                rec.wall_clock_secs = parse_field(&timing, 0, secs)?;
            }
        }
    }
    Ok(MetricsLog {
        scenario,
        task_names,
        records,
    })
}

/// Writes the scenario × task comparison of final accuracies.
///
/// `summary.csv` and `report.txt` hold accuracies only and are deterministic;
/// `report_timing.csv` holds each scenario's total wall-clock seconds.
pub fn write_report(logs: &[MetricsLog], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let Some(first) = logs.first() else {
        return Err(Error::Config("no scenario logs to report".into()));
    };
    let tasks = &first.task_names;
    if let Some(l) = logs.iter().find(|l| &l.task_names != tasks) {
        return Err(Error::Config(format!(
            "scenario {} has different tasks than {}",
            l.scenario, first.scenario
        )));
    }

    let mut csv = String::from("scenario");
    for t in tasks {
        write!(csv, ",{t}").unwrap();
    }
    csv.push_str(",mean\n");
    for l in logs {
        csv.push_str(l.scenario.as_str());
        for a in l.final_task_accuracy() {
            write!(csv, ",{a}").unwrap();
        }
        writeln!(csv, ",{}", l.final_mean_accuracy()).unwrap();
    }
    write_file(&dir.join(SUMMARY_FILE), &csv)?;

    let pct = |a: f64| {
        if a.is_nan() {
            "-".to_string()
        } else {
            format!("{:.2}", 100.0 * a)
        }
    };
    let label_w = logs
        .iter()
        .map(|l| l.scenario.title().len())
        .max()
        .unwrap_or(0)
        .max("Scenario".len());
    let col_w: Vec<usize> = tasks
        .iter()
        .map(|t| t.len().max(6))
        .chain(std::iter::once(6))
        .collect();
    let mut txt = String::from("Final test accuracy (%)\n\n");
    write!(txt, "{:<label_w$}", "Scenario").unwrap();
    for (t, w) in tasks.iter().map(String::as_str).chain(["Mean"]).zip(&col_w) {
        write!(txt, "  {t:>w$}").unwrap();
    }
    txt.push('\n');
    let rule = label_w + col_w.iter().map(|w| w + 2).sum::<usize>();
    txt.push_str(&"-".repeat(rule));
    txt.push('\n');
    for l in logs {
        write!(txt, "{:<label_w$}", l.scenario.title()).unwrap();
        let values = l
            .final_task_accuracy()
            .into_iter()
            .chain([l.final_mean_accuracy()]);
        for (a, w) in values.zip(&col_w) {
            write!(txt, "  {:>w$}", pct(a)).unwrap();
        }
        txt.push('\n');
    }
    write_file(&dir.join(REPORT_FILE), &txt)?;

    let mut timing = String::from("scenario,rounds,wall_clock_secs\n");
    for l in logs {
        writeln!(
            timing,
            "{},{},{}",
            l.scenario,
            l.records.len(),
            l.total_wall_clock()
        )
        .unwrap();
    }
    write_file(&dir.join(REPORT_TIMING_FILE), &timing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(kind: ScenarioKind, rounds: usize, tasks: usize) -> MetricsLog {
        MetricsLog {
            scenario: kind,
            task_names: (0..tasks).map(|t| format!("task{t}")).collect(),
            records: (1..=rounds)
                .map(|r| RoundRecord {
                    round: r,
                    task_scores: (0..tasks)
                        .map(|t| Score {
                            correct: r + t,
                            total: 10 + r,
                            loss_sum: 0.5 * (10 + r) as f64,
                        })
                        .collect(),
                    train_loss: 1.0 / r as f64,
                    wall_clock_secs: 0.25,
                })
                .collect(),
        }
    }

    #[test]
    fn metrics_file_has_header_plus_one_line_per_round() {
        let dir = tempfile::tempdir().unwrap();
        let l = log(ScenarioKind::DistributedMultiTaskFl, 7, 3);
        write_metrics(&l, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("round,train_loss,mean_accuracy,task0_correct"));
    }

    #[test]
    fn metrics_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let l = log(ScenarioKind::CentralizedJoint, 3, 2);
        write_metrics(&l, dir.path()).unwrap();
        let back = read_metrics(dir.path(), ScenarioKind::CentralizedJoint).unwrap();
        assert_eq!(back.task_names, l.task_names);
        assert_eq!(back.records.len(), 3);
        for (a, b) in back.records.iter().zip(&l.records) {
            assert_eq!(a.round, b.round);
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.wall_clock_secs, b.wall_clock_secs);
            assert_eq!(a.task_accuracy(), b.task_accuracy());
        }
    }

    #[test]
    fn report_is_scenario_by_task() {
        let dir = tempfile::tempdir().unwrap();
        let logs: Vec<_> = ScenarioKind::ALL.iter().map(|k| log(*k, 2, 5)).collect();
        write_report(&logs, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 1 + 5);
        assert!(rows.iter().all(|r| r.len() == 1 + 5 + 1));
        let txt = fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        assert!(txt.contains("Distributed Multi-Task FL"));
        assert_eq!(txt.lines().count(), 2 + 2 + 5);
    }

    #[test]
    fn mismatched_tasks_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let logs = [
            log(ScenarioKind::CentralizedJoint, 1, 2),
            log(ScenarioKind::DistributedSeparate, 1, 3),
        ];
        assert!(matches!(
            write_report(&logs, dir.path()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unwritable_dir_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = write_metrics(
            &log(ScenarioKind::CentralizedJoint, 1, 1),
            blocker.join("sub"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
