//! C ABI for the simulator.
//!
//! Every fallible function returns an [`MtflStatus`]; on failure the message
//! is available from [`mtfl_last_error`] on the same thread. Objects are
//! opaque handles released with their `*_free` function. Panics never cross
//! the boundary; they surface as `MTFL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mtfl_core::federation::{aggregate_task, AggregationRule};
use mtfl_core::nn::{LayerGrad, Tensor2};
use mtfl_core::partition::{GroupedGradients, LayerGroup};
use mtfl_core::runner::{run_scenario, write_metrics, ExperimentConfig, MetricsLog, ScenarioKind};
use mtfl_core::Error;

/// Result codes of the C API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Parse = 4,
    Io = 5,
    Diverged = 6,
    /// Shape, assembly, aggregation or evaluation failure.
    Numeric = 7,
    /// Dataset or embedding ingestion failure.
    Data = 8,
    Checkpoint = 9,
    Panic = 10,
}

/// Parsed experiment configuration.
pub struct MtflConfig {
    inner: ExperimentConfig,
}

/// Per-round metrics of one scenario run.
pub struct MtflMetrics {
    inner: MetricsLog,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(MtflStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Partition(_) => MtflStatus::Config,
            Error::Parse { .. } => MtflStatus::Parse,
            Error::Io { .. } => MtflStatus::Io,
            Error::Diverged { .. } => MtflStatus::Diverged,
            Error::Shape { .. }
            | Error::Assembly(_)
            | Error::Aggregation(_)
            | Error::Evaluation(_) => MtflStatus::Numeric,
            Error::Ingestion(_) => MtflStatus::Data,
            Error::Checkpoint(_) => MtflStatus::Checkpoint,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MtflStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MtflStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MtflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtflStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            MtflStatus::Panic
        }
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `p` must be null or point to a live `T`.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or an empty string.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mtfl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mtfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a TOML experiment file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtfl_config_from_file(
    path: *const c_char,
    out: *mut *mut MtflConfig,
) -> MtflStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = mtfl_core::runner::parse_config(path)?;
        *out = Box::into_raw(Box::new(MtflConfig { inner }));
        Ok(())
    })
}

/// Parses TOML text; relative data paths resolve against the working directory.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtfl_config_from_str(
    text: *const c_char,
    out: *mut *mut MtflConfig,
) -> MtflStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let inner = ExperimentConfig::from_toml_str(text, Path::new("<string>"))?;
        *out = Box::into_raw(Box::new(MtflConfig { inner }));
        Ok(())
    })
}

/// Replaces the experiment seed.
///
/// # Safety
/// `config` must be a live handle from `mtfl_config_from_*`.
#[no_mangle]
pub unsafe extern "C" fn mtfl_config_set_seed(config: *mut MtflConfig, seed: u64) -> MtflStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        cfg.inner.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mtfl_config_free(config: *mut MtflConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs one scenario (e.g. `"distributed_multi_task_fl"`) with the config's hyperparameters.
///
/// # Safety
/// `config` must be a live handle, `scenario` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtfl_run_scenario(
    config: *const MtflConfig,
    scenario: *const c_char,
    out: *mut *mut MtflMetrics,
) -> MtflStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = handle(config, "config")?;
        let kind: ScenarioKind = str_arg(scenario, "scenario")?
            .parse()
            .map_err(|e: Error| invalid(e.to_string()))?;
        let inner = run_scenario(&cfg.inner, kind)?;
        *out = Box::into_raw(Box::new(MtflMetrics { inner }));
        Ok(())
    })
}

/// # Safety
/// `metrics` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtfl_metrics_round_count(
    metrics: *const MtflMetrics,
    out: *mut usize,
) -> MtflStatus {
    guard(|| {
        let m = handle(metrics, "metrics")?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.records.len();
        Ok(())
    })
}

/// # Safety
/// `metrics` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtfl_metrics_task_count(
    metrics: *const MtflMetrics,
    out: *mut usize,
) -> MtflStatus {
    guard(|| {
        let m = handle(metrics, "metrics")?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.task_names.len();
        Ok(())
    })
}

fn record(m: &MtflMetrics, round: usize) -> Result<&mtfl_core::federation::RoundRecord, Failure> {
    m.inner.records.get(round).ok_or_else(|| {
        invalid(format!(
            "round index {round} out of range ({} rounds)",
            m.inner.records.len()
        ))
    })
}

/// Test accuracy of `task` after round index `round` (0-based).
///
/// # Safety
/// `metrics` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtfl_metrics_task_accuracy(
    metrics: *const MtflMetrics,
    round: usize,
    task: usize,
    out: *mut f64,
) -> MtflStatus {
    guard(|| {
        let m = handle(metrics, "metrics")?;
        let rec = record(m, round)?;
        let score = rec
            .task_scores
            .get(task)
            .ok_or_else(|| invalid(format!("task index {task} out of range")))?;
        *out.as_mut().ok_or_else(|| null("out"))? = score.accuracy();
        Ok(())
    })
}

/// Mean of per-task test accuracies after round index `round` (0-based).
///
/// # Safety
/// `metrics` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtfl_metrics_mean_accuracy(
    metrics: *const MtflMetrics,
    round: usize,
    out: *mut f64,
) -> MtflStatus {
    guard(|| {
        let m = handle(metrics, "metrics")?;
        let acc = record(m, round)?.mean_accuracy();
        *out.as_mut().ok_or_else(|| null("out"))? = acc;
        Ok(())
    })
}

/// Writes `metrics.csv` and `timing.csv` into `dir`, creating it if needed.
///
/// # Safety
/// `metrics` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mtfl_metrics_write(
    metrics: *const MtflMetrics,
    dir: *const c_char,
) -> MtflStatus {
    guard(|| {
        let m = handle(metrics, "metrics")?;
        write_metrics(&m.inner, str_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `metrics` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mtfl_metrics_free(metrics: *mut MtflMetrics) {
    if !metrics.is_null() {
        drop(Box::from_raw(metrics));
    }
}

/// Sample-weighted mean of `clients` update vectors of length `len`.
///
/// `updates` is row-major `clients × len`; `counts[m]` is client m's sample
/// count. Writes `len` values to `out`.
///
/// # Safety
/// `updates` must hold `clients * len` values, `counts` `clients` values and
/// `out` room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn mtfl_weighted_mean(
    updates: *const f64,
    counts: *const usize,
    clients: usize,
    len: usize,
    out: *mut f64,
) -> MtflStatus {
    guard(|| {
        if updates.is_null() || counts.is_null() || out.is_null() {
            return Err(null("updates, counts or out"));
        }
        if clients == 0 || len == 0 {
            return Err(invalid("clients and len must be positive"));
        }
        let total = clients
            .checked_mul(len)
            .ok_or_else(|| invalid("clients * len overflows"))?;
        let values = std::slice::from_raw_parts(updates, total);
        let counts = std::slice::from_raw_parts(counts, clients);
        if counts.iter().all(|&n| n == 0) {
            return Err(invalid("sample counts sum to zero"));
        }
        let grouped: Vec<GroupedGradients> = values
            .chunks(len)
            .zip(counts)
            .enumerate()
            .map(|(m, (row, &n))| {
                let grad = LayerGrad {
                    weights: Tensor2::from_vec(1, len, row.to_vec()).expect("row length"),
                    bias: Vec::new(),
                };
                GroupedGradients {
                    client_id: m,
                    task_id: 0,
                    sample_count: n,
                    groups: [(LayerGroup::TaskSpecific, vec![grad])].into(),
                }
            })
            .collect();
        let agg = aggregate_task(&grouped, AggregationRule::WeightedMean, clients, 0)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(agg[0].weights.data());
        Ok(())
    })
}
