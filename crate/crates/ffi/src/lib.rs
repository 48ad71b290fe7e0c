//! C ABI over the nudgerank library.
//!
//! Every fallible call returns an `NrStatus`; on failure the message is kept
//! per thread and read back with `nr_last_error_message`. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nudgerank::constraints::audit_events;
use nudgerank::personalize::read_events;
use nudgerank::pipeline::{run_experiment, write_outputs, Config, ExperimentResult, PipelineError};
use nudgerank::stats::{welch_t, SampleSummary, Tail, TestResult};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NrStatus {
    Ok = 0,
    Config = 1,
    Data = 2,
    Stage = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NrTail {
    OneSidedGreater = 0,
    TwoSided = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NrTestResult {
    pub statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    /// 1 when p <= 0.05.
    pub significant: i32,
}

impl From<TestResult> for NrTestResult {
    fn from(t: TestResult) -> Self {
        Self {
            statistic: t.statistic,
            degrees_of_freedom: t.degrees_of_freedom,
            p_value: t.p_value,
            significant: t.significant as i32,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NrHypotheses {
    pub steps: NrTestResult,
    pub mvpa: NrTestResult,
}

/// Opaque configuration handle.
pub struct NrConfig(Config);

/// Opaque handle to a finished experiment.
pub struct NrExperiment(ExperimentResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: NrStatus, msg: impl Into<String>) -> NrStatus {
    set_error(msg);
    status
}

fn from_pipeline(e: PipelineError) -> NrStatus {
    let status = match e.exit_code() {
        1 => NrStatus::Config,
        2 => NrStatus::Data,
        _ => NrStatus::Stage,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> NrStatus) -> NrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == NrStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(_) => fail(NrStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, NrStatus> {
    if p.is_null() {
        return Err(fail(NrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(NrStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

macro_rules! try_nr {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// New handle holding the built-in defaults.
#[no_mangle]
pub extern "C" fn nr_config_default() -> *mut NrConfig {
    Box::into_raw(Box::new(NrConfig(Config::default())))
}

/// Parses TOML text into a new handle written to `*out`.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nr_config_parse(toml: *const c_char, out: *mut *mut NrConfig) -> NrStatus {
    guard(|| {
        if out.is_null() {
            return fail(NrStatus::NullPointer, "out is null");
        }
        let text = try_nr!(str_arg(toml, "toml"));
        match Config::parse(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(NrConfig(c)));
                NrStatus::Ok
            }
            Err(e) => from_pipeline(e),
        }
    })
}

/// # Safety
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nr_config_free(config: *mut NrConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nr_config_set_seed(config: *mut NrConfig, seed: u64) -> NrStatus {
    let Some(c) = config.as_mut() else {
        return fail(NrStatus::NullPointer, "config is null");
    };
    c.0.sim.seed = seed;
    NrStatus::Ok
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nr_config_set_n_per_arm(config: *mut NrConfig, n: usize) -> NrStatus {
    let Some(c) = config.as_mut() else {
        return fail(NrStatus::NullPointer, "config is null");
    };
    c.0.sim.n_per_arm = n;
    NrStatus::Ok
}

/// Runs a full simulated experiment; the result handle goes to `*out`.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nr_experiment_run(config: *const NrConfig, out: *mut *mut NrExperiment) -> NrStatus {
    guard(|| {
        let (Some(c), false) = (config.as_ref(), out.is_null()) else {
            return fail(NrStatus::NullPointer, "config or out is null");
        };
        match run_experiment(&c.0) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(NrExperiment(r)));
                NrStatus::Ok
            }
            Err(e) => from_pipeline(e),
        }
    })
}

/// # Safety
/// `experiment` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nr_experiment_free(experiment: *mut NrExperiment) {
    if !experiment.is_null() {
        drop(Box::from_raw(experiment));
    }
}

/// # Safety
/// `experiment` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nr_experiment_hypotheses(experiment: *const NrExperiment, out: *mut NrHypotheses) -> NrStatus {
    let (Some(x), Some(out)) = (experiment.as_ref(), out.as_mut()) else {
        return fail(NrStatus::NullPointer, "experiment or out is null");
    };
    *out = NrHypotheses {
        steps: x.0.hypotheses.h1_steps.into(),
        mvpa: x.0.hypotheses.h2_mvpa.into(),
    };
    NrStatus::Ok
}

/// Audit violations plus events that name a control participant.
///
/// # Safety
/// `experiment` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nr_experiment_violations(experiment: *const NrExperiment) -> usize {
    experiment.as_ref().map_or(0, |x| x.0.audit.violations.len() + x.0.control_events)
}

/// Number of engagement events (sends included) produced by the run.
///
/// # Safety
/// `experiment` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nr_experiment_event_count(experiment: *const NrExperiment) -> usize {
    experiment.as_ref().map_or(0, |x| x.0.events.len())
}

/// Writes every output file under `dir`; `plots != 0` adds SVG charts.
///
/// # Safety
/// `experiment` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn nr_experiment_write(experiment: *const NrExperiment, dir: *const c_char, plots: i32) -> NrStatus {
    guard(|| {
        let Some(x) = experiment.as_ref() else {
            return fail(NrStatus::NullPointer, "experiment is null");
        };
        let dir = PathBuf::from(try_nr!(str_arg(dir, "dir")));
        match write_outputs(&x.0, &dir, plots != 0) {
            Ok(()) => NrStatus::Ok,
            Err(e) => from_pipeline(e),
        }
    })
}

/// Welch's t-test of the second sample against the first, from summaries.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn nr_welch_t(
    mean1: f64,
    sd1: f64,
    n1: u64,
    mean2: f64,
    sd2: f64,
    n2: u64,
    tail: NrTail,
    out: *mut NrTestResult,
) -> NrStatus {
    let Some(out) = out.as_mut() else {
        return fail(NrStatus::NullPointer, "out is null");
    };
    let tail = match tail {
        NrTail::OneSidedGreater => Tail::OneSidedGreater,
        NrTail::TwoSided => Tail::TwoSided,
    };
    match welch_t(SampleSummary::new(mean1, sd1, n1), SampleSummary::new(mean2, sd2, n2), tail) {
        Ok(t) => {
            *out = t.into();
            NrStatus::Ok
        }
        Err(e) => fail(NrStatus::Data, e.to_string()),
    }
}

/// Checks an event log file against the contact rules in `config` and
/// writes the violation count to `*violations`.
///
/// # Safety
/// `config` must be a live handle, `path` NUL-terminated, `violations` writable.
#[no_mangle]
pub unsafe extern "C" fn nr_audit_events_file(config: *const NrConfig, path: *const c_char, violations: *mut usize) -> NrStatus {
    guard(|| {
        let (Some(c), false) = (config.as_ref(), violations.is_null()) else {
            return fail(NrStatus::NullPointer, "config or violations is null");
        };
        let path = try_nr!(str_arg(path, "path"));
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) => return fail(NrStatus::Data, format!("{path}: {e}")),
        };
        let events = match read_events(file) {
            Ok(ev) => ev,
            Err(e) => return fail(NrStatus::Data, format!("{path}: {e}")),
        };
        *violations = audit_events(&events, &c.0.constraints).violations.len();
        NrStatus::Ok
    })
}
