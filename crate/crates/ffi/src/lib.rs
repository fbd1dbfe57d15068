//! C ABI over `cail_core`. Every fallible call returns a [`CailStatus`];
//! the message of the last failure on the calling thread is available from
//! [`cail_last_error_message`]. Handles are opaque and owned by the caller,
//! who releases them with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cail_core::checks::run_invariant_suite;
use cail_core::harness::experiment::render_csv;
use cail_core::harness::{parse_config, run_seed, serialize, ExperimentConfig, RunLog};
use cail_core::mdp::{build_gridworld, expected_return, value_iteration};
use cail_core::CailError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CailStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Runtime = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Experiment configuration.
pub struct CailConfig {
    inner: ExperimentConfig,
}

/// Result of training one seed.
pub struct CailRun {
    log: RunLog,
    csv: String,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: CailStatus, msg: impl Into<String>) -> CailStatus {
    set_error(msg);
    status
}

fn from_core(err: CailError) -> CailStatus {
    let status = match err {
        CailError::Config { .. } | CailError::Parse(_) => CailStatus::Config,
        CailError::IndexOutOfRange { .. } => CailStatus::OutOfRange,
        _ => CailStatus::Runtime,
    };
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> CailStatus) -> CailStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(CailStatus::Panic, "panic inside cail"))
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, CailStatus> {
    if s.is_null() {
        return Err(fail(CailStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| fail(CailStatus::InvalidUtf8, e.to_string()))
}

fn boxed<T>(value: T, out: *mut *mut T) -> CailStatus {
    // Callers have already checked `out`.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    CailStatus::Ok
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cail_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn cail_status_name(status: CailStatus) -> *const c_char {
    let name: &'static CStr = match status {
        CailStatus::Ok => c"ok",
        CailStatus::NullPointer => c"null pointer",
        CailStatus::InvalidUtf8 => c"invalid utf-8",
        CailStatus::Config => c"config error",
        CailStatus::Runtime => c"runtime failure",
        CailStatus::OutOfRange => c"out of range",
        CailStatus::BufferTooSmall => c"buffer too small",
        CailStatus::Panic => c"panic",
    };
    name.as_ptr()
}

/// Reference experiment configuration.
#[no_mangle]
pub extern "C" fn cail_config_default(out: *mut *mut CailConfig) -> CailStatus {
    if out.is_null() {
        return fail(CailStatus::NullPointer, "null output handle");
    }
    guard(|| boxed(CailConfig { inner: ExperimentConfig::default() }, out))
}

/// Parses `key = value` lines; omitted keys keep their defaults.
///
/// # Safety
/// `src` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cail_config_parse(src: *const c_char, out: *mut *mut CailConfig) -> CailStatus {
    if out.is_null() {
        return fail(CailStatus::NullPointer, "null output handle");
    }
    guard(|| match text(src) {
        Err(s) => s,
        Ok(src) => match parse_config(src) {
            Ok(inner) => boxed(CailConfig { inner }, out),
            Err(e) => from_core(e),
        },
    })
}

/// Overrides one key, validating the result. The handle is unchanged on
/// failure.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cail_config_set(cfg: *mut CailConfig, key: *const c_char, value: *const c_char) -> CailStatus {
    let Some(cfg) = cfg.as_mut() else {
        return fail(CailStatus::NullPointer, "null config");
    };
    guard(|| {
        let (key, value) = match (text(key), text(value)) {
            (Ok(k), Ok(v)) => (k.trim(), v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let mut src: String = serialize(&cfg.inner)
            .lines()
            .filter(|l| l.split('=').next().map(str::trim) != Some(key))
            .map(|l| format!("{l}\n"))
            .collect();
        src.push_str(&format!("{key} = {value}\n"));
        match parse_config(&src) {
            Ok(inner) => {
                cfg.inner = inner;
                CailStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Serialized configuration copied into `buf`. `needed` receives the
/// length including the terminator; pass a null `buf` to query it.
///
/// # Safety
/// `cfg` must come from this library; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn cail_config_to_text(
    cfg: *const CailConfig,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> CailStatus {
    let Some(cfg) = cfg.as_ref() else {
        return fail(CailStatus::NullPointer, "null config");
    };
    guard(|| copy_out(&serialize(&cfg.inner), buf, cap, needed))
}

/// Number of seeds in the configuration.
///
/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn cail_config_seed_count(cfg: *const CailConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.seeds.len())
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cail_config_free(cfg: *mut CailConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Discounted return of the optimal policy on the configured grid.
///
/// # Safety
/// `cfg` must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cail_config_optimal_return(cfg: *const CailConfig, out: *mut f64) -> CailStatus {
    let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
        return fail(CailStatus::NullPointer, "null argument");
    };
    guard(|| {
        let ret = build_gridworld(&cfg.inner.grid)
            .and_then(|mdp| value_iteration(&mdp, 1e-10).and_then(|(_, pi)| expected_return(&mdp, &pi)));
        match ret {
            Ok(r) => {
                *out = r;
                CailStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Trains one seed with the configured method.
///
/// # Safety
/// `cfg` must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cail_run_seed(cfg: *const CailConfig, seed: u64, out: *mut *mut CailRun) -> CailStatus {
    let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
        return fail(CailStatus::NullPointer, "null argument");
    };
    guard(|| {
        if let Err(e) = cfg.inner.validate() {
            return from_core(e);
        }
        match run_seed(&cfg.inner, seed, |_, _| {}) {
            Ok(log) => {
                let csv = render_csv(&log, cfg.inner.levels.len());
                boxed(CailRun { log, csv }, out)
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `run` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn cail_run_iterations(run: *const CailRun) -> usize {
    run.as_ref().map_or(0, |r| r.log.summary.iterations)
}

/// # Safety
/// `run` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn cail_run_level_count(run: *const CailRun) -> usize {
    run.as_ref().map_or(0, |r| r.log.summary.beta_level_means.len())
}

/// Expected return of the trained generator.
///
/// # Safety
/// `run` must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cail_run_final_return(run: *const CailRun, out: *mut f64) -> CailStatus {
    let (Some(run), false) = (run.as_ref(), out.is_null()) else {
        return fail(CailStatus::NullPointer, "null argument");
    };
    *out = run.log.summary.final_return;
    CailStatus::Ok
}

/// Mean learned confidence of one demonstrator level.
///
/// # Safety
/// `run` must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cail_run_level_confidence(run: *const CailRun, level: usize, out: *mut f64) -> CailStatus {
    let (Some(run), false) = (run.as_ref(), out.is_null()) else {
        return fail(CailStatus::NullPointer, "null argument");
    };
    match run.log.summary.beta_level_means.get(level) {
        Some(m) => {
            *out = *m;
            CailStatus::Ok
        }
        None => from_core(CailError::IndexOutOfRange {
            what: "level",
            index: level,
            bound: run.log.summary.beta_level_means.len(),
        }),
    }
}

/// Per-iteration metrics in the `run_<seed>.csv` format, copied like
/// [`cail_config_to_text`].
///
/// # Safety
/// `run` must come from this library; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn cail_run_csv(run: *const CailRun, buf: *mut c_char, cap: usize, needed: *mut usize) -> CailStatus {
    let Some(run) = run.as_ref() else {
        return fail(CailStatus::NullPointer, "null run");
    };
    guard(|| copy_out(&run.csv, buf, cap, needed))
}

/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cail_run_free(run: *mut CailRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Runs the invariant suite. `failures` receives the number of failed checks.
///
/// # Safety
/// `failures` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cail_check(failures: *mut usize) -> CailStatus {
    if failures.is_null() {
        return fail(CailStatus::NullPointer, "null output");
    }
    guard(|| match run_invariant_suite() {
        Ok(outcomes) => {
            *failures = outcomes.iter().filter(|o| !o.passed).count();
            CailStatus::Ok
        }
        Err(e) => from_core(e),
    })
}

unsafe fn copy_out(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> CailStatus {
    let len = s.len() + 1;
    if !needed.is_null() {
        *needed = len;
    }
    if buf.is_null() {
        return if needed.is_null() {
            fail(CailStatus::NullPointer, "null buffer and length")
        } else {
            CailStatus::Ok
        };
    }
    if cap < len {
        return fail(CailStatus::BufferTooSmall, format!("need {len} bytes, have {cap}"));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    CailStatus::Ok
}
