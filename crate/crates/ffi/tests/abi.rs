use std::ffi::{c_char, CStr, CString};
use std::ptr;

use cail_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cail_last_error_message()) }.to_string_lossy().into_owned()
}

fn small_config() -> *mut CailConfig {
    let mut cfg = ptr::null_mut();
    assert_eq!(cail_config_default(&mut cfg), CailStatus::Ok);
    for (k, v) in [
        ("train.total_steps", "12"),
        ("train.batch_size", "32"),
        ("train.hidden", "12, 12"),
        ("mixture.total", "40"),
        ("ranking.fraction", "0.1"),
    ] {
        let (k, v) = (CString::new(k).unwrap(), CString::new(v).unwrap());
        assert_eq!(unsafe { cail_config_set(cfg, k.as_ptr(), v.as_ptr()) }, CailStatus::Ok, "{}", last_error());
    }
    cfg
}

fn csv(run: *const CailRun) -> String {
    let mut needed = 0;
    assert_eq!(unsafe { cail_run_csv(run, ptr::null_mut(), 0, &mut needed) }, CailStatus::Ok);
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(unsafe { cail_run_csv(run, buf.as_mut_ptr(), buf.len(), &mut needed) }, CailStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn null_handles_are_rejected() {
    assert_eq!(cail_config_default(ptr::null_mut()), CailStatus::NullPointer);
    let mut out = 0.0;
    assert_eq!(unsafe { cail_run_final_return(ptr::null(), &mut out) }, CailStatus::NullPointer);
    assert_eq!(unsafe { cail_config_seed_count(ptr::null()) }, 0);
    unsafe {
        cail_config_free(ptr::null_mut());
        cail_run_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_reports_line() {
    let src = CString::new("grid.rows = 5\ngrid.rows = 6\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { cail_config_parse(src.as_ptr(), &mut cfg) }, CailStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("line 2"), "{}", last_error());
}

#[test]
fn set_rejects_unknown_keys_and_keeps_handle() {
    let cfg = small_config();
    let (k, v) = (CString::new("train.nope").unwrap(), CString::new("1").unwrap());
    assert_eq!(unsafe { cail_config_set(cfg, k.as_ptr(), v.as_ptr()) }, CailStatus::Config);
    assert_eq!(unsafe { cail_config_seed_count(cfg) }, 5);
    unsafe { cail_config_free(cfg) };
}

#[test]
fn config_text_round_trips() {
    let cfg = small_config();
    let mut needed = 0;
    let mut tiny = [0 as c_char; 4];
    assert_eq!(
        unsafe { cail_config_to_text(cfg, tiny.as_mut_ptr(), tiny.len(), &mut needed) },
        CailStatus::BufferTooSmall
    );
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(unsafe { cail_config_to_text(cfg, buf.as_mut_ptr(), buf.len(), &mut needed) }, CailStatus::Ok);
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { cail_config_parse(buf.as_ptr(), &mut again) }, CailStatus::Ok);
    unsafe {
        cail_config_free(cfg);
        cail_config_free(again);
    }
}

#[test]
fn run_is_deterministic_and_exposes_metrics() {
    let cfg = small_config();
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { cail_run_seed(cfg, 3, &mut a) }, CailStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { cail_run_seed(cfg, 3, &mut b) }, CailStatus::Ok);
    assert_eq!(csv(a), csv(b));
    assert_eq!(unsafe { cail_run_iterations(a) }, 12);
    let levels = unsafe { cail_run_level_count(a) };
    assert_eq!(levels, 5);
    let mut ret = f64::NAN;
    assert_eq!(unsafe { cail_run_final_return(a, &mut ret) }, CailStatus::Ok);
    let mut best = f64::NAN;
    assert_eq!(unsafe { cail_config_optimal_return(cfg, &mut best) }, CailStatus::Ok);
    assert!(ret <= best + 1e-9);
    let mut m = 0.0;
    assert_eq!(unsafe { cail_run_level_confidence(a, levels, &mut m) }, CailStatus::OutOfRange);
    assert_eq!(unsafe { cail_run_level_confidence(a, 0, &mut m) }, CailStatus::Ok);
    assert!(m > 0.0);
    unsafe {
        cail_run_free(a);
        cail_run_free(b);
        cail_config_free(cfg);
    }
}

#[test]
fn invariant_suite_passes() {
    let mut failures = usize::MAX;
    assert_eq!(unsafe { cail_check(&mut failures) }, CailStatus::Ok);
    assert_eq!(failures, 0);
}

#[test]
fn status_names_are_static() {
    let name = unsafe { CStr::from_ptr(cail_status_name(CailStatus::BufferTooSmall)) };
    assert_eq!(name.to_str().unwrap(), "buffer too small");
}
