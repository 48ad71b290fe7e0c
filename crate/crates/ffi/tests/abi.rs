use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use nudgerank_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { nr_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(n, s.len());
    s
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(nr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn welch_matches_hand_computation() {
    let mut r = NrTestResult::default();
    let s = unsafe { nr_welch_t(0.0, 1.0, 10, 1.0, 1.0, 10, NrTail::TwoSided, &mut r) };
    assert_eq!(s, NrStatus::Ok);
    // Equal n and sd: t = diff / sqrt(2 sd^2 / n), df = 2n - 2.
    assert!((r.statistic - 5f64.sqrt()).abs() < 1e-12);
    assert!((r.degrees_of_freedom - 18.0).abs() < 1e-9);
    assert!((r.p_value - 0.03815).abs() < 2e-4, "{}", r.p_value);
    assert_eq!(r.significant, 1);

    let mut one = NrTestResult::default();
    unsafe { nr_welch_t(0.0, 1.0, 10, 1.0, 1.0, 10, NrTail::OneSidedGreater, &mut one) };
    assert!((one.p_value - r.p_value / 2.0).abs() < 1e-12);
}

#[test]
fn errors_set_status_and_message() {
    let mut r = NrTestResult::default();
    let s = unsafe { nr_welch_t(0.0, 1.0, 1, 1.0, 1.0, 10, NrTail::TwoSided, &mut r) };
    assert_eq!(s, NrStatus::Data);
    assert!(last_error().contains("at least 2"));

    let s = unsafe { nr_welch_t(0.0, 1.0, 5, 1.0, 1.0, 5, NrTail::TwoSided, ptr::null_mut()) };
    assert_eq!(s, NrStatus::NullPointer);

    let bad = CString::new("[constraints]\ndaily_budget = 0\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { nr_config_parse(bad.as_ptr(), &mut cfg) }, NrStatus::Config);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());

    let not_toml = CString::new("[[[").unwrap();
    assert_eq!(unsafe { nr_config_parse(not_toml.as_ptr(), &mut cfg) }, NrStatus::Config);

    let invalid = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { nr_config_parse(invalid.as_ptr().cast(), &mut cfg) }, NrStatus::InvalidUtf8);

    // A later success clears the message.
    let good = CString::new("").unwrap();
    assert_eq!(unsafe { nr_config_parse(good.as_ptr(), &mut cfg) }, NrStatus::Ok);
    assert_eq!(unsafe { nr_last_error_message(ptr::null_mut(), 0) }, 0);
    unsafe { nr_config_free(cfg) };
}

#[test]
fn truncates_long_messages() {
    let mut r = NrTestResult::default();
    unsafe { nr_welch_t(0.0, 1.0, 1, 1.0, 1.0, 10, NrTail::TwoSided, &mut r) };
    let mut buf = [1 as c_char; 8];
    let full = unsafe { nr_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(full > 7);
    assert_eq!(buf[7], 0);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes().len(), 7);
}

#[test]
fn small_experiment_through_handles() {
    let cfg = nr_config_default();
    unsafe {
        assert_eq!(nr_config_set_n_per_arm(cfg, 25), NrStatus::Ok);
        assert_eq!(nr_config_set_seed(cfg, 9), NrStatus::Ok);
    }
    let mut x = ptr::null_mut();
    assert_eq!(unsafe { nr_experiment_run(cfg, &mut x) }, NrStatus::Ok);
    let mut h = NrHypotheses::default();
    assert_eq!(unsafe { nr_experiment_hypotheses(x, &mut h) }, NrStatus::Ok);
    assert!(h.steps.p_value > 0.0 && h.steps.p_value <= 1.0);
    assert_eq!(unsafe { nr_experiment_violations(x) }, 0);
    assert!(unsafe { nr_experiment_event_count(x) } > 0);

    let dir = tempfile::tempdir().unwrap();
    let d = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nr_experiment_write(x, d.as_ptr(), 0) }, NrStatus::Ok);
    let events = CString::new(dir.path().join("events.tsv").to_str().unwrap()).unwrap();
    let mut v = usize::MAX;
    assert_eq!(unsafe { nr_audit_events_file(cfg, events.as_ptr(), &mut v) }, NrStatus::Ok);
    assert_eq!(v, 0);

    let missing = CString::new("/no/such/events.tsv").unwrap();
    assert_eq!(unsafe { nr_audit_events_file(cfg, missing.as_ptr(), &mut v) }, NrStatus::Data);

    unsafe {
        nr_experiment_free(x);
        nr_config_free(cfg);
        nr_experiment_free(ptr::null_mut());
        nr_config_free(ptr::null_mut());
    }
}

#[test]
fn invalid_sim_config_is_reported() {
    let cfg = nr_config_default();
    unsafe { nr_config_set_n_per_arm(cfg, 1) };
    let mut x = ptr::null_mut();
    let s = unsafe { nr_experiment_run(cfg, &mut x) };
    assert_ne!(s, NrStatus::Ok);
    assert!(x.is_null());
    unsafe { nr_config_free(cfg) };
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/nudgerank.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["nr_last_error_message", "nr_experiment_run", "nr_welch_t", "NR_STATUS_NULL_POINTER"] {
        assert!(text.contains(sym), "{sym}");
    }
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler; skipping compile check");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(&src, "#include \"nudgerank.h\"\nint main(void) { NrTestResult r; return nr_welch_t(0, 1, 5, 1, 1, 5, NR_TAIL_TWO_SIDED, &r) == NR_STATUS_OK ? 0 : 1; }\n").unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
