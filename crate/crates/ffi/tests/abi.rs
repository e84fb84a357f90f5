use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use kscert_ffi::*;

const SMALL: &str = "[params]\nchi = 2.0\neps = 0.1\np = 0.2\nq = 0.3\n\n[grid]\nn = [8, 8]\n\n[scheme]\nT = 0.05\n";

fn last_error() -> String {
    let p = ks_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn run_through_handles() {
    let text = CString::new(SMALL).unwrap();
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(ks_config_parse(text.as_ptr(), &mut cfg), KsStatus::Ok);
        let mut hash = ptr::null_mut();
        assert_eq!(ks_config_hash(cfg, &mut hash), KsStatus::Ok);
        assert_eq!(CStr::from_ptr(hash).to_bytes().len(), 64);
        ks_string_free(hash);

        let mut run = ptr::null_mut();
        assert_eq!(ks_run(cfg, &mut run), KsStatus::Ok);
        assert_eq!(ks_run_completed(run), 1);
        assert!(matches!(ks_run_all_pass(run), 0 | 1));

        let mut n = 0usize;
        assert_eq!(ks_run_num_records(run, &mut n), KsStatus::Ok);
        let mut mass = vec![0.0; n];
        let col = CString::new("mass_n").unwrap();
        assert_eq!(
            ks_run_monitor_column(run, col.as_ptr(), mass.as_mut_ptr(), n),
            KsStatus::Ok
        );
        assert!(mass.iter().all(|m| (m - 1.0).abs() < 1e-10));
        assert_eq!(
            ks_run_monitor_column(run, col.as_ptr(), mass.as_mut_ptr(), n - 1),
            KsStatus::Range
        );

        let mut field = vec![0.0; 64];
        let name = CString::new("c").unwrap();
        assert_eq!(
            ks_run_final_field(run, name.as_ptr(), field.as_mut_ptr(), 64),
            KsStatus::Ok
        );
        assert!(field.iter().all(|c| *c > 0.0));
        let bad = CString::new("q").unwrap();
        assert_eq!(
            ks_run_final_field(run, bad.as_ptr(), field.as_mut_ptr(), 64),
            KsStatus::Range
        );
        assert!(last_error().contains("unknown field"));

        let mut json = ptr::null_mut();
        assert_eq!(ks_run_report_json(run, &mut json), KsStatus::Ok);
        assert!(CStr::from_ptr(json)
            .to_str()
            .unwrap()
            .contains("mass_conservation"));
        ks_string_free(json);

        ks_run_free(run);
        ks_config_free(cfg);
    }
}

#[test]
fn errors_map_to_codes() {
    let mut cfg = ptr::null_mut();
    let bad = CString::new(SMALL.replace("chi = 2.0\n", "")).unwrap();
    unsafe {
        assert_eq!(ks_config_parse(bad.as_ptr(), &mut cfg), KsStatus::Config);
        assert!(cfg.is_null());
        assert!(last_error().contains("chi"));
        assert_eq!(
            ks_config_parse(ptr::null(), &mut cfg),
            KsStatus::NullPointer
        );
        let invalid = [0xffu8, 0];
        assert_eq!(
            ks_config_parse(invalid.as_ptr().cast(), &mut cfg),
            KsStatus::InvalidUtf8
        );
        let mut run = ptr::null_mut();
        assert_eq!(ks_run(ptr::null(), &mut run), KsStatus::NullPointer);
        assert_eq!(ks_run_completed(ptr::null()), -1);

        let mut v = 0.0;
        assert_eq!(ks_coth_bound(-1.0, 1.0, 1.0, &mut v), KsStatus::Domain);
        assert_eq!(ks_coth_bound(1.0, 1.0, 1.0, &mut v), KsStatus::Ok);
        assert!((v - 1.0 / 1f64.tanh()).abs() < 1e-12);
        ks_config_free(ptr::null_mut());
        ks_string_free(ptr::null_mut());
    }
}

#[test]
fn parameter_queries() {
    let mut a = KsAdmissibility::default();
    unsafe {
        assert_eq!(ks_check_params(2.0, 0.2, 0.3, 2, &mut a), KsStatus::Ok);
        assert!(a.fully_admissible && a.has_window);
        assert!(a.q_low < 0.3 && 0.3 < a.q_high);
        assert_eq!(ks_check_params(1.7, 0.3, 0.35, 3, &mut a), KsStatus::Ok);
        assert!(!a.chi_ok && !a.fully_admissible);
        let (mut lo, mut hi) = (0.0, 0.0);
        assert_eq!(ks_q_window(0.2, 2.0, &mut lo, &mut hi), KsStatus::Ok);
        assert!((lo - 0.4 * (1.0 - 0.2f64.sqrt())).abs() < 1e-14);
        assert_eq!(ks_q_window(0.5, 2.0, &mut lo, &mut hi), KsStatus::Domain);
        let mut floor = 0.0;
        assert_eq!(
            ks_coefficient_lower_bound(0.2, 0.3, 2.0, &mut floor),
            KsStatus::Ok
        );
        assert!(floor > 0.0);
    }
    let v = unsafe { CStr::from_ptr(ks_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/kscert.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs"))
        .unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15, "{exports:?}");
    for f in exports {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "kscert.h"

int main(void) {
    const char *toml = "[params]\nchi = 2.0\neps = 0.1\np = 0.2\nq = 0.3\n[grid]\nn = [8, 8]\n[scheme]\nT = 0.02\n";
    KsConfig *cfg = NULL;
    if (ks_config_parse(toml, &cfg) != KS_STATUS_OK) return 10;
    KsRun *run = NULL;
    if (ks_run(cfg, &run) != KS_STATUS_OK) return 11;
    size_t n = 0;
    ks_run_num_records(run, &n);
    double mass[4096];
    if (n > 4096 || ks_run_monitor_column(run, "mass_n", mass, n) != KS_STATUS_OK) return 12;
    for (size_t i = 0; i < n; i++) {
        double d = mass[i] - 1.0;
        if (d > 1e-10 || d < -1e-10) return 13;
    }
    KsConfig *bad = NULL;
    if (ks_config_parse("[params]\n", &bad) != KS_STATUS_CONFIG) return 14;
    if (strstr(ks_last_error(), "chi") == NULL) return 15;
    printf("%d %d\n", ks_run_completed(run), ks_run_all_pass(run));
    ks_run_free(run);
    ks_config_free(cfg);
    return 0;
}
"#;

/// Compiles a C client against the generated header and links it with the
/// static library built alongside this test.
#[test]
fn c_client_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    // cargo leaves the staticlib next to the test binary in deps/, and a
    // plain build copies it one level up
    let deps = exe.parent().unwrap();
    let lib = [
        deps.join("libkscert_ffi.a"),
        deps.parent().unwrap().join("libkscert_ffi.a"),
    ]
    .into_iter()
    .find(|p| p.exists())
    .unwrap_or_default();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("client.c");
    std::fs::write(&src, C_PROGRAM).unwrap();

    // The header alone must compile as C99 and as C++.
    let inc = header().parent().unwrap().to_path_buf();
    let st = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&inc)
        .arg(&src)
        .status();
    let Ok(st) = st else {
        eprintln!("no C compiler available, skipping");
        return;
    };
    assert!(st.success(), "header does not compile as C99");

    if !lib.exists() {
        eprintln!("static library not built, skipping link step");
        return;
    }
    let bin = tmp.path().join("client");
    let st = Command::new(&cc)
        .arg("-I")
        .arg(&inc)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(st.success(), "link failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "client exited with {:?}",
        out.status.code()
    );
    let s = String::from_utf8_lossy(&out.stdout);
    assert!(s.starts_with("1 "), "{s}");
}
