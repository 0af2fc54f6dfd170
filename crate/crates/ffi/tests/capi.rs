use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use sqlshaper_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sqls_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn histogram_round_trip_and_distance() {
    unsafe {
        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(sqls_histogram_new(0.0, 30.0, 3, &mut a), SqlsStatus::Ok);
        assert_eq!(sqls_histogram_new(0.0, 30.0, 3, &mut b), SqlsStatus::Ok);
        assert_eq!(sqls_histogram_len(a), 3);
        assert_eq!(sqls_histogram_add(a, 5.0), SqlsStatus::Ok);
        assert_eq!(sqls_histogram_add(b, 25.0), SqlsStatus::Ok);
        assert_eq!(sqls_histogram_add(a, 30.0), SqlsStatus::InvalidArgument);
        assert!(last_error().contains("outside"));
        let mut d = 0.0;
        assert_eq!(sqls_wasserstein(a, b, &mut d), SqlsStatus::Ok);
        assert_eq!(d, 20.0);
        assert_eq!(last_error(), "");
        let counts = [1u64, 2, 3];
        assert_eq!(sqls_histogram_set_counts(a, counts.as_ptr(), 3), SqlsStatus::Ok);
        let mut back = [0u64; 3];
        assert_eq!(sqls_histogram_counts(a, back.as_mut_ptr(), 3), SqlsStatus::Ok);
        assert_eq!(back, counts);
        assert_eq!(sqls_histogram_counts(a, back.as_mut_ptr(), 2), SqlsStatus::InvalidArgument);

        let mut other = ptr::null_mut();
        assert_eq!(sqls_histogram_new(0.0, 40.0, 3, &mut other), SqlsStatus::Ok);
        assert_eq!(sqls_wasserstein(a, other, &mut d), SqlsStatus::InvalidArgument);
        assert_eq!(sqls_wasserstein(a, ptr::null(), &mut d), SqlsStatus::NullArgument);
        sqls_histogram_free(a);
        sqls_histogram_free(b);
        sqls_histogram_free(other);
        sqls_histogram_free(ptr::null_mut());
        assert_eq!(sqls_histogram_new(5.0, 1.0, 3, &mut a), SqlsStatus::InvalidArgument);
    }
}

#[test]
fn scalar_functions() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(sqls_objective(50.0, 100.0, 200.0, &mut v), SqlsStatus::Ok);
        assert!((v - 0.5).abs() < 1e-12);
        assert_eq!(sqls_objective(50.0, 300.0, 200.0, &mut v), SqlsStatus::InvalidArgument);
        assert_eq!(sqls_objective(50.0, 1.0, 2.0, ptr::null_mut()), SqlsStatus::NullArgument);
        let costs = [200.0, 200.0];
        assert_eq!(sqls_closeness(costs.as_ptr(), 2, 100.0, 150.0, &mut v), SqlsStatus::Ok);
        assert!((v - 0.5 / 51.0).abs() < 1e-12);
        assert_eq!(sqls_closeness(costs.as_ptr(), 0, 100.0, 150.0, &mut v), SqlsStatus::InvalidArgument);
        assert!(!CStr::from_ptr(sqls_version()).to_bytes().is_empty());
    }
}

#[test]
fn instantiate_from_json() {
    let template = CString::new(
        r#"{"id":"t","sql_text":"SELECT * FROM t WHERE v < {p_1}","placeholders":[
            {"name":"p_1","column":{"table":"t","column":"v"},"domain":{"kind":"int_range","min":0,"max":9,"distinct_count":10}}]}"#,
    )
    .unwrap();
    let good = CString::new(r#"{"p_1":{"int":5}}"#).unwrap();
    let bad = CString::new(r#"{"p_1":{"int":50}}"#).unwrap();
    unsafe {
        let mut sql = ptr::null_mut();
        assert_eq!(sqls_instantiate(template.as_ptr(), good.as_ptr(), &mut sql), SqlsStatus::Ok, "{}", last_error());
        assert_eq!(CStr::from_ptr(sql).to_str().unwrap(), "SELECT * FROM t WHERE v < 5");
        sqls_string_free(sql);
        assert_eq!(sqls_instantiate(template.as_ptr(), bad.as_ptr(), &mut sql), SqlsStatus::InvalidArgument);
        assert_eq!(sqls_instantiate(ptr::null(), good.as_ptr(), &mut sql), SqlsStatus::NullArgument);
    }
}

#[test]
fn generate_reports_config_errors() {
    let dir = std::env::temp_dir().join(format!("sqls-ffi-{}", std::process::id()));
    let missing = CString::new(dir.join("nope.toml").to_str().unwrap()).unwrap();
    let out = CString::new(dir.to_str().unwrap()).unwrap();
    unsafe {
        let mut manifest = ptr::null_mut();
        assert_eq!(sqls_generate(missing.as_ptr(), out.as_ptr(), &mut manifest), SqlsStatus::ConfigError);
        assert!(last_error().contains("nope.toml"));
        assert!(manifest.is_null());
    }
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

fn c_compiler() -> Option<&'static str> {
    ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok())
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "sqlshaper.h"

int main(void) {
    SqlsHistogram *a = NULL, *b = NULL;
    double d = -1.0;
    if (sqls_histogram_new(0.0, 30.0, 3, &a) != SQLS_STATUS_OK) return 1;
    if (sqls_histogram_new(0.0, 30.0, 3, &b) != SQLS_STATUS_OK) return 1;
    sqls_histogram_add(a, 5.0);
    sqls_histogram_add(b, 25.0);
    if (sqls_wasserstein(a, b, &d) != SQLS_STATUS_OK) return 2;
    if (sqls_histogram_add(a, 99.0) != SQLS_STATUS_INVALID_ARGUMENT) return 3;
    printf("%g %s\n", d, sqls_last_error());
    sqls_histogram_free(a);
    sqls_histogram_free(b);
    return 0;
}
"#;

#[test]
fn header_compiles_as_c() {
    let Some(cc) = c_compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = std::env::temp_dir().join(format!("sqls-cc-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header_dir())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn c_program_links_against_the_static_library() {
    let Some(cc) = c_compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // target/<profile>/deps/<test binary> -> target/<profile>/libsqlshaper_ffi.a
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().and_then(Path::parent).map(|p| p.join("libsqlshaper_ffi.a"));
    let Some(lib) = lib.filter(|l| l.exists()) else {
        eprintln!("static library not built; skipping");
        return;
    };
    let dir = std::env::temp_dir().join(format!("sqls-link-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("main.c");
    let bin = dir.join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new(cc)
        .arg("-I")
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("20 cost 99 is outside"), "{text}");
}
