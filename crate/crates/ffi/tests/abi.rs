use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use beamtune_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(bt_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn canonical(index: u32) -> *mut BtEnv {
    let mut env = ptr::null_mut();
    assert_eq!(unsafe { bt_env_new_canonical(index, 0.0, 1, &mut env) }, BtStatus::Ok);
    assert!(!env.is_null());
    env
}

#[test]
fn env_lifecycle() {
    let env = canonical(0);
    let mut first = BtSample::default();
    let mut target = BtBeam::default();
    unsafe {
        assert_eq!(bt_env_reset(env, &mut first), BtStatus::Ok);
        assert_eq!(bt_env_target(env, &mut target), BtStatus::Ok);
        let mut objective = 0.0;
        assert_eq!(bt_objective(&first.beam, &target, &mut objective), BtStatus::Ok);
        assert_eq!(objective, first.objective);
        assert_eq!(first.mae, first.objective / 4.0);

        let mut again = BtSample::default();
        assert_eq!(bt_env_step(env, &first.settings, &mut again), BtStatus::Ok);
        assert_eq!(again, first, "noiseless re-measurement is identical");
        assert_eq!(bt_env_history_len(env), 2);

        let wild = BtSettings {
            q1: 1e3,
            ..first.settings
        };
        assert_eq!(bt_env_step(env, &wild, ptr::null_mut()), BtStatus::Ok);
        assert_eq!(bt_env_history_len(env), 3);
        let mut clamped = BtSample::default();
        assert_eq!(bt_env_step(env, &wild, &mut clamped), BtStatus::Ok);
        assert_eq!(clamped.clamped, 0b1);
        assert!(clamped.settings.q1 < 1e3);

        assert_eq!(bt_env_reset(env, ptr::null_mut()), BtStatus::Ok);
        assert_eq!(bt_env_history_len(env), 1);
        bt_env_free(env);
        bt_env_free(ptr::null_mut());
    }
}

#[test]
fn matches_the_rust_environment() {
    let trial = beamtune::task::fixture::canonical().remove(1);
    let mut rust = beamtune::task::Environment::new(
        trial,
        &beamtune::optics::Geometry::default(),
        beamtune::task::NoiseConfig::off(),
        1,
    )
    .unwrap();
    let reference = rust.reset().unwrap();
    let env = canonical(1);
    let mut sample = BtSample::default();
    unsafe {
        assert_eq!(bt_env_reset(env, &mut sample), BtStatus::Ok);
        bt_env_free(env);
    }
    assert_eq!(sample.objective, reference.objective);
    assert_eq!(sample.beam.mu_x, reference.parameters.mu_x);
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut env = ptr::null_mut();
        assert_eq!(bt_env_new_canonical(7, 0.0, 1, &mut env), BtStatus::InvalidArgument);
        assert!(env.is_null());
        assert!(last_error().contains("no canonical trial 7"));
        assert_eq!(bt_env_new_canonical(0, -1.0, 1, &mut env), BtStatus::InvalidArgument);
        assert_eq!(bt_env_new_canonical(0, 0.0, 1, ptr::null_mut()), BtStatus::NullPointer);
        assert_eq!(bt_env_reset(ptr::null_mut(), ptr::null_mut()), BtStatus::NullPointer);
        assert_eq!(last_error(), "env is null");

        let env = canonical(0);
        let nan = BtSettings {
            cv: f64::NAN,
            ..Default::default()
        };
        assert_eq!(bt_env_step(env, &nan, ptr::null_mut()), BtStatus::Task);
        assert!(!last_error().is_empty());
        assert_eq!(bt_env_step(env, ptr::null(), ptr::null_mut()), BtStatus::NullPointer);
        bt_env_free(env);

        let name = |s: i32| CStr::from_ptr(bt_status_name(s)).to_str().unwrap();
        assert_eq!(name(BtStatus::Parse as i32), "parse");
        assert_eq!(name(42), "unknown");
    }
}

#[test]
fn parse_response_reports_settings_and_reasons() {
    let good =
        CString::new("```json\n{\"Q1\": 5.0, \"Q2\": -4.0, \"CV\": 1.5, \"Q3\": 2.0, \"CH\": -0.5}\n```").unwrap();
    let mut out = BtSettings::default();
    let mut reason = BtParseReason::MissingKeys;
    unsafe {
        assert_eq!(bt_parse_response(good.as_ptr(), &mut out, &mut reason), BtStatus::Ok);
    }
    assert_eq!(reason, BtParseReason::None);
    assert_eq!((out.q1, out.q2, out.q3), (5.0, -4.0, 2.0));
    assert!((out.cv - 1.5e-3).abs() < 1e-15, "steerers come back in rad");

    let cases = [
        ("no settings here", BtParseReason::NoJson),
        ("```json\n{\"Q1\": 1,}\n```", BtParseReason::InvalidJson),
        ("```json\n{\"Q1\": 1}\n```", BtParseReason::MissingKeys),
    ];
    for (text, want) in cases {
        let text = CString::new(text).unwrap();
        unsafe {
            assert_eq!(bt_parse_response(text.as_ptr(), &mut out, &mut reason), BtStatus::Parse);
            assert_eq!(
                bt_parse_response(text.as_ptr(), &mut out, ptr::null_mut()),
                BtStatus::Parse
            );
        }
        assert_eq!(reason, want);
        assert!(!last_error().is_empty());
    }
    unsafe {
        assert_eq!(
            bt_parse_response(ptr::null(), &mut out, &mut reason),
            BtStatus::NullPointer
        );
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(
            bt_parse_response(bad.as_ptr().cast(), &mut out, &mut reason),
            BtStatus::InvalidArgument
        );
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/beamtune.h")).unwrap();
    for symbol in [
        "bt_last_error",
        "bt_env_new_canonical",
        "bt_env_new_from_seed",
        "bt_env_free",
        "bt_env_reset",
        "bt_env_step",
        "bt_env_target",
        "bt_env_history_len",
        "bt_objective",
        "bt_parse_response",
        "bt_status_name",
        "typedef struct bt_env bt_env;",
        "BT_STATUS_OK = 0",
        "BT_PARSE_REASON_AMBIGUOUS_MULTIPLE = 3",
    ] {
        assert!(header.contains(symbol), "{symbol} missing from header");
    }
}

/// Static library next to this test binary, if cargo built one.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let lib = dir.join("libbeamtune_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_the_header() {
    let (Some(lib), Ok(_)) = (static_lib(), Command::new("cc").arg("--version").output()) else {
        eprintln!("skipping: no C compiler or static library");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "beamtune.h"

int main(void) {
    bt_env *env = NULL;
    bt_sample s;
    if (bt_env_new_canonical(0, 0.0, 1, &env) != BT_STATUS_OK) return 1;
    if (bt_env_reset(env, &s) != BT_STATUS_OK) return 2;
    bt_settings next = s.settings;
    next.q1 += 1.0;
    if (bt_env_step(env, &next, &s) != BT_STATUS_OK) return 3;
    if (bt_env_history_len(env) != 2) return 4;
    bt_env_free(env);
    bt_parse_reason why;
    bt_settings out;
    if (bt_parse_response("nothing", &out, &why) != BT_STATUS_PARSE) return 5;
    if (why != BT_PARSE_REASON_NO_JSON) return 6;
    printf("%.6f\n", s.objective);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = tmp.path().join("smoke");
    let include = crate_dir().join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg(format!("-I{}", include.display()))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "compiling the C smoke test failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke test exited with {:?}", out.status.code());
    let objective: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(objective.is_finite() && objective > 0.0);
}
