use std::ffi::{CStr, CString};
use std::ptr;

use beamloc_ffi::*;

fn last_error() -> String {
    let p = beamloc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(beamloc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        assert_eq!(beamloc_config_set_seed(ptr::null_mut(), 1), BeamlocStatus::NullPointer);
        assert!(last_error().contains("config"));
        let mut out = ptr::null_mut();
        assert_eq!(beamloc_config_load(ptr::null(), &mut out), BeamlocStatus::NullPointer);
        assert_eq!(beamloc_result_len(ptr::null()), 0);
        beamloc_config_free(ptr::null_mut());
        beamloc_result_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_file_gives_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[algo]\nper_sat_w = \"lots\"\n").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { beamloc_config_load(c.as_ptr(), &mut out) };
    assert_eq!(status, BeamlocStatus::Config);
    assert!(out.is_null());
    assert!(last_error().contains("per_sat_w"));

    let missing = CString::new(dir.path().join("none.toml").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { beamloc_config_load(missing.as_ptr(), &mut out) }, BeamlocStatus::Io);
}

#[test]
fn setters_validate() {
    let cfg = beamloc_config_default();
    unsafe {
        assert_eq!(beamloc_config_set_population(cfg, 0, 3), BeamlocStatus::InvalidParameter);
        assert_eq!(beamloc_config_set_positioning_sats(cfg, 3), BeamlocStatus::InvalidParameter);
        let bad = [1200.0, -5.0];
        assert_eq!(beamloc_config_set_heights(cfg, bad.as_ptr(), 2), BeamlocStatus::InvalidParameter);
        assert_eq!(beamloc_config_set_seed(cfg, 3), BeamlocStatus::Ok);
        assert!(beamloc_last_error().is_null());
        beamloc_config_free(cfg);
    }
}

#[test]
fn small_height_sweep_round_trip() {
    let cfg = beamloc_config_default();
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        assert_eq!(beamloc_config_set_population(cfg, 4, 1), BeamlocStatus::Ok);
        let h = [1200.0];
        assert_eq!(beamloc_config_set_heights(cfg, h.as_ptr(), 1), BeamlocStatus::Ok);
        let mut res = ptr::null_mut();
        assert_eq!(beamloc_run_height_sweep(cfg, 1, &mut res), BeamlocStatus::Ok);
        assert_eq!(beamloc_result_len(res), 3);
        let mut row = BeamlocRow {
            sweep_value: 0.0,
            scheme: BeamlocScheme::Tmcb,
            n_pos: 0,
            avg_crlb_m: 0.0,
            covered_users: 0,
            excluded_users: 0,
            runtime_ms: 7,
        };
        let schemes = [BeamlocScheme::Tmcb, BeamlocScheme::UvbhsEpa, BeamlocScheme::Fbhca];
        for (i, s) in schemes.iter().enumerate() {
            assert_eq!(beamloc_result_row(res, i, &mut row), BeamlocStatus::Ok);
            assert_eq!(row.scheme, *s);
            assert_eq!(row.sweep_value, 1200.0);
            assert_eq!(row.n_pos, 4);
            assert_eq!(row.runtime_ms, 0);
            assert_eq!(row.covered_users + row.excluded_users, 4);
            assert!(row.avg_crlb_m > 0.0);
        }
        assert_eq!(beamloc_result_row(res, 3, &mut row), BeamlocStatus::OutOfRange);
        let path = CString::new(dir.path().join("h.csv").to_str().unwrap()).unwrap();
        assert_eq!(beamloc_result_write_csv(res, path.as_ptr()), BeamlocStatus::Ok);
        let text = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        beamloc_result_free(res);
        beamloc_config_free(cfg);
    }
}

#[test]
fn crlb_entry_point_matches_closed_form() {
    // Satellites on the axes at equal range and equal variance.
    let ue = [0.0, 0.0, 0.0];
    let d = 1000.0;
    let sats = [d, 0.0, 0.0, 0.0, d, 0.0, 0.0, 0.0, d, -d, 0.0, 0.0];
    let var = [1e-18; 4];
    let mut out = 0.0;
    let status = unsafe { beamloc_tdoa_crlb(ue.as_ptr(), sats.as_ptr(), var.as_ptr(), 4, 0, &mut out) };
    assert_eq!(status, BeamlocStatus::Ok);
    let direct = beamloc::crlb::user_crlb(
        0,
        &beamloc::nalgebra::Vector3::zeros(),
        &sats.chunks(3).map(|c| beamloc::nalgebra::Vector3::new(c[0], c[1], c[2])).collect::<Vec<_>>(),
        &[0, 1, 2, 3],
        &beamloc::crlb::ToaStats::new(var.to_vec(), 0),
    )
    .unwrap();
    assert!((out - direct.crlb_m).abs() <= 1e-12 * direct.crlb_m);

    let status = unsafe { beamloc_tdoa_crlb(ue.as_ptr(), sats.as_ptr(), var.as_ptr(), 4, 4, &mut out) };
    assert_eq!(status, BeamlocStatus::OutOfRange);
    let status = unsafe { beamloc_tdoa_crlb(ue.as_ptr(), sats.as_ptr(), var.as_ptr(), 3, 0, &mut out) };
    assert_eq!(status, BeamlocStatus::Geometry);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/beamloc.h")).unwrap();
    for name in [
        "beamloc_last_error",
        "beamloc_config_load",
        "beamloc_run_height_sweep",
        "beamloc_result_row",
        "beamloc_tdoa_crlb",
        "typedef struct BeamlocConfig BeamlocConfig",
        "BEAMLOC_STATUS_OK",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
