//! C ABI over the `beamloc` simulator.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns a
//! [`BeamlocStatus`]; on failure [`beamloc_last_error`] describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use beamloc::crlb::{self, ToaStats};
use beamloc::fbhca::Scheme;
use beamloc::nalgebra::Vector3;
use beamloc::runner::{self, ExperimentResult, ScenarioConfig};
use beamloc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamlocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    InvalidParameter = 3,
    Config = 4,
    Io = 5,
    Geometry = 6,
    Coverage = 7,
    Solver = 8,
    OutOfRange = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamlocScheme {
    Tmcb = 0,
    UvbhsEpa = 1,
    Fbhca = 2,
}

impl From<Scheme> for BeamlocScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Tmcb => BeamlocScheme::Tmcb,
            Scheme::UvbhsEpa => BeamlocScheme::UvbhsEpa,
            Scheme::Fbhca => BeamlocScheme::Fbhca,
        }
    }
}

/// One aggregated sweep row.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamlocRow {
    pub sweep_value: f64,
    pub scheme: BeamlocScheme,
    pub n_pos: u32,
    /// NaN when no (user, snapshot) pair was covered.
    pub avg_crlb_m: f64,
    pub covered_users: u64,
    pub excluded_users: u64,
    pub runtime_ms: u64,
}

/// Opaque scenario configuration.
pub struct BeamlocConfig(ScenarioConfig);

/// Opaque sweep result.
pub struct BeamlocResult(ExperimentResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> BeamlocStatus {
    match e {
        Error::InvalidParameter { .. } => BeamlocStatus::InvalidParameter,
        Error::Config { .. } => BeamlocStatus::Config,
        Error::Io { .. } | Error::Csv { .. } => BeamlocStatus::Io,
        Error::NotVisible { .. }
        | Error::Horizon { .. }
        | Error::InsufficientAnchors { .. }
        | Error::DegenerateGeometry(_)
        | Error::UnusableSatellite(_) => BeamlocStatus::Geometry,
        Error::Coverage { .. } | Error::Association(_) => BeamlocStatus::Coverage,
        Error::Solver(_) | Error::Assembly(_) => BeamlocStatus::Solver,
        Error::Lookup(_) => BeamlocStatus::OutOfRange,
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), (BeamlocStatus, String)>) -> BeamlocStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BeamlocStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            BeamlocStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (BeamlocStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (BeamlocStatus, String) {
    (BeamlocStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (BeamlocStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (BeamlocStatus::InvalidString, "path is not valid UTF-8".into()))
}

unsafe fn config_mut<'a>(cfg: *mut BeamlocConfig) -> Result<&'a mut ScenarioConfig, (BeamlocStatus, String)> {
    cfg.as_mut().map(|c| &mut c.0).ok_or_else(|| null("config"))
}

/// Message of the last failed call on this thread, or null.
///
/// The pointer stays valid until the next `beamloc_*` call on the same thread.
#[no_mangle]
pub extern "C" fn beamloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn beamloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Configuration with every default applied. Never null.
#[no_mangle]
pub extern "C" fn beamloc_config_default() -> *mut BeamlocConfig {
    Box::into_raw(Box::new(BeamlocConfig(ScenarioConfig::default())))
}

/// Loads and validates a TOML file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn beamloc_config_load(path: *const c_char, out: *mut *mut BeamlocConfig) -> BeamlocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let (cfg, _) = runner::load_config(&path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BeamlocConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn beamloc_config_free(cfg: *mut BeamlocConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn beamloc_config_set_seed(cfg: *mut BeamlocConfig, seed: u64) -> BeamlocStatus {
    guard(|| {
        config_mut(cfg)?.seed = seed;
        Ok(())
    })
}

/// Sets the user count `J` and the snapshot count `S`.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn beamloc_config_set_population(
    cfg: *mut BeamlocConfig,
    users: usize,
    snapshots: usize,
) -> BeamlocStatus {
    guard(|| {
        let c = config_mut(cfg)?;
        if users == 0 || snapshots == 0 {
            return Err((BeamlocStatus::InvalidParameter, "users and snapshots must be >= 1".into()));
        }
        c.users = users;
        c.snapshots = snapshots;
        Ok(())
    })
}

/// Replaces the orbit heights (km) of the height sweep.
///
/// # Safety
/// `cfg` must be a live handle and `heights_km` point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn beamloc_config_set_heights(
    cfg: *mut BeamlocConfig,
    heights_km: *const f64,
    len: usize,
) -> BeamlocStatus {
    guard(|| {
        let c = config_mut(cfg)?;
        if heights_km.is_null() {
            return Err(null("heights_km"));
        }
        let h = std::slice::from_raw_parts(heights_km, len);
        if h.is_empty() || h.iter().any(|&v| !(v > 0.0)) {
            return Err((BeamlocStatus::InvalidParameter, "heights must be non-empty and positive".into()));
        }
        c.sweep.heights_km = h.to_vec();
        Ok(())
    })
}

/// Positioning satellites per user for the height sweep and Table II.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn beamloc_config_set_positioning_sats(cfg: *mut BeamlocConfig, n_pos: usize) -> BeamlocStatus {
    guard(|| {
        let c = config_mut(cfg)?;
        if n_pos < 4 {
            return Err((BeamlocStatus::InvalidParameter, "at least 4 positioning satellites are needed".into()));
        }
        c.algo.positioning_sats = n_pos;
        Ok(())
    })
}

unsafe fn run_sweep(
    cfg: *const BeamlocConfig,
    threads: usize,
    out: *mut *mut BeamlocResult,
    run: fn(&ScenarioConfig, Option<usize>) -> beamloc::Result<ExperimentResult>,
) -> BeamlocStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let result = run(&cfg.0, (threads > 0).then_some(threads)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BeamlocResult(result)));
        Ok(())
    })
}

/// Orbit-height sweep. `threads = 0` uses every core.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn beamloc_run_height_sweep(
    cfg: *const BeamlocConfig,
    threads: usize,
    out: *mut *mut BeamlocResult,
) -> BeamlocStatus {
    run_sweep(cfg, threads, out, runner::run_orbit_height_sweep)
}

/// Snapshot sweep over every configured positioning-satellite count.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn beamloc_run_snapshot_sweep(
    cfg: *const BeamlocConfig,
    threads: usize,
    out: *mut *mut BeamlocResult,
) -> BeamlocStatus {
    run_sweep(cfg, threads, out, runner::run_snapshot_sweep)
}

/// Number of rows in a result; 0 for null.
///
/// # Safety
/// `res` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn beamloc_result_len(res: *const BeamlocResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.rows.len())
}

/// Copies row `index` into `*out`.
///
/// # Safety
/// `res` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn beamloc_result_row(
    res: *const BeamlocResult,
    index: usize,
    out: *mut BeamlocRow,
) -> BeamlocStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let row = res.0.rows.get(index).ok_or_else(|| {
            (BeamlocStatus::OutOfRange, format!("row {index} of {}", res.0.rows.len()))
        })?;
        *out = BeamlocRow {
            sweep_value: row.sweep_value,
            scheme: row.scheme.into(),
            n_pos: row.n_pos as u32,
            avg_crlb_m: row.avg_crlb_m,
            covered_users: row.covered_users as u64,
            excluded_users: row.excluded_users as u64,
            runtime_ms: row.runtime_ms,
        };
        Ok(())
    })
}

/// Writes the result in the CLI's CSV format.
///
/// # Safety
/// `res` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn beamloc_result_write_csv(res: *const BeamlocResult, path: *const c_char) -> BeamlocStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("result"))?;
        let path = path_arg(path)?;
        runner::emit_csv(&res.0, &path).map_err(lib_err)
    })
}

/// # Safety
/// `res` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn beamloc_result_free(res: *mut BeamlocResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// TDOA position bound in metres for one receiver.
///
/// `ue` holds 3 ECEF coordinates in km, `sats` holds `count` satellites as
/// consecutive xyz triples in km and `toa_variance_s2` the TOA variance of
/// each satellite in s². `reference` selects the reference satellite.
///
/// # Safety
/// Pointers must reference arrays of the stated sizes; `out_m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn beamloc_tdoa_crlb(
    ue: *const f64,
    sats: *const f64,
    toa_variance_s2: *const f64,
    count: usize,
    reference: usize,
    out_m: *mut f64,
) -> BeamlocStatus {
    guard(|| {
        if ue.is_null() || sats.is_null() || toa_variance_s2.is_null() || out_m.is_null() {
            return Err(null("argument"));
        }
        let ue = std::slice::from_raw_parts(ue, 3);
        let flat = std::slice::from_raw_parts(sats, 3 * count);
        let sigma_sq = std::slice::from_raw_parts(toa_variance_s2, count).to_vec();
        if reference >= count {
            return Err((BeamlocStatus::OutOfRange, format!("reference {reference} of {count} satellites")));
        }
        let positions: Vec<Vector3<f64>> = flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let ids: Vec<usize> = (0..count).collect();
        let row = crlb::user_crlb(
            0,
            &Vector3::new(ue[0], ue[1], ue[2]),
            &positions,
            &ids,
            &ToaStats::new(sigma_sq, reference),
        )
        .map_err(lib_err)?;
        *out_m = row.crlb_m;
        Ok(())
    })
}
