//! C ABI over the `kscert` crate.
//!
//! All functions return a [`KsStatus`]; on failure the message is available
//! from [`ks_last_error`] on the same thread. Handles are opaque and must be
//! released with their `_free` function. Strings returned by the library are
//! owned by the caller and released with [`ks_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kscert::chemotaxis::{simulate, RunOutcome, Trajectory};
use kscert::cli::certify_trajectory;
use kscert::config::RunConfig;
use kscert::monitor::{CertificateReport, MonitorRecord};
use kscert::params;
use kscert::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Domain = 4,
    Solver = 5,
    Cfl = 6,
    Positivity = 7,
    Stride = 8,
    Io = 9,
    /// Output buffer too small or unknown name.
    Range = 10,
    Panic = 11,
}

/// Parsed, validated run configuration.
pub struct KsConfig {
    inner: RunConfig,
}

/// A finished (possibly aborted) run with its certificate report.
pub struct KsRun {
    traj: Trajectory,
    report: CertificateReport,
}

/// Admissibility of an exponent pair, see [`ks_check_params`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KsAdmissibility {
    pub p_ok: bool,
    pub q_ok: bool,
    pub pq_cond: bool,
    pub chi_ok: bool,
    /// False when the window is empty; `q_low`/`q_high` are then NaN.
    pub has_window: bool,
    pub q_low: f64,
    pub q_high: f64,
    pub coefficient_floor: f64,
    pub exponent_infimum: f64,
    pub fully_admissible: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> KsStatus {
    match e.root() {
        Error::Domain(_) => KsStatus::Domain,
        Error::Positivity { .. } => KsStatus::Positivity,
        Error::Cfl { .. } => KsStatus::Cfl,
        Error::Solver { .. } => KsStatus::Solver,
        Error::Stride { .. } => KsStatus::Stride,
        Error::Config { .. } => KsStatus::Config,
        Error::Io(_) | Error::Json(_) => KsStatus::Io,
        Error::AtStep { .. } => KsStatus::Domain,
    }
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), KsStatus>) -> KsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KsStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KsStatus::Panic
        }
    }
}

fn fail(e: Error) -> KsStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> KsStatus {
    set_error(format!("{what} is null"));
    KsStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, KsStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        KsStatus::InvalidUtf8
    })
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ks_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ks_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a TOML config.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_config_parse(toml: *const c_char, out: *mut *mut KsConfig) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(toml, "toml")?;
        let inner = RunConfig::parse(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(KsConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`ks_config_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ks_config_free(cfg: *mut KsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// SHA-256 of the config text as a new hex string.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_config_hash(cfg: *const KsConfig, out: *mut *mut c_char) -> KsStatus {
    guard(|| {
        if cfg.is_null() {
            return Err(null("cfg"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string((*cfg).inner.hash());
        Ok(())
    })
}

/// Admissibility report for (chi, p, q) in dimension `dim`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_check_params(
    chi: f64,
    p: f64,
    q: f64,
    dim: u32,
    out: *mut KsAdmissibility,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mp = params::ModelParams {
            chi,
            p,
            q,
            dim,
            ..Default::default()
        };
        mp.validate().map_err(fail)?;
        let r = params::check_pq(&mp);
        *out = KsAdmissibility {
            p_ok: r.p_ok,
            q_ok: r.q_ok,
            pq_cond: r.pq_cond,
            chi_ok: r.chi_ok,
            has_window: r.q_window.is_some(),
            q_low: r.q_window.map_or(f64::NAN, |w| w.low),
            q_high: r.q_window.map_or(f64::NAN, |w| w.high),
            coefficient_floor: r.coefficient_floor,
            exponent_infimum: r.exponent_infimum,
            fully_admissible: r.fully_admissible(),
        };
        Ok(())
    })
}

/// Endpoints of the admissible q window for (p, chi).
///
/// # Safety
/// `low` and `high` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ks_q_window(p: f64, chi: f64, low: *mut f64, high: *mut f64) -> KsStatus {
    guard(|| {
        if low.is_null() || high.is_null() {
            return Err(null("output pointer"));
        }
        let (a, b) = params::q_pm(p, chi).map_err(fail)?;
        *low = a;
        *high = b;
        Ok(())
    })
}

/// Infimum over s >= 0 of the supersolution coefficient.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_coefficient_lower_bound(
    p: f64,
    q: f64,
    chi: f64,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = params::coefficient_lower_bound(p, q, chi).map_err(fail)?;
        Ok(())
    })
}

/// Upper bound for solutions of y' = -a y^2 + b started at +infinity.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_coth_bound(a: f64, b: f64, t: f64, out: *mut f64) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = params::coth_bound(a, b, t).map_err(fail)?;
        Ok(())
    })
}

/// Simulates and certifies a config. An aborted run still yields a handle
/// (check [`ks_run_completed`]); only invalid inputs fail.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_run(cfg: *const KsConfig, out: *mut *mut KsRun) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if cfg.is_null() {
            return Err(null("cfg"));
        }
        let c = &(*cfg).inner;
        let traj =
            simulate(&c.params, &c.grid(), &c.initial, &c.potential, &c.scheme).map_err(fail)?;
        let report = certify_trajectory(c, &traj);
        *out = Box::into_raw(Box::new(KsRun { traj, report }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`ks_run`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ks_run_free(run: *mut KsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

unsafe fn run_ref<'a>(run: *const KsRun) -> Result<&'a KsRun, KsStatus> {
    run.as_ref().ok_or_else(|| null("run"))
}

/// 1 if the run reached its final time, 0 if it aborted, -1 on NULL.
///
/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ks_run_completed(run: *const KsRun) -> i32 {
    match run.as_ref() {
        Some(r) => i32::from(r.traj.outcome == RunOutcome::Completed),
        None => -1,
    }
}

/// 1 if no certificate failed, 0 otherwise, -1 on NULL.
///
/// # Safety
/// `run` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ks_run_all_pass(run: *const KsRun) -> i32 {
    match run.as_ref() {
        Some(r) => i32::from(r.report.all_pass()),
        None => -1,
    }
}

/// Number of monitor records (accepted steps plus the initial state).
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_run_num_records(run: *const KsRun, out: *mut usize) -> KsStatus {
    guard(|| {
        let r = run_ref(run)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = r.traj.records.len();
        Ok(())
    })
}

/// Copies one monitor column (e.g. "t", "mass_n", "min_c") into `buf`,
/// which must hold at least [`ks_run_num_records`] values.
///
/// # Safety
/// `column` must be NUL-terminated and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ks_run_monitor_column(
    run: *const KsRun,
    column: *const c_char,
    buf: *mut f64,
    len: usize,
) -> KsStatus {
    guard(|| {
        let r = run_ref(run)?;
        let name = str_arg(column, "column")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let Some(j) = MonitorRecord::COLUMNS.iter().position(|c| *c == name) else {
            set_error(format!("unknown monitor column {name}"));
            return Err(KsStatus::Range);
        };
        if len < r.traj.records.len() {
            set_error(format!(
                "buffer holds {len} values, need {}",
                r.traj.records.len()
            ));
            return Err(KsStatus::Range);
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for (o, rec) in out.iter_mut().zip(&r.traj.records) {
            *o = rec.values()[j];
        }
        Ok(())
    })
}

/// Copies the final cell field "n", "c" or "p" (x fastest) into `buf`.
///
/// # Safety
/// `field` must be NUL-terminated and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ks_run_final_field(
    run: *const KsRun,
    field: *const c_char,
    buf: *mut f64,
    len: usize,
) -> KsStatus {
    guard(|| {
        let r = run_ref(run)?;
        let name = str_arg(field, "field")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let s = r.traj.final_state();
        let values = match name {
            "n" => &s.n.values,
            "c" => &s.c.values,
            "p" => &s.p.values,
            _ => {
                set_error(format!("unknown field {name}"));
                return Err(KsStatus::Range);
            }
        };
        if len < values.len() {
            set_error(format!("buffer holds {len} values, need {}", values.len()));
            return Err(KsStatus::Range);
        }
        std::slice::from_raw_parts_mut(buf, values.len()).copy_from_slice(values);
        Ok(())
    })
}

/// Certificate report as a new JSON string.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_run_report_json(run: *const KsRun, out: *mut *mut c_char) -> KsStatus {
    guard(|| {
        let r = run_ref(run)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string(r.report.to_json().map_err(fail)?);
        Ok(())
    })
}
