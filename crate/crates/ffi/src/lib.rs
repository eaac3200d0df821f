//! C ABI over `aclab`.
//!
//! Every entry point returns an `int32_t` status (`ACLAB_OK` or a negative
//! code) and writes results through out-pointers. Objects cross the boundary
//! as opaque handles that the caller releases with the matching `*_free`.
//! The message of the most recent failure on the calling thread is available
//! from `aclab_last_error_message`. Panics never unwind into C; they surface
//! as `ACLAB_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use aclab::config::{run_config, CaseConfig, WellSection};
use aclab::modelops::eps_spectrum;
use aclab::profile::{compute_profile, default_t_max, Profile};
use aclab::solver::{lyapunov_schmidt_iterate, newton_full, Method, SolveConfig, SolverState};
use aclab::Error;

pub const ACLAB_OK: i32 = 0;
pub const ACLAB_ERR_NULL: i32 = -1;
pub const ACLAB_ERR_INVALID_ARGUMENT: i32 = -2;
pub const ACLAB_ERR_CONFIG: i32 = -3;
pub const ACLAB_ERR_NUMERICAL: i32 = -4;
pub const ACLAB_ERR_IO: i32 = -5;
pub const ACLAB_ERR_PANIC: i32 = -99;

pub const ACLAB_WELL_QUARTIC: i32 = 0;
pub const ACLAB_WELL_ASYMMETRIC: i32 = 1;

/// Tabulated heteroclinic profile.
pub struct AclabProfile(Profile);

/// Converged solver state.
pub struct AclabState(SolverState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => ACLAB_ERR_CONFIG,
        Error::InvalidArgument(_) | Error::ResolutionError(_) => ACLAB_ERR_INVALID_ARGUMENT,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => ACLAB_ERR_IO,
        Error::AtEps { source, .. } => code_of(source),
        _ => ACLAB_ERR_NUMERICAL,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Run `f`, recording failures and translating them to status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ACLAB_OK,
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            ACLAB_ERR_NULL
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(&msg);
            ACLAB_ERR_INVALID_ARGUMENT
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            code_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            ACLAB_ERR_PANIC
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: the caller promises `p` is null or points to a live `T`
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn write<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: non-null and, per the contract, valid for writes
    unsafe { out.write(v) };
    Ok(())
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: non-null and NUL-terminated per the contract
    let s = unsafe { CStr::from_ptr(p) };
    let s = s.to_str().map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aclab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aclab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Tabulate the profile of a built-in well on `n_points` nodes of
/// `[-t_max, t_max]`; `t_max <= 0` picks the default window.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn aclab_profile_new(well: i32, n_points: usize, t_max: f64, out: *mut *mut AclabProfile) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let section = match well {
            ACLAB_WELL_QUARTIC => WellSection::Quartic,
            ACLAB_WELL_ASYMMETRIC => WellSection::Asymmetric,
            other => return Err(Fail::Arg(format!("unknown well {other}"))),
        };
        let w = aclab::config::well_from(&section)?;
        let t = if t_max > 0.0 { t_max } else { default_t_max(&w)? };
        let p = compute_profile(&w, t, n_points)?;
        unsafe { write(out, Box::into_raw(Box::new(AclabProfile(p))), "out") }
    })
}

/// `u*(t)` and `w*(t) = u*'(t)`.
///
/// # Safety
/// `p` must come from `aclab_profile_new`; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn aclab_profile_eval(p: *const AclabProfile, t: f64, out_u: *mut f64, out_w: *mut f64) -> i32 {
    guard(|| {
        let p = unsafe { deref(p, "profile")? };
        if !t.is_finite() {
            return Err(Fail::Arg("t is not finite".into()));
        }
        let (u, w) = p.0.eval(t);
        unsafe {
            write(out_u, u, "out_u")?;
            write(out_w, w, "out_w")
        }
    })
}

/// Surface tension `c* = int w*^2`.
///
/// # Safety
/// `p` must come from `aclab_profile_new`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aclab_profile_c_star(p: *const AclabProfile, out: *mut f64) -> i32 {
    guard(|| {
        let p = unsafe { deref(p, "profile")? };
        unsafe { write(out, p.0.c_star(), "out") }
    })
}

/// # Safety
/// `p` must be null or come from `aclab_profile_new`, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aclab_profile_free(p: *mut AclabProfile) {
    if !p.is_null() {
        // SAFETY: ownership returns from C
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Lowest `k` Dirichlet eigenvalues of the eps-scaled operator on `[-1, 1]`,
/// written to `out[0..k]`.
///
/// # Safety
/// `p` must come from `aclab_profile_new`; `out` must hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn aclab_eps_spectrum(p: *const AclabProfile, eps: f64, k: usize, out: *mut f64) -> i32 {
    guard(|| {
        let p = unsafe { deref(p, "profile")? };
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if k == 0 {
            return Err(Fail::Arg("k must be positive".into()));
        }
        let s = eps_spectrum(&p.0, eps, k, 40)?;
        // SAFETY: caller provides room for k values
        let dst = unsafe { std::slice::from_raw_parts_mut(out, k) };
        dst.copy_from_slice(&s.eigenvalues[..k]);
        Ok(())
    })
}

/// Solve the case described by a TOML file at one `eps` with the method the
/// file declares.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aclab_solve_config(path: *const c_char, eps: f64, out: *mut *mut AclabState) -> i32 {
    guard(|| {
        let path = unsafe { path_arg(path, "path")? };
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let cfg = CaseConfig::load(&path)?;
        let pb = cfg.problem()?;
        let solve = SolveConfig { continuation_eps: vec![eps], ..cfg.solve_config() };
        let st = match cfg.solver.method {
            Method::Newton => {
                let u0 = pb.approximate(eps, None)?;
                newton_full(&pb, &solve, eps, &u0, pb.lambda_star())?
            }
            Method::LyapunovSchmidt => lyapunov_schmidt_iterate(&pb, &solve, eps, &pb.reference, None)?.0,
        };
        unsafe { write(out, Box::into_raw(Box::new(AclabState(st))), "out") }
    })
}

/// Number of grid values in the state.
///
/// # Safety
/// `s` must come from `aclab_solve_config`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aclab_state_len(s: *const AclabState, out: *mut usize) -> i32 {
    guard(|| {
        let s = unsafe { deref(s, "state")? };
        unsafe { write(out, s.0.u.len(), "out") }
    })
}

/// Copy the field into `buf`, which must hold exactly `len` values.
///
/// # Safety
/// `s` must come from `aclab_solve_config`; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn aclab_state_u(s: *const AclabState, buf: *mut f64, len: usize) -> i32 {
    guard(|| {
        let s = unsafe { deref(s, "state")? };
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        if len != s.0.u.len() {
            return Err(Fail::Arg(format!("buffer holds {len} values, state has {}", s.0.u.len())));
        }
        // SAFETY: length checked against the state
        unsafe { std::slice::from_raw_parts_mut(buf, len) }.copy_from_slice(&s.0.u);
        Ok(())
    })
}

/// Multiplier, eps, scaled residual and constraint gap of the state.
///
/// # Safety
/// `s` must come from `aclab_solve_config`; each out-pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn aclab_state_scalars(
    s: *const AclabState,
    out_lambda: *mut f64,
    out_eps: *mut f64,
    out_residual: *mut f64,
    out_gap: *mut f64,
) -> i32 {
    guard(|| {
        let s = unsafe { deref(s, "state")? };
        unsafe {
            write(out_lambda, s.0.lambda, "out_lambda")?;
            write(out_eps, s.0.eps, "out_eps")?;
            write(out_residual, s.0.residual_norm, "out_residual")?;
            write(out_gap, s.0.constraint_gap, "out_gap")
        }
    })
}

/// # Safety
/// `s` must be null or come from `aclab_solve_config`, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn aclab_state_free(s: *mut AclabState) {
    if !s.is_null() {
        // SAFETY: ownership returns from C
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Run the full pipeline of a case file, writing artifacts into `out_dir`.
/// `out_passed` receives 1 if every declared assertion holds, else 0.
///
/// # Safety
/// `path` and `out_dir` must be NUL-terminated strings; `out_passed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn aclab_run_config(path: *const c_char, out_dir: *const c_char, seed: u64, out_passed: *mut i32) -> i32 {
    guard(|| {
        let path = unsafe { path_arg(path, "path")? };
        let dir = unsafe { path_arg(out_dir, "out_dir")? };
        if out_passed.is_null() {
            return Err(Fail::Null("out_passed"));
        }
        let rep = run_config(&path, &dir, seed)?;
        unsafe { write(out_passed, i32::from(rep.passed()), "out_passed") }
    })
}
