//! C ABI over `epiextinct`.
//!
//! Models live behind an opaque `EpxModel` handle created by
//! [`epx_model_new`] and released by [`epx_model_free`]. Every fallible call
//! returns an [`EpxStatus`]; on failure the message is available from
//! [`epx_last_error`] on the same thread until the next failing call.
//! Output arrays are caller-allocated, with their length passed alongside.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use epiextinct::action_md::quasipotential_md;
use epiextinct::model::{build_model, ModelKind, ModelParams, ReactionModel};
use epiextinct::predict::{critical_size, extinction_quasipotential};
use epiextinct::simulate::mc_extinction;
use epiextinct::Error;

/// Opaque model handle.
pub struct EpxModel {
    inner: ReactionModel,
}

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpxModelKind {
    EPX_SIS = 0,
    EPX_SIRS = 1,
    EPX_SIR_DEMOGRAPHY = 2,
}

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpxStatus {
    EPX_OK = 0,
    EPX_NULL_POINTER = 1,
    EPX_INVALID_ARGUMENT = 2,
    EPX_BUFFER_TOO_SMALL = 3,
    EPX_NO_ENDEMIC_EQUILIBRIUM = 4,
    EPX_INFEASIBLE = 5,
    EPX_NOT_CONVERGED = 6,
    EPX_ALL_CENSORED = 7,
    EPX_NUMERICAL = 8,
    EPX_PANIC = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> EpxStatus {
    match e {
        Error::InvalidParameter { .. }
        | Error::AlphaOutOfRange(_)
        | Error::DeviationOutOfRange { .. }
        | Error::MismatchedStart { .. }
        | Error::Unsupported(_) => EpxStatus::EPX_INVALID_ARGUMENT,
        Error::NoEndemicEquilibrium(_) | Error::NotHurwitz { .. } => EpxStatus::EPX_NO_ENDEMIC_EQUILIBRIUM,
        Error::InfeasibleVelocity | Error::NotAbsolutelyContinuous(_) => EpxStatus::EPX_INFEASIBLE,
        Error::AllCensored { .. } => EpxStatus::EPX_ALL_CENSORED,
        _ => EpxStatus::EPX_NUMERICAL,
    }
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (EpxStatus, String)>) -> EpxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EpxStatus::EPX_OK,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EpxStatus::EPX_PANIC
        }
    }
}

fn lib_err(e: Error) -> (EpxStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (EpxStatus, String) {
    (EpxStatus::EPX_NULL_POINTER, format!("`{what}` is null"))
}

unsafe fn model_ref<'a>(m: *const EpxModel) -> Result<&'a ReactionModel, (EpxStatus, String)> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], (EpxStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err((EpxStatus::EPX_BUFFER_TOO_SMALL, format!("`{what}` holds {len}, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn epx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates a model. `rho` is read for SIRS only and `mu` for SIR with
/// demography only.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to be
/// released with [`epx_model_free`].
#[no_mangle]
pub unsafe extern "C" fn epx_model_new(
    kind: EpxModelKind,
    lambda: f64,
    gamma: f64,
    rho: f64,
    mu: f64,
    out: *mut *mut EpxModel,
) -> EpxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (kind, params) = match kind {
            EpxModelKind::EPX_SIS => (ModelKind::Sis, ModelParams::sis(lambda, gamma)),
            EpxModelKind::EPX_SIRS => (ModelKind::Sirs, ModelParams::sirs(lambda, gamma, rho)),
            EpxModelKind::EPX_SIR_DEMOGRAPHY => (ModelKind::SirDemography, ModelParams::sir_demography(lambda, gamma, mu)),
        };
        let inner = build_model(kind, params).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EpxModel { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`epx_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn epx_model_free(model: *mut EpxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension (1 for SIS, 2 otherwise), or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn epx_model_dim(model: *const EpxModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Writes the drift `b(z)` into `out`.
///
/// # Safety
/// `z` must point to `dim` values and `out` to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn epx_model_drift(model: *const EpxModel, z: *const f64, out: *mut f64, out_len: usize) -> EpxStatus {
    guard(|| {
        let m = model_ref(model)?;
        if z.is_null() {
            return Err(null("z"));
        }
        let z = std::slice::from_raw_parts(z, m.dim());
        let out = out_slice(out, out_len, m.dim(), "out")?;
        m.drift_into(z, &mut out[..m.dim()]);
        Ok(())
    })
}

/// Writes the endemic equilibrium `z*` into `out`.
///
/// # Safety
/// `out` must point to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn epx_model_equilibrium(model: *const EpxModel, out: *mut f64, out_len: usize) -> EpxStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_slice(out, out_len, m.dim(), "out")?;
        let eq = m.endemic_equilibrium().map_err(lib_err)?;
        if !eq.stable {
            return Err((EpxStatus::EPX_NO_ENDEMIC_EQUILIBRIUM, "endemic equilibrium is unstable".into()));
        }
        out[..m.dim()].copy_from_slice(&eq.z_star);
        Ok(())
    })
}

/// Large-deviations cost of extinction from the endemic equilibrium.
/// Returns `EPX_NOT_CONVERGED` with `*value` still set when the numerical
/// minimization did not settle.
///
/// # Safety
/// `value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn epx_quasipotential_ld(model: *const EpxModel, value: *mut f64) -> EpxStatus {
    guard(|| {
        let m = model_ref(model)?;
        if value.is_null() {
            return Err(null("value"));
        }
        let q = extinction_quasipotential(m).map_err(lib_err)?;
        *value = q.value;
        if !q.converged || !q.warnings.is_empty() {
            let detail = if q.warnings.is_empty() { "optimizer did not converge".to_string() } else { q.warnings.join("; ") };
            return Err((EpxStatus::EPX_NOT_CONVERGED, detail));
        }
        Ok(())
    })
}

/// Moderate-deviations cost of raising the infective fraction by `a`.
///
/// # Safety
/// `value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn epx_quasipotential_md(model: *const EpxModel, a: f64, value: *mut f64) -> EpxStatus {
    guard(|| {
        let m = model_ref(model)?;
        if value.is_null() {
            return Err(null("value"));
        }
        *value = quasipotential_md(m, a).map_err(lib_err)?.value;
        Ok(())
    })
}

/// Monte Carlo extinction times from the endemic equilibrium.
///
/// `times` receives one time per replicate (the horizon for censored ones)
/// and `censored`, if not null, the matching flags. `mean` receives the mean
/// over uncensored replicates. Results depend only on `seed`, not `workers`
/// (0 = all cores).
///
/// # Safety
/// `times` must hold `reps` values, `censored` must be null or hold `reps`
/// values, and `mean` must be null or valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn epx_mc_extinction(
    model: *const EpxModel,
    pop_size: u64,
    reps: usize,
    t_max: f64,
    seed: u64,
    workers: usize,
    times: *mut f64,
    censored: *mut bool,
    mean: *mut f64,
) -> EpxStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_slice(times, reps, reps, "times")?;
        let eq = m.endemic_equilibrium().map_err(lib_err)?;
        let stats = mc_extinction(m, pop_size, &eq.z_star, reps, t_max, seed, workers).map_err(lib_err)?;
        out.copy_from_slice(&stats.times);
        if !censored.is_null() {
            std::slice::from_raw_parts_mut(censored, reps).copy_from_slice(&stats.censored);
        }
        if !mean.is_null() {
            *mean = stats.mean;
        }
        Ok(())
    })
}

/// Critical population size for reproduction number `r0` and ratio
/// `epsilon`; `simplified` drops the `(1 - 1/r0)^2` factor.
///
/// # Safety
/// `value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn epx_critical_size(r0: f64, epsilon: f64, simplified: bool, value: *mut f64) -> EpxStatus {
    guard(|| {
        if value.is_null() {
            return Err(null("value"));
        }
        let c = critical_size(r0, epsilon).map_err(lib_err)?;
        *value = if simplified { c.simplified } else { c.full };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;

    fn sis(lambda: f64, gamma: f64) -> (*mut EpxModel, EpxStatus) {
        let mut m = ptr::null_mut();
        let s = unsafe { epx_model_new(EpxModelKind::EPX_SIS, lambda, gamma, f64::NAN, f64::NAN, &mut m) };
        (m, s)
    }

    #[test]
    fn equilibrium_and_drift() {
        let (m, s) = sis(2.0, 1.0);
        assert_eq!(s, EpxStatus::EPX_OK);
        let mut z = [0.0];
        assert_eq!(unsafe { epx_model_equilibrium(m, z.as_mut_ptr(), 1) }, EpxStatus::EPX_OK);
        assert!((z[0] - 0.5).abs() < 1e-14);
        let mut b = [1.0];
        assert_eq!(unsafe { epx_model_drift(m, [0.25].as_ptr(), b.as_mut_ptr(), 1) }, EpxStatus::EPX_OK);
        assert!((b[0] - (2.0 * 0.25 * 0.75 - 0.25)).abs() < 1e-15);
        unsafe { epx_model_free(m) };
    }

    #[test]
    fn errors_carry_messages() {
        let (m, s) = sis(1.0, 2.0);
        assert_eq!(s, EpxStatus::EPX_OK);
        let mut z = [0.0];
        assert_eq!(unsafe { epx_model_equilibrium(m, z.as_mut_ptr(), 1) }, EpxStatus::EPX_NO_ENDEMIC_EQUILIBRIUM);
        let msg = unsafe { CStr::from_ptr(epx_last_error()) }.to_str().unwrap();
        assert!(msg.contains("endemic"), "{msg}");
        assert_eq!(unsafe { epx_model_equilibrium(m, z.as_mut_ptr(), 0) }, EpxStatus::EPX_BUFFER_TOO_SMALL);
        assert_eq!(unsafe { epx_model_equilibrium(ptr::null(), z.as_mut_ptr(), 1) }, EpxStatus::EPX_NULL_POINTER);
        unsafe { epx_model_free(m) };
        let (_, s) = sis(-1.0, 1.0);
        assert_eq!(s, EpxStatus::EPX_INVALID_ARGUMENT);
    }

    #[test]
    fn quasipotentials() {
        let (m, _) = sis(2.0, 1.0);
        let mut v = 0.0;
        assert_eq!(unsafe { epx_quasipotential_ld(m, &mut v) }, EpxStatus::EPX_OK);
        assert!((v - (2f64.ln() - 0.5)).abs() < 1e-12);
        assert_eq!(unsafe { epx_quasipotential_md(m, 0.1, &mut v) }, EpxStatus::EPX_OK);
        assert!((v - 0.01).abs() < 1e-12);
        unsafe { epx_model_free(m) };
    }

    #[test]
    fn critical_size_simplified() {
        let mut v = 0.0;
        assert_eq!(unsafe { epx_critical_size(15.0, 1.0 / 3750.0, true, &mut v) }, EpxStatus::EPX_OK);
        assert!((v - 937_500.0).abs() < 1e-6);
    }
}
