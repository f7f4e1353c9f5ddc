//! C interface to `ybmap`. Models and states are opaque heap handles that
//! the caller releases with the matching `_free` function. Every fallible
//! call returns a [`YbStatus`] and writes results through out-pointers.

use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ybmap::{entropy, spectral, Error, Model, ModelParams, StateVector, SurvivalDenominator};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum YbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    Dimension = 3,
    Domain = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

impl From<&Error> for YbStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParams(_) => YbStatus::InvalidParams,
            Error::Dimension { .. } => YbStatus::Dimension,
            Error::Domain { .. } => YbStatus::Domain,
            _ => YbStatus::Numerical,
        }
    }
}

/// Model parameters. `survival_two_p_plus_one` selects `S(h) = 1 - h/(2p+1)`
/// when nonzero and `1 - h/(2p)` otherwise.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct YbParams {
    pub maturation_age: f64,
    pub steps_per_year: usize,
    pub fecundity_cap: f64,
    pub decay_exponent: f64,
    pub winter_fraction: f64,
    pub season_slack: f64,
    pub survival_two_p_plus_one: i32,
}

impl From<&ModelParams> for YbParams {
    fn from(p: &ModelParams) -> Self {
        Self {
            maturation_age: p.maturation_age,
            steps_per_year: p.steps_per_year,
            fecundity_cap: p.fecundity_cap,
            decay_exponent: p.decay_exponent,
            winter_fraction: p.winter_fraction,
            season_slack: p.season_slack,
            survival_two_p_plus_one: (p.survival_denominator == SurvivalDenominator::TwoPPlusOne) as i32,
        }
    }
}

impl From<&YbParams> for ModelParams {
    fn from(p: &YbParams) -> Self {
        Self {
            maturation_age: p.maturation_age,
            steps_per_year: p.steps_per_year,
            fecundity_cap: p.fecundity_cap,
            decay_exponent: p.decay_exponent,
            winter_fraction: p.winter_fraction,
            season_slack: p.season_slack,
            survival_denominator: if p.survival_two_p_plus_one != 0 {
                SurvivalDenominator::TwoPPlusOne
            } else {
                SurvivalDenominator::TwoP
            },
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct YbBounds {
    pub n_max: f64,
    pub c0: f64,
    pub permanence_floor: f64,
    pub lipschitz_bound: f64,
}

pub struct YbModel(Model);

pub struct YbState(StateVector);

fn guard(f: impl FnOnce() -> Result<(), YbStatus>) -> YbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => YbStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => YbStatus::Panic,
    }
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, YbStatus> {
    p.as_ref().ok_or(YbStatus::NullPointer)
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), YbStatus> {
    if out.is_null() {
        return Err(YbStatus::NullPointer);
    }
    out.write(value);
    Ok(())
}

fn lift<T>(r: ybmap::Result<T>) -> Result<T, YbStatus> {
    r.map_err(|e| YbStatus::from(&e))
}

/// Static, NUL-terminated description of a status code.
#[no_mangle]
pub extern "C" fn yb_status_message(status: YbStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        YbStatus::Ok => b"ok\0",
        YbStatus::NullPointer => b"null pointer argument\0",
        YbStatus::InvalidParams => b"invalid model parameters\0",
        YbStatus::Dimension => b"state has the wrong dimension\0",
        YbStatus::Domain => b"state is outside the positive cone\0",
        YbStatus::Numerical => b"numerical failure\0",
        YbStatus::BufferTooSmall => b"output buffer too small\0",
        YbStatus::Panic => b"internal error\0",
    };
    s.as_ptr().cast()
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yb_params_default(out: *mut YbParams) -> YbStatus {
    guard(|| put(out, YbParams::from(&ModelParams::default())))
}

/// # Safety
/// `params` must point to a valid `YbParams`; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yb_model_new(params: *const YbParams, out: *mut *mut YbModel) -> YbStatus {
    guard(|| {
        let p = deref(params)?;
        let model = lift(Model::new(ModelParams::from(p)))?;
        put(out, Box::into_raw(Box::new(YbModel(model))))
    })
}

/// # Safety
/// `model` must come from [`yb_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn yb_model_free(model: *mut YbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension `2p + 1`, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn yb_model_dim(model: *const YbModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yb_model_bounds(model: *const YbModel, out: *mut YbBounds) -> YbStatus {
    guard(|| {
        let b = deref(model)?.0.bounds();
        put(
            out,
            YbBounds {
                n_max: b.n_max,
                c0: b.c0,
                permanence_floor: b.permanence_floor,
                lipschitz_bound: b.lipschitz_bound,
            },
        )
    })
}

/// Copies `len` values into a new state.
///
/// # Safety
/// `values` must be valid for `len` reads; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yb_state_new(values: *const f64, len: usize, out: *mut *mut YbState) -> YbStatus {
    guard(|| {
        if values.is_null() {
            return Err(YbStatus::NullPointer);
        }
        let v = std::slice::from_raw_parts(values, len).to_vec();
        let s = lift(StateVector::new(v))?;
        put(out, Box::into_raw(Box::new(YbState(s))))
    })
}

/// The bundled period-2 point of the default model.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yb_state_reference(out: *mut *mut YbState) -> YbStatus {
    guard(|| put(out, Box::into_raw(Box::new(YbState(spectral::reference_point())))))
}

/// # Safety
/// `state` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn yb_state_free(state: *mut YbState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn yb_state_len(state: *const YbState) -> usize {
    state.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `state` must be a live handle; `buf` must be valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn yb_state_read(state: *const YbState, buf: *mut f64, cap: usize) -> YbStatus {
    guard(|| {
        let s = deref(state)?;
        if buf.is_null() {
            return Err(YbStatus::NullPointer);
        }
        if cap < s.0.len() {
            return Err(YbStatus::BufferTooSmall);
        }
        ptr::copy_nonoverlapping(s.0.as_ptr(), buf, s.0.len());
        Ok(())
    })
}

/// Applies the two-year map `n` times, returning a new state.
///
/// # Safety
/// `model` and `state` must be live handles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yb_advance_two_n(
    model: *const YbModel,
    state: *const YbState,
    n: usize,
    out: *mut *mut YbState,
) -> YbStatus {
    guard(|| {
        let m = deref(model)?;
        let s = deref(state)?;
        let next = lift(m.0.advance_two_n(&s.0, n))?;
        put(out, Box::into_raw(Box::new(YbState(next))))
    })
}

/// Newton iteration for a period-2 point. `converged` receives 1 when the
/// sup residual reached `tol`.
///
/// # Safety
/// `model` and `guess` must be live handles; the out-pointers must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yb_newton_polish(
    model: *const YbModel,
    guess: *const YbState,
    tol: f64,
    max_iter: usize,
    out: *mut *mut YbState,
    sup_residual: *mut f64,
    converged: *mut i32,
) -> YbStatus {
    guard(|| {
        let m = deref(model)?;
        let g = deref(guess)?;
        if out.is_null() || sup_residual.is_null() || converged.is_null() {
            return Err(YbStatus::NullPointer);
        }
        let r = lift(spectral::newton_polish(&m.0, &g.0, tol, max_iter))?;
        put(sup_residual, r.sup_residual)?;
        put(converged, r.converged as i32)?;
        put(out, Box::into_raw(Box::new(YbState(r.point))))
    })
}

/// Entropy estimate from a mean escape time over `count` samples.
///
/// # Safety
/// `k_hat` and `sigma` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn yb_entropy_estimate(
    mean_escape: f64,
    count: usize,
    d: f64,
    tau_s: f64,
    k_hat: *mut f64,
    sigma: *mut f64,
) -> YbStatus {
    guard(|| {
        if k_hat.is_null() || sigma.is_null() {
            return Err(YbStatus::NullPointer);
        }
        let e = lift(entropy::estimate_from_mean(mean_escape, count, d, tau_s))?;
        put(k_hat, e.k_hat)?;
        put(sigma, e.sigma_k)
    })
}
