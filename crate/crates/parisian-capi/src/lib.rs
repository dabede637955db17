//! C ABI for the `parisian` crate.
//!
//! Conventions: every function returns a `ParisianStatus`; results come back
//! through out-pointers. Handles (`ParisianModel`, `ParisianHjbSolution`) are
//! opaque and must be released with the matching `_free` function. All
//! functions are safe to call with null out-pointers (they report
//! `NullPointer`), and internal panics are caught and reported as
//! `InternalError` instead of unwinding across the boundary.

use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use parisian::adjustment::AdjustmentCoefficients;
use parisian::claims::{MarketParams, SeverityModel};
use parisian::diffusion::solve_diffusion;
use parisian::hjb::{self, GridSpec, SolverConfig};

/// Status codes returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParisianStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericalError = 3,
    NotConverged = 4,
    InternalError = 5,
}

/// Market and preference parameters, mirrored as a plain C struct.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ParisianMarket {
    /// Claim arrival intensity.
    pub lambda: f64,
    /// Premium income rate.
    pub c: f64,
    /// Mean loading of the reinsurance premium principle.
    pub theta: f64,
    /// Variance loading of the reinsurance premium principle.
    pub eta: f64,
    /// Parisian clock rate.
    pub rho: f64,
    /// Discount rate.
    pub beta: f64,
}

/// Opaque handle: validated market parameters plus a claim-size model.
pub struct ParisianModel {
    params: MarketParams,
    model: SeverityModel,
}

/// Opaque handle: a converged grid solution of the control problem.
pub struct ParisianHjbSolution(hjb::HjbSolution);

impl ParisianMarket {
    fn to_params(self) -> MarketParams {
        MarketParams {
            lambda: self.lambda,
            c: self.c,
            theta: self.theta,
            eta: self.eta,
            rho: self.rho,
            beta: self.beta,
        }
    }
}

fn new_model(
    market: ParisianMarket,
    model: Result<SeverityModel, parisian::claims::ClaimsError>,
    out: *mut *mut ParisianModel,
) -> ParisianStatus {
    if out.is_null() {
        return ParisianStatus::NullPointer;
    }
    let model = match model {
        Ok(m) => m,
        Err(_) => return ParisianStatus::InvalidArgument,
    };
    let params = market.to_params();
    if params.validated(&model).is_err() {
        return ParisianStatus::InvalidArgument;
    }
    let handle = Box::new(ParisianModel { params, model });
    unsafe { *out = Box::into_raw(handle) };
    ParisianStatus::Ok
}

/// Create a model with exponential(rate) claim sizes.
///
/// # Safety
/// `out` must be a valid pointer to a `ParisianModel*` slot.
#[no_mangle]
pub unsafe extern "C" fn parisian_model_new_exponential(
    market: ParisianMarket,
    rate: f64,
    out: *mut *mut ParisianModel,
) -> ParisianStatus {
    new_model(market, SeverityModel::exponential(rate), out)
}

/// Create a model with gamma(shape, rate) claim sizes.
///
/// # Safety
/// `out` must be a valid pointer to a `ParisianModel*` slot.
#[no_mangle]
pub unsafe extern "C" fn parisian_model_new_gamma(
    market: ParisianMarket,
    shape: f64,
    rate: f64,
    out: *mut *mut ParisianModel,
) -> ParisianStatus {
    new_model(market, SeverityModel::gamma(shape, rate), out)
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be a pointer previously returned by a `parisian_model_new_*`
/// function and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn parisian_model_free(model: *mut ParisianModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Full-retention drift constant kappa = lambda E[Y] - c.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn parisian_kappa(
    model: *const ParisianModel,
    out: *mut f64,
) -> ParisianStatus {
    if model.is_null() || out.is_null() {
        return ParisianStatus::NullPointer;
    }
    let m = &*model;
    *out = m.params.kappa(&m.model);
    ParisianStatus::Ok
}

/// Diffusion-approximation exponents (gamma1_tilde, gamma2_tilde).
///
/// # Safety
/// `model`, `gamma1`, and `gamma2` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn parisian_diffusion_gammas(
    model: *const ParisianModel,
    gamma1: *mut f64,
    gamma2: *mut f64,
) -> ParisianStatus {
    if model.is_null() || gamma1.is_null() || gamma2.is_null() {
        return ParisianStatus::NullPointer;
    }
    let m = &*model;
    match catch_unwind(AssertUnwindSafe(|| solve_diffusion(&m.params, &m.model))) {
        Ok(Ok(sol)) => {
            *gamma1 = sol.gamma1_tilde;
            *gamma2 = sol.gamma2_tilde;
            ParisianStatus::Ok
        }
        Ok(Err(_)) => ParisianStatus::NumericalError,
        Err(_) => ParisianStatus::InternalError,
    }
}

/// Adjustment coefficients (gamma1, gamma2) of the jump model.
///
/// # Safety
/// `model`, `gamma1`, and `gamma2` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn parisian_adjustment_gammas(
    model: *const ParisianModel,
    gamma1: *mut f64,
    gamma2: *mut f64,
) -> ParisianStatus {
    if model.is_null() || gamma1.is_null() || gamma2.is_null() {
        return ParisianStatus::NullPointer;
    }
    let m = &*model;
    match catch_unwind(AssertUnwindSafe(|| {
        AdjustmentCoefficients::solve(&m.params, &m.model)
    })) {
        Ok(Ok(coef)) => {
            *gamma1 = coef.gamma1;
            *gamma2 = coef.gamma2;
            ParisianStatus::Ok
        }
        Ok(Err(_)) => ParisianStatus::NumericalError,
        Err(_) => ParisianStatus::InternalError,
    }
}

/// Analytic upper and lower bounds at a surplus level.
///
/// # Safety
/// `model`, `upper`, and `lower` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn parisian_bounds_at(
    model: *const ParisianModel,
    x: f64,
    upper: *mut f64,
    lower: *mut f64,
) -> ParisianStatus {
    if model.is_null() || upper.is_null() || lower.is_null() {
        return ParisianStatus::NullPointer;
    }
    let m = &*model;
    match catch_unwind(AssertUnwindSafe(|| {
        AdjustmentCoefficients::solve(&m.params, &m.model).map(|c| c.bounds())
    })) {
        Ok(Ok(bounds)) => {
            *upper = bounds.psi_bar(x);
            *lower = bounds.psi_underbar(x);
            ParisianStatus::Ok
        }
        Ok(Err(_)) => ParisianStatus::NumericalError,
        Err(_) => ParisianStatus::InternalError,
    }
}

/// Solve the control problem on [x_min, x_max] with n_x nodes and n_atoms
/// severity atoms, using default solver settings. Pass n_x = 0 and
/// n_atoms = 0 for the built-in defaults.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn parisian_hjb_solve(
    model: *const ParisianModel,
    x_min: f64,
    x_max: f64,
    n_x: usize,
    n_atoms: usize,
    out: *mut *mut ParisianHjbSolution,
) -> ParisianStatus {
    if model.is_null() || out.is_null() {
        return ParisianStatus::NullPointer;
    }
    let m = &*model;
    let defaults = GridSpec::default();
    let spec = GridSpec {
        x_min,
        x_max,
        n_x: if n_x == 0 { defaults.n_x } else { n_x },
        n_atoms: if n_atoms == 0 { defaults.n_atoms } else { n_atoms },
    };
    match catch_unwind(AssertUnwindSafe(|| {
        hjb::solve(&m.params, &m.model, &spec, &SolverConfig::default())
    })) {
        Ok(Ok(sol)) => {
            if !sol.diagnostics.converged {
                return ParisianStatus::NotConverged;
            }
            *out = Box::into_raw(Box::new(ParisianHjbSolution(sol)));
            ParisianStatus::Ok
        }
        Ok(Err(e)) => match e {
            hjb::HjbError::InvalidParams(_) | hjb::HjbError::InvalidGrid(_) => {
                ParisianStatus::InvalidArgument
            }
            _ => ParisianStatus::NumericalError,
        },
        Err(_) => ParisianStatus::InternalError,
    }
}

/// Release a solution handle. Null is a no-op.
///
/// # Safety
/// `sol` must be a pointer previously returned by `parisian_hjb_solve` and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn parisian_hjb_free(sol: *mut ParisianHjbSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Minimal discounted Parisian ruin probability at surplus x (linear
/// interpolation between grid nodes, analytic extension outside).
///
/// # Safety
/// `sol` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn parisian_hjb_value_at(
    sol: *const ParisianHjbSolution,
    x: f64,
    out: *mut f64,
) -> ParisianStatus {
    if sol.is_null() || out.is_null() {
        return ParisianStatus::NullPointer;
    }
    *out = (*sol).0.value_at(x);
    ParisianStatus::Ok
}

/// Largest interior residual of the converged solution.
///
/// # Safety
/// `sol` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn parisian_hjb_max_residual(
    sol: *const ParisianHjbSolution,
    out: *mut f64,
) -> ParisianStatus {
    if sol.is_null() || out.is_null() {
        return ParisianStatus::NullPointer;
    }
    *out = (*sol).0.diagnostics.max_residual;
    ParisianStatus::Ok
}

/// Static description of a status code. Never null; do not free.
#[no_mangle]
pub extern "C" fn parisian_status_message(status: ParisianStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        ParisianStatus::Ok => b"ok\0",
        ParisianStatus::NullPointer => b"null pointer argument\0",
        ParisianStatus::InvalidArgument => b"invalid argument\0",
        ParisianStatus::NumericalError => b"numerical failure\0",
        ParisianStatus::NotConverged => b"solver did not converge\0",
        ParisianStatus::InternalError => b"internal error\0",
    };
    s.as_ptr() as *const c_char
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;
    use std::ptr;

    const P1: ParisianMarket = ParisianMarket {
        lambda: 1.0,
        c: 1.2,
        theta: 0.5,
        eta: 0.1,
        rho: 1.0,
        beta: 0.1,
    };

    #[test]
    fn lifecycle_and_scalars() {
        unsafe {
            let mut model: *mut ParisianModel = ptr::null_mut();
            assert_eq!(
                parisian_model_new_exponential(P1, 1.0, &mut model),
                ParisianStatus::Ok
            );
            assert!(!model.is_null());

            let mut kappa = f64::NAN;
            assert_eq!(parisian_kappa(model, &mut kappa), ParisianStatus::Ok);
            assert!((kappa - 0.4).abs() < 1e-12, "kappa = {kappa}");

            let (mut g1, mut g2) = (f64::NAN, f64::NAN);
            assert_eq!(
                parisian_diffusion_gammas(model, &mut g1, &mut g2),
                ParisianStatus::Ok
            );
            assert!(g1 > 0.0 && g2 > 0.0);
            assert_eq!(
                parisian_adjustment_gammas(model, &mut g1, &mut g2),
                ParisianStatus::Ok
            );
            assert!((g2 - 1.403247).abs() < 1e-5);

            let (mut up, mut lo) = (f64::NAN, f64::NAN);
            assert_eq!(
                parisian_bounds_at(model, 1.0, &mut up, &mut lo),
                ParisianStatus::Ok
            );
            assert!(0.0 <= lo && lo <= up && up <= 1.0);

            parisian_model_free(model);
        }
    }

    #[test]
    fn rejects_bad_input() {
        unsafe {
            let mut model: *mut ParisianModel = ptr::null_mut();
            // Negative rate.
            assert_eq!(
                parisian_model_new_exponential(P1, -1.0, &mut model),
                ParisianStatus::InvalidArgument
            );
            // Net-profit violation: premium below expected losses.
            let bad = ParisianMarket { c: 0.9, ..P1 };
            assert_eq!(
                parisian_model_new_exponential(bad, 1.0, &mut model),
                ParisianStatus::InvalidArgument
            );
            // Null out-pointer.
            assert_eq!(
                parisian_model_new_exponential(P1, 1.0, ptr::null_mut()),
                ParisianStatus::NullPointer
            );
            let msg = CStr::from_ptr(parisian_status_message(ParisianStatus::NullPointer));
            assert_eq!(msg.to_str().unwrap(), "null pointer argument");
        }
    }

    #[test]
    fn hjb_solve_roundtrip() {
        unsafe {
            let mut model: *mut ParisianModel = ptr::null_mut();
            assert_eq!(
                parisian_model_new_exponential(P1, 1.0, &mut model),
                ParisianStatus::Ok
            );
            let mut sol: *mut ParisianHjbSolution = ptr::null_mut();
            assert_eq!(
                parisian_hjb_solve(model, -12.0, 12.0, 241, 30, &mut sol),
                ParisianStatus::Ok
            );
            let mut v0 = f64::NAN;
            assert_eq!(parisian_hjb_value_at(sol, 0.0, &mut v0), ParisianStatus::Ok);
            assert!(v0 > 0.0 && v0 < 1.0);
            let mut v2 = f64::NAN;
            assert_eq!(parisian_hjb_value_at(sol, 2.0, &mut v2), ParisianStatus::Ok);
            assert!(v2 < v0);
            let mut res = f64::NAN;
            assert_eq!(
                parisian_hjb_max_residual(sol, &mut res),
                ParisianStatus::Ok
            );
            assert!(res.is_finite());
            parisian_hjb_free(sol);
            parisian_model_free(model);
        }
    }

    #[test]
    fn header_is_generated() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("include")
            .join("parisian.h");
        let text = std::fs::read_to_string(header).expect("header generated by build.rs");
        assert!(text.contains("parisian_hjb_solve"));
        assert!(text.contains("typedef struct ParisianModel ParisianModel;"));
    }
}
