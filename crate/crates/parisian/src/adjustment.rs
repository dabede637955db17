//! Classical-model analogs of the adjustment coefficient, the optimal
//! per-claim retention they induce, and the analytic upper/lower bounds on
//! the value function built from them.

use thiserror::Error;

use crate::claims::{ClaimsError, MarketParams, SeverityKind, SeverityModel, Violation};
use crate::numerics::{self, NumericsError, RootProblem};

#[derive(Debug, Error)]
pub enum AdjustmentError {
    #[error("invalid market parameters: {0:?}")]
    InvalidParams(Vec<Violation>),
    #[error("y = {y} is below the full-retention threshold {threshold}")]
    BelowThreshold { y: f64, threshold: f64 },
    #[error("bracketing an adjustment coefficient failed: {0}")]
    Bracket(#[from] NumericsError),
    #[error(transparent)]
    Claims(#[from] ClaimsError),
    #[error("solution failed an internal residual check: {0}")]
    ResidualCheck(String),
}

/// Solves (1 + theta) + eta y - eta R - e^{gamma R} = 0 for R in [0, y].
/// Requires y >= ln(1 + theta) / gamma so that a root exists in the interval.
pub fn r_c(y: f64, gamma: f64, theta: f64, eta: f64) -> Result<f64, AdjustmentError> {
    let threshold = (1.0 + theta).ln() / gamma;
    if y < threshold - 1e-14 {
        return Err(AdjustmentError::BelowThreshold { y, threshold });
    }
    if eta == 0.0 {
        return Ok(threshold.min(y));
    }
    let f = |r: f64| (1.0 + theta) + eta * y - eta * r - (gamma * r).exp();
    // f(0) = theta + eta y > 0 and f(y) <= 0 at or above the threshold; the
    // objective is strictly decreasing in R.
    if f(y) >= 0.0 {
        return Ok(y);
    }
    let root = numerics::find_root(RootProblem::new(f, (0.0, y), 1e-14))?;
    Ok(root.clamp(0.0, y))
}

/// The optimal per-claim retention at coefficient gamma: full retention below
/// the threshold ln(1 + theta)/gamma, the capped implicit branch above it.
pub fn r_hat(y: f64, gamma: f64, theta: f64, eta: f64) -> Result<f64, AdjustmentError> {
    let threshold = (1.0 + theta).ln() / gamma;
    if y < threshold {
        Ok(y)
    } else {
        r_c(y, gamma, theta, eta)
    }
}

/// Residual of the gamma1 equation:
/// h(gamma) = c + beta/gamma - lambda * integral e^{gamma r_hat(y)} S_Y(y) dy.
pub fn gamma1_residual(
    params: &MarketParams,
    model: &SeverityModel,
    gamma: f64,
) -> Result<f64, AdjustmentError> {
    Ok(params.c + params.beta / gamma - params.lambda * exp_retention_integral(params, model, gamma)?)
}

/// integral_0^inf e^{gamma r_hat(y; gamma)} S_Y(y) dy, with the exponential
/// rewritten as (1 + theta) + eta y - eta R_c on the implicit branch (the
/// defining identity of R_c), which keeps the integrand cheap and smooth.
fn exp_retention_integral(
    params: &MarketParams,
    model: &SeverityModel,
    gamma: f64,
) -> Result<f64, AdjustmentError> {
    let theta = params.theta;
    let eta = params.eta;
    let threshold = (1.0 + theta).ln() / gamma;

    if let SeverityKind::Discrete { atoms } = model.kind() {
        // S_Y is a step function: integrate piecewise-exactly on the
        // full-retention branch and by quadrature on the implicit branch.
        let mut edges: Vec<f64> = vec![0.0];
        edges.extend(atoms.iter().map(|&(v, _)| v));
        if threshold > 0.0 && threshold < *edges.last().unwrap() {
            edges.push(threshold);
        }
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup();
        let mut total = 0.0;
        for pair in edges.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let s = model.survival(0.5 * (a + b))?;
            if s == 0.0 {
                continue;
            }
            if b <= threshold {
                total += s * ((gamma * b).exp() - (gamma * a).exp()) / gamma;
            } else {
                let mut inner_err = None;
                let piece = numerics::integrate(
                    |y| match r_c(y.max(threshold), gamma, theta, eta) {
                        Ok(r) => (1.0 + theta) + eta * y - eta * r,
                        Err(e) => {
                            inner_err = Some(e);
                            f64::NAN
                        }
                    },
                    a.max(threshold),
                    b,
                    1e-12,
                );
                if let Some(e) = inner_err {
                    return Err(e);
                }
                total += s * piece?;
            }
        }
        return Ok(total);
    }

    let cutoff = model.upper_cutoff();
    let mut inner_err = None;
    let value = numerics::integrate_with_kinks(
        |y| {
            if y < threshold {
                match model.survival(y) {
                    Ok(s) => (gamma * y).exp() * s,
                    Err(e) => {
                        inner_err = Some(AdjustmentError::Claims(e));
                        f64::NAN
                    }
                }
            } else {
                match r_c(y, gamma, theta, eta) {
                    Ok(r) => match model.survival(y) {
                        Ok(s) => ((1.0 + theta) + eta * y - eta * r) * s,
                        Err(e) => {
                            inner_err = Some(AdjustmentError::Claims(e));
                            f64::NAN
                        }
                    },
                    Err(e) => {
                        inner_err = Some(e);
                        f64::NAN
                    }
                }
            }
        },
        0.0,
        cutoff,
        &[threshold],
        1e-11,
    );
    if let Some(e) = inner_err {
        return Err(e);
    }
    Ok(value?)
}

/// Residual of the gamma2 equation: rho + beta - c gamma + lambda (1 - M_Y(-gamma)).
pub fn gamma2_residual(params: &MarketParams, model: &SeverityModel, gamma: f64) -> f64 {
    match model.mgf(-gamma) {
        Ok(m) => params.rho + params.beta - params.c * gamma + params.lambda * (1.0 - m),
        Err(_) => f64::NAN,
    }
}

/// Solves the gamma1 equation. Requires the MGF of Y to exist on a right
/// neighborhood of 0 (light tails); reports a bracket or domain failure
/// otherwise.
pub fn gamma1(params: &MarketParams, model: &SeverityModel) -> Result<f64, AdjustmentError> {
    let f = |g: f64| match gamma1_residual(params, model, g) {
        Ok(v) => v,
        Err(_) => f64::NAN,
    };
    // h -> +inf as gamma -> 0+ (the beta/gamma term); probe outward for the
    // sign change instead of assuming a scale.
    let start = (params.rho + params.beta) / params.c;
    let bracket = numerics::bracket_positive(f, start)?;
    let root = numerics::find_root(RootProblem::new(f, bracket, 1e-12))?;
    let res = gamma1_residual(params, model, root)?;
    if res.abs() >= 1e-8 {
        return Err(AdjustmentError::ResidualCheck(format!(
            "gamma1 residual {res:e}"
        )));
    }
    Ok(root)
}

/// Solves the gamma2 equation; the MGF argument is negative, so the equation
/// is defined for every gamma > 0.
pub fn gamma2(params: &MarketParams, model: &SeverityModel) -> Result<f64, AdjustmentError> {
    let f = |g: f64| gamma2_residual(params, model, g);
    let start = (params.rho + params.beta) / params.c;
    let bracket = numerics::bracket_positive(f, start)?;
    let root = numerics::find_root(RootProblem::new(f, bracket, 1e-13))?;
    let res = gamma2_residual(params, model, root);
    if res.abs() >= 1e-10 {
        return Err(AdjustmentError::ResidualCheck(format!(
            "gamma2 residual {res:e}"
        )));
    }
    Ok(root)
}

/// The pair of classical-model adjustment coefficients.
#[derive(Debug, Clone)]
pub struct AdjustmentCoefficients {
    pub gamma1: f64,
    pub gamma2: f64,
    pub params: MarketParams,
    pub model: SeverityModel,
}

impl AdjustmentCoefficients {
    pub fn solve(params: &MarketParams, model: &SeverityModel) -> Result<Self, AdjustmentError> {
        params
            .validated(model)
            .map_err(AdjustmentError::InvalidParams)?;
        Ok(Self {
            gamma1: gamma1(params, model)?,
            gamma2: gamma2(params, model)?,
            params: *params,
            model: model.clone(),
        })
    }

    /// Claim size below which the gamma1-optimal retention is full retention.
    pub fn retention_threshold(&self) -> f64 {
        (1.0 + self.params.theta).ln() / self.gamma1
    }

    /// The gamma1-optimal per-claim retention.
    pub fn r_hat(&self, y: f64) -> Result<f64, AdjustmentError> {
        r_hat(y, self.gamma1, self.params.theta, self.params.eta)
    }

    pub fn bounds(self) -> Bounds {
        Bounds { coefficients: self }
    }
}

/// Analytic sandwich for the classical-model value function: `psi_bar` is a
/// stochastic supersolution (upper bound), `psi_underbar` a stochastic
/// subsolution (lower bound).
#[derive(Debug, Clone)]
pub struct Bounds {
    pub coefficients: AdjustmentCoefficients,
}

impl Bounds {
    fn plateau(&self) -> f64 {
        self.coefficients.params.ruin_plateau()
    }

    pub fn psi_bar(&self, x: f64) -> f64 {
        let a = self.plateau();
        let (g1, g2) = (self.coefficients.gamma1, self.coefficients.gamma2);
        if x < 0.0 {
            a * (1.0 - g1 / (g1 + g2) * (g2 * x).exp())
        } else {
            a * g2 / (g1 + g2) * (-g1 * x).exp()
        }
    }

    pub fn psi_underbar(&self, x: f64) -> f64 {
        if x >= -1.0 {
            0.0
        } else {
            let g2 = self.coefficients.gamma2;
            self.plateau() * (1.0 - (g2 * (x + 1.0)).exp())
        }
    }

    /// One-sided derivative jump of psi_bar at zero, reported as a diagnostic
    /// (the pasting construction makes it vanish identically).
    pub fn psi_bar_derivative_jump(&self) -> f64 {
        let a = self.plateau();
        let (g1, g2) = (self.coefficients.gamma1, self.coefficients.gamma2);
        let left = -a * g1 * g2 / (g1 + g2);
        let right = -g1 * a * g2 / (g1 + g2);
        left - right
    }
}

/// The elementary convexity gap (b/(a+b)) e^{az} + (a/(a+b)) e^{-bz} - 1,
/// non-negative for positive a, b, z.
pub fn convexity_gap(a: f64, b: f64, z: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0 && z > 0.0);
    b / (a + b) * (a * z).exp() + a / (a + b) * (-b * z).exp() - 1.0
}
