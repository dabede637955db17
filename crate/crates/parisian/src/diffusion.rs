//! Closed-form solution of the diffusion-approximation control problem:
//! the decay coefficients, the piecewise-exponential value function, and the
//! optimal feedback retention.

use thiserror::Error;

use crate::claims::{ClaimsError, MarketParams, SeverityModel, Violation};
use crate::numerics::{self, NumericsError, RootProblem};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid market parameters: {0:?}")]
    InvalidParams(Vec<Violation>),
    #[error("bracketing the decay coefficient failed: {0}")]
    Bracket(#[from] NumericsError),
    #[error(transparent)]
    Claims(#[from] ClaimsError),
    #[error("solution failed an internal residual check: {0}")]
    ResidualCheck(String),
}

/// Solved diffusion-approximation problem. `gamma1_tilde` governs the decay
/// for x >= 0, `gamma2_tilde` the rise for x < 0.
#[derive(Debug, Clone)]
pub struct DiffusionSolution {
    pub gamma1_tilde: f64,
    pub gamma2_tilde: f64,
    pub params: MarketParams,
    pub model: SeverityModel,
}

/// The quadratic whose unique positive root is gamma2_tilde:
/// (lambda/2) E(Y^2) g^2 + (c - lambda E Y) g - (rho + beta).
pub fn gamma2_tilde_quadratic(params: &MarketParams, model: &SeverityModel, g: f64) -> f64 {
    0.5 * params.lambda * model.second_moment() * g * g
        + (params.c - params.lambda * model.mean()) * g
        - (params.rho + params.beta)
}

/// Explicit radical form of the positive root of the gamma2_tilde quadratic.
pub fn gamma2_tilde_closed_form(params: &MarketParams, model: &SeverityModel) -> f64 {
    let m2 = params.lambda * model.second_moment();
    let drift = params.c - params.lambda * model.mean();
    ((drift * drift + 2.0 * (params.rho + params.beta) * m2).sqrt() - drift) / m2
}

/// Residual of the gamma1_tilde equation:
/// g(gamma) = (c - lambda E Y) + beta/gamma
///            - lambda gamma * integral of min((theta + eta y)/(eta + gamma), y) S_Y(y) dy.
pub fn gamma1_tilde_residual(
    params: &MarketParams,
    model: &SeverityModel,
    gamma: f64,
) -> Result<f64, ClaimsError> {
    let crossover = params.theta / gamma; // where the two min branches meet
    let integral = model.survival_integral(
        |y| ((params.theta + params.eta * y) / (params.eta + gamma)).min(y),
        &[crossover],
    )?;
    Ok(params.c - params.lambda * model.mean() + params.beta / gamma
        - params.lambda * gamma * integral)
}

pub fn solve_diffusion(
    params: &MarketParams,
    model: &SeverityModel,
) -> Result<DiffusionSolution, DiffusionError> {
    params
        .validated(model)
        .map_err(DiffusionError::InvalidParams)?;

    let gamma2 = gamma2_tilde_closed_form(params, model);
    let q_res = gamma2_tilde_quadratic(params, model, gamma2);
    if q_res.abs() >= 1e-10 {
        return Err(DiffusionError::ResidualCheck(format!(
            "gamma2_tilde quadratic residual {q_res:e}"
        )));
    }

    let g = |gamma: f64| match gamma1_tilde_residual(params, model, gamma) {
        Ok(v) => v,
        Err(_) => f64::NAN,
    };
    // The residual blows up like beta/gamma near zero and goes negative for
    // large gamma under light tails; start the expansion at gamma2_tilde.
    let bracket = numerics::bracket_positive(g, gamma2)?;
    let gamma1 = numerics::find_root(RootProblem::new(g, bracket, 1e-13))?;
    let g_res = gamma1_tilde_residual(params, model, gamma1)?;
    if g_res.abs() >= 1e-9 {
        return Err(DiffusionError::ResidualCheck(format!(
            "gamma1_tilde residual {g_res:e}"
        )));
    }

    Ok(DiffusionSolution {
        gamma1_tilde: gamma1,
        gamma2_tilde: gamma2,
        params: *params,
        model: model.clone(),
    })
}

impl DiffusionSolution {
    fn plateau(&self) -> f64 {
        self.params.ruin_plateau()
    }

    /// Value of the minimum discounted probability of exponential Parisian
    /// ruin under the diffusion approximation.
    pub fn value_tilde(&self, x: f64) -> f64 {
        let a = self.plateau();
        let (g1, g2) = (self.gamma1_tilde, self.gamma2_tilde);
        if x < 0.0 {
            a * (1.0 - g1 / (g1 + g2) * (g2 * x).exp())
        } else {
            a * g2 / (g1 + g2) * (-g1 * x).exp()
        }
    }

    /// Analytic first derivative of the piecewise-exponential value.
    pub fn value_tilde_dx(&self, x: f64) -> f64 {
        let a = self.plateau();
        let (g1, g2) = (self.gamma1_tilde, self.gamma2_tilde);
        let scale = a * g1 * g2 / (g1 + g2);
        if x < 0.0 {
            -scale * (g2 * x).exp()
        } else {
            -scale * (-g1 * x).exp()
        }
    }

    /// Analytic second derivative (one-sided at zero, x >= 0 branch).
    pub fn value_tilde_dxx(&self, x: f64) -> f64 {
        let a = self.plateau();
        let (g1, g2) = (self.gamma1_tilde, self.gamma2_tilde);
        if x < 0.0 {
            -a * g1 * g2 * g2 / (g1 + g2) * (g2 * x).exp()
        } else {
            a * g1 * g1 * g2 / (g1 + g2) * (-g1 * x).exp()
        }
    }

    /// Optimal feedback retention: full retention below zero, the capped
    /// linear form above.
    pub fn retention_tilde(&self, x: f64, y: f64) -> f64 {
        if x < 0.0 {
            y
        } else {
            ((self.params.theta + self.params.eta * y) / (self.params.eta + self.gamma1_tilde))
                .min(y)
        }
    }

    /// Claim size at which the optimal retention for x >= 0 stops being full
    /// retention.
    pub fn retention_crossover(&self) -> f64 {
        self.params.theta / self.gamma1_tilde
    }

    /// Signed residual of the diffusion HJB equation at x (x != 0), using the
    /// analytic derivatives and the optimal retention.
    pub fn hjb_residual_tilde(&self, x: f64) -> Result<f64, ClaimsError> {
        let p = &self.params;
        let v = self.value_tilde(x);
        let vx = self.value_tilde_dx(x);
        let vxx = self.value_tilde_dxx(x);

        let (er, eyr, er2) = if x < 0.0 {
            (self.model.mean(), self.model.second_moment(), self.model.second_moment())
        } else {
            let kink = self.retention_crossover();
            let r = |y: f64| self.retention_tilde(x, y);
            let er = self.model.expectation(|y| r(y), &[kink])?;
            let eyr = self.model.expectation(|y| y * r(y), &[kink])?;
            let er2 = self.model.expectation(
                |y| {
                    let v = r(y);
                    v * v
                },
                &[kink],
            )?;
            (er, eyr, er2)
        };

        let indicator = if x < 0.0 { 1.0 } else { 0.0 };
        let kappa = p.kappa(&self.model);
        let inf_term =
            (p.theta * er + p.eta * eyr - 0.5 * p.eta * er2) * vx + 0.5 * er2 * vxx;
        Ok(p.beta * v + p.rho * (v - 1.0) * indicator + kappa * vx - p.lambda * inf_term)
    }

    /// Jump of the first derivative across zero; exactly zero for the
    /// closed-form solution (smooth pasting).
    pub fn smooth_pasting_gap(&self) -> f64 {
        let a = self.plateau();
        let (g1, g2) = (self.gamma1_tilde, self.gamma2_tilde);
        let left = -a * g1 * g2 / (g1 + g2); // limit of the x < 0 branch
        let right = self.value_tilde_dx(0.0);
        left - right
    }
}
