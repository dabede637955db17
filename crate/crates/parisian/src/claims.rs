//! Claim-severity models, market parameters with their validity constraints,
//! and the mean-variance reinsurance premium principle.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use thiserror::Error;

use crate::numerics;

/// Absolute tolerance used by all severity expectations taken by quadrature.
pub const EXPECTATION_TOL: f64 = 1e-10;
/// Upper quantile at which semi-infinite severity integrals are truncated.
pub const TRUNCATION_QUANTILE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ClaimsError {
    #[error("invalid severity model: {0}")]
    InvalidSeverity(String),
    #[error("mgf diverges at t = {t} (rate {rate})")]
    MgfDivergence { t: f64, rate: f64 },
    #[error("negative argument {0} passed to survival function")]
    NegativeArgument(f64),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeverityKind {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Discrete { atoms: Vec<(f64, f64)> },
}

/// A claim-size distribution Y with cached moments, survival function, MGF,
/// density (parametric kinds), quantile, and sampler.
#[derive(Debug, Clone)]
pub struct SeverityModel {
    kind: SeverityKind,
    mean: f64,
    second_moment: f64,
}

impl SeverityModel {
    pub fn exponential(rate: f64) -> Result<Self, ClaimsError> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(ClaimsError::InvalidSeverity(format!(
                "exponential rate must be positive and finite, got {rate}"
            )));
        }
        Ok(Self {
            kind: SeverityKind::Exponential { rate },
            mean: 1.0 / rate,
            second_moment: 2.0 / (rate * rate),
        })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self, ClaimsError> {
        if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
            return Err(ClaimsError::InvalidSeverity(format!(
                "gamma shape/rate must be positive and finite, got ({shape}, {rate})"
            )));
        }
        Ok(Self {
            kind: SeverityKind::Gamma { shape, rate },
            mean: shape / rate,
            second_moment: shape * (shape + 1.0) / (rate * rate),
        })
    }

    /// Atoms are (value, probability) pairs; values must be strictly positive
    /// and probabilities must sum to 1 within 1e-12.
    pub fn discrete(mut atoms: Vec<(f64, f64)>) -> Result<Self, ClaimsError> {
        if atoms.is_empty() {
            return Err(ClaimsError::InvalidSeverity("no atoms".into()));
        }
        for &(v, p) in &atoms {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ClaimsError::InvalidSeverity(format!(
                    "atom value {v} is not strictly positive"
                )));
            }
            if !(p >= 0.0) || !p.is_finite() {
                return Err(ClaimsError::InvalidSeverity(format!(
                    "atom probability {p} is negative or not finite"
                )));
            }
        }
        let total: f64 = atoms.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ClaimsError::InvalidSeverity(format!(
                "atom probabilities sum to {total}, not 1"
            )));
        }
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mean = atoms.iter().map(|&(v, p)| v * p).sum();
        let second_moment = atoms.iter().map(|&(v, p)| v * v * p).sum();
        Ok(Self {
            kind: SeverityKind::Discrete { atoms },
            mean,
            second_moment,
        })
    }

    pub fn from_kind(kind: SeverityKind) -> Result<Self, ClaimsError> {
        match kind {
            SeverityKind::Exponential { rate } => Self::exponential(rate),
            SeverityKind::Gamma { shape, rate } => Self::gamma(shape, rate),
            SeverityKind::Discrete { atoms } => Self::discrete(atoms),
        }
    }

    pub fn kind(&self) -> &SeverityKind {
        &self.kind
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn moments(&self) -> (f64, f64) {
        (self.mean, self.second_moment)
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, SeverityKind::Discrete { .. })
    }

    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match &self.kind {
            SeverityKind::Discrete { atoms } => Some(atoms),
            _ => None,
        }
    }

    /// Survival function S_Y(y) = P(Y > y); right-continuous for the discrete
    /// kind.
    pub fn survival(&self, y: f64) -> Result<f64, ClaimsError> {
        if y < 0.0 {
            return Err(ClaimsError::NegativeArgument(y));
        }
        Ok(match &self.kind {
            SeverityKind::Exponential { rate } => (-rate * y).exp(),
            SeverityKind::Gamma { shape, rate } => {
                if y == 0.0 {
                    1.0 // gamma_ur's domain excludes 0
                } else {
                    statrs::function::gamma::gamma_ur(*shape, rate * y)
                }
            }
            SeverityKind::Discrete { atoms } => {
                atoms.iter().filter(|&&(v, _)| v > y).map(|&(_, p)| p).sum()
            }
        })
    }

    /// Moment generating function M_Y(t) = E e^{tY}. Diverges for
    /// t >= rate in the light-tailed parametric kinds.
    pub fn mgf(&self, t: f64) -> Result<f64, ClaimsError> {
        match &self.kind {
            SeverityKind::Exponential { rate } => {
                if t >= *rate {
                    Err(ClaimsError::MgfDivergence { t, rate: *rate })
                } else {
                    Ok(rate / (rate - t))
                }
            }
            SeverityKind::Gamma { shape, rate } => {
                if t >= *rate {
                    Err(ClaimsError::MgfDivergence { t, rate: *rate })
                } else {
                    Ok((rate / (rate - t)).powf(*shape))
                }
            }
            SeverityKind::Discrete { atoms } => {
                Ok(atoms.iter().map(|&(v, p)| p * (t * v).exp()).sum())
            }
        }
    }

    /// Density, defined only for the parametric kinds.
    pub fn density(&self, y: f64) -> Option<f64> {
        match &self.kind {
            SeverityKind::Exponential { rate } => Some(rate * (-rate * y).exp()),
            SeverityKind::Gamma { shape, rate } => {
                if y <= 0.0 {
                    Some(0.0)
                } else {
                    let ln = shape * rate.ln() + (shape - 1.0) * y.ln()
                        - rate * y
                        - statrs::function::gamma::ln_gamma(*shape);
                    Some(ln.exp())
                }
            }
            SeverityKind::Discrete { .. } => None,
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        assert!((0.0..1.0).contains(&p) || p == 0.0);
        match &self.kind {
            SeverityKind::Exponential { rate } => -(1.0 - p).ln() / rate,
            SeverityKind::Gamma { shape, rate } => {
                let dist = statrs::distribution::Gamma::new(*shape, *rate).unwrap();
                dist.inverse_cdf(p)
            }
            SeverityKind::Discrete { atoms } => {
                let mut acc = 0.0;
                for &(v, q) in atoms {
                    acc += q;
                    if acc >= p - 1e-15 {
                        return v;
                    }
                }
                atoms.last().unwrap().0
            }
        }
    }

    /// Upper truncation point for semi-infinite integrals.
    pub fn upper_cutoff(&self) -> f64 {
        match &self.kind {
            SeverityKind::Discrete { atoms } => atoms.last().unwrap().0,
            _ => self.quantile(1.0 - TRUNCATION_QUANTILE),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SeverityKind::Exponential { rate } => {
                rand_distr::Exp::new(*rate).unwrap().sample(rng)
            }
            SeverityKind::Gamma { shape, rate } => {
                rand_distr::Gamma::new(*shape, 1.0 / rate).unwrap().sample(rng)
            }
            SeverityKind::Discrete { atoms } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for &(v, p) in atoms {
                    acc += p;
                    if u < acc {
                        return v;
                    }
                }
                atoms.last().unwrap().0
            }
        }
    }

    /// E[f(Y)]: exact sums for the discrete kind, kink-aware adaptive
    /// quadrature against the density otherwise.
    pub fn expectation<F: FnMut(f64) -> f64>(
        &self,
        mut f: F,
        kinks: &[f64],
    ) -> Result<f64, ClaimsError> {
        match &self.kind {
            SeverityKind::Discrete { atoms } => {
                Ok(atoms.iter().map(|&(v, p)| p * f(v)).sum())
            }
            _ => {
                let cutoff = self.upper_cutoff();
                let value = numerics::integrate_with_kinks(
                    |y| f(y) * self.density(y).unwrap(),
                    0.0,
                    cutoff,
                    kinks,
                    EXPECTATION_TOL,
                )?;
                Ok(value)
            }
        }
    }

    /// Integral of f(y) S_Y(y) dy over (0, inf). For the discrete kind the
    /// survival function is a step function, so atom locations are added as
    /// kinks and the integral stops at the largest atom.
    pub fn survival_integral<F: FnMut(f64) -> f64>(
        &self,
        mut f: F,
        kinks: &[f64],
    ) -> Result<f64, ClaimsError> {
        let cutoff = self.upper_cutoff();
        let mut all_kinks = kinks.to_vec();
        if let SeverityKind::Discrete { atoms } = &self.kind {
            all_kinks.extend(atoms.iter().map(|&(v, _)| v));
        }
        let mut err = None;
        let value = numerics::integrate_with_kinks(
            |y| match self.survival(y) {
                Ok(s) => f(y) * s,
                Err(e) => {
                    err = Some(e);
                    f64::NAN
                }
            },
            0.0,
            cutoff,
            &all_kinks,
            EXPECTATION_TOL,
        );
        if let Some(e) = err {
            return Err(e);
        }
        Ok(value?)
    }
}

/// One violated parameter constraint, named after the inequality it breaks.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Violation {
    pub constraint: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.constraint, self.detail)
    }
}

/// Market parameters: claim rate, premium income rate, mean-variance risk
/// loadings, Parisian clock rate, and discount rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MarketParams {
    /// Claim arrival intensity (claims per unit time).
    pub lambda: f64,
    /// Premium income rate.
    pub c: f64,
    /// Mean loading of the reinsurance premium principle.
    pub theta: f64,
    /// Variance loading of the reinsurance premium principle.
    pub eta: f64,
    /// Hazard rate of the exponential Parisian clock.
    pub rho: f64,
    /// Discount rate applied at the ruin time.
    pub beta: f64,
}

impl MarketParams {
    /// Cost rate of full reinsurance minus premium income; positive for valid
    /// parameters.
    pub fn kappa(&self, model: &SeverityModel) -> f64 {
        self.full_reinsurance_premium(model) - self.c
    }

    /// (1 + theta) lambda E Y + (eta / 2) lambda E Y^2.
    pub fn full_reinsurance_premium(&self, model: &SeverityModel) -> f64 {
        (1.0 + self.theta) * self.lambda * model.mean()
            + 0.5 * self.eta * self.lambda * model.second_moment()
    }

    /// Value of the function at the ruin boundary, rho / (rho + beta).
    pub fn ruin_plateau(&self) -> f64 {
        self.rho / (self.rho + self.beta)
    }

    /// Checks every validity constraint; returns the full list of violations.
    pub fn validate(&self, model: &SeverityModel) -> Vec<Violation> {
        let mut violations = Vec::new();
        let mut positive = |name: &str, v: f64, strict: bool| {
            let bad = if strict { !(v > 0.0) } else { !(v >= 0.0) };
            if bad || !v.is_finite() {
                violations.push(Violation {
                    constraint: format!("{name} {} 0", if strict { ">" } else { ">=" }),
                    detail: format!("{name} = {v}"),
                });
            }
        };
        positive("lambda", self.lambda, true);
        positive("c", self.c, true);
        positive("theta", self.theta, false);
        positive("eta", self.eta, false);
        positive("rho", self.rho, true);
        positive("beta", self.beta, true);
        if self.theta == 0.0 && self.eta == 0.0 {
            violations.push(Violation {
                constraint: "not both theta = 0 and eta = 0".into(),
                detail: "reinsurance would be priced at pure expected loss".into(),
            });
        }
        let net = self.lambda * model.mean();
        if !(self.c > net) {
            violations.push(Violation {
                constraint: "c > lambda E Y (net profit)".into(),
                detail: format!("c = {} <= lambda E Y = {net}", self.c),
            });
        }
        let full = self.full_reinsurance_premium(model);
        if !(self.c < full) {
            violations.push(Violation {
                constraint: "c < full-reinsurance premium".into(),
                detail: format!("c = {} >= (1+theta) lambda EY + (eta/2) lambda EY^2 = {full}", self.c),
            });
        }
        violations
    }

    pub fn validated(&self, model: &SeverityModel) -> Result<(), Vec<Violation>> {
        let v = self.validate(model);
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

/// Count of retention evaluations clamped back into [0, y]; interpolation
/// overshoot on tabulated rules lands here instead of aborting a solve.
pub static CLAMP_COUNT: AtomicU64 = AtomicU64::new(0);

fn clamp_retained(raw: f64, y: f64) -> f64 {
    if raw < -1e-12 || raw > y + 1e-12 {
        let n = CLAMP_COUNT.fetch_add(1, Ordering::Relaxed);
        if n == 0 {
            log::warn!("retention value {raw} outside [0, {y}]; clamping (further clamps counted silently)");
        }
    }
    raw.clamp(0.0, y)
}

/// A grid-tabulated feedback retention rule: bilinear interpolation in
/// (x, y), clamped to [0, y].
#[derive(Debug, Clone)]
pub struct TabulatedRule {
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    /// Row-major: values[i][j] = R(x_grid[i], y_grid[j]).
    pub values: Vec<Vec<f64>>,
}

impl TabulatedRule {
    fn interp(&self, x: f64, y: f64) -> f64 {
        let (i, tx) = locate(&self.x_grid, x);
        let (j, ty) = locate(&self.y_grid, y);
        let v00 = self.values[i][j];
        let v01 = self.values[i][j + 1];
        let v10 = self.values[i + 1][j];
        let v11 = self.values[i + 1][j + 1];
        (1.0 - tx) * ((1.0 - ty) * v00 + ty * v01) + tx * ((1.0 - ty) * v10 + ty * v11)
    }
}

fn locate(grid: &[f64], v: f64) -> (usize, f64) {
    let n = grid.len();
    if v <= grid[0] {
        return (0, 0.0);
    }
    if v >= grid[n - 1] {
        return (n - 2, 1.0);
    }
    let mut lo = 0;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if grid[mid] <= v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = (v - grid[lo]) / (grid[lo + 1] - grid[lo]);
    (lo, t)
}

/// A feedback retention rule R(x, y); evaluation always clamps to [0, y].
#[derive(Clone)]
pub enum RetentionRule {
    /// R(x, y) = y.
    FullRetention,
    /// An x-independent per-claim map y -> R(y).
    PerClaim(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Distinct sub-rules below zero and at-or-above zero.
    TwoRegime {
        below_zero: Arc<RetentionRule>,
        at_or_above: Arc<RetentionRule>,
    },
    /// Grid-tabulated in (x, y).
    Tabulated(Arc<TabulatedRule>),
}

impl fmt::Debug for RetentionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FullRetention => write!(f, "FullRetention"),
            Self::PerClaim(_) => write!(f, "PerClaim(..)"),
            Self::TwoRegime {
                below_zero,
                at_or_above,
            } => write!(f, "TwoRegime {{ below_zero: {below_zero:?}, at_or_above: {at_or_above:?} }}"),
            Self::Tabulated(t) => write!(
                f,
                "Tabulated({}x{} grid)",
                t.x_grid.len(),
                t.y_grid.len()
            ),
        }
    }
}

impl RetentionRule {
    pub fn per_claim<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self::PerClaim(Arc::new(f))
    }

    pub fn two_regime(below_zero: RetentionRule, at_or_above: RetentionRule) -> Self {
        Self::TwoRegime {
            below_zero: Arc::new(below_zero),
            at_or_above: Arc::new(at_or_above),
        }
    }

    pub fn retained(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::FullRetention => y,
            Self::PerClaim(f) => clamp_retained(f(y), y),
            Self::TwoRegime {
                below_zero,
                at_or_above,
            } => {
                if x < 0.0 {
                    below_zero.retained(x, y)
                } else {
                    at_or_above.retained(x, y)
                }
            }
            Self::Tabulated(t) => clamp_retained(t.interp(x, y), y),
        }
    }

    /// True when R(x, y) does not depend on x; such rules admit exact
    /// event-driven simulation within one regime.
    pub fn is_x_independent(&self) -> bool {
        match self {
            Self::FullRetention | Self::PerClaim(_) => true,
            Self::TwoRegime { .. } | Self::Tabulated(_) => false,
        }
    }
}

/// The mean-variance reinsurance premium rate for an arbitrary per-claim
/// retention y -> R(y): (1+theta) lambda E(Y - R) + (eta/2) lambda E((Y - R)^2).
/// Known derivative kinks of the retention may be passed for panel splitting.
pub fn reinsurance_premium_rate<F: Fn(f64) -> f64>(
    model: &SeverityModel,
    retention: F,
    params: &MarketParams,
    kinks: &[f64],
) -> Result<f64, ClaimsError> {
    let ceded_mean = model.expectation(
        |y| {
            let r = clamp_retained(retention(y), y);
            y - r
        },
        kinks,
    )?;
    let ceded_sq = model.expectation(
        |y| {
            let r = clamp_retained(retention(y), y);
            (y - r) * (y - r)
        },
        kinks,
    )?;
    Ok((1.0 + params.theta) * params.lambda * ceded_mean
        + 0.5 * params.eta * params.lambda * ceded_sq)
}

/// Premium rate for a feedback rule frozen at surplus level x.
pub fn premium_rate_at(
    model: &SeverityModel,
    rule: &RetentionRule,
    x: f64,
    params: &MarketParams,
    kinks: &[f64],
) -> Result<f64, ClaimsError> {
    reinsurance_premium_rate(model, |y| rule.retained(x, y), params, kinks)
}
