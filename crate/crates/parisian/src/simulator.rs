//! Event-driven Monte Carlo of the controlled surplus process with
//! exponential Parisian clocks. Two-regime rules (one per-claim rule below
//! zero, one at or above) are simulated exactly; surplus-dependent tabulated
//! rules fall back to a fixed time step.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use thiserror::Error;

use crate::claims::{premium_rate_at, ClaimsError, MarketParams, RetentionRule, SeverityModel};
use crate::hjb::{extract_policy, HjbSolution};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Claims(#[from] ClaimsError),
    #[error("need at least 2 paths, got {0}")]
    TooFewPaths(u64),
    #[error("non-finite drift at x = {0}")]
    BadDrift(f64),
    #[error(transparent)]
    Adjustment(#[from] crate::adjustment::AdjustmentError),
}

/// How the exponential excursion clock is managed. Both variants produce the
/// same law for the ruin time (the exponential clock is memoryless);
/// `ResampledCarry` exists to test that equivalence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// A fresh clock is drawn at every down-crossing.
    FreshPerExcursion,
    /// One clock is carried across excursions, its remaining time resampled
    /// at every re-entry (test double).
    ResampledCarry,
}

#[derive(Clone)]
pub struct SimConfig {
    pub x0: f64,
    pub rule: RetentionRule,
    pub params: MarketParams,
    pub model: SeverityModel,
    pub n_paths: u64,
    /// Defaults to ceil(9.3 / beta), giving a truncation bias below 1e-4.
    pub horizon: Option<f64>,
    pub seed: u64,
    /// Only used for surplus-dependent tabulated rules; defaults to 1e-3/lambda.
    pub time_step: Option<f64>,
    pub clock_mode: ClockMode,
}

impl SimConfig {
    pub fn new(
        x0: f64,
        rule: RetentionRule,
        params: MarketParams,
        model: SeverityModel,
    ) -> Self {
        Self {
            x0,
            rule,
            params,
            model,
            n_paths: 10_000,
            horizon: None,
            seed: 42,
            time_step: None,
            clock_mode: ClockMode::FreshPerExcursion,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
            .unwrap_or_else(|| (9.3 / self.params.beta).ceil())
    }

    pub fn time_step(&self) -> f64 {
        self.time_step.unwrap_or(1e-3 / self.params.lambda)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PathOutcome {
    pub ruined: bool,
    /// Ruin time; present iff ruined.
    pub k: Option<f64>,
}

impl PathOutcome {
    fn discounted(&self, beta: f64) -> f64 {
        match self.k {
            Some(k) if self.ruined => (-beta * k).exp(),
            _ => 0.0,
        }
    }
}

/// Precomputed dynamics. Exact two-regime when the rule is x-independent on
/// each side of zero, otherwise a drift table for the fixed-step integrator.
enum Dynamics {
    TwoRegime {
        rule: RetentionRule,
        drift_below: f64,
        drift_above: f64,
    },
    Stepped {
        rule: RetentionRule,
        x_grid: Vec<f64>,
        drift: Vec<f64>,
        /// Node spacing when the grid is uniform; enables O(1) drift lookup
        /// in the step loop, which dominates the cost of long horizons.
        uniform_h: Option<f64>,
        dt: f64,
    },
}

fn exp1(rng: &mut ChaCha12Rng) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e
}

fn split_regimes(rule: &RetentionRule) -> Option<(RetentionRule, RetentionRule)> {
    match rule {
        RetentionRule::FullRetention | RetentionRule::PerClaim(_) => {
            Some((rule.clone(), rule.clone()))
        }
        RetentionRule::TwoRegime {
            below_zero,
            at_or_above,
        } if below_zero.is_x_independent() && at_or_above.is_x_independent() => {
            Some(((**below_zero).clone(), (**at_or_above).clone()))
        }
        _ => None,
    }
}

fn build_dynamics(cfg: &SimConfig) -> Result<Dynamics, SimError> {
    let p = &cfg.params;
    if let Some((below, above)) = split_regimes(&cfg.rule) {
        let drift_below = p.c - premium_rate_at(&cfg.model, &below, -1.0, p, &[])?;
        let drift_above = p.c - premium_rate_at(&cfg.model, &above, 1.0, p, &[])?;
        if !drift_below.is_finite() || !drift_above.is_finite() {
            return Err(SimError::BadDrift(0.0));
        }
        return Ok(Dynamics::TwoRegime {
            rule: cfg.rule.clone(),
            drift_below,
            drift_above,
        });
    }
    // Tabulated drift; the rule clamps to its edge values outside the grid,
    // so the drift extends flat.
    let x_grid: Vec<f64> = match &cfg.rule {
        RetentionRule::Tabulated(t) => t.x_grid.clone(),
        _ => {
            let n = 1601;
            (0..n).map(|i| -40.0 + 80.0 * i as f64 / (n - 1) as f64).collect()
        }
    };
    let drift = x_grid
        .iter()
        .map(|&x| premium_rate_at(&cfg.model, &cfg.rule, x, p, &[]).map(|pr| p.c - pr))
        .collect::<Result<Vec<f64>, _>>()?;
    let h = (x_grid[x_grid.len() - 1] - x_grid[0]) / (x_grid.len() - 1) as f64;
    let uniform = x_grid
        .windows(2)
        .all(|w| (w[1] - w[0] - h).abs() <= 1e-9 * h.max(1.0));
    Ok(Dynamics::Stepped {
        rule: cfg.rule.clone(),
        x_grid,
        drift,
        uniform_h: uniform.then_some(h),
        dt: cfg.time_step(),
    })
}

/// O(1) piecewise-linear drift read on a uniform grid.
fn interp_drift_uniform(x_grid: &[f64], drift: &[f64], h: f64, x: f64) -> f64 {
    let n = x_grid.len();
    if x <= x_grid[0] {
        return drift[0];
    }
    if x >= x_grid[n - 1] {
        return drift[n - 1];
    }
    let s = (x - x_grid[0]) / h;
    let i = (s as usize).min(n - 2);
    let t = s - i as f64;
    (1.0 - t) * drift[i] + t * drift[i + 1]
}

fn interp_drift(x_grid: &[f64], drift: &[f64], x: f64) -> f64 {
    let n = x_grid.len();
    if x <= x_grid[0] {
        return drift[0];
    }
    if x >= x_grid[n - 1] {
        return drift[n - 1];
    }
    let mut lo = 0;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x_grid[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = (x - x_grid[lo]) / (x_grid[lo + 1] - x_grid[lo]);
    (1.0 - t) * drift[lo] + t * drift[lo + 1]
}

struct ClockSource<'r> {
    rng: &'r mut ChaCha12Rng,
    rho: f64,
    mode: ClockMode,
    pending: Option<f64>,
}

impl ClockSource<'_> {
    fn enter_excursion(&mut self, t: f64) -> f64 {
        let duration = match self.mode {
            ClockMode::FreshPerExcursion => exp1(self.rng) / self.rho,
            ClockMode::ResampledCarry => self
                .pending
                .take()
                .unwrap_or_else(|| exp1(self.rng) / self.rho),
        };
        t + duration
    }

    fn leave_excursion(&mut self) {
        if self.mode == ClockMode::ResampledCarry {
            // Remaining clock time is resampled on exit; memorylessness makes
            // this equivalent in law to a fresh draw on re-entry.
            self.pending = Some(exp1(self.rng) / self.rho);
        }
    }
}

/// One path, exact event-driven two-regime simulation. Events: claims with
/// exponential inter-arrivals, deterministic zero crossings, and the Parisian
/// deadline while below zero. When the drift pins the surplus at zero
/// (negative above, non-negative below) it sticks there until the next claim.
#[allow(clippy::too_many_arguments)]
fn run_two_regime(
    x0: f64,
    rule: &RetentionRule,
    drift_below: f64,
    drift_above: f64,
    params: &MarketParams,
    model: &SeverityModel,
    horizon: f64,
    claims_rng: &mut ChaCha12Rng,
    clock: &mut ClockSource<'_>,
) -> PathOutcome {
    let lambda = params.lambda;
    let mut t = 0.0f64;
    let mut x = x0;
    let mut deadline: Option<f64> = if x < 0.0 {
        Some(clock.enter_excursion(t))
    } else {
        None
    };
    let mut next_claim = t + exp1(claims_rng) / lambda;

    loop {
        let below = deadline.is_some();
        let mu = if below { drift_below } else { drift_above };
        let sticky = !below && x == 0.0 && drift_above < 0.0 && drift_below >= 0.0;

        // Deterministic zero crossing under the current drift.
        let cross = if below && mu > 0.0 && x < 0.0 {
            Some(t + (-x) / mu)
        } else if !below && !sticky && mu < 0.0 {
            Some(t + x / (-mu))
        } else {
            None
        };

        // Earliest event; crossings take priority over a coincident deadline
        // (the clock must expire strictly below zero).
        let mut t_event = next_claim;
        #[derive(PartialEq)]
        enum Ev {
            Claim,
            Cross,
            Deadline,
        }
        let mut ev = Ev::Claim;
        if let Some(d) = deadline {
            if d < t_event {
                t_event = d;
                ev = Ev::Deadline;
            }
        }
        if let Some(cr) = cross {
            if cr <= t_event {
                t_event = cr;
                ev = Ev::Cross;
            }
        }
        if t_event > horizon {
            return PathOutcome {
                ruined: false,
                k: None,
            };
        }

        match ev {
            Ev::Deadline => {
                return PathOutcome {
                    ruined: true,
                    k: Some(t_event),
                };
            }
            Ev::Cross => {
                if below {
                    // Recovery: excursion ends at the crossing instant.
                    deadline = None;
                    clock.leave_excursion();
                    x = 0.0;
                } else {
                    // Falling through zero from above.
                    x = 0.0;
                    if drift_below < 0.0 {
                        deadline = Some(clock.enter_excursion(t_event));
                    }
                    // drift_below >= 0 pins the surplus at zero (sticky).
                }
                t = t_event;
            }
            Ev::Claim => {
                if !sticky {
                    x += mu * (t_event - t);
                }
                t = t_event;
                let y = model.sample(claims_rng);
                let was_below = deadline.is_some();
                // Retention decided by the pre-claim surplus.
                let pre_x = if was_below { x.min(-0.0) } else { x.max(0.0) };
                x -= rule.retained(pre_x, y);
                if !was_below && x < 0.0 {
                    deadline = Some(clock.enter_excursion(t));
                }
                next_claim = t + exp1(claims_rng) / lambda;
            }
        }
    }
}

/// One path under the fixed-step integrator for surplus-dependent rules.
#[allow(clippy::too_many_arguments)]
fn run_stepped(
    x0: f64,
    rule: &RetentionRule,
    x_grid: &[f64],
    drift: &[f64],
    uniform_h: Option<f64>,
    dt: f64,
    params: &MarketParams,
    model: &SeverityModel,
    horizon: f64,
    claims_rng: &mut ChaCha12Rng,
    clock: &mut ClockSource<'_>,
) -> PathOutcome {
    let lambda = params.lambda;
    let mut t = 0.0f64;
    let mut x = x0;
    let mut deadline: Option<f64> = if x < 0.0 {
        Some(clock.enter_excursion(t))
    } else {
        None
    };
    let mut next_claim = t + exp1(claims_rng) / lambda;

    loop {
        if t >= horizon {
            return PathOutcome {
                ruined: false,
                k: None,
            };
        }
        let t_end = (t + dt).min(next_claim).min(horizon);
        let mu = match uniform_h {
            Some(h) => interp_drift_uniform(x_grid, drift, h, x),
            None => interp_drift(x_grid, drift, x),
        };
        let mut x_end = x + mu * (t_end - t);

        // Zero crossing inside the step.
        let t_cross = if x < 0.0 && x_end >= 0.0 || x >= 0.0 && x_end < 0.0 {
            Some(t + (0.0 - x) / mu)
        } else {
            None
        };
        if let Some(tc) = t_cross {
            if x < 0.0 {
                // Recovering: the deadline only bites before the crossing.
                if let Some(d) = deadline {
                    if d < tc {
                        return PathOutcome {
                            ruined: true,
                            k: Some(d),
                        };
                    }
                }
                deadline = None;
                clock.leave_excursion();
            } else {
                deadline = Some(clock.enter_excursion(tc));
            }
        } else if x < 0.0 {
            if let Some(d) = deadline {
                if d <= t_end {
                    return PathOutcome {
                        ruined: true,
                        k: Some(d),
                    };
                }
            }
        }

        if t_end == next_claim {
            let y = model.sample(claims_rng);
            let was_below = x_end < 0.0;
            x_end -= rule.retained(x_end, y);
            if !was_below && x_end < 0.0 {
                deadline = Some(clock.enter_excursion(t_end));
            }
            next_claim = t_end + exp1(claims_rng) / lambda;
        }
        t = t_end;
        x = x_end;
    }
}

fn path_rngs(seed: u64, path_idx: u64) -> (ChaCha12Rng, ChaCha12Rng) {
    // Counter-based split: claims on stream 2i, clocks on stream 2i + 1.
    // Keeping clocks on their own stream means a rho change rescales every
    // clock draw pathwise without perturbing the claims sequence.
    let mut claims = ChaCha12Rng::seed_from_u64(seed);
    claims.set_stream(2 * path_idx);
    let mut clocks = ChaCha12Rng::seed_from_u64(seed);
    clocks.set_stream(2 * path_idx + 1);
    (claims, clocks)
}

fn run_path(cfg: &SimConfig, dynamics: &Dynamics, path_idx: u64) -> PathOutcome {
    let (mut claims_rng, mut clock_rng) = path_rngs(cfg.seed, path_idx);
    let mut clock = ClockSource {
        rng: &mut clock_rng,
        rho: cfg.params.rho,
        mode: cfg.clock_mode,
        pending: None,
    };
    let horizon = cfg.horizon();
    match dynamics {
        Dynamics::TwoRegime {
            rule,
            drift_below,
            drift_above,
        } => run_two_regime(
            cfg.x0,
            rule,
            *drift_below,
            *drift_above,
            &cfg.params,
            &cfg.model,
            horizon,
            &mut claims_rng,
            &mut clock,
        ),
        Dynamics::Stepped {
            rule,
            x_grid,
            drift,
            uniform_h,
            dt,
        } => run_stepped(
            cfg.x0,
            rule,
            x_grid,
            drift,
            *uniform_h,
            *dt,
            &cfg.params,
            &cfg.model,
            horizon,
            &mut claims_rng,
            &mut clock,
        ),
    }
}

/// Simulates a single path under `cfg` using the RNG substreams for
/// `path_idx`. Builds the dynamics from scratch; use [`estimate`] for bulk
/// runs.
pub fn simulate_path(cfg: &SimConfig, path_idx: u64) -> Result<PathOutcome, SimError> {
    let dynamics = build_dynamics(cfg)?;
    Ok(run_path(cfg, &dynamics, path_idx))
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    /// Discount mass the finite horizon can miss: e^{-beta * horizon}.
    pub bias_bound: f64,
    pub n_ruined: u64,
    pub n_paths: u64,
    pub horizon: f64,
}

/// Monte Carlo estimate of E[e^{-beta K} 1{K < infinity}]. Paths run in
/// parallel on independent RNG substreams; aggregation is over the ordered
/// per-path values, so a given seed reproduces bit-identical output.
pub fn estimate(cfg: &SimConfig) -> Result<Estimate, SimError> {
    if cfg.n_paths < 2 {
        return Err(SimError::TooFewPaths(cfg.n_paths));
    }
    let dynamics = build_dynamics(cfg)?;
    let beta = cfg.params.beta;
    let outcomes: Vec<(f64, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let o = run_path(cfg, &dynamics, i);
            (o.discounted(beta), o.ruined)
        })
        .collect();

    let n = cfg.n_paths as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut n_ruined = 0u64;
    for &(v, ruined) in &outcomes {
        sum += v;
        sum_sq += v * v;
        n_ruined += ruined as u64;
    }
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let se = (var / n).sqrt();
    let horizon = cfg.horizon();
    Ok(Estimate {
        mean,
        std_error: se,
        ci95: (mean - 1.96 * se, mean + 1.96 * se),
        bias_bound: (-beta * horizon).exp(),
        n_ruined,
        n_paths: cfg.n_paths,
        horizon,
    })
}

/// Collects ruin times (for distributional tests); unruined paths yield no
/// sample.
pub fn ruin_times(cfg: &SimConfig) -> Result<Vec<f64>, SimError> {
    let dynamics = build_dynamics(cfg)?;
    Ok((0..cfg.n_paths)
        .into_par_iter()
        .filter_map(|i| run_path(cfg, &dynamics, i).k)
        .collect())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CompareRow {
    pub x0: f64,
    pub hjb_value: f64,
    pub mc_optimal: Estimate,
    pub mc_full_retention: Estimate,
    pub mc_upper_bound_policy: Estimate,
    /// (MC optimal - HJB) / SE.
    pub z_vs_hjb: f64,
    /// Positive when the optimal policy beats the reference (reference minus
    /// optimal, in reference-combined standard errors).
    pub z_vs_full_retention: f64,
    pub z_vs_upper_bound_policy: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// True when the optimal estimate never exceeds a reference estimate by
    /// more than 3 combined standard errors.
    pub dominance_holds: bool,
}

/// Cross-validates a converged HJB solution against simulation: the extracted
/// policy, full retention, and the analytic upper-bound policy (full
/// retention below zero, the gamma1-optimal per-claim rule above).
pub fn compare(
    sol: &HjbSolution,
    x_points: &[f64],
    template: &SimConfig,
) -> Result<CompareReport, SimError> {
    let (opt_rule, _) = extract_policy(sol, 1e-3, 0.05);
    let coeffs = crate::adjustment::AdjustmentCoefficients::solve(&sol.params, &sol.model)?;
    let bar_above = RetentionRule::per_claim(move |y: f64| coeffs.r_hat(y).unwrap_or(y));
    let bar_rule = RetentionRule::two_regime(RetentionRule::FullRetention, bar_above);

    let mut rows = Vec::with_capacity(x_points.len());
    let mut dominance_holds = true;
    for &x0 in x_points {
        let run = |rule: &RetentionRule| -> Result<Estimate, SimError> {
            let mut cfg = template.clone();
            cfg.x0 = x0;
            cfg.rule = rule.clone();
            estimate(&cfg)
        };
        let mc_optimal = run(&opt_rule)?;
        let mc_full = run(&RetentionRule::FullRetention)?;
        let mc_bar = run(&bar_rule)?;
        let hjb_value = sol.value_at(x0);
        let z = |reference: &Estimate| {
            let se = (reference.std_error.powi(2) + mc_optimal.std_error.powi(2)).sqrt();
            (reference.mean - mc_optimal.mean) / se.max(1e-300)
        };
        let z_full = z(&mc_full);
        let z_bar = z(&mc_bar);
        if z_full < -3.0 || z_bar < -3.0 {
            dominance_holds = false;
        }
        rows.push(CompareRow {
            x0,
            hjb_value,
            z_vs_hjb: (mc_optimal.mean - hjb_value) / mc_optimal.std_error.max(1e-300),
            z_vs_full_retention: z_full,
            z_vs_upper_bound_policy: z_bar,
            mc_optimal,
            mc_full_retention: mc_full,
            mc_upper_bound_policy: mc_bar,
        });
    }
    Ok(CompareReport {
        rows,
        dominance_holds,
    })
}

/// Two-sample Kolmogorov-Smirnov test. Returns (D, asymptotic p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(|u, v| u.partial_cmp(v).unwrap());
    b.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (n1, n2) = (a.len(), b.len());
    assert!(n1 > 0 && n2 > 0);
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0f64;
    while i < n1 && j < n2 {
        let t = a[i].min(b[j]);
        while i < n1 && a[i] <= t {
            i += 1;
        }
        while j < n2 && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    // Kolmogorov tail series.
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64 * lam).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
