//! Shared numerical kernels: a Brent-style bracketing root-finder, adaptive
//! Gauss-Legendre quadrature with kink-aware panel splitting, and bracket
//! expansion helpers.

use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo:e}, f(hi) = {f_hi:e}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("root finder hit the iteration cap {max_iter} on [{lo}, {hi}]; last residual {residual:e}")]
    MaxIterations {
        lo: f64,
        hi: f64,
        residual: f64,
        max_iter: usize,
    },
    #[error("objective left its domain near {at}: f({at}) = {value}")]
    DomainBoundary { at: f64, value: f64 },
    #[error("quadrature did not reach tolerance {tol:e} on [{a}, {b}] (max panel depth {depth})")]
    QuadratureNonConvergence { a: f64, b: f64, tol: f64, depth: usize },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// A bracketed scalar root problem.
pub struct RootProblem<F: FnMut(f64) -> f64> {
    pub objective: F,
    pub bracket: (f64, f64),
    pub tolerance: f64,
    pub max_iter: usize,
}

impl<F: FnMut(f64) -> f64> RootProblem<F> {
    pub fn new(objective: F, bracket: (f64, f64), tolerance: f64) -> Self {
        Self {
            objective,
            bracket,
            tolerance,
            max_iter: 200,
        }
    }
}

/// Brent's method: inverse quadratic interpolation / secant steps with a
/// bisection fallback. The bracket must straddle a sign change.
pub fn find_root<F: FnMut(f64) -> f64>(problem: RootProblem<F>) -> Result<f64> {
    let RootProblem {
        mut objective,
        bracket: (lo, hi),
        tolerance,
        max_iter,
    } = problem;

    let mut a = lo;
    let mut b = hi;
    let mut fa = objective(a);
    let mut fb = objective(b);
    if !fa.is_finite() {
        return Err(NumericsError::DomainBoundary { at: a, value: fa });
    }
    if !fb.is_finite() {
        return Err(NumericsError::DomainBoundary { at: b, value: fb });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(NumericsError::NoSignChange {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;

    for _ in 0..max_iter {
        if fb.abs() > fc.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tolerance;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Secant or inverse quadratic step.
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 {
            d
        } else {
            tol1.copysign(xm)
        };
        fb = objective(b);
        if !fb.is_finite() {
            return Err(NumericsError::DomainBoundary { at: b, value: fb });
        }
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    Err(NumericsError::MaxIterations {
        lo,
        hi,
        residual: fb,
        max_iter,
    })
}

/// Expands geometrically (factor 2) from `start` in one direction until the
/// objective changes sign; returns a bracket containing the sign change.
pub fn auto_bracket<F: FnMut(f64) -> f64>(
    mut objective: F,
    start: f64,
    positive_direction: bool,
) -> Result<(f64, f64)> {
    let f_start = objective(start);
    if !f_start.is_finite() {
        return Err(NumericsError::DomainBoundary {
            at: start,
            value: f_start,
        });
    }
    let mut step = if start.abs() > 0.0 { 0.5 * start.abs() } else { 0.5 };
    if !positive_direction {
        step = -step;
    }
    let mut prev = start;
    let mut f_prev = f_start;
    for _ in 0..128 {
        let next = prev + step;
        let f_next = objective(next);
        if !f_next.is_finite() {
            return Err(NumericsError::DomainBoundary {
                at: next,
                value: f_next,
            });
        }
        if f_next == 0.0 || f_next.signum() != f_prev.signum() {
            return Ok(if prev < next { (prev, next) } else { (next, prev) });
        }
        prev = next;
        f_prev = f_next;
        step *= 2.0;
    }
    Err(NumericsError::NoSignChange {
        lo: start,
        hi: prev,
        f_lo: f_start,
        f_hi: f_prev,
    })
}

/// Bracket a root on the positive axis by probing `start * 2^k` outward in
/// both directions. Used for adjustment coefficients whose scale is unknown
/// a priori.
pub fn bracket_positive<F: FnMut(f64) -> f64>(mut objective: F, start: f64) -> Result<(f64, f64)> {
    assert!(start > 0.0);
    let f_start = objective(start);
    if !f_start.is_finite() {
        return Err(NumericsError::DomainBoundary {
            at: start,
            value: f_start,
        });
    }
    if f_start == 0.0 {
        return Ok((start, start));
    }
    let mut up = start;
    let mut f_up = f_start;
    let mut down = start;
    let mut f_down = f_start;
    let mut last_domain_error = None;
    for _ in 0..64 {
        let next_up = up * 2.0;
        let f = objective(next_up);
        if !f.is_finite() {
            // Likely an MGF divergence or similar; remember it but keep
            // probing downward.
            last_domain_error = Some((next_up, f));
            f_up = f64::NAN;
        } else if f_up.is_finite() {
            if f == 0.0 || f.signum() != f_up.signum() {
                return Ok((up, next_up));
            }
            up = next_up;
            f_up = f;
        }

        let next_down = down * 0.5;
        let f = objective(next_down);
        if !f.is_finite() {
            last_domain_error = Some((next_down, f));
        } else {
            if f == 0.0 || f.signum() != f_down.signum() {
                return Ok((next_down, down));
            }
            down = next_down;
            f_down = f;
        }
    }
    if let Some((at, value)) = last_domain_error {
        return Err(NumericsError::DomainBoundary { at, value });
    }
    Err(NumericsError::NoSignChange {
        lo: down,
        hi: up,
        f_lo: f_down,
        f_hi: f_up,
    })
}

const GL_ORDER: usize = 15;

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let z1 = z;
            z -= p0 / dp;
            if (z - z1).abs() < 1e-16 {
                x[i] = -z;
                x[n - 1 - i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                w[n - 1 - i] = w[i];
                break;
            }
        }
    }
    (x, w)
}

fn gl_panel<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gl_rule();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut sum = 0.0;
    for (&x, &w) in nodes.iter().zip(weights) {
        sum += w * f(mid + half * x);
    }
    sum * half
}

fn adapt<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let left = gl_panel(f, a, mid);
    let right = gl_panel(f, mid, b);
    let refined = left + right;
    if (refined - whole).abs() <= tol || (b - a).abs() < 1e-15 * (a.abs() + b.abs() + 1.0) {
        return Ok(refined);
    }
    if depth == 0 {
        return Err(NumericsError::QuadratureNonConvergence {
            a,
            b,
            tol,
            depth: 48,
        });
    }
    let l = adapt(f, a, mid, left, 0.5 * tol, depth - 1)?;
    let r = adapt(f, mid, b, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Adaptive Gauss-Legendre quadrature with absolute tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let whole = gl_panel(&mut f, a, b);
    adapt(&mut f, a, b, whole, tol, 48)
}

/// Adaptive quadrature on [a, b] that never lets a panel straddle a listed
/// kink point. Kinks outside (a, b) are ignored.
pub fn integrate_with_kinks<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    kinks: &[f64],
    tol: f64,
) -> Result<f64> {
    let mut cuts: Vec<f64> = kinks.iter().copied().filter(|&k| k > a && k < b).collect();
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);
    let span = (b - a).abs();
    let mut total = 0.0;
    for pair in edges.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let panel_tol = (tol * (hi - lo).abs() / span).max(tol * 1e-3);
        total += integrate(&mut f, lo, hi, panel_tol)?;
    }
    Ok(total)
}
