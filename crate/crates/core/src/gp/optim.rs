//! BFGS with a loss-only backtracking line search.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOptions {
    pub max_iters: usize,
    /// Stop once `‖∇f‖∞` falls to this value.
    pub grad_tol: f64,
    /// Stop once an accepted step changes `f` by at most this fraction.
    pub rel_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant, checked after each accepted step.
    pub c2: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iters: 200,
            grad_tol: 1e-6,
            rel_tol: 1e-9,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    GradientTolerance,
    RelativeChange,
    MaxIterations,
    LineSearchFailed,
    /// The objective was not finite at the starting point or at an accepted step.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// `f` at the start and after every accepted step.
    pub history: Vec<f64>,
    pub loss_evals: usize,
    pub grad_evals: usize,
    /// Accepted steps that failed the curvature condition.
    pub curvature_misses: usize,
}

const MAX_BACKTRACKS: usize = 40;
const MAX_EXPANSIONS: usize = 8;

/// Minimizes `f` starting at `x0`.
///
/// `loss` returns `None` where `f` is undefined, which the line search treats
/// as `+∞`. `loss_grad` is called once per accepted point.
pub fn minimize<L, G>(mut loss: L, mut loss_grad: G, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome
where
    L: FnMut(&[f64]) -> Option<f64>,
    G: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut out = BfgsOutcome {
        x: x0.to_vec(),
        f: f64::INFINITY,
        iterations: 0,
        stop: StopReason::Diverged,
        history: Vec::new(),
        loss_evals: 0,
        grad_evals: 1,
        curvature_misses: 0,
    };
    let Some((mut f, mut g)) = loss_grad(x0) else {
        return out;
    };
    out.f = f;
    out.history.push(f);
    let mut x = x0.to_vec();
    // Inverse Hessian approximation, row-major; `None` means a scaled identity
    // that has not yet seen a curvature pair.
    let mut h: Option<Vec<f64>> = None;

    out.stop = StopReason::MaxIterations;
    for iter in 0..opts.max_iters {
        if inf_norm(&g) <= opts.grad_tol {
            out.stop = StopReason::GradientTolerance;
            break;
        }
        let mut d = direction(h.as_deref(), &g);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = None;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let alpha0 = if h.is_none() { 1.0 / inf_norm(&g).max(1.0) } else { 1.0 };
        let mut evals = 0usize;
        let mut eval_at = |a: f64| {
            evals += 1;
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + a * di).collect();
            loss(&trial).filter(|v| v.is_finite()).unwrap_or(f64::INFINITY)
        };
        let found = line_search(&mut eval_at, f, slope, alpha0, opts.c1);
        out.loss_evals += evals;

        let Some((alpha, _)) = found else {
            if h.is_some() {
                // Retry from steepest descent before giving up.
                h = None;
                continue;
            }
            out.stop = StopReason::LineSearchFailed;
            break;
        };
        let x_new: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
        out.grad_evals += 1;
        let Some((f_new, g_new)) = loss_grad(&x_new) else {
            out.stop = StopReason::Diverged;
            break;
        };
        out.iterations = iter + 1;

        if dot(&g_new, &d) < opts.c2 * slope {
            out.curvature_misses += 1;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) && sy > 0.0 {
            let hm = h.get_or_insert_with(|| {
                let scale = sy / dot(&yv, &yv);
                let mut id = vec![0.0; n * n];
                for i in 0..n {
                    id[i * n + i] = scale;
                }
                id
            });
            bfgs_update(hm, &s, &yv, sy);
        }

        let prev = f;
        x = x_new;
        f = f_new;
        g = g_new;
        out.history.push(f);
        if (prev - f).abs() <= opts.rel_tol * prev.abs().max(f.abs()).max(1.0) {
            out.stop = StopReason::RelativeChange;
            break;
        }
    }
    if out.stop == StopReason::MaxIterations && inf_norm(&g) <= opts.grad_tol {
        out.stop = StopReason::GradientTolerance;
    }
    out.x = x;
    out.f = f;
    out
}

/// Armijo backtracking with quadratic interpolation. When the first trial is
/// accepted the step is doubled while the loss keeps falling.
fn line_search(phi: &mut impl FnMut(f64) -> f64, f0: f64, slope: f64, alpha0: f64, c1: f64) -> Option<(f64, f64)> {
    let armijo = |a: f64, fa: f64| fa <= f0 + c1 * a * slope;
    let mut a = alpha0;
    let mut fa = phi(a);
    if armijo(a, fa) {
        for _ in 0..MAX_EXPANSIONS {
            let a2 = 2.0 * a;
            let f2 = phi(a2);
            if f2 < fa && armijo(a2, f2) {
                a = a2;
                fa = f2;
            } else {
                break;
            }
        }
        return Some((a, fa));
    }
    for _ in 0..MAX_BACKTRACKS {
        let next = if fa.is_finite() {
            let denom = 2.0 * (fa - f0 - slope * a);
            if denom > 0.0 {
                -slope * a * a / denom
            } else {
                0.5 * a
            }
        } else {
            0.1 * a
        };
        a = next.clamp(0.1 * a, 0.5 * a);
        fa = phi(a);
        if armijo(a, fa) {
            return Some((a, fa));
        }
    }
    None
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn direction(h: Option<&[f64]>, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    match h {
        None => g.iter().map(|v| -v).collect(),
        Some(h) => (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], g)).collect(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
