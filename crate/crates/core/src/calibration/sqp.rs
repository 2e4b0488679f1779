//! Bound-constrained sequential least-squares programming.
//!
//! Minimises `‖r(x)‖²` for a residual vector `r` over a box. Each iteration
//! builds a central-difference Jacobian, solves the box-constrained
//! quadratic subproblem with Hessian `2JᵀJ` (Levenberg-damped) exactly by a
//! primal active-set method, then backtracks along the step.

use serde::{Deserialize, Serialize};

use crate::exec::{map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqpConfig {
    pub max_iterations: usize,
    /// Relative central-difference step on the (positive) variables.
    pub fd_relative_step: f64,
    /// Stop when the projected gradient drops below this.
    pub gradient_tolerance: f64,
    /// Relative objective improvement regarded as progress.
    pub improvement_tolerance: f64,
    /// Iterations without progress before giving up.
    pub patience: usize,
    /// Absolute objective regarded as an exact fit.
    pub objective_floor: f64,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            max_iterations: 100,
            fd_relative_step: 1e-3,
            gradient_tolerance: 1e-9,
            improvement_tolerance: 1e-9,
            patience: 4,
            objective_floor: 1e-14,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpOutcome {
    /// Best point found (original variables).
    pub x: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Residual oracle over the original (positive) variables. An `Err`
/// marks an infeasible evaluation; the line search treats it as +∞.
pub trait Residuals: Sync {
    type Error: Send;
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>, Self::Error>;
}

impl<F, E> Residuals for F
where
    F: Fn(&[f64]) -> Result<Vec<f64>, E> + Sync,
    E: Send,
{
    type Error = E;
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>, E> {
        self(x)
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Central-difference Jacobian in log-variables `u = ln x`, using the
/// relative step `h` on `x`. Columns whose outward step leaves the box use a
/// one-sided difference.
pub fn log_jacobian<R: Residuals>(
    f: &R,
    x: &[f64],
    r0: &[f64],
    lower: &[f64],
    upper: &[f64],
    h: f64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>, R::Error> {
    let n = x.len();
    let cols: Vec<Result<Vec<f64>, R::Error>> = map_indexed(n, exec, |k| {
        let up = x[k] * (1.0 + h);
        let dn = x[k] * (1.0 - h);
        let eval = |v: f64| {
            let mut xp = x.to_vec();
            xp[k] = v;
            f.residuals(&xp)
        };
        let (rp, rm, du) = match (up <= upper[k], dn >= lower[k]) {
            (true, true) => (eval(up)?, eval(dn)?, (1.0 + h).ln() - (1.0 - h).ln()),
            (true, false) => (eval(up)?, r0.to_vec(), (1.0 + h).ln()),
            (false, true) => (r0.to_vec(), eval(dn)?, -(1.0 - h).ln()),
            (false, false) => return Ok(vec![0.0; r0.len()]),
        };
        Ok(rp.iter().zip(&rm).map(|(a, b)| (a - b) / du).collect())
    });
    cols.into_iter().collect()
}

/// Minimises `‖r(x)‖²` subject to `lower ≤ x ≤ upper` (all bounds > 0).
pub fn minimize<R: Residuals>(
    f: &R,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    cfg: &SqpConfig,
    exec: Execution,
) -> Result<SqpOutcome, R::Error> {
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n);
    assert!(lower.iter().zip(upper).all(|(l, u)| *l > 0.0 && l <= u), "bounds must be positive and ordered");

    let lo: Vec<f64> = lower.iter().map(|v| v.ln()).collect();
    let hi: Vec<f64> = upper.iter().map(|v| v.ln()).collect();
    let to_x = |u: &[f64]| -> Vec<f64> {
        u.iter().enumerate().map(|(k, v)| v.exp().clamp(lower[k], upper[k])).collect()
    };
    let mut u: Vec<f64> = x0.iter().enumerate().map(|(k, v)| v.max(lower[k]).min(upper[k]).ln()).collect();
    let mut x = to_x(&u);
    let mut r = f.residuals(&x)?;
    let mut obj = sum_sq(&r);
    let initial = obj;
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut stale = 0;
    let mut damping = 0.0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        if obj <= cfg.objective_floor {
            converged = true;
            break;
        }
        iterations += 1;
        let jac = log_jacobian(f, &x, &r, lower, upper, cfg.fd_relative_step, exec)?;
        evaluations += 2 * n;

        let grad: Vec<f64> = jac.iter().map(|col| 2.0 * col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()).collect();
        let pg = projected_gradient_norm(&u, &grad, &lo, &hi);
        if pg <= cfg.gradient_tolerance * (1.0 + obj) {
            converged = true;
            break;
        }
        let mut hess = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..=a {
                let v = 2.0 * jac[a].iter().zip(&jac[b]).map(|(p, q)| p * q).sum::<f64>();
                hess[a][b] = v;
                hess[b][a] = v;
            }
        }
        let scale = (0..n).map(|k| hess[k][k]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);

        let mut accepted = false;
        for _ in 0..8 {
            let mut h = hess.clone();
            for k in 0..n {
                h[k][k] += damping * scale + 1e-12 * scale;
            }
            let dl: Vec<f64> = (0..n).map(|k| lo[k] - u[k]).collect();
            let dh: Vec<f64> = (0..n).map(|k| hi[k] - u[k]).collect();
            let d = box_qp(&h, &grad, &dl, &dh);
            let slope: f64 = grad.iter().zip(&d).map(|(g, s)| g * s).sum();
            if slope >= 0.0 || d.iter().all(|s| s.abs() < 1e-15) {
                damping = (damping * 10.0).max(1e-4);
                continue;
            }
            let mut alpha = 1.0;
            while alpha > 1e-6 {
                let trial: Vec<f64> = (0..n).map(|k| (u[k] + alpha * d[k]).clamp(lo[k], hi[k])).collect();
                let xt = to_x(&trial);
                evaluations += 1;
                if let Ok(rt) = f.residuals(&xt) {
                    let ot = sum_sq(&rt);
                    if ot <= obj + 1e-4 * alpha * slope {
                        let improvement = (obj - ot) / obj.max(f64::MIN_POSITIVE);
                        stale = if improvement > cfg.improvement_tolerance { 0 } else { stale + 1 };
                        u = trial;
                        x = xt;
                        r = rt;
                        obj = ot;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted {
                damping = if alpha == 1.0 { damping * 0.1 } else { damping };
                if damping < 1e-10 {
                    damping = 0.0;
                }
                break;
            }
            damping = (damping * 10.0).max(1e-4);
        }
        if !accepted {
            stale += 1;
        }
        if stale >= cfg.patience {
            break;
        }
    }

    Ok(SqpOutcome { x, objective: obj, initial_objective: initial, iterations, evaluations, converged })
}

fn projected_gradient_norm(u: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    u.iter()
        .enumerate()
        .map(|(k, &v)| {
            let stepped = (v - g[k]).clamp(lo[k], hi[k]);
            (stepped - v).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Solves `min ½ dᵀ H d + gᵀ d` with `lo ≤ d ≤ hi`, `lo ≤ 0 ≤ hi`, `H`
/// symmetric positive definite. Primal active-set starting from `d = 0`.
pub fn box_qp(h: &[Vec<f64>], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = g.len();
    let mut d = vec![0.0; n];
    // 0 free, -1 at lower, +1 at upper
    let mut state = vec![0i8; n];
    for _ in 0..(10 * n + 20) {
        let free: Vec<usize> = (0..n).filter(|&k| state[k] == 0).collect();
        // Equality-constrained minimiser on the free set.
        let target = if free.is_empty() {
            d.clone()
        } else {
            let m: Vec<Vec<f64>> = free.iter().map(|&a| free.iter().map(|&b| h[a][b]).collect()).collect();
            let rhs: Vec<f64> = free
                .iter()
                .map(|&a| -g[a] - (0..n).filter(|&b| state[b] != 0).map(|b| h[a][b] * d[b]).sum::<f64>())
                .collect();
            let sol = dense_solve(m, rhs);
            let mut t = d.clone();
            for (i, &k) in free.iter().enumerate() {
                t[k] = sol[i];
            }
            t
        };
        // Ratio test towards target.
        let mut alpha = 1.0;
        let mut blocking = None;
        for &k in &free {
            let step = target[k] - d[k];
            if step > 0.0 && target[k] > hi[k] {
                let a = (hi[k] - d[k]) / step;
                if a < alpha {
                    alpha = a;
                    blocking = Some((k, 1i8));
                }
            } else if step < 0.0 && target[k] < lo[k] {
                let a = (lo[k] - d[k]) / step;
                if a < alpha {
                    alpha = a;
                    blocking = Some((k, -1i8));
                }
            }
        }
        for &k in &free {
            d[k] += alpha * (target[k] - d[k]);
        }
        if let Some((k, side)) = blocking {
            state[k] = side;
            d[k] = if side > 0 { hi[k] } else { lo[k] };
            continue;
        }
        // Multipliers of the active bounds.
        let mut worst = None;
        let mut worst_val = 0.0;
        for k in 0..n {
            if state[k] == 0 {
                continue;
            }
            let grad_k = g[k] + (0..n).map(|b| h[k][b] * d[b]).sum::<f64>();
            // At a lower bound the gradient must be >= 0, at an upper bound <= 0.
            let violation = if state[k] < 0 { -grad_k } else { grad_k };
            if violation > worst_val + 1e-14 {
                worst_val = violation;
                worst = Some(k);
            }
        }
        match worst {
            Some(k) => state[k] = 0,
            None => return d,
        }
    }
    d
}

/// Gaussian elimination with partial pivoting for small dense systems.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap_or(c);
        a.swap(c, p);
        b.swap(c, p);
        if a[c][c] == 0.0 {
            continue;
        }
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = if a[r][r] == 0.0 { 0.0 } else { (b[r] - s) / a[r][r] };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_qp_unconstrained_and_clamped() {
        let h = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        let d = box_qp(&h, &[-2.0, 4.0], &[-10.0, -10.0], &[10.0, 10.0]);
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] + 2.0).abs() < 1e-12);
        let d = box_qp(&h, &[-2.0, 4.0], &[-10.0, -0.5], &[0.25, 10.0]);
        assert!((d[0] - 0.25).abs() < 1e-12 && (d[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn box_qp_coupled_matches_enumeration() {
        // Brute-force oracle over a fine grid.
        let h = vec![vec![4.0, 1.5], vec![1.5, 1.0]];
        let g = [-1.0, 2.0];
        let (lo, hi) = ([-0.2, -0.7], [1.0, 0.3]);
        let d = box_qp(&h, &g, &lo, &hi);
        let q = |x: f64, y: f64| 0.5 * (h[0][0] * x * x + 2.0 * h[0][1] * x * y + h[1][1] * y * y) + g[0] * x + g[1] * y;
        let mut best = f64::INFINITY;
        for i in 0..=600 {
            for j in 0..=500 {
                let x = lo[0] + (hi[0] - lo[0]) * i as f64 / 600.0;
                let y = lo[1] + (hi[1] - lo[1]) * j as f64 / 500.0;
                best = best.min(q(x, y));
            }
        }
        assert!(q(d[0], d[1]) <= best + 1e-9);
    }

    #[test]
    fn fits_exponential_model_within_bounds() {
        // r_i = a·exp(-t_i/b) - y_i with truth a=3, b=0.5
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-t / 0.5).exp()).collect();
        let f = |x: &[f64]| -> Result<Vec<f64>, ()> {
            Ok(ts.iter().zip(&ys).map(|(t, y)| x[0] * (-t / x[1]).exp() - y).collect())
        };
        let out = minimize(&f, &[1.0, 2.0], &[0.01, 0.01], &[10.0, 10.0], &SqpConfig::default(), Execution::Sequential)
            .unwrap();
        assert!((out.x[0] - 3.0).abs() < 1e-5 && (out.x[1] - 0.5).abs() < 1e-5, "{:?}", out.x);
        assert!(out.objective <= out.initial_objective);
        assert!(out.converged);
    }

    #[test]
    fn active_bound_respected() {
        // Unconstrained optimum x=5 lies outside [0.1, 2].
        let f = |x: &[f64]| -> Result<Vec<f64>, ()> { Ok(vec![x[0] - 5.0]) };
        let out = minimize(&f, &[1.0], &[0.1], &[2.0], &SqpConfig::default(), Execution::Sequential).unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_points_are_avoided() {
        let f = |x: &[f64]| -> Result<Vec<f64>, ()> {
            if x[0] > 3.0 {
                Err(())
            } else {
                Ok(vec![x[0] - 2.5])
            }
        };
        let out = minimize(&f, &[0.5], &[0.1], &[100.0], &SqpConfig::default(), Execution::Sequential).unwrap();
        assert!((out.x[0] - 2.5).abs() < 1e-6);
    }
}
