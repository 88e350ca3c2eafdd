//! Derivative-free spectral residual method (DF-SANE) for `F(x) = 0`.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DfSaneOptions {
    /// Converged when `max_i |F_i(x)| <= tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Length of the non-monotone line search memory.
    pub window: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub gamma: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub max_backtracks: usize,
}

impl Default for DfSaneOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 2000, window: 10, sigma_min: 1e-10, sigma_max: 1e10, gamma: 1e-4, tau_min: 0.1, tau_max: 0.5, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct Root {
    pub x: Vec<f64>,
    /// `max_i |F_i(x)|` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `residual(x) = 0` with the default DF-SANE settings and the given tolerance.
pub fn solve_nonlinear<F>(residual: F, x0: &[f64], tol: f64) -> Result<Root>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut residual = residual;
    solve_nonlinear_with(|x| Ok(residual(x)), x0, &DfSaneOptions { tol, ..Default::default() })
}

/// DF-SANE with explicit options.
///
/// On failure the error is [`Error::NoRoot`] carrying the iterate with the
/// smallest residual seen. Errors raised by `residual` propagate unchanged.
pub fn solve_nonlinear_with<F>(mut residual: F, x0: &[f64], opts: &DfSaneOptions) -> Result<Root>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = residual(&x)?;
    if fx.len() != n {
        return Err(Error::Dimension(format!("residual returned {} components for {} unknowns", fx.len(), n)));
    }
    if fx.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("residual is not finite at the initial point".into()));
    }
    let mut f = sq_norm(&fx);
    let f0 = f;
    let mut best = (inf_norm(&fx), x.clone());
    let mut history: VecDeque<f64> = VecDeque::with_capacity(opts.window);
    history.push_back(f);
    let mut sigma = 1.0f64;

    for k in 0..opts.max_iter {
        if best.0 <= opts.tol {
            return Ok(Root { x: best.1, residual: best.0, iterations: k });
        }
        if sigma.abs() > opts.sigma_max {
            sigma = opts.sigma_max.copysign(sigma);
        } else if sigma.abs() < opts.sigma_min {
            sigma = opts.sigma_min.copysign(if sigma == 0.0 { 1.0 } else { sigma });
        }
        let d: Vec<f64> = fx.iter().map(|v| -sigma * v).collect();
        let eta = f0 / ((1 + k) as f64).powi(2);
        let f_bar = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut alpha_p = 1.0f64;
        let mut alpha_m = 1.0f64;
        let mut accepted: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        for _ in 0..opts.max_backtracks {
            let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha_p * b).collect();
            let fp_vec = residual(&xp)?;
            let fp = sq_norm(&fp_vec);
            if fp.is_finite() && fp <= f_bar + eta - opts.gamma * alpha_p * alpha_p * f {
                accepted = Some((xp, fp_vec, fp));
                break;
            }
            let alpha_tp = if fp.is_finite() { alpha_p * alpha_p * f / (fp + (2.0 * alpha_p - 1.0) * f) } else { opts.tau_min * alpha_p };

            let xm: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - alpha_m * b).collect();
            let fm_vec = residual(&xm)?;
            let fm = sq_norm(&fm_vec);
            if fm.is_finite() && fm <= f_bar + eta - opts.gamma * alpha_m * alpha_m * f {
                accepted = Some((xm, fm_vec, fm));
                break;
            }
            let alpha_tm = if fm.is_finite() { alpha_m * alpha_m * f / (fm + (2.0 * alpha_m - 1.0) * f) } else { opts.tau_min * alpha_m };

            alpha_p = alpha_tp.clamp(opts.tau_min * alpha_p, opts.tau_max * alpha_p);
            alpha_m = alpha_tm.clamp(opts.tau_min * alpha_m, opts.tau_max * alpha_m);
        }
        let Some((x_new, fx_new, f_new)) = accepted else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = fx_new.iter().zip(&fx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        sigma = if sy != 0.0 { sq_norm(&s) / sy } else { opts.sigma_max };
        x = x_new;
        fx = fx_new;
        f = f_new;
        if history.len() == opts.window {
            history.pop_front();
        }
        history.push_back(f);
        let r = inf_norm(&fx);
        if r < best.0 {
            best = (r, x.clone());
        }
    }
    if best.0 <= opts.tol {
        return Ok(Root { x: best.1, residual: best.0, iterations: opts.max_iter });
    }
    Err(Error::NoRoot { best: best.1, residual: best.0, iterations: opts.max_iter })
}
