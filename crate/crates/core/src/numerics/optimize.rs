//! BFGS with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    /// Stop when `max_i |grad_i| <= grad_tol`.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-7, max_iter: 500, c1: 1e-4, c2: 0.9 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the line search could not make progress; `x` is still the best iterate.
    pub line_search_failed: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

struct Probe {
    alpha: f64,
    value: f64,
    slope: f64,
    grad: DVector<f64>,
}

fn cubic_min(a: &Probe, b: &Probe) -> Option<f64> {
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Minimize `f` starting from `x0`; `f` returns the value and gradient.
pub fn bfgs_minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut eval = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (v, g) = f(x.as_slice())?;
        if g.len() != n {
            return Err(Error::Dimension(format!("gradient has {} entries, expected {n}", g.len())));
        }
        Ok((v, DVector::from_vec(g)))
    };
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, mut g) = eval(&x)?;
    if !fx.is_finite() {
        return Err(Error::Contract("objective is not finite at the starting point".into()));
    }
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut line_search_failed = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol {
            break;
        }
        iterations += 1;
        let mut p = -(&hinv * &g);
        let mut slope0 = p.dot(&g);
        if slope0 >= 0.0 {
            hinv = DMatrix::identity(n, n);
            p = -g.clone();
            slope0 = p.dot(&g);
        }
        let alpha0 = if first { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };

        let origin = Probe { alpha: 0.0, value: fx, slope: slope0, grad: g.clone() };
        let mut prev = Probe { alpha: 0.0, value: fx, slope: slope0, grad: g.clone() };
        let mut alpha = alpha0;
        let mut found: Option<Probe> = None;
        let mut bracket: Option<(Probe, Probe)> = None;
        for i in 0..30 {
            let xa = &x + &p * alpha;
            let (va, ga) = eval(&xa)?;
            let cur = Probe { alpha, value: va, slope: ga.dot(&p), grad: ga };
            if !cur.value.is_finite() {
                alpha = 0.5 * (prev.alpha + alpha);
                continue;
            }
            if cur.value > fx + opts.c1 * alpha * slope0 || (i > 0 && cur.value >= prev.value) {
                bracket = Some((prev, cur));
                break;
            }
            if cur.slope.abs() <= -opts.c2 * slope0 {
                found = Some(cur);
                break;
            }
            if cur.slope >= 0.0 {
                bracket = Some((cur, prev));
                break;
            }
            prev = cur;
            alpha *= 2.0;
        }
        if found.is_none() {
            if let Some((mut lo, mut hi)) = bracket {
                for _ in 0..40 {
                    let width = (hi.alpha - lo.alpha).abs();
                    let trial = cubic_min(&lo, &hi)
                        .filter(|t| {
                            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
                            *t > a + 0.1 * width && *t < b - 0.1 * width
                        })
                        .unwrap_or(0.5 * (lo.alpha + hi.alpha));
                    let xa = &x + &p * trial;
                    let (va, ga) = eval(&xa)?;
                    let cur = Probe { alpha: trial, value: va, slope: ga.dot(&p), grad: ga };
                    if !cur.value.is_finite() || cur.value > fx + opts.c1 * trial * slope0 || cur.value >= lo.value {
                        hi = cur;
                    } else {
                        if cur.slope.abs() <= -opts.c2 * slope0 {
                            found = Some(cur);
                            break;
                        }
                        if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                            hi = lo;
                        }
                        lo = cur;
                    }
                    if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
                        break;
                    }
                }
                // accept a sufficient-decrease point even without the curvature condition
                if found.is_none() && lo.alpha > 0.0 && lo.value < fx {
                    found = Some(lo);
                }
            }
        }
        let Some(step) = found.filter(|s| s.alpha != origin.alpha) else {
            line_search_failed = true;
            break;
        };
        let s = &p * step.alpha;
        let y = &step.grad - &g;
        x += &s;
        fx = step.value;
        g = step.grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy^T + hy s^T) + (rho^2 yHy + rho) s s^T
            hinv -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        first = false;
    }
    let grad_norm = inf_norm(&g);
    Ok(Minimum { x: x.iter().copied().collect(), value: fx, grad_norm, iterations, converged: grad_norm <= opts.grad_tol, line_search_failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let m = bfgs_minimize(
            |v| {
                let (x, y) = (v[0], v[1]);
                let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
                let gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
                let gy = 200.0 * (y - x * x);
                Ok((f, vec![gx, gy]))
            },
            &[-1.2, 1.0],
            &BfgsOptions { grad_tol: 1e-9, ..Default::default() },
        )
        .unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_descends() {
        let m = bfgs_minimize(
            |v| {
                Ok((
                    v.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x * x).sum(),
                    v.iter().enumerate().map(|(i, x)| 2.0 * (i + 1) as f64 * x).collect(),
                ))
            },
            &[1.0, -2.0, 3.0, 0.5],
            &Default::default(),
        )
        .unwrap();
        assert!(m.converged && m.value < 1e-12);
    }
}
