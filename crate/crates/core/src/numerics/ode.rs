//! Dormand-Prince 5(4) integrator for complex state vectors.

use crate::error::{Error, Result};

use super::linalg::CVector;

#[derive(Debug, Clone)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; chosen automatically when `None`.
    pub first_step: Option<f64>,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, first_step: None, max_step: f64::INFINITY, max_steps: 1_000_000 }
    }
}

const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order solution minus embedded fourth-order solution
const E: [f64; 7] = [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

fn weighted_rms(v: &CVector, y: &CVector, y_new: Option<&CVector>, opts: &Rk45Options) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let sum: f64 = v
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mag = match y_new {
                Some(yn) => y[i].norm().max(yn[i].norm()),
                None => y[i].norm(),
            };
            let r = e.norm() / (opts.atol + opts.rtol * mag);
            r * r
        })
        .sum();
    (sum / v.len() as f64).sqrt()
}

fn initial_step<F>(f: &mut F, t0: f64, y0: &CVector, f0: &CVector, span: f64, opts: &Rk45Options) -> Result<f64>
where
    F: FnMut(f64, &CVector) -> Result<CVector>,
{
    let d0 = weighted_rms(y0, y0, None, opts);
    let d1 = weighted_rms(f0, y0, None, opts);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = y0 + f0 * crate::C64::new(h0, 0.0);
    let f1 = f(t0 + h0, &y1)?;
    let d2 = weighted_rms(&(f1 - f0), y0, None, opts) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    Ok((100.0 * h0).min(h1).min(span).min(opts.max_step))
}

/// Integrate `dy/dt = derivative(t, y)` from `t_span.0` to `t_span.1` and
/// return the state at each requested sample time.
///
/// Sample times outside `t_span` are ignored; the integrator lands on each
/// sample time exactly.
pub fn rk45_integrate<F>(derivative: F, y0: &CVector, t_span: (f64, f64), sample_times: &[f64], opts: &Rk45Options) -> Result<Vec<(f64, CVector)>>
where
    F: FnMut(f64, &CVector) -> Result<CVector>,
{
    rk45_integrate_with_hook(derivative, y0, t_span, sample_times, opts, |_, _| Ok(false))
}

/// Like [`rk45_integrate`], with a hook called after every accepted step.
///
/// The hook may modify the state in place (e.g. to re-orthonormalize part of
/// it) and must return `true` when it did so.
pub fn rk45_integrate_with_hook<F, H>(
    mut derivative: F,
    y0: &CVector,
    t_span: (f64, f64),
    sample_times: &[f64],
    opts: &Rk45Options,
    mut hook: H,
) -> Result<Vec<(f64, CVector)>>
where
    F: FnMut(f64, &CVector) -> Result<CVector>,
    H: FnMut(f64, &mut CVector) -> Result<bool>,
{
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::Contract(format!("t_span must satisfy t1 > t0, got ({t0}, {t1})")));
    }
    let mut targets: Vec<f64> = sample_times.iter().copied().filter(|&s| s >= t0 && s <= t1).collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let mut out = Vec::with_capacity(targets.len());
    let mut next = 0usize;
    while next < targets.len() && targets[next] <= t0 {
        out.push((t0, y0.clone()));
        next += 1;
    }

    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = derivative(t, &y)?;
    let mut h = match opts.first_step {
        Some(h) => h.min(t1 - t0),
        None => initial_step(&mut derivative, t0, &y, &k1, t1 - t0, opts)?,
    };
    let mut steps = 0usize;
    let mut ks: Vec<CVector> = Vec::with_capacity(7);

    while t < t1 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Stiffness(format!("exceeded {} steps at t = {t}", opts.max_steps)));
        }
        let target = if next < targets.len() { targets[next] } else { t1 };
        let h_try = h.min(target - t).min(opts.max_step);
        let lands = h_try >= target - t;

        ks.clear();
        ks.push(k1.clone());
        let mut y_new = y.clone();
        for (stage, row) in A.iter().enumerate() {
            let mut ys = y.clone();
            for (j, a) in row.iter().enumerate() {
                if *a != 0.0 {
                    ys.axpy(crate::C64::new(h_try * a, 0.0), &ks[j], crate::C64::new(1.0, 0.0));
                }
            }
            let k = derivative(t + C[stage] * h_try, &ys)?;
            if stage == 5 {
                y_new = ys;
            }
            ks.push(k);
        }
        let mut err = CVector::zeros(y.len());
        for (j, e) in E.iter().enumerate() {
            if *e != 0.0 {
                err.axpy(crate::C64::new(h_try * e, 0.0), &ks[j], crate::C64::new(1.0, 0.0));
            }
        }
        let err_norm = weighted_rms(&err, &y, Some(&y_new), opts);
        if !err_norm.is_finite() {
            return Err(Error::Stiffness(format!("non-finite error estimate at t = {t}")));
        }

        if err_norm <= 1.0 {
            t = if lands { target } else { t + h_try };
            y = y_new;
            k1 = ks.pop().expect("seven stages");
            if hook(t, &mut y)? {
                k1 = derivative(t, &y)?;
            }
            while next < targets.len() && targets[next] <= t {
                out.push((targets[next], y.clone()));
                next += 1;
            }
            let factor = if err_norm == 0.0 { 10.0 } else { (0.9 * err_norm.powf(-0.2)).min(10.0) };
            h = if lands && h_try < h { h } else { h_try * factor };
        } else {
            let factor = (0.9 * err_norm.powf(-0.2)).max(0.2);
            h = h_try * factor;
        }
        if h < 10.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, last: y.iter().copied().collect() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    fn scalar(v: C64) -> CVector {
        CVector::from_element(1, v)
    }

    #[test]
    fn zero_derivative_is_constant() {
        let y0 = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-3.0, 0.5)]);
        let out = rk45_integrate(|_, y| Ok(CVector::zeros(y.len())), &y0, (0.0, 3.0), &[0.0, 1.0, 3.0], &Default::default()).unwrap();
        assert_eq!(out.len(), 3);
        for (_, y) in out {
            assert_eq!(y, y0);
        }
    }

    #[test]
    fn oscillator_closed_form() {
        let i = C64::new(0.0, 1.0);
        let opts = Rk45Options { rtol: 1e-11, atol: 1e-13, ..Default::default() };
        let out = rk45_integrate(|_, y| Ok(y * i), &scalar(C64::new(1.0, 0.0)), (0.0, 5.0), &[5.0], &opts).unwrap();
        let exact = C64::new(5f64.cos(), 5f64.sin());
        assert!((out[0].1[0] - exact).norm() < 1e-8);
    }

    #[test]
    fn decay_closed_form() {
        let times: Vec<f64> = (0..=10).map(|k| 0.5 * k as f64).collect();
        let out = rk45_integrate(|_, y| Ok(-y), &scalar(C64::new(1.0, 0.0)), (0.0, 5.0), &times, &Default::default()).unwrap();
        assert_eq!(out.len(), times.len());
        for (t, y) in out {
            assert!((y[0].re - (-t).exp()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn rejects_empty_span() {
        assert!(rk45_integrate(|_, y| Ok(y.clone()), &scalar(C64::new(1.0, 0.0)), (1.0, 1.0), &[], &Default::default()).is_err());
    }

    #[test]
    fn finite_time_blowup_underflows() {
        // y' = y^2 blows up at t = 1
        let err = rk45_integrate(|_, y| Ok(y.component_mul(y)), &scalar(C64::new(1.0, 0.0)), (0.0, 2.0), &[2.0], &Default::default()).unwrap_err();
        assert!(matches!(err, Error::StepUnderflow { .. } | Error::Stiffness(_)), "{err:?}");
    }
}
