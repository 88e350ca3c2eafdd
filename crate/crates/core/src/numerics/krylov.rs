//! Matrix-free Lanczos kernels for the exact oracles.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

use super::linalg::{CVector, C64};

#[derive(Debug, Clone)]
pub struct KrylovOptions {
    /// Krylov subspace size per cycle.
    pub subspace: usize,
    /// Residual `||H psi - E psi||` (ground state) or local error per unit time (propagation).
    pub tol: f64,
    pub max_cycles: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { subspace: 60, tol: 1e-9, max_cycles: 500 }
    }
}

fn cdot(a: &CVector, b: &CVector) -> C64 {
    a.dotc(b)
}

/// Build an orthonormal Krylov basis from the normalized `v0`.
///
/// Returns the basis, the tridiagonal coefficients and the residual norm
/// `beta_m` after the last vector.
fn lanczos_basis<M>(matvec: &mut M, v0: CVector, m: usize) -> Result<(Vec<CVector>, Vec<f64>, Vec<f64>, f64)>
where
    M: FnMut(&CVector) -> Result<CVector>,
{
    let mut basis = vec![v0];
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    loop {
        let j = basis.len() - 1;
        let mut w = matvec(&basis[j])?;
        let a = cdot(&basis[j], &w).re;
        alpha.push(a);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for v in &basis {
                let c = cdot(v, &w);
                w.axpy(-c, v, C64::new(1.0, 0.0));
            }
        }
        let b = w.norm();
        if basis.len() == m || b < 1e-14 {
            return Ok((basis, alpha, beta, b));
        }
        beta.push(b);
        basis.push(w / C64::new(b, 0.0));
    }
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let k = alpha.len();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    })
}

/// Lowest eigenpair of the Hermitian operator applied by `matvec`.
///
/// Restarted Lanczos with full reorthogonalization; stops when
/// `||H psi - E psi|| <= opts.tol`.
pub fn lanczos_ground<M>(mut matvec: M, start: &CVector, opts: &KrylovOptions) -> Result<(f64, CVector)>
where
    M: FnMut(&CVector) -> Result<CVector>,
{
    let n = start.len();
    if n == 0 {
        return Err(Error::Contract("empty start vector".into()));
    }
    let norm = start.norm();
    if !(norm > 0.0) {
        return Err(Error::Contract("start vector must be nonzero".into()));
    }
    let mut v = start / C64::new(norm, 0.0);
    let m = opts.subspace.clamp(2, n.max(2)).min(n);
    let mut last = (f64::NAN, f64::INFINITY);
    for _ in 0..opts.max_cycles {
        let (basis, alpha, beta, _) = lanczos_basis(&mut matvec, v.clone(), m)?;
        let eig = SymmetricEigen::new(tridiagonal(&alpha, &beta));
        let (idx, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
        let s = eig.eigenvectors.column(idx);
        let mut y = CVector::zeros(n);
        for (k, vk) in basis.iter().enumerate() {
            y.axpy(C64::new(s[k], 0.0), vk, C64::new(1.0, 0.0));
        }
        let y = &y / C64::new(y.norm(), 0.0);
        let hy = matvec(&y)?;
        let energy = cdot(&y, &hy).re;
        let resid = (&hy - &y * C64::new(energy, 0.0)).norm();
        if resid <= opts.tol {
            return Ok((energy, y));
        }
        last = (energy, resid);
        v = y;
    }
    Err(Error::Stiffness(format!("Lanczos did not reach residual {:e} (last energy {}, residual {:e})", opts.tol, last.0, last.1)))
}

/// `exp(-i H t) v` by adaptive Krylov time stepping.
pub fn krylov_propagate<M>(mut matvec: M, v: &CVector, t: f64, opts: &KrylovOptions) -> Result<CVector>
where
    M: FnMut(&CVector) -> Result<CVector>,
{
    let n = v.len();
    let mut psi = v.clone();
    if t == 0.0 || n == 0 {
        return Ok(psi);
    }
    let m = opts.subspace.clamp(2, 40).min(n);
    let mut elapsed = 0.0f64;
    let mut dt = t.abs();
    let sign = t.signum();
    let mut cycles = 0;
    while elapsed < t.abs() {
        cycles += 1;
        if cycles > opts.max_cycles * 20 {
            return Err(Error::Stiffness("Krylov propagation made no progress".into()));
        }
        let norm = psi.norm();
        if norm == 0.0 {
            return Ok(psi);
        }
        let (basis, alpha, beta, b_last) = lanczos_basis(&mut matvec, &psi / C64::new(norm, 0.0), m)?;
        let k = alpha.len();
        let eig = SymmetricEigen::new(tridiagonal(&alpha, &beta));
        let step_coeffs = |h: f64| -> Vec<C64> {
            // exp(-i T h) e_1
            (0..k)
                .map(|i| {
                    (0..k)
                        .map(|j| {
                            let phase = C64::new(0.0, -sign * eig.eigenvalues[j] * h).exp();
                            phase * eig.eigenvectors[(i, j)] * eig.eigenvectors[(0, j)]
                        })
                        .sum()
                })
                .collect()
        };
        let mut h = dt.min(t.abs() - elapsed);
        let exact_subspace = b_last < 1e-12;
        let coeffs = loop {
            let c = step_coeffs(h);
            let err = if exact_subspace { 0.0 } else { b_last * c[k - 1].norm() * norm };
            if err <= opts.tol * h.max(1e-3) || h < 1e-12 {
                break c;
            }
            h *= 0.5;
        };
        let mut next = CVector::zeros(n);
        for (i, vi) in basis.iter().enumerate() {
            next.axpy(coeffs[i] * C64::new(norm, 0.0), vi, C64::new(1.0, 0.0));
        }
        psi = next;
        elapsed += h;
        dt = (h * 1.5).min(t.abs());
    }
    Ok(psi)
}

/// Bessel functions `J_0(x) .. J_{kmax}(x)` for `x >= 0` by Miller's backward recurrence.
fn bessel_j_sequence(x: f64, kmax: usize) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; kmax + 1];
        out[0] = 1.0;
        return out;
    }
    let start = kmax + 30 + (x as usize) + (2.0 * x.sqrt()) as usize;
    let start = start + start % 2;
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1e-300;
    for k in (1..=start).rev() {
        vals[k - 1] = 2.0 * k as f64 / x * vals[k] - vals[k + 1];
        if vals[k - 1].abs() > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let norm = vals[0] + 2.0 * vals.iter().skip(2).step_by(2).sum::<f64>();
    vals.truncate(kmax + 1);
    vals.iter().map(|v| v / norm).collect()
}

/// `exp(-i H t) v` by a Chebyshev expansion.
///
/// `bounds` must enclose the spectrum of `H`; long times are split into
/// substeps so that each expansion stays short.
pub fn chebyshev_propagate<M>(matvec: M, v: &CVector, t: f64, bounds: (f64, f64), tol: f64) -> Result<CVector>
where
    M: FnMut(&CVector) -> Result<CVector>,
{
    Ok(chebyshev_propagate_many(matvec, v, &[t], bounds, tol)?.pop().expect("one time"))
}

/// Largest `half-width * time` covered by one recursion.
const CHEBYSHEV_SPAN: f64 = 400.0;
/// Output vectors accumulated by one recursion.
const CHEBYSHEV_GROUP: usize = 8;

/// `exp(-i H t) v` for every `t` in `times` (any order and sign).
///
/// Times are visited in order of increasing `|t|` on each side of zero; up to
/// eight outputs share one Chebyshev recursion, so the matvec count grows with
/// the largest time rather than with the number of samples.
pub fn chebyshev_propagate_many<M>(mut matvec: M, v: &CVector, times: &[f64], bounds: (f64, f64), tol: f64) -> Result<Vec<CVector>>
where
    M: FnMut(&CVector) -> Result<CVector>,
{
    let (lo, hi) = bounds;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Contract(format!("invalid spectral bounds ({lo}, {hi})")));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter("propagation times must be finite".into()));
    }
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut out: Vec<Option<CVector>> = vec![None; times.len()];
    for sign in [1.0, -1.0] {
        let mut side: Vec<usize> = (0..times.len()).filter(|&k| times[k] * sign > 0.0).collect();
        side.sort_by(|&a, &b| times[a].abs().total_cmp(&times[b].abs()));
        let (mut t_base, mut base) = (0.0f64, v.clone());
        let mut rest = &side[..];
        while !rest.is_empty() {
            // next group: at most CHEBYSHEV_GROUP times within one span of the base
            let mut n = 0;
            while n < rest.len() && n < CHEBYSHEV_GROUP && half * (times[rest[n]].abs() - t_base) <= CHEBYSHEV_SPAN {
                n += 1;
            }
            if n == 0 {
                // too far: advance the base by one full span
                let dt = CHEBYSHEV_SPAN / half;
                base = chebyshev_group(&mut matvec, &base, &[dt * sign], half, mid, tol)?.pop().expect("one output");
                t_base += dt;
                continue;
            }
            let group = &rest[..n];
            let dts: Vec<f64> = group.iter().map(|&k| (times[k].abs() - t_base) * sign).collect();
            let states = chebyshev_group(&mut matvec, &base, &dts, half, mid, tol)?;
            for (&k, s) in group.iter().zip(states) {
                out[k] = Some(s);
            }
            t_base = times[group[n - 1]].abs();
            base = out[group[n - 1]].clone().expect("just set");
            rest = &rest[n..];
        }
    }
    Ok(out.into_iter().map(|s| s.unwrap_or_else(|| v.clone())).collect())
}

/// One shared recursion producing `exp(-i H dt) v` for each `dt`.
fn chebyshev_group<M>(matvec: &mut M, v: &CVector, dts: &[f64], half: f64, mid: f64, tol: f64) -> Result<Vec<CVector>>
where
    M: FnMut(&CVector) -> Result<CVector>,
{
    // per output: expansion length and the coefficients 2 (-i sign)^k J_k(half |dt|)
    let coeffs: Vec<Vec<C64>> = dts
        .iter()
        .map(|&dt| {
            let x = half * dt.abs();
            let kmax = (x + 10.0 * x.cbrt() + 40.0) as usize;
            let bessel = bessel_j_sequence(x, kmax);
            let order = (0..=kmax).rev().find(|&k| k as f64 <= x || bessel[k].abs() > tol * 1e-2).unwrap_or(0) + 1;
            let step = C64::new(0.0, -dt.signum());
            let mut phase = C64::new(1.0, 0.0);
            (0..=order.min(kmax))
                .map(|k| {
                    let c = phase * if k == 0 { bessel[0] } else { 2.0 * bessel[k] };
                    phase *= step;
                    c
                })
                .collect()
        })
        .collect();
    let order = coeffs.iter().map(Vec::len).max().unwrap_or(0);
    let scaled = |matvec: &mut M, u: &CVector| -> Result<CVector> {
        let mut w = matvec(u)?;
        w.axpy(C64::new(-mid / half, 0.0), u, C64::new(1.0 / half, 0.0));
        Ok(w)
    };
    let mut acc: Vec<CVector> = coeffs.iter().map(|c| v * c[0]).collect();
    let mut prev = v.clone();
    let mut cur = if order > 1 { scaled(matvec, v)? } else { v.clone() };
    for k in 1..order {
        if k >= 2 {
            let mut next = scaled(matvec, &cur)?;
            next.axpy(C64::new(-1.0, 0.0), &prev, C64::new(2.0, 0.0));
            prev = std::mem::replace(&mut cur, next);
        }
        for (a, c) in acc.iter_mut().zip(&coeffs) {
            if let Some(&ck) = c.get(k) {
                a.axpy(ck, &cur, C64::new(1.0, 0.0));
            }
        }
    }
    Ok(acc.into_iter().zip(dts).map(|(a, &dt)| a * C64::from_polar(1.0, -mid * dt)).collect())
}
