//! Holstein and spin-boson model builders, ansatz factories, bath
//! discretization and brute-force oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr};

use crate::circuits::{AnsatzCircuit, HybridState};
use crate::encoder::{encode_local_operator, EncoderSet};
use crate::error::{Error, Result};
use crate::numerics::{chebyshev_propagate_many, hermitian_eig, krylov_propagate, lanczos_ground, CVector, ComplexMatrix, KrylovOptions, C64};
use crate::operators::{
    boson_momentum, boson_position, build_dense, number_operator, pauli, pauli_string, site_operator, DegreeOfFreedom, DofKind, LocalOperator, Pauli,
    ProductTerm, SumOfProducts, DENSE_DIM_CAP, STATE_DIM_CAP,
};

pub const ELECTRON: &str = "el";
pub const SPIN: &str = "spin";

pub fn holstein_phonon(i: usize) -> String {
    format!("ph{i}")
}

pub fn bath_mode(j: usize) -> String {
    format!("m{j}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolsteinParams {
    pub n_sites: usize,
    pub v_hop: f64,
    pub omega: f64,
    pub g: f64,
    pub n_levels: usize,
    pub periodic: bool,
}

impl HolsteinParams {
    pub fn ring(n_sites: usize, g: f64, n_levels: usize) -> Self {
        Self { n_sites, v_hop: 1.0, omega: 1.0, g, n_levels, periodic: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::InvalidParameter(format!("n_sites must be at least 2, got {}", self.n_sites)));
        }
        if self.n_levels < 2 {
            return Err(Error::Truncation(self.n_levels));
        }
        for (name, v) in [("v_hop", self.v_hop), ("omega", self.omega), ("g", self.g)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Nearest-neighbour bonds; a periodic 2-site chain has a single bond.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let n = self.n_sites;
        let mut out: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        if self.periodic && n > 2 {
            out.push((n - 1, 0));
        }
        out
    }

    pub fn dofs(&self) -> Result<Vec<DegreeOfFreedom>> {
        let mut dofs = vec![DegreeOfFreedom::new(ELECTRON, DofKind::ElectronSite, self.n_sites)?];
        for i in 0..self.n_sites {
            dofs.push(DegreeOfFreedom::phonon(holstein_phonon(i), self.n_levels)?);
        }
        Ok(dofs)
    }
}

/// `-V sum_<ij> (a_i^dag a_j + h.c.) + sum_i w b_i^dag b_i + sum_i g w a_i^dag a_i (b_i^dag + b_i)`
/// with one electron in the site basis.
pub fn build_holstein(p: &HolsteinParams) -> Result<SumOfProducts> {
    p.validate()?;
    let n = p.n_sites;
    let mut terms = Vec::new();
    for (i, j) in p.bonds() {
        terms.push(ProductTerm::new(-p.v_hop).with(ELECTRON, site_operator(n, i, j) + site_operator(n, j, i)));
    }
    let num = number_operator(p.n_levels)?;
    for i in 0..n {
        terms.push(ProductTerm::new(p.omega).with(holstein_phonon(i), num.clone()));
    }
    let x = boson_position(p.n_levels)?;
    for i in 0..n {
        terms.push(ProductTerm::new(p.g * p.omega).with(ELECTRON, site_operator(n, i, i)).with(holstein_phonon(i), x.clone()));
    }
    SumOfProducts::new(p.dofs()?, terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathMode {
    pub omega: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinBosonParams {
    pub epsilon: f64,
    pub delta: f64,
    pub modes: Vec<BathMode>,
    pub n_levels: usize,
}

impl SpinBosonParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels < 2 {
            return Err(Error::Truncation(self.n_levels));
        }
        if !self.epsilon.is_finite() || !self.delta.is_finite() {
            return Err(Error::InvalidParameter("epsilon and delta must be finite".into()));
        }
        for (j, m) in self.modes.iter().enumerate() {
            if !(m.omega > 0.0) || !m.omega.is_finite() || !m.g.is_finite() {
                return Err(Error::InvalidParameter(format!("mode {j} needs omega > 0 and finite g")));
            }
        }
        Ok(())
    }

    /// Coupling constants `c_j = g_j w_j`.
    pub fn couplings(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.g * m.omega).collect()
    }

    pub fn dofs(&self) -> Result<Vec<DegreeOfFreedom>> {
        let mut dofs = vec![DegreeOfFreedom::new(SPIN, DofKind::Spin, 2)?];
        for j in 0..self.modes.len() {
            dofs.push(DegreeOfFreedom::phonon(bath_mode(j), self.n_levels)?);
        }
        Ok(dofs)
    }
}

/// `(e/2) sz + D sx + sum_j g_j w_j sz (b_j^dag + b_j) + sum_j w_j b_j^dag b_j`.
pub fn build_spin_boson(p: &SpinBosonParams) -> Result<SumOfProducts> {
    p.validate()?;
    let mut terms = vec![ProductTerm::new(0.5 * p.epsilon).with(SPIN, pauli(Pauli::Z)), ProductTerm::new(p.delta).with(SPIN, pauli(Pauli::X))];
    let x = boson_position(p.n_levels)?;
    let num = number_operator(p.n_levels)?;
    for (j, m) in p.modes.iter().enumerate() {
        terms.push(ProductTerm::new(m.g * m.omega).with(SPIN, pauli(Pauli::Z)).with(bath_mode(j), x.clone()));
        terms.push(ProductTerm::new(m.omega).with(bath_mode(j), num.clone()));
    }
    SumOfProducts::new(p.dofs()?, terms)
}

/// `J(w) = (pi/2) a w^s w_c^(1-s) exp(-w/w_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralDensity {
    pub alpha: f64,
    pub s: f64,
    pub omega_c: f64,
}

impl SpectralDensity {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.s > 0.0 && self.omega_c > 0.0) || !(self.alpha * self.s * self.omega_c).is_finite() {
            return Err(Error::InvalidParameter("spectral density needs alpha, s, omega_c > 0".into()));
        }
        Ok(())
    }

    pub fn eval(&self, w: f64) -> f64 {
        std::f64::consts::FRAC_PI_2 * self.alpha * w.powf(self.s) * self.omega_c.powf(1.0 - self.s) * (-w / self.omega_c).exp()
    }

    /// `W = int_0^inf J(w)/w dw = (pi/2) a Gamma(s) w_c`.
    pub fn total_weight(&self) -> f64 {
        std::f64::consts::FRAC_PI_2 * self.alpha * gamma(self.s) * self.omega_c
    }
}

/// Equal-weight discretization of `J(w)/w` into `(omega_j, g_j)` pairs.
pub fn discretize_sub_ohmic(sd: &SpectralDensity, n_modes: usize) -> Result<Vec<BathMode>> {
    sd.validate()?;
    if n_modes == 0 {
        return Err(Error::InvalidParameter("n_modes must be at least 1".into()));
    }
    let w_total = sd.total_weight();
    (0..n_modes)
        .map(|j| {
            let target = (j as f64 + 0.5) / n_modes as f64;
            let x = invert_lower_gamma(sd.s, target)?;
            let omega = x * sd.omega_c;
            let c2 = 2.0 / std::f64::consts::PI * omega * w_total / n_modes as f64;
            Ok(BathMode { omega, g: c2.sqrt() / omega })
        })
        .collect()
}

/// Solve `P(s, x) = p` for `x` by bisection on a log scale.
fn invert_lower_gamma(s: f64, p: f64) -> Result<f64> {
    let (mut lo, mut hi) = (1e-300f64, 1.0f64);
    while gamma_lr(s, hi) < p {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidParameter("quantile search did not bracket".into()));
        }
    }
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if gamma_lr(s, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::InvalidParameter("quantile bisection did not converge".into()))
}

/// Options for the Holstein ansatz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolsteinAnsatzOptions {
    pub n_layers: usize,
    /// One displacement parameter per layer shared by all sites.
    pub shared_displacement: bool,
    pub hopping: bool,
}

impl Default for HolsteinAnsatzOptions {
    fn default() -> Self {
        Self { n_layers: 3, shared_displacement: false, hopping: true }
    }
}

/// Encoded-space DOFs: encoded modes shrink to `2^Nl`.
pub fn encoded_dofs(dofs: &[DegreeOfFreedom], encs: &EncoderSet) -> Vec<DegreeOfFreedom> {
    dofs.iter()
        .map(|d| match encs.get(&d.label) {
            Some(e) => DegreeOfFreedom { label: d.label.clone(), kind: d.kind, dim: e.width(), ket_dim: None },
            None => d.clone(),
        })
        .collect()
}

/// Uniform electron superposition times qubit `|0...0>` on every mode.
pub fn holstein_reference(p: &HolsteinParams, encs: &EncoderSet) -> Result<HybridState> {
    let dofs = encoded_dofs(&p.dofs()?, encs);
    let locals: Vec<CVector> = dofs
        .iter()
        .map(|d| {
            if d.kind == DofKind::ElectronSite {
                CVector::from_element(d.dim, C64::new(1.0, 0.0))
            } else {
                let mut v = CVector::zeros(d.dim);
                v[0] = C64::new(1.0, 0.0);
                v
            }
        })
        .collect();
    HybridState::product(dofs, &locals)
}

/// Layers of displacement gates `a_j^dag a_j (x) C^dag (b^dag - b) C`
/// followed by Givens hopping gates `a_j^dag a_k - a_k^dag a_j` on each bond.
pub fn holstein_ansatz(p: &HolsteinParams, n_layers: usize, encs: &EncoderSet) -> Result<AnsatzCircuit> {
    holstein_ansatz_with(p, encs, &HolsteinAnsatzOptions { n_layers, ..HolsteinAnsatzOptions::default() })
}

pub fn holstein_ansatz_with(p: &HolsteinParams, encs: &EncoderSet, opts: &HolsteinAnsatzOptions) -> Result<AnsatzCircuit> {
    p.validate()?;
    let n = p.n_sites;
    let mut circ = AnsatzCircuit::new(holstein_reference(p, encs)?);
    let momentum = boson_momentum(p.n_levels)?;
    let displacement: Vec<ComplexMatrix> = (0..n)
        .map(|i| match encs.get(&holstein_phonon(i)) {
            Some(enc) => encode_local_operator(&LocalOperator::new(holstein_phonon(i), momentum.clone()), enc),
            None => Ok(momentum.clone()),
        })
        .collect::<Result<_>>()?;
    let mut k = 0;
    for _ in 0..opts.n_layers {
        let shared = k;
        for (i, d) in displacement.iter().enumerate() {
            let param = if opts.shared_displacement { shared } else { k + i };
            let term = ProductTerm::new(1.0).with(ELECTRON, site_operator(n, i, i)).with(holstein_phonon(i), d.clone());
            circ.push_term(param, &term)?;
        }
        k += if opts.shared_displacement { 1 } else { n };
        if opts.hopping {
            for (i, j) in p.bonds() {
                let term = ProductTerm::new(1.0).with(ELECTRON, site_operator(n, i, j) - site_operator(n, j, i));
                circ.push_term(k, &term)?;
                k += 1;
            }
        }
    }
    Ok(circ)
}

/// Variational Hamiltonian ansatz: per layer one gate `exp(-i theta h~_x)` per
/// term (coefficient dropped) and the full Pauli pool on every encoded
/// phonon register.
pub fn vha_ansatz(h_encoded: &SumOfProducts, n_layers: usize, reference: HybridState) -> Result<AnsatzCircuit> {
    if reference.dims() != h_encoded.dims() {
        return Err(Error::Dimension("reference state does not match the encoded Hamiltonian".into()));
    }
    let mut pool = Vec::new();
    for (axis, d) in h_encoded.dofs().iter().enumerate() {
        if d.kind != DofKind::Phonon {
            continue;
        }
        if !d.dim.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("phonon register `{}` is not a qubit register", d.label)));
        }
        let nq = d.dim.trailing_zeros() as usize;
        for code in 0..(1usize << (2 * nq)) {
            let string: Vec<Pauli> = (0..nq).map(|q| Pauli::ALL[(code >> (2 * (nq - 1 - q))) & 3]).collect();
            pool.push((axis, pauli_string(&string)));
        }
    }
    let mut circ = AnsatzCircuit::new(reference);
    let mut k = 0;
    for _ in 0..n_layers {
        for term in h_encoded.terms() {
            let mut gen = ProductTerm::new(C64::new(0.0, -1.0));
            for f in &term.factors {
                if crate::numerics::hermiticity_defect(&f.matrix) > 1e-12 {
                    return Err(Error::Hermiticity(format!("factor on `{}` is not Hermitian", f.dof_label)));
                }
                gen = gen.with(f.dof_label.clone(), f.matrix.clone());
            }
            circ.push_term(k, &gen)?;
            k += 1;
        }
        for (axis, p) in &pool {
            circ.push_matrix(k, vec![*axis], p * C64::new(0.0, -1.0))?;
            k += 1;
        }
    }
    Ok(circ)
}

/// Spin up times the vacuum (qubit `|0...0>`) on every mode.
pub fn spin_up_vacuum(dofs: Vec<DegreeOfFreedom>) -> Result<HybridState> {
    let idx = vec![0; dofs.len()];
    HybridState::basis(dofs, &idx)
}

fn check_cap(h: &SumOfProducts) -> Result<usize> {
    let dim = h.total_dim();
    if dim > STATE_DIM_CAP {
        return Err(Error::Resource { dim, cap: STATE_DIM_CAP });
    }
    if h.dims() != h.ket_dims() {
        return Err(Error::Dimension("oracles need a square operator".into()));
    }
    Ok(dim)
}

/// Lowest eigenpair by dense diagonalization or restarted Lanczos.
pub fn exact_ground_state(h: &SumOfProducts) -> Result<(f64, HybridState)> {
    let dim = check_cap(h)?;
    let dofs = h.dofs().to_vec();
    if dim <= DENSE_DIM_CAP {
        let (vals, vecs) = hermitian_eig(&build_dense(h)?)?;
        return Ok((vals[0], HybridState::normalized(dofs, vecs.column(0).into_owned())?));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = CVector::from_fn(dim, |_, _| C64::new(1.0 + 0.1 * rng.random_range(-1.0..1.0), 0.0));
    let (e, v) = lanczos_ground(|x| h.apply(x), &start, &KrylovOptions { tol: 1e-9, ..KrylovOptions::default() })?;
    Ok((e, HybridState::normalized(dofs, v)?))
}

/// `sum_x |c_x| prod ||h_x||_2`, an upper bound on the spectral radius.
pub fn spectral_radius_bound(h: &SumOfProducts) -> Result<f64> {
    let mut total = 0.0;
    for t in h.terms() {
        let mut r = t.coefficient.norm();
        for f in &t.factors {
            let (vals, _) = hermitian_eig(&(f.matrix.adjoint() * &f.matrix))?;
            r *= vals.last().copied().unwrap_or(0.0).max(0.0).sqrt();
        }
        total += r;
    }
    Ok(total)
}

/// Dimension up to which propagation diagonalizes densely.
const EIG_PROPAGATION_CAP: usize = 1024;
/// Dimension up to which propagation uses Krylov stepping; Chebyshev beyond.
const KRYLOV_PROPAGATION_CAP: usize = 1 << 18;

/// `exp(-i H t) |psi0>`.
pub fn exact_propagate(h: &SumOfProducts, psi0: &HybridState, t: f64) -> Result<HybridState> {
    Ok(exact_trajectory(h, psi0, &[t])?.pop().expect("one sample"))
}

/// States at each of `times` (any order, measured from 0).
pub fn exact_trajectory(h: &SumOfProducts, psi0: &HybridState, times: &[f64]) -> Result<Vec<HybridState>> {
    let dim = check_cap(h)?;
    if psi0.dims() != h.dims() {
        return Err(Error::Dimension("state and Hamiltonian dims differ".into()));
    }
    let dofs = psi0.dofs().to_vec();
    let v0 = psi0.amplitudes();
    if dim <= EIG_PROPAGATION_CAP {
        let (vals, vecs) = hermitian_eig(&build_dense(h)?)?;
        let coeffs = vecs.adjoint() * v0;
        return times
            .iter()
            .map(|&t| {
                let phased = CVector::from_iterator(dim, coeffs.iter().zip(&vals).map(|(c, l)| c * C64::from_polar(1.0, -l * t)));
                HybridState::normalized(dofs.clone(), &vecs * phased)
            })
            .collect();
    }
    if dim > KRYLOV_PROPAGATION_CAP {
        let bound = spectral_radius_bound(h)? * 1.01 + 1e-12;
        return chebyshev_propagate_many(|x| h.apply(x), v0, times, (-bound, bound), 1e-12)?
            .into_iter()
            .map(|v| HybridState::normalized(dofs.clone(), v))
            .collect();
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut out: Vec<Option<HybridState>> = vec![None; times.len()];
    let (mut t_now, mut v) = (0.0, v0.clone());
    for idx in order {
        let dt = times[idx] - t_now;
        if dt != 0.0 {
            v = krylov_propagate(|x| h.apply(x), &v, dt, &KrylovOptions { tol: 1e-11, ..KrylovOptions::default() })?;
            t_now = times[idx];
        }
        out[idx] = Some(HybridState::normalized(dofs.clone(), v.clone())?);
    }
    Ok(out.into_iter().map(|s| s.expect("filled")).collect())
}
