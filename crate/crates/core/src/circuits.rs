//! Statevector simulation of parameterized circuits over hybrid DOFs.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hermitian_eig, hermiticity_defect, kron, CVector, ComplexMatrix, C64};
use crate::operators::{apply_local, apply_on_axes, DegreeOfFreedom, ProductTerm, SumOfProducts, STATE_DIM_CAP};

const NORM_TOL: f64 = 1e-10;

/// Normalized statevector over an ordered list of DOFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateDoc", into = "StateDoc")]
pub struct HybridState {
    dofs: Vec<DegreeOfFreedom>,
    amplitudes: CVector,
}

impl HybridState {
    pub fn new(dofs: Vec<DegreeOfFreedom>, amplitudes: CVector) -> Result<Self> {
        let dim: usize = dofs.iter().map(|d| d.dim).product();
        if dim > STATE_DIM_CAP {
            return Err(Error::Resource { dim, cap: STATE_DIM_CAP });
        }
        if amplitudes.len() != dim {
            return Err(Error::Dimension(format!("{} amplitudes for dimension {dim}", amplitudes.len())));
        }
        let norm = amplitudes.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::StateCorruption(format!("state norm {norm} differs from 1")));
        }
        Ok(Self { dofs, amplitudes })
    }

    /// Normalize `amplitudes` first.
    pub fn normalized(dofs: Vec<DegreeOfFreedom>, amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::StateCorruption("cannot normalize a zero or non-finite vector".into()));
        }
        Self::new(dofs, amplitudes / C64::new(norm, 0.0))
    }

    /// Tensor product of per-DOF vectors (each normalized by the caller's choice).
    pub fn product(dofs: Vec<DegreeOfFreedom>, locals: &[CVector]) -> Result<Self> {
        if locals.len() != dofs.len() {
            return Err(Error::Dimension("one local vector per DOF required".into()));
        }
        let mut v = CVector::from_element(1, C64::new(1.0, 0.0));
        for (d, l) in dofs.iter().zip(locals) {
            if l.len() != d.dim {
                return Err(Error::Dimension(format!("local vector for `{}` has length {}", d.label, l.len())));
            }
            v = v.kronecker(l);
        }
        Self::normalized(dofs, v)
    }

    /// Computational basis state with one index per DOF.
    pub fn basis(dofs: Vec<DegreeOfFreedom>, indices: &[usize]) -> Result<Self> {
        let locals = dofs
            .iter()
            .zip(indices)
            .map(|(d, &i)| {
                if i >= d.dim {
                    return Err(Error::Index { index: i, bound: d.dim });
                }
                let mut v = CVector::zeros(d.dim);
                v[i] = C64::new(1.0, 0.0);
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::product(dofs, &locals)
    }

    pub fn dofs(&self) -> &[DegreeOfFreedom] {
        &self.dofs
    }

    pub fn dims(&self) -> Vec<usize> {
        self.dofs.iter().map(|d| d.dim).collect()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn axis(&self, label: &str) -> Result<usize> {
        self.dofs.iter().position(|d| d.label == label).ok_or_else(|| Error::UnknownDof(label.to_string()))
    }

    /// Same amplitudes with relabeled DOF metadata of equal dimensions.
    pub fn with_dofs(&self, dofs: Vec<DegreeOfFreedom>) -> Result<Self> {
        if dofs.iter().map(|d| d.dim).collect::<Vec<_>>() != self.dims() {
            return Err(Error::Dimension("DOF dimensions differ".into()));
        }
        Ok(Self { dofs, amplitudes: self.amplitudes.clone() })
    }

    /// `re, im` interleaved.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.amplitudes.iter().flat_map(|z| [z.re, z.im]).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDoc {
    dofs: Vec<DegreeOfFreedom>,
    amplitudes: Vec<f64>,
}

impl TryFrom<StateDoc> for HybridState {
    type Error = Error;

    fn try_from(doc: StateDoc) -> Result<Self> {
        if doc.amplitudes.len() % 2 != 0 {
            return Err(Error::Dimension("interleaved amplitudes need an even length".into()));
        }
        let v = CVector::from_iterator(doc.amplitudes.len() / 2, doc.amplitudes.chunks(2).map(|p| C64::new(p[0], p[1])));
        HybridState::new(doc.dofs, v)
    }
}

impl From<HybridState> for StateDoc {
    fn from(s: HybridState) -> Self {
        StateDoc { amplitudes: s.to_interleaved(), dofs: s.dofs }
    }
}

/// `exp(theta * G)` with `G` anti-Hermitian, acting on a set of axes.
#[derive(Debug, Clone)]
pub struct Gate {
    param: usize,
    axes: Vec<usize>,
    generator: ComplexMatrix,
    // spectral data of the Hermitian K = i G
    eigvals: Vec<f64>,
    eigvecs: ComplexMatrix,
}

impl Gate {
    pub fn param(&self) -> usize {
        self.param
    }

    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn generator(&self) -> &ComplexMatrix {
        &self.generator
    }

    pub fn unitary(&self, theta: f64) -> ComplexMatrix {
        let phases = CVector::from_iterator(self.eigvals.len(), self.eigvals.iter().map(|l| C64::from_polar(1.0, -theta * l)));
        &self.eigvecs * ComplexMatrix::from_diagonal(&phases) * self.eigvecs.adjoint()
    }

    fn apply(&self, m: &ComplexMatrix, dims: &[usize], v: &CVector) -> CVector {
        if self.axes.is_empty() {
            return v * m[(0, 0)];
        }
        apply_on_axes(m, &self.axes, dims, v)
    }
}

/// Ordered gates `prod_k exp(theta_k G_k)` applied to a reference state;
/// several gates may share one parameter.
#[derive(Debug, Clone)]
pub struct AnsatzCircuit {
    reference: HybridState,
    gates: Vec<Gate>,
    n_params: usize,
}

impl AnsatzCircuit {
    pub fn new(reference: HybridState) -> Self {
        Self { reference, gates: Vec::new(), n_params: 0 }
    }

    pub fn reference(&self) -> &HybridState {
        &self.reference
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn dims(&self) -> Vec<usize> {
        self.reference.dims()
    }

    /// Append `exp(theta_param * generator)` where the generator is the full
    /// product term (coefficient included) and must be anti-Hermitian.
    pub fn push_term(&mut self, param: usize, generator: &ProductTerm) -> Result<()> {
        let mut axes = Vec::new();
        for f in &generator.factors {
            axes.push(self.reference.axis(&f.dof_label)?);
        }
        axes.sort_unstable();
        let mut m = ComplexMatrix::from_element(1, 1, generator.coefficient);
        for &a in &axes {
            let label = &self.reference.dofs[a].label;
            let f = generator.factor(label).expect("factor present");
            if f.shape() != (self.reference.dofs[a].dim, self.reference.dofs[a].dim) {
                return Err(Error::Dimension(format!("generator factor on `{label}` has the wrong size")));
            }
            m = kron(&m, f);
        }
        self.push_matrix(param, axes, m)
    }

    /// Append a gate from an explicit generator on `axes` (ascending).
    pub fn push_matrix(&mut self, param: usize, axes: Vec<usize>, generator: ComplexMatrix) -> Result<()> {
        let dims = self.dims();
        if axes.windows(2).any(|w| w[0] >= w[1]) || axes.iter().any(|&a| a >= dims.len()) {
            return Err(Error::InvalidParameter("gate axes must be distinct, ascending and in range".into()));
        }
        let sub: usize = axes.iter().map(|&a| dims[a]).product();
        if generator.shape() != (sub, sub) {
            return Err(Error::Dimension(format!("generator must be {sub}x{sub}")));
        }
        let anti = &generator + generator.adjoint();
        let scale = crate::numerics::max_abs(&generator).max(1.0);
        if crate::numerics::max_abs(&anti) > 1e-12 * scale {
            return Err(Error::Hermiticity("gate generator is not anti-Hermitian".into()));
        }
        let k = &generator * C64::new(0.0, 1.0);
        let k = (&k + k.adjoint()) * C64::new(0.5, 0.0);
        let (eigvals, eigvecs) = hermitian_eig(&k)?;
        self.n_params = self.n_params.max(param + 1);
        self.gates.push(Gate { param, axes, generator, eigvals, eigvecs });
        Ok(())
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::Dimension(format!("{} parameters given, circuit has {}", theta.len(), self.n_params)));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Contract("non-finite circuit parameter".into()));
        }
        Ok(())
    }
}

/// `prod_k exp(theta_k G_k) |phi_0>`, gates applied in declared order.
pub fn evaluate_state(circ: &AnsatzCircuit, theta: &[f64]) -> Result<HybridState> {
    circ.check_theta(theta)?;
    let dims = circ.dims();
    let mut v = circ.reference.amplitudes.clone();
    for gate in &circ.gates {
        v = gate.apply(&gate.unitary(theta[gate.param]), &dims, &v);
    }
    HybridState::new(circ.reference.dofs.clone(), v)
}

/// State and its derivatives with respect to every parameter.
pub fn state_and_jacobian(circ: &AnsatzCircuit, theta: &[f64]) -> Result<(HybridState, Vec<CVector>)> {
    circ.check_theta(theta)?;
    let dims = circ.dims();
    let mut v = circ.reference.amplitudes.clone();
    let mut jac: Vec<Option<CVector>> = vec![None; circ.n_params];
    for gate in &circ.gates {
        let u = gate.unitary(theta[gate.param]);
        v = gate.apply(&u, &dims, &v);
        for d in jac.iter_mut().flatten() {
            *d = gate.apply(&u, &dims, d);
        }
        let inserted = gate.apply(&gate.generator, &dims, &v);
        match &mut jac[gate.param] {
            Some(d) => *d += inserted,
            slot => *slot = Some(inserted),
        }
    }
    let n = v.len();
    let jac = jac.into_iter().map(|d| d.unwrap_or_else(|| CVector::zeros(n))).collect();
    Ok((HybridState::new(circ.reference.dofs.clone(), v)?, jac))
}

/// `d|phi>/d theta_k` by generator insertion.
pub fn state_jacobian(circ: &AnsatzCircuit, theta: &[f64]) -> Result<Vec<CVector>> {
    Ok(state_and_jacobian(circ, theta)?.1)
}

fn check_dims(state: &HybridState, h: &SumOfProducts) -> Result<()> {
    if state.dims() != h.dims() || h.dims() != h.ket_dims() {
        return Err(Error::Dimension(format!("state dims {:?} do not match operator dims {:?}", state.dims(), h.dims())));
    }
    Ok(())
}

/// `<phi|H|phi>`; fails if the imaginary part reaches 1e-8.
pub fn expectation(state: &HybridState, h: &SumOfProducts) -> Result<f64> {
    check_dims(state, h)?;
    let hv = h.apply(&state.amplitudes)?;
    real_part(state.amplitudes.dotc(&hv))
}

fn real_part(z: C64) -> Result<f64> {
    if z.im.abs() >= 1e-8 {
        return Err(Error::Hermiticity(format!("expectation value has imaginary part {:e}", z.im)));
    }
    Ok(z.re)
}

/// `rho_ab = sum_r phi(a, r) conj(phi(b, r))` for the DOF `label`.
pub fn reduced_density_matrix(state: &HybridState, label: &str) -> Result<ComplexMatrix> {
    let axis = state.axis(label)?;
    let dims = state.dims();
    let d = dims[axis];
    let left: usize = dims[..axis].iter().product();
    let right: usize = dims[axis + 1..].iter().product();
    let a = state.amplitudes.as_slice();
    let mut rho = ComplexMatrix::zeros(d, d);
    for l in 0..left {
        for i in 0..d {
            let si = &a[(l * d + i) * right..(l * d + i + 1) * right];
            for j in i..d {
                let sj = &a[(l * d + j) * right..(l * d + j + 1) * right];
                let z: C64 = si.iter().zip(sj).map(|(x, y)| x * y.conj()).sum();
                rho[(i, j)] += z;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            rho[(i, j)] = rho[(j, i)].conj();
        }
    }
    Ok(rho)
}

/// `<phi|O_label|phi> = tr(O rho)` for a single-DOF observable.
pub fn local_expectation(state: &HybridState, label: &str, op: &ComplexMatrix) -> Result<f64> {
    let rho = reduced_density_matrix(state, label)?;
    if op.shape() != rho.shape() {
        return Err(Error::Dimension(format!("observable on `{label}` has shape {:?}", op.shape())));
    }
    real_part((op * rho).trace())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtSpectrum {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Von Neumann entropy with natural logarithm.
    pub entropy: f64,
}

impl SchmidtSpectrum {
    /// `sum_{i < k} s_i^2`, the best rank-`k` truncation fidelity.
    pub fn truncation_fidelity(&self, k: usize) -> f64 {
        self.singular_values.iter().take(k).map(|s| s * s).sum()
    }
}

/// Schmidt decomposition between the DOFs in `cut` and the rest.
pub fn schmidt_spectrum(state: &HybridState, cut: &[&str]) -> Result<SchmidtSpectrum> {
    let n = state.dofs.len();
    let mut in_cut = vec![false; n];
    for label in cut {
        in_cut[state.axis(label)?] = true;
    }
    let n_cut = in_cut.iter().filter(|&&b| b).count();
    if n_cut == 0 || n_cut == n {
        return Err(Error::InvalidParameter("the cut must be a nonempty proper subset of the DOFs".into()));
    }
    let dims = state.dims();
    let da: usize = (0..n).filter(|&k| in_cut[k]).map(|k| dims[k]).product();
    let db: usize = (0..n).filter(|&k| !in_cut[k]).map(|k| dims[k]).product();
    let mut m = ComplexMatrix::zeros(da, db);
    let mut idx = vec![0usize; n];
    for amp in state.amplitudes.iter() {
        let (mut ia, mut ib) = (0usize, 0usize);
        for k in 0..n {
            if in_cut[k] {
                ia = ia * dims[k] + idx[k];
            } else {
                ib = ib * dims[k] + idx[k];
            }
        }
        m[(ia, ib)] = *amp;
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    // Gram matrix of the smaller side
    let gram = if da <= db { &m * m.adjoint() } else { m.adjoint() * &m };
    let gram = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
    let (vals, _) = hermitian_eig(&gram)?;
    let mut singular_values: Vec<f64> = vals.iter().rev().map(|l| l.max(0.0).sqrt()).collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let entropy = singular_values.iter().map(|s| s * s).filter(|&p| p > 1e-300).map(|p| -p * p.ln()).sum();
    Ok(SchmidtSpectrum { singular_values, entropy })
}

/// Per-term measurement bases, diagonalized once and reused.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    dims: Vec<usize>,
    terms: Vec<TermBasis>,
}

#[derive(Debug, Clone)]
struct TermBasis {
    coefficient: f64,
    // (axis, eigenvalues, eigenvectors) per factor
    factors: Vec<(usize, Vec<f64>, ComplexMatrix)>,
}

impl SamplingPlan {
    /// Requires real coefficients and Hermitian factors.
    pub fn new(h: &SumOfProducts) -> Result<Self> {
        let terms = h
            .terms()
            .iter()
            .map(|t| {
                if t.coefficient.im.abs() > 1e-14 {
                    return Err(Error::Hermiticity("sampled terms need real coefficients".into()));
                }
                let mut factors = Vec::new();
                for f in &t.factors {
                    if hermiticity_defect(&f.matrix) > 1e-12 {
                        return Err(Error::Hermiticity(format!("factor on `{}` is not Hermitian", f.dof_label)));
                    }
                    let (vals, vecs) = hermitian_eig(&f.matrix)?;
                    factors.push((h.axis(&f.dof_label)?, vals, vecs));
                }
                factors.sort_by_key(|f| f.0);
                Ok(TermBasis { coefficient: t.coefficient.re, factors })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims: h.dims(), terms })
    }

    /// Sample every term `shots` times; returns (mean, standard error).
    pub fn sample(&self, state: &HybridState, shots: usize, seed: u64) -> Result<(f64, f64)> {
        if shots == 0 {
            return Err(Error::InvalidParameter("shots must be at least 1".into()));
        }
        if state.dims() != self.dims {
            return Err(Error::Dimension("state does not match the sampling plan".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut mean, mut var) = (0.0, 0.0);
        for term in &self.terms {
            if term.factors.is_empty() {
                mean += term.coefficient;
                continue;
            }
            let mut v = state.amplitudes.clone();
            let mut dims = self.dims.clone();
            for (axis, _, vecs) in &term.factors {
                v = apply_local(&vecs.adjoint(), *axis, &dims, &v);
                dims[*axis] = vecs.nrows();
            }
            // marginal distribution over the measured axes
            let axes: Vec<usize> = term.factors.iter().map(|f| f.0).collect();
            let sub: Vec<usize> = axes.iter().map(|&a| dims[a]).collect();
            let n_out: usize = sub.iter().product();
            let mut probs = vec![0.0; n_out];
            let mut idx = vec![0usize; dims.len()];
            for amp in v.iter() {
                let mut o = 0;
                for (&a, &d) in axes.iter().zip(&sub) {
                    o = o * d + idx[a];
                }
                probs[o] += amp.norm_sqr();
                for k in (0..dims.len()).rev() {
                    idx[k] += 1;
                    if idx[k] < dims[k] {
                        break;
                    }
                    idx[k] = 0;
                }
            }
            let values: Vec<f64> = (0..n_out)
                .map(|o| {
                    let mut rem = o;
                    let mut val = term.coefficient;
                    for (f, &d) in term.factors.iter().zip(&sub).rev() {
                        val *= f.1[rem % d];
                        rem /= d;
                    }
                    val
                })
                .collect();
            let dist = WeightedIndex::new(&probs).map_err(|e| Error::StateCorruption(e.to_string()))?;
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..shots {
                let x = values[dist.sample(&mut rng)];
                s1 += x;
                s2 += x * x;
            }
            let m = s1 / shots as f64;
            let sample_var = if shots > 1 { ((s2 - shots as f64 * m * m) / (shots as f64 - 1.0)).max(0.0) } else { 0.0 };
            mean += m;
            var += sample_var / shots as f64;
        }
        Ok((mean, var.sqrt()))
    }
}

/// Shot-sampled `<phi|H|phi>` with `shots` draws per term.
pub fn sampled_expectation(state: &HybridState, h: &SumOfProducts, shots: usize, seed: u64) -> Result<(f64, f64)> {
    SamplingPlan::new(h)?.sample(state, shots, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matrix_exp, max_abs};
    use crate::operators::{build_dense, pauli, DofKind, Pauli};
    use rand::Rng;

    fn qubits(n: usize) -> Vec<DegreeOfFreedom> {
        (0..n).map(|i| DegreeOfFreedom::new(format!("q{i}"), DofKind::Spin, 2).unwrap()).collect()
    }

    fn random_state(rng: &mut ChaCha8Rng, dofs: Vec<DegreeOfFreedom>) -> HybridState {
        let n: usize = dofs.iter().map(|d| d.dim).product();
        HybridState::normalized(dofs, CVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))).unwrap()
    }

    #[test]
    fn single_gate_matches_dense_exponential() {
        let dofs = qubits(3);
        let reference = HybridState::basis(dofs, &[0, 1, 0]).unwrap();
        let mut circ = AnsatzCircuit::new(reference.clone());
        let term = ProductTerm::new(C64::new(0.0, -0.7)).with("q0", pauli(Pauli::X)).with("q2", pauli(Pauli::Y));
        circ.push_term(0, &term).unwrap();
        assert!((evaluate_state(&circ, &[0.0]).unwrap().amplitudes() - reference.amplitudes()).norm() < 1e-12);
        let theta = 0.37;
        let out = evaluate_state(&circ, &[theta]).unwrap();
        let h = SumOfProducts::new(qubits(3), vec![term]).unwrap();
        let u = matrix_exp(&(build_dense(&h).unwrap() * C64::new(theta, 0.0))).unwrap();
        assert!((out.amplitudes() - u * reference.amplitudes()).norm() < 1e-12);
        assert!(evaluate_state(&circ, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn commuting_gates_commute() {
        let reference = HybridState::basis(qubits(2), &[0, 0]).unwrap();
        let mut a = AnsatzCircuit::new(reference.clone());
        let mut b = AnsatzCircuit::new(reference);
        let x0 = ProductTerm::new(C64::new(0.0, -1.0)).with("q0", pauli(Pauli::X));
        let y1 = ProductTerm::new(C64::new(0.0, -1.0)).with("q1", pauli(Pauli::Y));
        a.push_term(0, &x0).unwrap();
        a.push_term(1, &y1).unwrap();
        b.push_term(1, &y1).unwrap();
        b.push_term(0, &x0).unwrap();
        let t = [0.3, -1.1];
        assert!((evaluate_state(&a, &t).unwrap().amplitudes() - evaluate_state(&b, &t).unwrap().amplitudes()).norm() < 1e-12);
    }

    #[test]
    fn rejects_hermitian_generators() {
        let mut c = AnsatzCircuit::new(HybridState::basis(qubits(1), &[0]).unwrap());
        assert!(c.push_term(0, &ProductTerm::new(1.0).with("q0", pauli(Pauli::X))).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dofs = qubits(3);
        let reference = random_state(&mut rng, dofs);
        let mut circ = AnsatzCircuit::new(reference);
        let ps = [Pauli::X, Pauli::Y, Pauli::Z];
        for k in 0..12 {
            let a = ps[k % 3];
            let b = ps[(k / 3) % 3];
            let term = ProductTerm::new(C64::new(0.0, -1.0)).with(format!("q{}", k % 3), pauli(a)).with(format!("q{}", (k + 1) % 3), pauli(b));
            circ.push_term(k % 7, &term).unwrap();
        }
        let theta: Vec<f64> = (0..circ.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (state, jac) = state_and_jacobian(&circ, &theta).unwrap();
        for k in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += 1e-5;
            tm[k] -= 1e-5;
            let fd =
                (evaluate_state(&circ, &tp).unwrap().into_amplitudes() - evaluate_state(&circ, &tm).unwrap().into_amplitudes()) / C64::new(2e-5, 0.0);
            assert!((fd - &jac[k]).camax() < 1e-6);
            assert!(state.amplitudes().dotc(&jac[k]).re.abs() < 1e-12);
        }
    }

    #[test]
    fn expectation_values() {
        let up = HybridState::basis(qubits(1), &[0]).unwrap();
        let z = SumOfProducts::new(qubits(1), vec![ProductTerm::new(1.0).with("q0", pauli(Pauli::Z))]).unwrap();
        assert_eq!(expectation(&up, &z).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(&mut rng, qubits(2));
        let h = SumOfProducts::new(
            qubits(2),
            vec![ProductTerm::new(0.3).with("q0", pauli(Pauli::X)).with("q1", pauli(Pauli::Z)), ProductTerm::new(-1.2).with("q1", pauli(Pauli::Y))],
        )
        .unwrap();
        let dense = s.amplitudes().dotc(&(build_dense(&h).unwrap() * s.amplitudes()));
        assert!((expectation(&s, &h).unwrap() - dense.re).abs() < 1e-12);
        let bad = SumOfProducts::new(qubits(1), vec![ProductTerm::new(C64::new(0.0, 1.0))]).unwrap();
        assert!(matches!(expectation(&up, &bad), Err(Error::Hermiticity(_))));
    }

    #[test]
    fn reduced_density_matrices() {
        let bell = HybridState::normalized(
            qubits(2),
            CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)]),
        )
        .unwrap();
        let rho = reduced_density_matrix(&bell, "q1").unwrap();
        assert!(max_abs(&(rho - ComplexMatrix::identity(2, 2) * C64::new(0.5, 0.0))) < 1e-15);
        let prod = HybridState::basis(qubits(2), &[1, 0]).unwrap();
        let rho = reduced_density_matrix(&prod, "q0").unwrap();
        assert_eq!(rho[(1, 1)], C64::new(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dofs = vec![
            DegreeOfFreedom::new("e", DofKind::ElectronSite, 3).unwrap(),
            DegreeOfFreedom::phonon("p", 4).unwrap(),
            DegreeOfFreedom::new("s", DofKind::Spin, 2).unwrap(),
        ];
        let s = random_state(&mut rng, dofs);
        let rho = reduced_density_matrix(&s, "p").unwrap();
        assert!((rho.trace().re - 1.0).abs() < 1e-10);
        let (vals, _) = hermitian_eig(&rho).unwrap();
        assert!(vals[0] >= -1e-12);
    }

    #[test]
    fn schmidt_spectra() {
        let prod = HybridState::basis(qubits(2), &[1, 0]).unwrap();
        let sp = schmidt_spectrum(&prod, &["q1"]).unwrap();
        assert!((sp.singular_values[0] - 1.0).abs() < 1e-12 && sp.entropy.abs() < 1e-12);
        let bell = HybridState::normalized(
            qubits(2),
            CVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]),
        )
        .unwrap();
        let sp = schmidt_spectrum(&bell, &["q0"]).unwrap();
        assert!((sp.entropy - 2f64.ln()).abs() < 1e-12);
        assert!((sp.singular_values[1] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(schmidt_spectrum(&bell, &[]).is_err());
        assert!(schmidt_spectrum(&bell, &["q0", "q1"]).is_err());
    }

    #[test]
    fn entropy_invariant_under_local_unitaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = random_state(&mut rng, qubits(4));
        let before = schmidt_spectrum(&s, &["q1", "q3"]).unwrap().entropy;
        let gen = ComplexMatrix::from_fn(4, 4, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let u = matrix_exp(&(&gen - gen.adjoint())).unwrap();
        let v = apply_on_axes(&u, &[1, 3], &[2, 2, 2, 2], s.amplitudes());
        let after = schmidt_spectrum(&HybridState::new(qubits(4), v).unwrap(), &["q1", "q3"]).unwrap().entropy;
        assert!((before - after).abs() < 1e-10);
    }

    #[test]
    fn sampling_is_deterministic_and_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mut rng, qubits(2));
        let h = SumOfProducts::new(
            qubits(2),
            vec![
                ProductTerm::new(0.5).with("q0", pauli(Pauli::X)).with("q1", pauli(Pauli::Z)),
                ProductTerm::new(-0.8).with("q1", pauli(Pauli::Y)),
                ProductTerm::new(0.25),
            ],
        )
        .unwrap();
        let exact = expectation(&s, &h).unwrap();
        let plan = SamplingPlan::new(&h).unwrap();
        assert_eq!(plan.sample(&s, 100, 7).unwrap(), plan.sample(&s, 100, 7).unwrap());
        let mut inside = 0;
        for seed in 0..100 {
            let (m, se) = plan.sample(&s, 4096, seed).unwrap();
            if (m - exact).abs() < 5.0 * se {
                inside += 1;
            }
        }
        assert!(inside >= 99);
        // eigenstate of Z: zero variance
        let up = HybridState::basis(qubits(1), &[0]).unwrap();
        let z = SumOfProducts::new(qubits(1), vec![ProductTerm::new(2.0).with("q0", pauli(Pauli::Z))]).unwrap();
        assert_eq!(sampled_expectation(&up, &z, 50, 3).unwrap(), (2.0, 0.0));
    }

    #[test]
    fn state_json_interleaves() {
        let s = HybridState::normalized(qubits(1), CVector::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)])).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"amplitudes\":[0.6,0.0,0.0,0.8]"));
        let back: HybridState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
