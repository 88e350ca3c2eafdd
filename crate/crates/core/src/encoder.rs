//! Variational basis state encoders.
//!
//! An encoder for mode `l` is an isometry `C` of shape `N x 2^Nl`: column
//! `n` holds the phonon state that the qubit register maps to `|n>`. The
//! encoded local operator is `C^dagger h C` and the projector onto the
//! encoded subspace is `P = C C^dagger`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::circuits::HybridState;
use crate::error::{Error, Result};
use crate::numerics::{
    bfgs_minimize, hermitian_eig, max_abs, orthonormality_defect, qr_orthonormalize, solve_nonlinear_with, BfgsOptions, CVector, ComplexMatrix,
    DfSaneOptions, C64,
};
use crate::operators::{apply_local, gray_code, DegreeOfFreedom, DofKind, LocalOperator, ProductTerm, SumOfProducts};

/// Tolerance on `C^dagger C = I` for every stored encoder.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Diagonal shift added to the reduced density matrix in the equation of motion.
pub const RHO_REGULARIZATION: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BasisEncoder {
    dof_label: String,
    n_qubits: usize,
    c: ComplexMatrix,
}

impl BasisEncoder {
    /// Wrap an isometry; fails when the columns are not orthonormal.
    pub fn new(dof_label: impl Into<String>, n_qubits: usize, c: ComplexMatrix) -> Result<Self> {
        let dof_label = dof_label.into();
        let q = checked_width(n_qubits)?;
        if c.ncols() != q {
            return Err(Error::Dimension(format!("encoder for {n_qubits} qubits needs {q} columns, got {}", c.ncols())));
        }
        if c.nrows() < q {
            return Err(Error::Capacity { levels: c.nrows(), qubits: n_qubits });
        }
        if !crate::numerics::is_finite(&c) {
            return Err(Error::Contract("encoder has non-finite entries".into()));
        }
        let defect = orthonormality_defect(&c);
        if defect >= ORTHONORMALITY_TOL {
            return Err(Error::Contract(format!("encoder columns not orthonormal (defect {defect:e})")));
        }
        Ok(Self { dof_label, n_qubits, c })
    }

    /// Orthonormalize `c` by QR, then wrap it.
    pub fn from_raw(dof_label: impl Into<String>, n_qubits: usize, c: &ComplexMatrix) -> Result<Self> {
        Self::new(dof_label, n_qubits, qr_orthonormalize(c)?)
    }

    /// Wrap a nearly orthonormal matrix without checking, for intermediate
    /// integrator stages. Shapes must already agree.
    pub(crate) fn unchecked(dof_label: impl Into<String>, n_qubits: usize, c: ComplexMatrix) -> Self {
        debug_assert_eq!(c.ncols(), 1 << n_qubits);
        Self { dof_label: dof_label.into(), n_qubits, c }
    }

    pub fn dof_label(&self) -> &str {
        &self.dof_label
    }

    pub fn n_levels(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Encoded dimension `2^Nl`.
    pub fn width(&self) -> usize {
        self.c.ncols()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.c
    }

    pub fn is_full_rank(&self) -> bool {
        self.c.nrows() == self.c.ncols()
    }

    pub fn is_real(&self) -> bool {
        self.c.iter().all(|z| z.im == 0.0)
    }
}

fn checked_width(n_qubits: usize) -> Result<usize> {
    if n_qubits == 0 || n_qubits > 16 {
        return Err(Error::InvalidParameter(format!("qubits per mode must be in 1..=16, got {n_qubits}")));
    }
    Ok(1 << n_qubits)
}

fn require_phonon(dof: &DegreeOfFreedom) -> Result<()> {
    if dof.kind != DofKind::Phonon {
        return Err(Error::InvalidParameter(format!("`{}` is not a phonon mode", dof.label)));
    }
    Ok(())
}

/// `C_mn = delta_mn`.
pub fn identity_encoder(dof: &DegreeOfFreedom, n_qubits: usize) -> Result<BasisEncoder> {
    require_phonon(dof)?;
    let q = checked_width(n_qubits)?;
    if dof.dim < q {
        return Err(Error::Capacity { levels: dof.dim, qubits: n_qubits });
    }
    BasisEncoder::new(dof.label.clone(), n_qubits, ComplexMatrix::identity(dof.dim, q))
}

/// Fixed Gray-code relabeling `C_{m, gray(m)} = 1` on a mode with `N = 2^Nl`.
pub fn gray_encoder(dof: &DegreeOfFreedom, n_qubits: usize) -> Result<BasisEncoder> {
    require_phonon(dof)?;
    let q = checked_width(n_qubits)?;
    if dof.dim != q {
        return Err(Error::InvalidParameter(format!("Gray encoding of `{}` needs exactly {q} levels, got {}", dof.label, dof.dim)));
    }
    let mut c = ComplexMatrix::zeros(q, q);
    for m in 0..q {
        c[(m, gray_code(m))] = C64::new(1.0, 0.0);
    }
    BasisEncoder::new(dof.label.clone(), n_qubits, c)
}

/// `P = C C^dagger`.
pub fn projector(enc: &BasisEncoder) -> ComplexMatrix {
    &enc.c * enc.c.adjoint()
}

/// `C^dagger h C`.
pub fn encode_local_operator(op: &LocalOperator, enc: &BasisEncoder) -> Result<ComplexMatrix> {
    if op.dof_label != enc.dof_label {
        return Err(Error::InvalidParameter(format!("operator on `{}` given to the encoder of `{}`", op.dof_label, enc.dof_label)));
    }
    encode_matrix(&op.matrix, enc)
}

fn encode_matrix(h: &ComplexMatrix, enc: &BasisEncoder) -> Result<ComplexMatrix> {
    if h.shape() != (enc.n_levels(), enc.n_levels()) {
        return Err(Error::Dimension(format!("{}x{} operator for an encoder with {} levels", h.nrows(), h.ncols(), enc.n_levels())));
    }
    Ok(enc.c.adjoint() * h * &enc.c)
}

/// Encoders keyed by DOF label, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncoderSet {
    encoders: Vec<BasisEncoder>,
}

impl EncoderSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace the encoder of its DOF.
    pub fn insert(&mut self, enc: BasisEncoder) {
        match self.encoders.iter_mut().find(|e| e.dof_label == enc.dof_label) {
            Some(slot) => *slot = enc,
            None => self.encoders.push(enc),
        }
    }

    pub fn with(mut self, enc: BasisEncoder) -> Self {
        self.insert(enc);
        self
    }

    pub fn get(&self, label: &str) -> Option<&BasisEncoder> {
        self.encoders.iter().find(|e| e.dof_label == label)
    }

    pub fn require(&self, label: &str) -> Result<&BasisEncoder> {
        self.get(label).ok_or_else(|| Error::InvalidParameter(format!("`{label}` has no encoder")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &BasisEncoder> {
        self.encoders.iter()
    }

    pub fn labels(&self) -> Vec<String> {
        self.encoders.iter().map(|e| e.dof_label.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.encoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoders.is_empty()
    }

    /// Identity encoders with `n_qubits` on every phonon mode of `h`.
    pub fn identity_for(h: &SumOfProducts, n_qubits: usize) -> Result<Self> {
        let mut set = Self::new();
        for dof in h.dofs().iter().filter(|d| d.kind == DofKind::Phonon) {
            set.insert(identity_encoder(dof, n_qubits)?);
        }
        Ok(set)
    }

    /// Gray encoders on every phonon mode of `h` (each must have `2^n_qubits` levels).
    pub fn gray_for(h: &SumOfProducts, n_qubits: usize) -> Result<Self> {
        let mut set = Self::new();
        for dof in h.dofs().iter().filter(|d| d.kind == DofKind::Phonon) {
            set.insert(gray_encoder(dof, n_qubits)?);
        }
        Ok(set)
    }

    fn check_against(&self, h: &SumOfProducts) -> Result<()> {
        for enc in &self.encoders {
            let dof = h.dof(&enc.dof_label)?;
            require_phonon(dof)?;
            if dof.dim != enc.n_levels() {
                return Err(Error::Dimension(format!("encoder of `{}` has {} levels, the mode has {}", enc.dof_label, enc.n_levels(), dof.dim)));
            }
        }
        Ok(())
    }
}

fn encoded_dof(dof: &DegreeOfFreedom, enc: &BasisEncoder) -> DegreeOfFreedom {
    DegreeOfFreedom { label: dof.label.clone(), kind: dof.kind, dim: enc.width(), ket_dim: None }
}

/// `H~`: every factor on an encoded mode becomes `C^dagger h C`.
pub fn encode_hamiltonian(h: &SumOfProducts, encs: &EncoderSet) -> Result<SumOfProducts> {
    encs.check_against(h)?;
    let dofs = h
        .dofs()
        .iter()
        .map(|d| match encs.get(&d.label) {
            Some(enc) => encoded_dof(d, enc),
            None => d.clone(),
        })
        .collect();
    let terms = h
        .terms()
        .iter()
        .map(|t| {
            let mut out = ProductTerm::new(t.coefficient);
            for f in &t.factors {
                let m = match encs.get(&f.dof_label) {
                    Some(enc) => encode_matrix(&f.matrix, enc)?,
                    None => f.matrix.clone(),
                };
                out = out.with(f.dof_label.clone(), m);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    SumOfProducts::new(dofs, terms)
}

/// `H~'[l]`: all modes encoded except the bra side of `l`, whose factors
/// become the rectangular `h C` (or `C` where the term has no factor).
pub fn half_encoded_hamiltonian(h: &SumOfProducts, encs: &EncoderSet, label: &str) -> Result<SumOfProducts> {
    let enc_l = encs.require(label)?;
    let full = encode_hamiltonian(h, encs)?;
    let dofs = full
        .dofs()
        .iter()
        .map(|d| {
            if d.label == label {
                DegreeOfFreedom { label: d.label.clone(), kind: d.kind, dim: enc_l.n_levels(), ket_dim: Some(enc_l.width()) }
            } else {
                d.clone()
            }
        })
        .collect();
    let terms = h
        .terms()
        .iter()
        .zip(full.terms())
        .map(|(raw, enc_term)| {
            let mut out = ProductTerm::new(enc_term.coefficient);
            for f in &enc_term.factors {
                if f.dof_label != label {
                    out = out.with(f.dof_label.clone(), f.matrix.clone());
                }
            }
            let rect = match raw.factor(label) {
                Some(m) => m * enc_l.matrix(),
                None => enc_l.matrix().clone(),
            };
            Ok(out.with(label, rect))
        })
        .collect::<Result<Vec<_>>>()?;
    SumOfProducts::new(dofs, terms)
}

/// Per-mode measurement data: `J[x]` for every term and the contracted `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTables {
    pub dof_label: String,
    pub j_table: Vec<ComplexMatrix>,
    pub g_matrix: ComplexMatrix,
}

fn check_state(state: &HybridState, h_enc: &SumOfProducts) -> Result<()> {
    if state.dims() != h_enc.dims() {
        return Err(Error::Dimension(format!("state dims {:?} do not match the encoded operator dims {:?}", state.dims(), h_enc.dims())));
    }
    Ok(())
}

fn j_tables_encoded(state: &HybridState, h_enc: &SumOfProducts, label: &str) -> Result<Vec<ComplexMatrix>> {
    check_state(state, h_enc)?;
    let axis = h_enc.axis(label)?;
    let dims = h_enc.dims();
    let phi = state.amplitudes();
    h_enc
        .terms()
        .iter()
        .map(|term| {
            let mut chi = phi.clone();
            for (k, dof) in h_enc.dofs().iter().enumerate() {
                if k == axis {
                    continue;
                }
                if let Some(m) = term.factor(&dof.label) {
                    chi = apply_local(m, k, &dims, &chi);
                }
            }
            Ok(axis_overlap(phi, &chi, axis, &dims))
        })
        .collect()
}

/// `O[n][n'] = sum_r conj(a(n, r)) b(n', r)` with `n` on `axis`.
fn axis_overlap(a: &CVector, b: &CVector, axis: usize, dims: &[usize]) -> ComplexMatrix {
    let d = dims[axis];
    let left: usize = dims[..axis].iter().product();
    let right: usize = dims[axis + 1..].iter().product();
    let mut out = ComplexMatrix::zeros(d, d);
    for l in 0..left {
        for n in 0..d {
            let sa = &a.as_slice()[(l * d + n) * right..(l * d + n + 1) * right];
            for np in 0..d {
                let sb = &b.as_slice()[(l * d + np) * right..(l * d + np + 1) * right];
                out[(n, np)] += sa.iter().zip(sb).map(|(x, y)| x.conj() * y).sum::<C64>();
            }
        }
    }
    out
}

/// `J[l]_{x n n'} = <phi|n>_l <n'|_l prod_{k != l} h~[k]_x |phi>` for each term,
/// without the term coefficient.
pub fn compute_j_table(state: &HybridState, h: &SumOfProducts, encs: &EncoderSet, label: &str) -> Result<Vec<ComplexMatrix>> {
    encs.require(label)?;
    j_tables_encoded(state, &encode_hamiltonian(h, encs)?, label)
}

/// `G[l] = sum_x c_x h[l]_x C J[l]_x^T`.
pub fn compute_g_matrix(j_table: &[ComplexMatrix], h: &SumOfProducts, enc: &BasisEncoder) -> Result<ComplexMatrix> {
    ModeProblem::from_tables(h, enc, j_table.to_vec())?.g(enc.matrix())
}

/// Both tables for mode `label` at `state`.
pub fn measurement_tables(state: &HybridState, h: &SumOfProducts, encs: &EncoderSet, label: &str) -> Result<MeasurementTables> {
    let j_table = compute_j_table(state, h, encs, label)?;
    let g_matrix = compute_g_matrix(&j_table, h, encs.require(label)?)?;
    Ok(MeasurementTables { dof_label: label.to_string(), j_table, g_matrix })
}

/// `(1 - P) G`.
pub fn static_residual(g: &ComplexMatrix, enc: &BasisEncoder) -> Result<ComplexMatrix> {
    if g.shape() != enc.c.shape() {
        return Err(Error::Dimension("G and encoder shapes differ".into()));
    }
    Ok(g - &enc.c * (enc.c.adjoint() * g))
}

/// The encoder problem for one mode with the hybrid state held fixed:
/// the energy is the Hermitian form `E(W) = Re <W, G(W)>`.
struct ModeProblem {
    coeffs: Vec<C64>,
    factors: Vec<Option<ComplexMatrix>>,
    j: Vec<ComplexMatrix>,
    n_levels: usize,
    width: usize,
}

impl ModeProblem {
    fn from_tables(h: &SumOfProducts, enc: &BasisEncoder, j: Vec<ComplexMatrix>) -> Result<Self> {
        if j.len() != h.terms().len() {
            return Err(Error::Dimension(format!("{} J tables for {} terms", j.len(), h.terms().len())));
        }
        let q = enc.width();
        if j.iter().any(|m| m.shape() != (q, q)) {
            return Err(Error::Dimension("J table and encoder width differ".into()));
        }
        let label = enc.dof_label();
        if h.dof(label)?.dim != enc.n_levels() {
            return Err(Error::Dimension("encoder and mode dimension differ".into()));
        }
        Ok(Self {
            coeffs: h.terms().iter().map(|t| t.coefficient).collect(),
            factors: h.terms().iter().map(|t| t.factor(label).cloned()).collect(),
            j,
            n_levels: enc.n_levels(),
            width: q,
        })
    }

    fn g(&self, w: &ComplexMatrix) -> Result<ComplexMatrix> {
        if w.shape() != (self.n_levels, self.width) {
            return Err(Error::Dimension("encoder shape mismatch".into()));
        }
        let mut g = ComplexMatrix::zeros(self.n_levels, self.width);
        for ((c, f), j) in self.coeffs.iter().zip(&self.factors).zip(&self.j) {
            let wj = w * j.transpose();
            match f {
                Some(h) => g += (h * wj) * *c,
                None => g += wj * *c,
            }
        }
        Ok(g)
    }

    fn energy(&self, w: &ComplexMatrix) -> Result<f64> {
        Ok(frob_re(w, &self.g(w)?))
    }

    fn residual(&self, w: &ComplexMatrix) -> Result<ComplexMatrix> {
        let g = self.g(w)?;
        Ok(&g - w * (w.adjoint() * &g))
    }
}

/// `Re tr(a^dagger b)`.
fn frob_re(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Real/complex packing of an `N x q` matrix into solver variables.
#[derive(Clone, Copy)]
struct Packing {
    rows: usize,
    cols: usize,
    real: bool,
}

impl Packing {
    fn len(&self) -> usize {
        self.rows * self.cols * if self.real { 1 } else { 2 }
    }

    fn pack(&self, m: &ComplexMatrix) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(m[(i, j)].re);
            }
        }
        if !self.real {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    out.push(m[(i, j)].im);
                }
            }
        }
        out
    }

    fn unpack(&self, x: &[f64]) -> ComplexMatrix {
        let n = self.rows * self.cols;
        ComplexMatrix::from_fn(self.rows, self.cols, |i, j| {
            let k = i * self.cols + j;
            C64::new(x[k], if self.real { 0.0 } else { x[n + k] })
        })
    }
}

/// Polar factor `W = X (X^dagger X)^{-1/2}` and the pieces needed for its derivative.
struct Polar {
    w: ComplexMatrix,
    p: ComplexMatrix,
    lambda: Vec<f64>,
    v: ComplexMatrix,
}

fn polar(x: &ComplexMatrix) -> Result<Polar> {
    let s = x.adjoint() * x;
    let s = (&s + s.adjoint()) * C64::new(0.5, 0.0);
    let (lambda, v) = hermitian_eig(&s)?;
    if lambda[0] <= 1e-20 {
        return Err(Error::DegenerateBasis(lambda[0].max(0.0).sqrt()));
    }
    let d = ComplexMatrix::from_diagonal(&CVector::from_iterator(lambda.len(), lambda.iter().map(|l| C64::new(l.powf(-0.5), 0.0))));
    let p = &v * d * v.adjoint();
    Ok(Polar { w: x * &p, p, lambda, v })
}

/// Energy of `polar(X)` and its gradient with respect to `X`.
fn polar_energy_grad(prob: &ModeProblem, x: &ComplexMatrix) -> Result<(f64, ComplexMatrix)> {
    let pol = polar(x)?;
    let g = prob.g(&pol.w)?;
    let energy = frob_re(&pol.w, &g);
    let gamma = g * C64::new(2.0, 0.0);
    let b = x.adjoint() * &gamma;
    let bh = (&b + b.adjoint()) * C64::new(0.5, 0.0);
    let mut bt = pol.v.adjoint() * bh * &pol.v;
    let q = pol.lambda.len();
    for i in 0..q {
        for j in 0..q {
            let (li, lj) = (pol.lambda[i], pol.lambda[j]);
            let k = if (li - lj).abs() > 1e-10 * li.max(lj) { (li.powf(-0.5) - lj.powf(-0.5)) / (li - lj) } else { -0.5 * li.powf(-1.5) };
            bt[(i, j)] *= k;
        }
    }
    let dmat = &pol.v * bt * pol.v.adjoint();
    let grad = gamma * &pol.p + x * dmat * C64::new(2.0, 0.0);
    Ok((energy, grad))
}

#[derive(Debug, Clone)]
pub struct EncoderSolveOptions {
    /// Required `||(1 - P) G||_inf`.
    pub tol: f64,
    /// Seed for the perturbed initial guess.
    pub seed: u64,
    /// Force a real (or complex) encoder; `None` picks real when the
    /// Hamiltonian, state and current encoder are all real.
    pub real: Option<bool>,
    pub perturbation: f64,
}

impl Default for EncoderSolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, seed: 0, real: None, perturbation: 0.1 }
    }
}

struct Candidate {
    w: ComplexMatrix,
    energy: f64,
    residual: f64,
}

fn is_real_problem(state: &HybridState, h: &SumOfProducts, enc: &BasisEncoder) -> bool {
    let real_m = |m: &ComplexMatrix| m.iter().all(|z| z.im == 0.0);
    enc.is_real()
        && state.amplitudes().iter().all(|z| z.im.abs() <= 1e-14)
        && h.terms().iter().all(|t| t.coefficient.im == 0.0 && t.factors.iter().all(|f| real_m(&f.matrix)))
}

/// Solve `(1 - P[l]) G[l] = 0` for the encoder of `label` with the state held fixed.
pub fn solve_encoder(state: &HybridState, h: &SumOfProducts, encs: &EncoderSet, label: &str) -> Result<BasisEncoder> {
    solve_encoder_with(state, h, encs, label, &EncoderSolveOptions::default())
}

/// [`solve_encoder`] with explicit options.
///
/// Each initial guess is first relaxed downhill in energy over the Stiefel
/// manifold (BFGS on the polar parameterization), then the stationarity
/// equation is rooted with DF-SANE from there. The lowest-energy converged
/// candidate wins; ties go to the earlier guess.
pub fn solve_encoder_with(
    state: &HybridState,
    h: &SumOfProducts,
    encs: &EncoderSet,
    label: &str,
    opts: &EncoderSolveOptions,
) -> Result<BasisEncoder> {
    let enc = encs.require(label)?;
    let h_enc = encode_hamiltonian(h, encs)?;
    let prob = ModeProblem::from_tables(h, enc, j_tables_encoded(state, &h_enc, label)?)?;
    let real = opts.real.unwrap_or_else(|| is_real_problem(state, h, enc));
    let pack = Packing { rows: enc.n_levels(), cols: enc.width(), real };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, opts.perturbation).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let current = if real { enc.c.map(|z| C64::new(z.re, 0.0)) } else { enc.c.clone() };
    let mut noisy = current.clone();
    for z in noisy.iter_mut() {
        z.re += normal.sample(&mut rng);
        if !real {
            z.im += normal.sample(&mut rng);
        }
    }
    let guesses = [current, ComplexMatrix::identity(enc.n_levels(), enc.width()), qr_orthonormalize(&noisy)?];

    let mut best: Option<Candidate> = None;
    let mut fallback: Option<Candidate> = None;
    for guess in &guesses {
        let cand = match relax_and_root(&prob, guess, pack, opts.tol) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let slot = if cand.residual <= opts.tol { &mut best } else { &mut fallback };
        let better = match slot {
            Some(b) => cand.energy < b.energy - 1e-12,
            None => true,
        };
        if better {
            *slot = Some(cand);
        }
    }
    match best {
        Some(c) => BasisEncoder::new(label, enc.n_qubits, c.w),
        None => {
            let (w, residual) = match fallback {
                Some(c) => (c.w, c.residual),
                None => (enc.c.clone(), f64::INFINITY),
            };
            Err(Error::EncoderNotConverged { label: label.to_string(), best: Box::new(BasisEncoder::new(label, enc.n_qubits, w)?), residual })
        }
    }
}

fn relax_and_root(prob: &ModeProblem, guess: &ComplexMatrix, pack: Packing, tol: f64) -> Result<Candidate> {
    let mut w = qr_orthonormalize(guess)?;
    if prob.width < prob.n_levels {
        let descent = bfgs_minimize(
            |x| {
                let (e, g) = polar_energy_grad(prob, &pack.unpack(x))?;
                Ok((e, pack.pack(&g)))
            },
            &pack.pack(&w),
            &BfgsOptions { grad_tol: 0.1 * tol, max_iter: 4000, ..BfgsOptions::default() },
        )?;
        w = polar(&pack.unpack(&descent.x))?.w;
    }
    let mut residual = max_abs(&prob.residual(&w)?);
    if residual > tol {
        let root = solve_nonlinear_with(
            |x| {
                let w = qr_orthonormalize(&pack.unpack(x))?;
                Ok(pack.pack(&prob.residual(&w)?))
            },
            &pack.pack(&w),
            &DfSaneOptions { tol, ..DfSaneOptions::default() },
        );
        let x = match root {
            Ok(r) => r.x,
            Err(Error::NoRoot { best, .. }) => best,
            Err(e) => return Err(e),
        };
        w = qr_orthonormalize(&pack.unpack(&x))?;
        residual = max_abs(&prob.residual(&w)?);
    }
    if residual > tol && residual < POLISH_START {
        (w, residual) = gauss_newton_polish(prob, w, residual, pack, tol)?;
    }
    let w = qr_orthonormalize(&w)?;
    Ok(Candidate { energy: prob.energy(&w)?, residual, w })
}

const POLISH_START: f64 = 1e-5;

// DF-SANE can stall a few times above a tight tol; least-squares Newton steps
// on the QR-parameterized residual (finite-difference Jacobian) finish locally.
fn gauss_newton_polish(prob: &ModeProblem, mut w: ComplexMatrix, mut residual: f64, pack: Packing, tol: f64) -> Result<(ComplexMatrix, f64)> {
    let f = |x: &[f64]| -> Result<Vec<f64>> { Ok(pack.pack(&prob.residual(&qr_orthonormalize(&pack.unpack(x))?)?)) };
    let n = pack.len();
    for _ in 0..6 {
        let x = pack.pack(&w);
        let r0 = f(&x)?;
        let h = 1e-7;
        let mut jac = DMatrix::<f64>::zeros(r0.len(), n);
        let mut xp = x.clone();
        for j in 0..n {
            xp[j] = x[j] + h;
            let fp = f(&xp)?;
            xp[j] = x[j] - h;
            let fm = f(&xp)?;
            xp[j] = x[j];
            for i in 0..r0.len() {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let rhs = DMatrix::from_iterator(r0.len(), 1, r0.iter().map(|v| -v));
        let svd = jac.svd(true, true);
        let cutoff = 1e-10 * svd.singular_values.max();
        let step = match svd.solve(&rhs, cutoff) {
            Ok(s) => s,
            Err(_) => break,
        };
        let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let wn = qr_orthonormalize(&pack.unpack(&xn))?;
        let rn = max_abs(&prob.residual(&wn)?);
        if !(rn < residual) {
            break;
        }
        (w, residual) = (wn, rn);
        if residual <= tol {
            break;
        }
    }
    Ok((w, residual))
}

/// Time derivative of the encoder from `i dC/dt rho = (1 - P) G`.
///
/// `rho` is the reduced density matrix of the mode's qubits, regularized by
/// adding [`RHO_REGULARIZATION`] to its diagonal before inversion.
pub fn encoder_eom_rhs(state: &HybridState, h: &SumOfProducts, encs: &EncoderSet, label: &str, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
    let enc = encs.require(label)?;
    let h_enc = encode_hamiltonian(h, encs)?;
    encoder_eom_rhs_encoded(state, h, &h_enc, enc, rho)
}

pub(crate) fn encoder_eom_rhs_encoded(
    state: &HybridState,
    h: &SumOfProducts,
    h_enc: &SumOfProducts,
    enc: &BasisEncoder,
    rho: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    let q = enc.width();
    if rho.shape() != (q, q) {
        return Err(Error::Dimension(format!("rho must be {q}x{q}")));
    }
    let (vals, _) = hermitian_eig(rho).map_err(|_| Error::StateCorruption("reduced density matrix is not Hermitian".into()))?;
    if vals[0] < -1e-8 {
        return Err(Error::StateCorruption(format!("reduced density matrix has eigenvalue {:e}", vals[0])));
    }
    if enc.is_full_rank() {
        return Ok(ComplexMatrix::zeros(enc.n_levels(), q));
    }
    let prob = ModeProblem::from_tables(h, enc, j_tables_encoded(state, h_enc, enc.dof_label())?)?;
    let r = prob.residual(enc.matrix())?;
    let reg = rho + ComplexMatrix::identity(q, q) * C64::new(RHO_REGULARIZATION, 0.0);
    let inv = reg.try_inverse().ok_or_else(|| Error::StateCorruption("regularized density matrix is singular".into()))?;
    Ok(r * inv * C64::new(0.0, -1.0))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderDoc {
    label: String,
    n_levels: usize,
    n_qubits: usize,
    c_real: Vec<Vec<f64>>,
    c_imag: Vec<Vec<f64>>,
}

impl Serialize for BasisEncoder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = |f: fn(&C64) -> f64| (0..self.c.nrows()).map(|i| self.c.row(i).iter().map(f).collect()).collect();
        EncoderDoc {
            label: self.dof_label.clone(),
            n_levels: self.n_levels(),
            n_qubits: self.n_qubits,
            c_real: rows(|z| z.re),
            c_imag: rows(|z| z.im),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BasisEncoder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = EncoderDoc::deserialize(d)?;
        let q = 1usize << doc.n_qubits.min(16);
        let shape_ok =
            doc.c_real.len() == doc.n_levels && doc.c_imag.len() == doc.n_levels && doc.c_real.iter().chain(&doc.c_imag).all(|r| r.len() == q);
        if !shape_ok {
            return Err(D::Error::custom(format!("encoder matrix must be {}x{q}", doc.n_levels)));
        }
        let c = DMatrix::from_fn(doc.n_levels, q, |i, j| C64::new(doc.c_real[i][j], doc.c_imag[i][j]));
        BasisEncoder::new(doc.label, doc.n_qubits, c).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{boson_annihilation, boson_position, number_operator, pauli, Pauli};
    use rand::Rng;

    fn random_isometry(rng: &mut ChaCha8Rng, n: usize, q: usize) -> ComplexMatrix {
        let m = ComplexMatrix::from_fn(n, q, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        qr_orthonormalize(&m).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, dofs: Vec<DegreeOfFreedom>) -> HybridState {
        let n: usize = dofs.iter().map(|d| d.dim).product();
        let v = CVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        HybridState::normalized(dofs, v).unwrap()
    }

    fn spin_mode(n: usize, g: f64) -> SumOfProducts {
        let dofs = vec![DegreeOfFreedom::new("s", DofKind::Spin, 2).unwrap(), DegreeOfFreedom::phonon("m", n).unwrap()];
        SumOfProducts::new(
            dofs,
            vec![
                ProductTerm::new(1.0).with("s", pauli(Pauli::X)),
                ProductTerm::new(1.0).with("m", number_operator(n).unwrap()),
                ProductTerm::new(g).with("s", pauli(Pauli::Z)).with("m", boson_position(n).unwrap()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_and_gray_encoders() {
        let dof = DegreeOfFreedom::phonon("p", 4).unwrap();
        let e = identity_encoder(&dof, 1).unwrap();
        assert_eq!(e.matrix(), &ComplexMatrix::identity(4, 2));
        let p = projector(&e);
        assert_eq!(p, ComplexMatrix::from_diagonal(&CVector::from_vec(vec![1.0, 1.0, 0.0, 0.0].into_iter().map(|x| C64::new(x, 0.0)).collect())));
        let full = identity_encoder(&DegreeOfFreedom::phonon("p", 2).unwrap(), 1).unwrap();
        assert_eq!(projector(&full), ComplexMatrix::identity(2, 2));
        assert!(matches!(identity_encoder(&DegreeOfFreedom::phonon("p", 3).unwrap(), 2), Err(Error::Capacity { .. })));
        let g = gray_encoder(&dof, 2).unwrap();
        let n_enc = encode_matrix(&number_operator(4).unwrap(), &g).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| n_enc[(i, i)].re).collect();
        assert_eq!(diag, [0.0, 1.0, 3.0, 2.0]);
    }

    #[test]
    fn encoded_local_operators() {
        let e = identity_encoder(&DegreeOfFreedom::phonon("p", 2).unwrap(), 1).unwrap();
        let op = LocalOperator::new("p", boson_position(2).unwrap());
        assert_eq!(encode_local_operator(&op, &e).unwrap(), pauli(Pauli::X));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_isometry(&mut rng, 6, 2);
        let real_c = qr_orthonormalize(&c.map(|z| C64::new(z.re, 0.0))).unwrap();
        let enc = BasisEncoder::new("p", 1, real_c.clone()).unwrap();
        let f = encode_matrix(&number_operator(6).unwrap(), &enc).unwrap();
        for n in 0..2 {
            for np in 0..2 {
                let expected: f64 = (0..6).map(|m| m as f64 * real_c[(m, n)].re * real_c[(m, np)].re).sum();
                assert!((f[(n, np)].re - expected).abs() < 1e-12);
            }
        }
        let enc = BasisEncoder::new("p", 1, c).unwrap();
        let b = boson_annihilation(6).unwrap();
        let herm = &b + b.adjoint() + (b.adjoint() - &b) * C64::new(0.0, 1.0);
        let out = encode_matrix(&herm, &enc).unwrap();
        assert!(crate::numerics::hermiticity_defect(&out) < 1e-12);
    }

    #[test]
    fn projector_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = BasisEncoder::new("p", 2, random_isometry(&mut rng, 9, 4)).unwrap();
        let p = projector(&enc);
        assert!(max_abs(&(&p * &p - &p)) < 1e-12);
        let tr: C64 = p.trace();
        assert!((tr.re - 4.0).abs() < 1e-12);
    }

    #[test]
    fn g_matches_dense_half_encoded_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = spin_mode(5, 0.7);
        let encs = EncoderSet::new().with(BasisEncoder::new("m", 1, random_isometry(&mut rng, 5, 2)).unwrap());
        let h_enc = encode_hamiltonian(&h, &encs).unwrap();
        let state = random_state(&mut rng, h_enc.dofs().to_vec());
        let tables = measurement_tables(&state, &h, &encs, "m").unwrap();
        // <phi|n>_m <m|H~'|phi>: apply the half-encoded operator, contract the spin index
        let half = half_encoded_hamiltonian(&h, &encs, "m").unwrap();
        let hv = half.apply(&state.amplitudes().clone()).unwrap();
        let phi = state.amplitudes();
        let mut dense = ComplexMatrix::zeros(5, 2);
        for m in 0..5 {
            for n in 0..2 {
                for s in 0..2 {
                    dense[(m, n)] += phi[s * 2 + n].conj() * hv[s * 5 + m];
                }
            }
        }
        assert!(max_abs(&(tables.g_matrix.clone() - dense)) < 1e-12);
        // energy = sum conj(C) * G
        let e = frob_re(encs.get("m").unwrap().matrix(), &tables.g_matrix);
        assert!((e - crate::circuits::expectation(&state, &h_enc).unwrap()).abs() < 1e-12);
        // residual orthogonal to the encoder columns
        let r = static_residual(&tables.g_matrix, encs.get("m").unwrap()).unwrap();
        assert!(max_abs(&(encs.get("m").unwrap().matrix().adjoint() * r)) < 1e-12);
    }

    #[test]
    fn trivial_j_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = SumOfProducts::new(
            vec![DegreeOfFreedom::new("s", DofKind::Spin, 2).unwrap(), DegreeOfFreedom::phonon("m", 4).unwrap()],
            vec![ProductTerm::new(2.0)],
        )
        .unwrap();
        let encs = EncoderSet::identity_for(&h, 1).unwrap();
        let state = random_state(&mut rng, encode_hamiltonian(&h, &encs).unwrap().dofs().to_vec());
        let j = compute_j_table(&state, &h, &encs, "m").unwrap();
        let rho = crate::circuits::reduced_density_matrix(&state, "m").unwrap();
        // J_{n n'} = sum_r conj(phi(n,r)) phi(n',r) = rho_{n' n}
        assert!(max_abs(&(j[0].clone() - rho.transpose())) < 1e-14);
        let zero = SumOfProducts::new(h.dofs().to_vec(), vec![]).unwrap();
        let g = compute_g_matrix(&[], &zero, encs.get("m").unwrap()).unwrap();
        assert_eq!(g, ComplexMatrix::zeros(4, 2));
    }

    #[test]
    fn full_rank_encoder_has_zero_residual_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = spin_mode(2, 1.3);
        let encs = EncoderSet::new().with(BasisEncoder::new("m", 1, random_isometry(&mut rng, 2, 2)).unwrap());
        let state = random_state(&mut rng, encode_hamiltonian(&h, &encs).unwrap().dofs().to_vec());
        let t = measurement_tables(&state, &h, &encs, "m").unwrap();
        assert!(max_abs(&static_residual(&t.g_matrix, encs.get("m").unwrap()).unwrap()) < 1e-14);
        let rho = crate::circuits::reduced_density_matrix(&state, "m").unwrap();
        assert_eq!(encoder_eom_rhs(&state, &h, &encs, "m", &rho).unwrap(), ComplexMatrix::zeros(2, 2));
    }

    #[test]
    fn solve_reaches_a_stationary_lower_energy_encoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = spin_mode(8, 1.5);
        let encs = EncoderSet::identity_for(&h, 1).unwrap();
        let dofs = encode_hamiltonian(&h, &encs).unwrap().dofs().to_vec();
        let v = CVector::from_fn(4, |_, _| C64::new(rng.random_range(-1.0..1.0), 0.0));
        let state = HybridState::normalized(dofs, v).unwrap();
        let e0 = crate::circuits::expectation(&state, &encode_hamiltonian(&h, &encs).unwrap()).unwrap();
        let enc = solve_encoder(&state, &h, &encs, "m").unwrap();
        assert!(orthonormality_defect(enc.matrix()) < 1e-10);
        assert!(enc.is_real());
        let new = EncoderSet::new().with(enc.clone());
        let t = measurement_tables(&state, &h, &new, "m").unwrap();
        assert!(max_abs(&static_residual(&t.g_matrix, &enc).unwrap()) <= 1e-8);
        let e1 = crate::circuits::expectation(&state, &encode_hamiltonian(&h, &new).unwrap()).unwrap();
        assert!(e1 <= e0 + 1e-12);

        // complex solve from the same start reaches a root of the complex equation
        let complex = solve_encoder_with(&state, &h, &encs, "m", &EncoderSolveOptions { real: Some(false), ..Default::default() }).unwrap();
        let t = measurement_tables(&state, &h, &EncoderSet::new().with(complex.clone()), "m").unwrap();
        assert!(max_abs(&static_residual(&t.g_matrix, &complex).unwrap()) <= 1e-8);
    }

    #[test]
    fn polar_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = spin_mode(5, 0.9);
        let enc = BasisEncoder::new("m", 1, random_isometry(&mut rng, 5, 2)).unwrap();
        let encs = EncoderSet::new().with(enc.clone());
        let h_enc = encode_hamiltonian(&h, &encs).unwrap();
        let state = random_state(&mut rng, h_enc.dofs().to_vec());
        let prob = ModeProblem::from_tables(&h, &enc, j_tables_encoded(&state, &h_enc, "m").unwrap()).unwrap();
        let pack = Packing { rows: 5, cols: 2, real: false };
        let x0 = pack.pack(&ComplexMatrix::from_fn(5, 2, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))));
        let (_, g) = polar_energy_grad(&prob, &pack.unpack(&x0)).unwrap();
        let g = pack.pack(&g);
        for k in 0..x0.len() {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[k] += 1e-6;
            xm[k] -= 1e-6;
            let fp = prob.energy(&polar(&pack.unpack(&xp)).unwrap().w).unwrap();
            let fm = prob.energy(&polar(&pack.unpack(&xm)).unwrap().w).unwrap();
            assert!(((fp - fm) / 2e-6 - g[k]).abs() < 1e-7, "component {k}");
        }
    }

    #[test]
    fn eom_rate_preserves_orthonormality_to_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = spin_mode(6, 1.1);
        let enc = BasisEncoder::new("m", 1, random_isometry(&mut rng, 6, 2)).unwrap();
        let encs = EncoderSet::new().with(enc.clone());
        let state = random_state(&mut rng, encode_hamiltonian(&h, &encs).unwrap().dofs().to_vec());
        let rho = crate::circuits::reduced_density_matrix(&state, "m").unwrap();
        let rate = encoder_eom_rhs(&state, &h, &encs, "m", &rho).unwrap();
        // C^dagger dC/dt = 0 exactly, so d/dt (C^dagger C) vanishes
        assert!(max_abs(&(enc.matrix().adjoint() * &rate)) < 1e-12);
        let bad = ComplexMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.5, 0.0), C64::new(-0.5, 0.0)]));
        assert!(matches!(encoder_eom_rhs(&state, &h, &encs, "m", &bad), Err(Error::StateCorruption(_))));
    }

    #[test]
    fn eom_with_pure_state_matches_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = spin_mode(5, 0.8);
        let enc = BasisEncoder::new("m", 1, random_isometry(&mut rng, 5, 2)).unwrap();
        let encs = EncoderSet::new().with(enc.clone());
        let dofs = encode_hamiltonian(&h, &encs).unwrap().dofs().to_vec();
        // product state, mode qubit in |0>: rho = diag(1, 0)
        let v = CVector::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.8), C64::new(0.0, 0.0)]);
        let state = HybridState::new(dofs, v).unwrap();
        let rho = crate::circuits::reduced_density_matrix(&state, "m").unwrap();
        let rate = encoder_eom_rhs(&state, &h, &encs, "m", &rho).unwrap();
        let t = measurement_tables(&state, &h, &encs, "m").unwrap();
        let r = static_residual(&t.g_matrix, &enc).unwrap();
        // pseudo-inverse of diag(1, 0) keeps the first column only
        let mut pinv = ComplexMatrix::zeros(2, 2);
        pinv[(0, 0)] = C64::new(1.0, 0.0);
        let expected = r * pinv * C64::new(0.0, -1.0);
        assert!(max_abs(&(rate - expected)) < 1e-3);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = BasisEncoder::new("ph0", 1, random_isometry(&mut rng, 4, 2)).unwrap();
        let text = serde_json::to_string(&enc).unwrap();
        for key in ["\"label\"", "\"n_levels\"", "\"n_qubits\"", "\"c_real\"", "\"c_imag\""] {
            assert!(text.contains(key));
        }
        let back: BasisEncoder = serde_json::from_str(&text).unwrap();
        assert!(max_abs(&(back.matrix() - enc.matrix())) == 0.0);
        let broken = text.replace("\"n_qubits\":1", "\"n_qubits\":2");
        assert!(serde_json::from_str::<BasisEncoder>(&broken).is_err());
    }
}
