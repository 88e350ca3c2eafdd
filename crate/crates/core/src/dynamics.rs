//! Real-time evolution: variational dynamics of circuit parameters and
//! encoders, and Trotterized evolution with encoder updates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::circuits::{evaluate_state, local_expectation, reduced_density_matrix, state_and_jacobian, AnsatzCircuit, HybridState};
use crate::encoder::{encode_hamiltonian, encoder_eom_rhs_encoded, BasisEncoder, EncoderSet, ORTHONORMALITY_TOL};
use crate::error::{Error, Result};
use crate::numerics::{matrix_exp, orthonormality_defect, qr_orthonormalize, rk45_integrate_with_hook, CVector, ComplexMatrix, Rk45Options, C64};
use crate::operators::{apply_on_axes, pauli, DofKind, Pauli, SumOfProducts};

/// Regularization added to the diagonal of the parameter metric.
pub const METRIC_REGULARIZATION: f64 = 1e-8;

/// Circuit parameters and encoders at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsState {
    pub time: f64,
    pub theta: Vec<f64>,
    pub encoders: EncoderSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub observables: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<DynamicsState>,
}

/// A QR re-orthonormalization, with the defect it removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub time: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub drift_events: Vec<DriftEvent>,
    /// Set when the integration stopped early; the samples cover the part
    /// computed before the failure.
    pub diagnostic: Option<String>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    /// Values of one observable, in sample order.
    pub fn series(&self, name: &str) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| s.observables.get(name).copied().ok_or_else(|| Error::InvalidParameter(format!("observable `{name}` was not recorded"))))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.diagnostic.is_none()
    }

    /// `time` followed by the observables present in the first sample, in the
    /// fixed order `sz, energy, c_drift`.
    pub fn columns(&self) -> Vec<&'static str> {
        let mut cols = vec!["time"];
        if let Some(first) = self.samples.first() {
            for c in ["sz", "energy", "c_drift"] {
                if first.observables.contains_key(c) {
                    cols.push(c);
                }
            }
        }
        cols
    }

    pub fn to_csv(&self) -> Result<String> {
        let cols = self.columns();
        let mut out = cols.join(",");
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{}", s.time);
            for c in &cols[1..] {
                let v = s.observables.get(*c).ok_or_else(|| Error::InvalidParameter(format!("sample at t={} lacks `{c}`", s.time)))?;
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Solve `(M + eps) dtheta/dt = V` with `M_kj = Re<d_k phi|d_j phi>` and
/// `V_k = Im<d_k phi|H~|phi>`.
pub fn theta_eom(circ: &AnsatzCircuit, theta: &[f64], h_encoded: &SumOfProducts) -> Result<Vec<f64>> {
    let (state, jac) = state_and_jacobian(circ, theta)?;
    theta_eom_from(&state, &jac, h_encoded)
}

fn theta_eom_from(state: &HybridState, jac: &[CVector], h_encoded: &SumOfProducts) -> Result<Vec<f64>> {
    let p = jac.len();
    if p == 0 {
        return Ok(vec![]);
    }
    let hv = h_encoded.apply(state.amplitudes())?;
    let mut m = nalgebra::DMatrix::<f64>::zeros(p, p);
    for k in 0..p {
        for j in k..p {
            let v = jac[k].dotc(&jac[j]).re;
            m[(k, j)] = v;
            m[(j, k)] = v;
        }
        m[(k, k)] += METRIC_REGULARIZATION;
    }
    let v = nalgebra::DVector::from_iterator(p, jac.iter().map(|d| d.dotc(&hv).im));
    let chol = m.cholesky().ok_or_else(|| Error::Stiffness("parameter metric is not positive definite".into()))?;
    let rate = chol.solve(&v);
    if rate.iter().any(|x| !x.is_finite()) {
        return Err(Error::Stiffness("non-finite parameter rate".into()));
    }
    Ok(rate.iter().copied().collect())
}

#[derive(Debug, Clone)]
pub struct VqdOptions {
    pub rk45: Rk45Options,
    /// Evolve the encoders; `false` keeps them fixed (binary baseline).
    pub evolve_encoders: bool,
    /// Alternate a parameter-only and an encoder-only integration over each
    /// sample interval instead of integrating the joint system.
    pub split: bool,
    /// QR re-orthonormalization threshold.
    pub drift_tol: f64,
    pub checkpoints: bool,
}

impl Default for VqdOptions {
    fn default() -> Self {
        Self {
            rk45: Rk45Options { rtol: 1e-6, atol: 1e-8, ..Rk45Options::default() },
            evolve_encoders: true,
            split: false,
            drift_tol: ORTHONORMALITY_TOL,
            checkpoints: false,
        }
    }
}

/// Sample grid `0, dt, 2 dt, ...` closed by `t_end`.
pub fn sample_grid(t_end: f64, sample_dt: f64) -> Result<Vec<f64>> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParameter(format!("t_end must be finite and non-negative, got {t_end}")));
    }
    if !(sample_dt > 0.0) || !sample_dt.is_finite() {
        return Err(Error::InvalidParameter(format!("sample_dt must be positive, got {sample_dt}")));
    }
    let n = (t_end / sample_dt + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=n).map(|k| k as f64 * sample_dt).collect();
    if t_end - out[n] > 1e-9 * sample_dt {
        out.push(t_end);
    } else {
        out[n] = t_end;
    }
    Ok(out)
}

fn max_drift(encs: &EncoderSet) -> f64 {
    encs.iter().map(|e| orthonormality_defect(e.matrix())).fold(0.0, f64::max)
}

fn observe(state: &HybridState, h_enc: &SumOfProducts, encs: &EncoderSet) -> Result<BTreeMap<String, f64>> {
    let mut obs = BTreeMap::new();
    if let Some(spin) = state.dofs().iter().find(|d| d.kind == DofKind::Spin && d.dim == 2) {
        obs.insert("sz".to_string(), local_expectation(state, &spin.label, &pauli(Pauli::Z))?);
    }
    obs.insert("energy".to_string(), crate::circuits::expectation(state, h_enc)?);
    obs.insert("c_drift".to_string(), max_drift(encs));
    Ok(obs)
}

/// `dC/dt` for every encoder at a fixed encoded state.
fn encoder_rates(state: &HybridState, h: &SumOfProducts, h_enc: &SumOfProducts, encs: &EncoderSet) -> Result<Vec<ComplexMatrix>> {
    encs.iter()
        .map(|enc| {
            let rho = reduced_density_matrix(state, enc.dof_label())?;
            encoder_eom_rhs_encoded(state, h, h_enc, enc, &rho)
        })
        .collect()
}

/// Flat `(theta, vec C[0], vec C[1], ...)` layout of the joint system.
struct Layout {
    n_params: usize,
    shapes: Vec<(String, usize, usize, usize)>,
}

impl Layout {
    fn new(n_params: usize, encs: &EncoderSet) -> Self {
        let shapes = encs.iter().map(|e| (e.dof_label().to_string(), e.n_qubits(), e.n_levels(), e.width())).collect();
        Self { n_params, shapes }
    }

    fn len(&self) -> usize {
        self.n_params + self.shapes.iter().map(|(_, _, n, q)| n * q).sum::<usize>()
    }

    fn pack(&self, theta: &[f64], cs: &[&ComplexMatrix]) -> CVector {
        let mut y = Vec::with_capacity(self.len());
        y.extend(theta.iter().map(|&t| C64::new(t, 0.0)));
        for c in cs {
            y.extend_from_slice(c.as_slice());
        }
        CVector::from_vec(y)
    }

    fn theta(&self, y: &CVector) -> Vec<f64> {
        y.iter().take(self.n_params).map(|z| z.re).collect()
    }

    fn matrices(&self, y: &CVector) -> Vec<ComplexMatrix> {
        let mut off = self.n_params;
        self.shapes
            .iter()
            .map(|(_, _, n, q)| {
                let m = ComplexMatrix::from_column_slice(*n, *q, &y.as_slice()[off..off + n * q]);
                off += n * q;
                m
            })
            .collect()
    }

    fn encoders(&self, y: &CVector) -> Result<EncoderSet> {
        let mut set = EncoderSet::new();
        for ((label, nq, _, _), c) in self.shapes.iter().zip(self.matrices(y)) {
            set.insert(BasisEncoder::unchecked(label.clone(), *nq, c));
        }
        Ok(set)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Part {
    Joint,
    Theta,
    Encoders,
}

/// Variational real-time evolution of `(theta, C)` from `state0`.
///
/// The circuit is held fixed; encoders enter through the encoded
/// Hamiltonian and their own equation of motion.
pub fn vqd_evolve(h: &SumOfProducts, circ: &AnsatzCircuit, state0: &DynamicsState, t_end: f64, sample_dt: f64) -> Result<Trajectory> {
    vqd_evolve_with(h, circ, state0, t_end, sample_dt, &VqdOptions::default())
}

pub fn vqd_evolve_with(
    h: &SumOfProducts,
    circ: &AnsatzCircuit,
    state0: &DynamicsState,
    t_end: f64,
    sample_dt: f64,
    opts: &VqdOptions,
) -> Result<Trajectory> {
    if state0.theta.len() != circ.n_params() {
        return Err(Error::Dimension(format!("{} parameters for a circuit with {}", state0.theta.len(), circ.n_params())));
    }
    let h_enc0 = encode_hamiltonian(h, &state0.encoders)?;
    if h_enc0.dims() != circ.dims() {
        return Err(Error::Dimension("circuit does not act on the encoded space".into()));
    }
    let grid = sample_grid(t_end, sample_dt)?;
    let layout = Layout::new(circ.n_params(), &state0.encoders);
    let mut traj = Trajectory::default();
    let cs: Vec<&ComplexMatrix> = state0.encoders.iter().map(|e| e.matrix()).collect();
    let mut y = layout.pack(&state0.theta, &cs);

    let record = |traj: &mut Trajectory, t: f64, y: &CVector| -> Result<()> {
        let encs = layout.encoders(y)?;
        let theta = layout.theta(y);
        let state = evaluate_state(circ, &theta)?;
        let h_enc = encode_hamiltonian(h, &encs)?;
        let observables = observe(&state, &h_enc, &encs)?;
        let checkpoint = opts.checkpoints.then(|| DynamicsState { time: t, theta, encoders: encs });
        traj.samples.push(Sample { time: t, observables, checkpoint });
        Ok(())
    };
    record(&mut traj, grid[0], &y)?;

    let evolve_c = opts.evolve_encoders && !state0.encoders.is_empty();
    let mut drift_log: Vec<DriftEvent> = Vec::new();
    for w in grid.windows(2) {
        let (t0, t1) = (w[0] + state0.time, w[1] + state0.time);
        let parts: &[Part] = if !evolve_c {
            &[Part::Theta]
        } else if opts.split {
            &[Part::Theta, Part::Encoders]
        } else {
            &[Part::Joint]
        };
        let mut failed = None;
        for &part in parts {
            let deriv = |_t: f64, y: &CVector| -> Result<CVector> { joint_rhs(h, circ, &layout, y, part) };
            let hook = |t: f64, y: &mut CVector| -> Result<bool> {
                if !evolve_c || part == Part::Theta {
                    return Ok(false);
                }
                let mats = layout.matrices(y);
                let drift = mats.iter().map(orthonormality_defect).fold(0.0, f64::max);
                if drift <= opts.drift_tol {
                    return Ok(false);
                }
                let fixed = mats.iter().map(qr_orthonormalize).collect::<Result<Vec<_>>>()?;
                let refs: Vec<&ComplexMatrix> = fixed.iter().collect();
                *y = layout.pack(&layout.theta(y), &refs);
                drift_log.push(DriftEvent { time: t - state0.time, drift });
                Ok(true)
            };
            match rk45_integrate_with_hook(deriv, &y, (t0, t1), &[t1], &opts.rk45, hook) {
                Ok(mut out) => y = out.pop().expect("end sample").1,
                Err(e @ (Error::Stiffness(_) | Error::StepUnderflow { .. } | Error::StateCorruption(_))) => {
                    failed = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = failed {
            traj.diagnostic = Some(format!("integration stopped after t = {}: {e}", w[0]));
            break;
        }
        record(&mut traj, w[1], &y)?;
    }
    traj.drift_events = drift_log;
    Ok(traj)
}

fn joint_rhs(h: &SumOfProducts, circ: &AnsatzCircuit, layout: &Layout, y: &CVector, part: Part) -> Result<CVector> {
    let theta = layout.theta(y);
    let encs = layout.encoders(y)?;
    let h_enc = encode_hamiltonian(h, &encs)?;
    let mut out = CVector::zeros(layout.len());
    let need_jac = part != Part::Encoders;
    let (state, jac) = if need_jac { state_and_jacobian(circ, &theta)? } else { (evaluate_state(circ, &theta)?, vec![]) };
    if need_jac {
        for (k, r) in theta_eom_from(&state, &jac, &h_enc)?.into_iter().enumerate() {
            out[k] = C64::new(r, 0.0);
        }
    }
    if part != Part::Theta {
        let mut off = layout.n_params;
        for rate in encoder_rates(&state, h, &h_enc, &encs)? {
            out.as_mut_slice()[off..off + rate.len()].copy_from_slice(rate.as_slice());
            off += rate.len();
        }
    }
    Ok(out)
}

/// One first-order Trotter step `prod_x exp(-i c_x h~_x tau)` in term order.
pub fn trotter_step(state: &HybridState, h_encoded: &SumOfProducts, tau: f64) -> Result<HybridState> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let props = trotter_propagators(h_encoded, tau)?;
    apply_propagators(state, &props)
}

type Propagator = (Vec<usize>, ComplexMatrix);

fn trotter_propagators(h_encoded: &SumOfProducts, tau: f64) -> Result<Vec<Propagator>> {
    if h_encoded.dims() != h_encoded.ket_dims() {
        return Err(Error::Dimension("Trotter steps need a square Hamiltonian".into()));
    }
    let dofs = h_encoded.dofs();
    h_encoded
        .terms()
        .iter()
        .map(|term| {
            let mut axes: Vec<usize> = term.factors.iter().map(|f| h_encoded.axis(&f.dof_label)).collect::<Result<_>>()?;
            axes.sort_unstable();
            let mut m = ComplexMatrix::from_element(1, 1, term.coefficient * C64::new(0.0, -tau));
            for &a in &axes {
                let f = term.factor(&dofs[a].label).expect("factor present");
                m = m.kronecker(f);
            }
            Ok((axes, matrix_exp(&m)?))
        })
        .collect()
}

fn apply_propagators(state: &HybridState, props: &[Propagator]) -> Result<HybridState> {
    let dims = state.dims();
    let mut v = state.amplitudes().clone();
    for (axes, u) in props {
        v = if axes.is_empty() { v * u[(0, 0)] } else { apply_on_axes(u, axes, &dims, &v) };
    }
    HybridState::normalized(state.dofs().to_vec(), v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSubstep {
    Euler,
    Rk4,
}

#[derive(Debug, Clone)]
pub struct TrotterOptions {
    pub substep: EncoderSubstep,
    /// Record observables every this many steps.
    pub sample_stride: usize,
    /// Abort when the orthonormality defect accumulated in one step exceeds this.
    pub drift_abort: f64,
    pub checkpoints: bool,
}

impl Default for TrotterOptions {
    fn default() -> Self {
        Self { substep: EncoderSubstep::Rk4, sample_stride: 1, drift_abort: 1e-4, checkpoints: false }
    }
}

/// Trotter evolution of an encoded state; after every step the encoders
/// advance by one substep of their equation of motion at the post-step
/// state and are re-orthonormalized.
pub fn trotter_evolve_with_encoder(h: &SumOfProducts, state0: &HybridState, encs0: &EncoderSet, t_end: f64, tau: f64) -> Result<Trajectory> {
    trotter_evolve_with(h, state0, encs0, t_end, tau, &TrotterOptions::default())
}

pub fn trotter_evolve_with(
    h: &SumOfProducts,
    state0: &HybridState,
    encs0: &EncoderSet,
    t_end: f64,
    tau: f64,
    opts: &TrotterOptions,
) -> Result<Trajectory> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParameter(format!("t_end must be finite and non-negative, got {t_end}")));
    }
    if opts.sample_stride == 0 {
        return Err(Error::InvalidParameter("sample_stride must be at least 1".into()));
    }
    let n_steps = (t_end / tau).round() as usize;
    if (n_steps as f64 * tau - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidParameter(format!("t_end = {t_end} is not a multiple of tau = {tau}")));
    }
    let mut encs = encs0.clone();
    let mut h_enc = encode_hamiltonian(h, &encs)?;
    if h_enc.dims() != state0.dims() {
        return Err(Error::Dimension("initial state does not live in the encoded space".into()));
    }
    let mut state = state0.with_dofs(h_enc.dofs().to_vec())?;
    let mut traj = Trajectory::default();
    let push = |traj: &mut Trajectory, t: f64, state: &HybridState, h_enc: &SumOfProducts, encs: &EncoderSet| -> Result<()> {
        let observables = observe(state, h_enc, encs)?;
        let checkpoint = opts.checkpoints.then(|| DynamicsState { time: t, theta: vec![], encoders: encs.clone() });
        traj.samples.push(Sample { time: t, observables, checkpoint });
        Ok(())
    };
    push(&mut traj, 0.0, &state, &h_enc, &encs)?;
    let evolve_c = encs.iter().any(|e| !e.is_full_rank());
    for step in 1..=n_steps {
        let t = step as f64 * tau;
        state = trotter_step(&state, &h_enc, tau)?;
        if evolve_c {
            let advanced = match encoder_substep(h, &state, &encs, tau, opts.substep) {
                Ok(m) => m,
                Err(e @ Error::StateCorruption(_)) => {
                    traj.diagnostic = Some(format!("encoder update failed at t = {t}: {e}"));
                    break;
                }
                Err(e) => return Err(e),
            };
            let drift = advanced.iter().map(orthonormality_defect).fold(0.0, f64::max);
            if drift > opts.drift_abort || !drift.is_finite() {
                traj.diagnostic = Some(format!("aborted at t = {t}: {}", Error::EncoderDrift(drift)));
                break;
            }
            let mut next = EncoderSet::new();
            for (enc, c) in encs.iter().zip(&advanced) {
                next.insert(BasisEncoder::new(enc.dof_label(), enc.n_qubits(), qr_orthonormalize(c)?)?);
            }
            if drift > 0.0 {
                traj.drift_events.push(DriftEvent { time: t, drift });
            }
            encs = next;
            h_enc = encode_hamiltonian(h, &encs)?;
        }
        if step % opts.sample_stride == 0 || step == n_steps {
            push(&mut traj, t, &state, &h_enc, &encs)?;
        }
    }
    Ok(traj)
}

/// Advance every encoder over `tau` with the encoded state held fixed.
fn encoder_substep(h: &SumOfProducts, state: &HybridState, encs: &EncoderSet, tau: f64, method: EncoderSubstep) -> Result<Vec<ComplexMatrix>> {
    let rates = |mats: &[ComplexMatrix]| -> Result<Vec<ComplexMatrix>> {
        let mut set = EncoderSet::new();
        for (enc, c) in encs.iter().zip(mats) {
            set.insert(BasisEncoder::unchecked(enc.dof_label(), enc.n_qubits(), c.clone()));
        }
        let h_enc = encode_hamiltonian(h, &set)?;
        let state = state.with_dofs(h_enc.dofs().to_vec())?;
        encoder_rates(&state, h, &h_enc, &set)
    };
    let c0: Vec<ComplexMatrix> = encs.iter().map(|e| e.matrix().clone()).collect();
    let shift = |k: &[ComplexMatrix], a: f64| -> Vec<ComplexMatrix> { c0.iter().zip(k).map(|(c, r)| c + r * C64::new(a, 0.0)).collect() };
    let k1 = rates(&c0)?;
    if method == EncoderSubstep::Euler {
        return Ok(shift(&k1, tau));
    }
    let k2 = rates(&shift(&k1, 0.5 * tau))?;
    let k3 = rates(&shift(&k2, 0.5 * tau))?;
    let k4 = rates(&shift(&k3, tau))?;
    Ok((0..c0.len())
        .map(|i| &c0[i] + (&k1[i] + &k2[i] * C64::new(2.0, 0.0) + &k3[i] * C64::new(2.0, 0.0) + &k4[i]) * C64::new(tau / 6.0, 0.0))
        .collect())
}
