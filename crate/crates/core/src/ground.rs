//! VQE under the encoded Hamiltonian, interleaved with encoder solves.

use serde::{Deserialize, Serialize};

use crate::circuits::{state_and_jacobian, AnsatzCircuit, HybridState};
use crate::encoder::{encode_hamiltonian, measurement_tables, solve_encoder_with, static_residual, BasisEncoder, EncoderSet, EncoderSolveOptions};
use crate::error::{Error, Result};
use crate::numerics::{bfgs_minimize, max_abs, BfgsOptions};
use crate::operators::SumOfProducts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqeResult {
    pub theta: Vec<f64>,
    pub energy: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search stalled; `theta` is the best iterate found.
    pub line_search_failed: bool,
}

#[derive(Debug, Clone)]
pub struct VqeOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for VqeOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-7, max_iter: 500 }
    }
}

/// Energy and analytic gradient `2 Re <d_k phi|H|phi>`.
pub fn energy_and_gradient(circ: &AnsatzCircuit, h_encoded: &SumOfProducts, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (state, jac) = state_and_jacobian(circ, theta)?;
    let hv = h_encoded.apply(state.amplitudes())?;
    let e = state.amplitudes().dotc(&hv);
    if e.im.abs() >= 1e-8 {
        return Err(Error::Hermiticity(format!("energy has imaginary part {:e}", e.im)));
    }
    let grad = jac.iter().map(|d| 2.0 * d.dotc(&hv).re).collect();
    Ok((e.re, grad))
}

/// Quasi-Newton minimization of `<phi(theta)|H~|phi(theta)>` from `theta0`.
pub fn vqe_minimize(circ: &AnsatzCircuit, h_encoded: &SumOfProducts, theta0: &[f64]) -> Result<VqeResult> {
    vqe_minimize_with(circ, h_encoded, theta0, &VqeOptions::default())
}

pub fn vqe_minimize_with(circ: &AnsatzCircuit, h_encoded: &SumOfProducts, theta0: &[f64], opts: &VqeOptions) -> Result<VqeResult> {
    if circ.dims() != h_encoded.dims() {
        return Err(Error::Dimension("circuit and Hamiltonian act on different spaces".into()));
    }
    if circ.n_params() == 0 {
        let (energy, _) = energy_and_gradient(circ, h_encoded, &[])?;
        return Ok(VqeResult { theta: vec![], energy, grad_norm: 0.0, iterations: 0, converged: true, line_search_failed: false });
    }
    let min = bfgs_minimize(
        |x| energy_and_gradient(circ, h_encoded, x),
        theta0,
        &BfgsOptions { grad_tol: opts.grad_tol, max_iter: opts.max_iter, ..BfgsOptions::default() },
    )?;
    Ok(VqeResult {
        theta: min.x,
        energy: min.value,
        grad_norm: min.grad_norm,
        iterations: min.iterations,
        converged: min.converged,
        line_search_failed: min.line_search_failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroIterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// VQE energy with the encoders entering this iteration.
    pub energy: f64,
    pub theta: Vec<f64>,
    /// Encoders after this iteration's sweep.
    pub encoders: EncoderSet,
    /// Largest `||(1 - P) G||_inf` of the entering encoders at the VQE state;
    /// zero at a self-consistent point.
    pub residual_norm: f64,
    pub vqe_converged: bool,
}

#[derive(Debug, Clone)]
pub struct MacroOptions {
    pub max_iter: usize,
    pub e_tol: f64,
    pub vqe: VqeOptions,
    pub solve: EncoderSolveOptions,
    /// All encoded modes share one encoder: the first mode is solved and its
    /// encoder copied to the others.
    pub shared: bool,
}

impl Default for MacroOptions {
    fn default() -> Self {
        Self { max_iter: 10, e_tol: 1e-7, vqe: VqeOptions::default(), solve: EncoderSolveOptions::default(), shared: false }
    }
}

/// Alternate VQE and a sequential sweep of encoder solves until the energy
/// change drops below `e_tol` or `max_iter` is reached.
///
/// `build_circuit` rebuilds the ansatz for the current encoders (generators
/// may be encoded operators). Parameters start at zero and are warm-started.
pub fn macro_iterate<B>(h: &SumOfProducts, build_circuit: B, encs0: &EncoderSet, opts: &MacroOptions) -> Result<Vec<MacroIterationRecord>>
where
    B: Fn(&EncoderSet) -> Result<AnsatzCircuit>,
{
    if !(opts.e_tol > 0.0) {
        return Err(Error::InvalidParameter("e_tol must be positive".into()));
    }
    let mut records: Vec<MacroIterationRecord> = Vec::new();
    let mut encs = encs0.clone();
    let mut theta: Option<Vec<f64>> = None;
    let abort = |records: &Vec<MacroIterationRecord>, e: Error| Error::MacroAborted { records: records.clone(), source: Box::new(e) };
    for iteration in 1..=opts.max_iter {
        let step = (|| -> Result<MacroIterationRecord> {
            let circ = build_circuit(&encs)?;
            let h_enc = encode_hamiltonian(h, &encs)?;
            let start = match &theta {
                Some(t) if t.len() == circ.n_params() => t.clone(),
                _ => vec![0.0; circ.n_params()],
            };
            let vqe = vqe_minimize_with(&circ, &h_enc, &start, &opts.vqe)?;
            let state = crate::circuits::evaluate_state(&circ, &vqe.theta)?;
            let (next, residual_norm) = encoder_sweep(&state, h, &encs, opts, iteration)?;
            Ok(MacroIterationRecord { iteration, energy: vqe.energy, theta: vqe.theta, encoders: next, residual_norm, vqe_converged: vqe.converged })
        })();
        let rec = step.map_err(|e| abort(&records, e))?;
        encs = rec.encoders.clone();
        theta = Some(rec.theta.clone());
        let done = records.last().is_some_and(|prev| (rec.energy - prev.energy).abs() < opts.e_tol);
        records.push(rec);
        if done {
            break;
        }
    }
    Ok(records)
}

fn encoder_sweep(state: &HybridState, h: &SumOfProducts, encs: &EncoderSet, opts: &MacroOptions, iteration: usize) -> Result<(EncoderSet, f64)> {
    let mut next = encs.clone();
    let mut residual_norm: f64 = 0.0;
    let labels = encs.labels();
    for (k, label) in labels.iter().enumerate() {
        if opts.shared && k > 0 {
            let first = next.require(&labels[0])?.clone();
            next.insert(BasisEncoder::new(label.clone(), first.n_qubits(), first.matrix().clone())?);
            continue;
        }
        let t = measurement_tables(state, h, &next, label)?;
        residual_norm = residual_norm.max(max_abs(&static_residual(&t.g_matrix, next.require(label)?)?));
        let solve = EncoderSolveOptions { seed: opts.solve.seed.wrapping_add((iteration * 1000 + k) as u64), ..opts.solve.clone() };
        let enc = solve_encoder_with(state, h, &next, label, &solve)?;
        next.insert(enc);
    }
    Ok((next, residual_norm))
}

/// VQE with fixed Gray-code encoders on modes truncated to `2^n_qubits` levels.
pub fn binary_baseline<B>(h: &SumOfProducts, build_circuit: B, n_qubits_per_mode: usize, opts: &VqeOptions) -> Result<VqeResult>
where
    B: Fn(&EncoderSet) -> Result<AnsatzCircuit>,
{
    let encs = EncoderSet::gray_for(h, n_qubits_per_mode)?;
    let circ = build_circuit(&encs)?;
    let h_enc = encode_hamiltonian(h, &encs)?;
    vqe_minimize_with(&circ, &h_enc, &vec![0.0; circ.n_params()], opts)
}

/// Energy of [`binary_baseline`].
pub fn run_binary_baseline<B>(h: &SumOfProducts, build_circuit: B, n_qubits_per_mode: usize) -> Result<f64>
where
    B: Fn(&EncoderSet) -> Result<AnsatzCircuit>,
{
    Ok(binary_baseline(h, build_circuit, n_qubits_per_mode, &VqeOptions::default())?.energy)
}
