//! Experiment runners and artifact layout.
//!
//! A run writes into `<output_dir>/<experiment>-<hash12>/`, where `hash12` is
//! the first 12 hex digits of the SHA-256 of the canonical config, so a
//! changed config never lands in an existing directory.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use vbse_core::circuits::{evaluate_state, sampled_expectation, schmidt_spectrum};
use vbse_core::dynamics::{sample_grid, trotter_evolve_with, vqd_evolve_with, DynamicsState, Trajectory, TrotterOptions, VqdOptions};
use vbse_core::encoder::{encode_hamiltonian, identity_encoder, EncoderSet, EncoderSolveOptions};
use vbse_core::ground::{binary_baseline, macro_iterate, MacroIterationRecord, MacroOptions, VqeOptions};
use vbse_core::hardware::{hardware_report, HardwareReport};
use vbse_core::models::{
    build_holstein, build_spin_boson, holstein_ansatz, holstein_ansatz_with, holstein_phonon, spin_up_vacuum, vha_ansatz, HolsteinAnsatzOptions,
    HolsteinParams, SpinBosonParams,
};
use vbse_core::numerics::Rk45Options;
use vbse_core::operators::{DegreeOfFreedom, DofKind, SumOfProducts};

use crate::cache::OracleCache;
use crate::config::{Experiment, ExperimentConfig, HardwareEncoder, SolverConfig};
use crate::error::CliError;

pub const HOLSTEIN_COLUMNS: &str = "g,n_levels,n_l,e_variational,e_binary,e_exact,iters";
pub const SBM_VQD_COLUMNS: &str = "time,sz_variational,sz_binary,sz_exact";
pub const SBM_TROTTER_COLUMNS: &str = "time,sz_trotter,sz_exact";
pub const LANDSCAPE_COLUMNS: &str = "theta,energy";

/// Full SHA-256 hex digest of the canonical config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.canonical_json().as_bytes()))
}

pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join(format!("{}-{}", cfg.experiment.name(), &config_hash(cfg)[..12]))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Value,
}

/// Run `cfg`, writing every artifact. On failure an `error.json` is left in
/// the run directory next to whatever was produced before the failure.
pub fn run_experiment(cfg: &ExperimentConfig, cache: &OracleCache) -> Result<RunOutcome, CliError> {
    let hash = config_hash(cfg);
    let out = Artifacts::create(run_dir(cfg), hash.clone())?;
    out.write_text("config.json", &cfg.canonical_json())?;
    let start = Instant::now();
    let result = match cfg.experiment {
        Experiment::HolsteinVqe => holstein_vqe(cfg, cache, &out),
        Experiment::HolsteinSweep => holstein_sweep(cfg, cache, &out),
        Experiment::SchmidtAnalysis => schmidt_analysis(cfg, cache, &out),
        Experiment::SbmVqd => sbm_vqd(cfg, cache, &out),
        Experiment::SbmTrotter => sbm_trotter(cfg, cache, &out),
        Experiment::HardwareCompile => hardware_compile(cfg, &out).map(|(_, v)| v),
    };
    let (results, error) = match result {
        Ok(v) => (v, None),
        Err(Failure { partial, error }) => (partial, Some(error)),
    };
    let summary = json!({
        "experiment": cfg.experiment.name(),
        "config_hash": hash,
        "config": cfg,
        "status": if error.is_some() { "failed" } else { "ok" },
        "results": results,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    out.write_json("summary.json", &summary)?;
    if let Some(e) = error {
        out.write_json("error.json", &e.report(Some(&hash)))?;
        return Err(e);
    }
    Ok(RunOutcome { dir: out.dir, summary })
}

/// Error plus whatever results were computed before it.
struct Failure {
    partial: Value,
    error: CliError,
}

impl<E: Into<CliError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { partial: Value::Null, error: e.into() }
    }
}

type Outcome = Result<Value, Failure>;

struct Artifacts {
    dir: PathBuf,
    hash: String,
}

impl Artifacts {
    fn create(dir: PathBuf, hash: String) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self { dir, hash })
    }

    fn sub(&self, name: &str) -> Result<Self, CliError> {
        Self::create(self.dir.join(name), self.hash.clone())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// JSON objects get a `config_hash` field.
    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.stamp(value)?).map_err(vbse_core::Error::from)?;
        self.write_text(name, &(text + "\n"))
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut text = String::new();
        for r in rows {
            text.push_str(&serde_json::to_string(&self.stamp(r)?).map_err(vbse_core::Error::from)?);
            text.push('\n');
        }
        self.write_text(name, &text)
    }

    fn stamp<T: Serialize>(&self, value: &T) -> Result<Value, CliError> {
        let mut v = serde_json::to_value(value).map_err(vbse_core::Error::from)?;
        if let Value::Object(map) = &mut v {
            map.entry("config_hash").or_insert_with(|| Value::String(self.hash.clone()));
        }
        Ok(v)
    }
}

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// --- Holstein ground states -------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct HolsteinPoint {
    g: f64,
    n_levels: usize,
    n_l: usize,
    e_variational: f64,
    e_binary: f64,
    e_exact: f64,
    iters: usize,
    converged: bool,
    residual_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_sampled: Option<(f64, f64)>,
    #[serde(skip)]
    records: Vec<MacroIterationRecord>,
}

impl HolsteinPoint {
    fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{},{}\n", self.g, self.n_levels, self.n_l, self.e_variational, self.e_binary, self.e_exact, self.iters)
    }

    fn final_encoders(&self) -> Option<&EncoderSet> {
        self.records.last().map(|r| &r.encoders)
    }
}

fn macro_options(solver: &SolverConfig, shared: bool, seed: u64) -> MacroOptions {
    MacroOptions {
        max_iter: solver.max_iter,
        e_tol: solver.e_tol,
        vqe: vqe_options(solver),
        solve: EncoderSolveOptions { tol: solver.encoder_tol, seed, ..EncoderSolveOptions::default() },
        shared,
    }
}

fn vqe_options(solver: &SolverConfig) -> VqeOptions {
    VqeOptions { grad_tol: solver.vqe_grad_tol, max_iter: solver.vqe_max_iter }
}

/// Binary-encoding baseline: the model truncated to `2^n_l` levels with fixed Gray encoders.
fn holstein_binary(p: &HolsteinParams, n_l: usize, solver: &SolverConfig) -> Result<f64, CliError> {
    let pb = HolsteinParams { n_levels: 1 << n_l, ..p.clone() };
    let hb = build_holstein(&pb)?;
    Ok(binary_baseline(&hb, |e| holstein_ansatz(&pb, solver.binary_layers(), e), n_l, &vqe_options(solver))?.energy)
}

fn holstein_point(p: &HolsteinParams, n_l: usize, solver: &SolverConfig, shared: bool, seed: u64, e_exact: f64) -> Result<HolsteinPoint, CliError> {
    let h = build_holstein(p)?;
    let encs0 = EncoderSet::identity_for(&h, n_l)?;
    let build = |e: &EncoderSet| holstein_ansatz(p, solver.layers, e);
    let records = macro_iterate(&h, build, &encs0, &macro_options(solver, shared, seed))?;
    let last = records.last().expect("at least one macro-iteration");
    let converged = records.len() >= 2 && (last.energy - records[records.len() - 2].energy).abs() < solver.e_tol;
    let e_sampled = match solver.shots {
        Some(shots) => {
            // the last record's parameters belong to the encoders entering that iteration
            let entering = if records.len() >= 2 { &records[records.len() - 2].encoders } else { &encs0 };
            let state = evaluate_state(&build(entering)?, &last.theta)?;
            Some(sampled_expectation(&state, &encode_hamiltonian(&h, entering)?, shots, seed)?)
        }
        None => None,
    };
    Ok(HolsteinPoint {
        g: p.g,
        n_levels: p.n_levels,
        n_l,
        e_variational: last.energy,
        e_binary: holstein_binary(p, n_l, solver)?,
        e_exact,
        iters: records.len(),
        converged,
        residual_norm: last.residual_norm,
        e_sampled,
        records,
    })
}

fn write_point(out: &Artifacts, point: &HolsteinPoint) -> Result<(), CliError> {
    out.write_jsonl("iterations.jsonl", &point.records)?;
    if let Some(encs) = point.final_encoders() {
        out.write_json("encoders.json", &json!({ "encoders": encs }))?;
    }
    Ok(())
}

fn holstein_vqe(cfg: &ExperimentConfig, cache: &OracleCache, out: &Artifacts) -> Outcome {
    let m = cfg.holstein().expect("holstein model");
    let p = m.params();
    let enc = cfg.encoder();
    let (e_exact, _) = cache.ground_state(&build_holstein(&p)?)?;
    let point = holstein_point(&p, enc.n_qubits, &cfg.solver(), enc.shared, cfg.seed, e_exact)?;
    out.write_text("results.csv", &format!("{HOLSTEIN_COLUMNS}\n{}", point.csv_row()))?;
    write_point(out, &point)?;
    Ok(json!(point))
}

fn holstein_sweep(cfg: &ExperimentConfig, cache: &OracleCache, out: &Artifacts) -> Outcome {
    let base = cfg.holstein().expect("holstein model").params();
    let sweep = cfg.sweep();
    let solver = cfg.solver();
    let enc = cfg.encoder();
    let models: Vec<HolsteinParams> = sweep
        .g
        .iter()
        .flat_map(|&g| sweep.n_levels.iter().map(move |&n| (g, n)))
        .map(|(g, n_levels)| HolsteinParams { g, n_levels, ..base.clone() })
        .collect();
    let exact: Vec<Result<f64, CliError>> = models.par_iter().map(|p| Ok(cache.ground_state(&build_holstein(p)?)?.0)).collect();
    let jobs: Vec<(usize, usize)> = (0..models.len()).flat_map(|i| sweep.n_qubits.iter().map(move |&q| (i, q))).collect();
    let points: Vec<Result<HolsteinPoint, CliError>> = jobs
        .par_iter()
        .map(|&(i, n_l)| {
            let e_exact = exact[i].as_ref().map_err(|e| CliError::Truncated(format!("exact oracle failed: {e}")))?;
            holstein_point(&models[i], n_l, &solver, enc.shared, cfg.seed, *e_exact)
        })
        .collect();
    let mut csv = format!("{HOLSTEIN_COLUMNS}\n");
    let mut rows = Vec::new();
    let mut first_error = None;
    for ((i, n_l), point) in jobs.iter().zip(points) {
        let p = &models[*i];
        match point {
            Ok(point) => {
                csv.push_str(&point.csv_row());
                write_point(&out.sub(&format!("points/g{}_n{}_nl{}", p.g, p.n_levels, n_l))?, &point)?;
                rows.push(json!(point));
            }
            Err(e) => {
                rows.push(json!({ "g": p.g, "n_levels": p.n_levels, "n_l": n_l, "error": e.to_string() }));
                first_error.get_or_insert(e);
            }
        }
    }
    out.write_text("results.csv", &csv)?;
    let results = json!({ "points": rows });
    match first_error {
        None => Ok(results),
        Some(error) => Err(Failure { partial: results, error }),
    }
}

fn schmidt_analysis(cfg: &ExperimentConfig, cache: &OracleCache, out: &Artifacts) -> Outcome {
    let base = cfg.holstein().expect("holstein model").params();
    let sweep = cfg.sweep();
    let cut = holstein_phonon(base.n_sites - 1);
    let models: Vec<HolsteinParams> = sweep
        .g
        .iter()
        .flat_map(|&g| sweep.n_levels.iter().map(move |&n| (g, n)))
        .map(|(g, n_levels)| HolsteinParams { g, n_levels, ..base.clone() })
        .collect();
    let spectra: Vec<Result<(f64, vbse_core::circuits::SchmidtSpectrum), CliError>> = models
        .par_iter()
        .map(|p| {
            let (e, state) = cache.ground_state(&build_holstein(p)?)?;
            Ok((e, schmidt_spectrum(&state, &[cut.as_str()])?))
        })
        .collect();
    let mut csv = String::from("g,n_levels,entropy");
    for q in &sweep.n_qubits {
        let _ = write!(csv, ",fidelity_nl{q}");
    }
    csv.push('\n');
    let mut rows = Vec::new();
    for (p, res) in models.iter().zip(spectra) {
        let (e, spec) = res?;
        let _ = write!(csv, "{},{},{}", p.g, p.n_levels, spec.entropy);
        let mut fid = serde_json::Map::new();
        for q in &sweep.n_qubits {
            let f = spec.truncation_fidelity(1 << q);
            let _ = write!(csv, ",{f}");
            fid.insert(format!("nl{q}"), json!(f));
        }
        csv.push('\n');
        rows.push(json!({ "g": p.g, "n_levels": p.n_levels, "e_exact": e, "entropy": spec.entropy, "fidelity": fid, "cut": cut }));
    }
    out.write_text("results.csv", &csv)?;
    Ok(json!({ "points": rows }))
}

// --- spin-boson dynamics ----------------------------------------------------

fn spin_boson(cfg: &ExperimentConfig) -> Result<(SpinBosonParams, SumOfProducts), CliError> {
    let p = cfg.spin_boson().expect("spin-boson model").params()?;
    let h = build_spin_boson(&p)?;
    Ok((p, h))
}

fn trajectory_summary(tr: &Trajectory, exact: &[f64], key: &str) -> Result<Value, CliError> {
    let sz = tr.series(key)?;
    Ok(json!({
        "samples": tr.samples.len(),
        "complete": tr.is_complete(),
        "diagnostic": tr.diagnostic,
        "max_deviation": max_deviation(&sz, exact),
        "qr_events": tr.drift_events.len(),
    }))
}

fn sbm_vqd(cfg: &ExperimentConfig, cache: &OracleCache, out: &Artifacts) -> Outcome {
    let (p, h) = spin_boson(cfg)?;
    let dynamics = cfg.dynamics();
    let solver = cfg.solver();
    let n_l = cfg.encoder().n_qubits;
    let times = sample_grid(dynamics.t_end, dynamics.sample_dt)?;
    let rk45 = Rk45Options { rtol: dynamics.rtol, atol: dynamics.atol, ..Rk45Options::default() };

    let encs = EncoderSet::identity_for(&h, n_l)?;
    let h_enc = encode_hamiltonian(&h, &encs)?;
    let circ = vha_ansatz(&h_enc, solver.layers, spin_up_vacuum(h_enc.dofs().to_vec())?)?;
    let opts = VqdOptions { rk45: rk45.clone(), split: dynamics.split, checkpoints: true, ..VqdOptions::default() };
    let s0 = DynamicsState { time: 0.0, theta: vec![0.0; circ.n_params()], encoders: encs };
    let variational = vqd_evolve_with(&h, &circ, &s0, dynamics.t_end, dynamics.sample_dt, &opts)?;

    let pb = SpinBosonParams { n_levels: 1 << n_l, ..p.clone() };
    let hb = build_spin_boson(&pb)?;
    let gray = EncoderSet::gray_for(&hb, n_l)?;
    let hb_enc = encode_hamiltonian(&hb, &gray)?;
    let circ_b = vha_ansatz(&hb_enc, solver.binary_layers(), spin_up_vacuum(hb_enc.dofs().to_vec())?)?;
    let opts_b = VqdOptions { rk45, evolve_encoders: false, ..VqdOptions::default() };
    let s0_b = DynamicsState { time: 0.0, theta: vec![0.0; circ_b.n_params()], encoders: gray };
    let binary = vqd_evolve_with(&hb, &circ_b, &s0_b, dynamics.t_end, dynamics.sample_dt, &opts_b)?;

    let exact = cache.sz_trajectory(&h, &spin_up_vacuum(h.dofs().to_vec())?, &times)?;
    let sz_v = variational.series("sz")?;
    let sz_b = binary.series("sz")?;
    let mut csv = format!("{SBM_VQD_COLUMNS}\n");
    for (k, t) in times.iter().enumerate() {
        let _ = writeln!(csv, "{t},{},{},{}", csv_field(sz_v.get(k).copied()), csv_field(sz_b.get(k).copied()), exact[k]);
    }
    out.write_text("results.csv", &csv)?;
    out.write_text("trajectory_variational.csv", &variational.to_csv()?)?;
    out.write_text("trajectory_binary.csv", &binary.to_csv()?)?;
    let checkpoints: Vec<&DynamicsState> = variational.samples.iter().filter_map(|s| s.checkpoint.as_ref()).collect();
    out.write_jsonl("checkpoints.jsonl", &checkpoints)?;
    out.write_jsonl("drift_events.jsonl", &variational.drift_events)?;

    let results = json!({
        "n_modes": p.modes.len(),
        "n_params": circ.n_params(),
        "variational": trajectory_summary(&variational, &exact, "sz")?,
        "binary": trajectory_summary(&binary, &exact, "sz")?,
    });
    truncation_check(results, &[("variational", &variational), ("binary", &binary)])
}

/// Truncated trajectories keep their artifacts but fail the run.
fn truncation_check(results: Value, trajectories: &[(&str, &Trajectory)]) -> Outcome {
    for (name, tr) in trajectories {
        if let Some(d) = &tr.diagnostic {
            return Err(Failure { partial: results, error: CliError::Truncated(format!("{name}: {d}")) });
        }
    }
    Ok(results)
}

fn sbm_trotter(cfg: &ExperimentConfig, cache: &OracleCache, out: &Artifacts) -> Outcome {
    let (p, h) = spin_boson(cfg)?;
    let dynamics = cfg.dynamics();
    let n_l = cfg.encoder().n_qubits;
    let encs = EncoderSet::identity_for(&h, n_l)?;
    let h_enc = encode_hamiltonian(&h, &encs)?;
    let stride = (dynamics.sample_dt / dynamics.tau).round() as usize;
    let n_steps = (dynamics.t_end / dynamics.tau).round() as usize;
    let opts = TrotterOptions { substep: dynamics.substep, sample_stride: stride, checkpoints: true, ..TrotterOptions::default() };
    let tr = trotter_evolve_with(&h, &spin_up_vacuum(h_enc.dofs().to_vec())?, &encs, dynamics.t_end, dynamics.tau, &opts)?;

    let times: Vec<f64> = (0..=n_steps).filter(|s| s % stride == 0 || *s == n_steps).map(|s| s as f64 * dynamics.tau).collect();
    let exact = cache.sz_trajectory(&h, &spin_up_vacuum(h.dofs().to_vec())?, &times)?;
    let sz = tr.series("sz")?;
    let mut csv = format!("{SBM_TROTTER_COLUMNS}\n");
    for (k, t) in times.iter().enumerate() {
        let _ = writeln!(csv, "{t},{},{}", csv_field(sz.get(k).copied()), exact[k]);
    }
    out.write_text("results.csv", &csv)?;
    out.write_text("trajectory.csv", &tr.to_csv()?)?;
    let checkpoints: Vec<&DynamicsState> = tr.samples.iter().filter_map(|s| s.checkpoint.as_ref()).collect();
    out.write_jsonl("checkpoints.jsonl", &checkpoints)?;
    let results = json!({
        "n_modes": p.modes.len(),
        "steps": n_steps,
        "trotter": trajectory_summary(&tr, &exact, "sz")?,
        "max_encoder_drift": tr.drift_events.iter().map(|e| e.drift).fold(0.0, f64::max),
    });
    truncation_check(results, &[("trotter", &tr)])
}

// --- hardware fixture -------------------------------------------------------

/// Build the hardware report for `cfg` (must be a `hardware_compile` config).
pub fn compile_hardware(cfg: &ExperimentConfig) -> Result<HardwareReport, CliError> {
    let m = cfg.holstein().ok_or_else(|| CliError::config("experiment", "compile-hardware needs a hardware_compile config"))?;
    if cfg.experiment != Experiment::HardwareCompile {
        return Err(CliError::config("experiment", "compile-hardware needs a hardware_compile config"));
    }
    let p = m.params();
    let hw = cfg.hardware();
    let enc = match hw.encoder {
        HardwareEncoder::Identity => identity_encoder(&DegreeOfFreedom::new(holstein_phonon(0), DofKind::Phonon, p.n_levels)?, 1)?,
        HardwareEncoder::Solved => {
            let h = build_holstein(&p)?;
            let encs0 = EncoderSet::identity_for(&h, 1)?;
            let ansatz = HolsteinAnsatzOptions { n_layers: 1, shared_displacement: true, hopping: false };
            let records = macro_iterate(&h, |e| holstein_ansatz_with(&p, e, &ansatz), &encs0, &macro_options(&cfg.solver(), true, cfg.seed))?;
            records.last().expect("at least one macro-iteration").encoders.require(&holstein_phonon(0))?.clone()
        }
    };
    Ok(hardware_report(&p, &enc, &hw.grid())?)
}

const DENSE_TOL: f64 = 1e-12;

fn hardware_compile(cfg: &ExperimentConfig, out: &Artifacts) -> Result<(HardwareReport, Value), Failure> {
    let report = compile_hardware(cfg)?;
    out.write_json("report.json", &report)?;
    let mut csv = format!("{LANDSCAPE_COLUMNS}\n");
    for (t, e) in &report.landscape {
        let _ = writeln!(csv, "{t},{e}");
    }
    out.write_text("landscape.csv", &csv)?;
    let results = json!({
        "c1": report.c1,
        "c2": report.c2,
        "binary_dense_defect": report.binary_dense_defect,
        "encoded_dense_defect": report.encoded_dense_defect,
        "minimum": { "theta": report.minimum.0, "energy": report.minimum.1 },
    });
    if !(report.binary_dense_defect <= DENSE_TOL && report.encoded_dense_defect <= DENSE_TOL) {
        let error = CliError::Core(vbse_core::Error::Contract(format!(
            "dense Hamiltonian and Pauli form differ by {:e} (binary) / {:e} (encoded)",
            report.binary_dense_defect, report.encoded_dense_defect
        )));
        return Err(Failure { partial: results, error });
    }
    Ok((report, results))
}
