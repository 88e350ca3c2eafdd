//! Strict experiment configuration.
//!
//! Every section rejects unknown keys and errors carry the JSON key path of
//! the offending value (`model.g`, `sweep.g[2]`, ...).

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use vbse_core::dynamics::EncoderSubstep;
use vbse_core::models::{BathMode, HolsteinParams, SpectralDensity, SpinBosonParams};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    HolsteinVqe,
    HolsteinSweep,
    SbmVqd,
    SbmTrotter,
    SchmidtAnalysis,
    HardwareCompile,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::HolsteinVqe => "holstein_vqe",
            Experiment::HolsteinSweep => "holstein_sweep",
            Experiment::SbmVqd => "sbm_vqd",
            Experiment::SbmTrotter => "sbm_trotter",
            Experiment::SchmidtAnalysis => "schmidt_analysis",
            Experiment::HardwareCompile => "hardware_compile",
        }
    }

    fn uses_holstein(self) -> bool {
        matches!(self, Experiment::HolsteinVqe | Experiment::HolsteinSweep | Experiment::SchmidtAnalysis | Experiment::HardwareCompile)
    }

    /// Optional sections this experiment reads.
    fn sections(self) -> &'static [&'static str] {
        match self {
            Experiment::HolsteinVqe => &["encoder", "solver"],
            Experiment::HolsteinSweep => &["encoder", "solver", "sweep"],
            Experiment::SchmidtAnalysis => &["sweep"],
            Experiment::SbmVqd => &["encoder", "solver", "dynamics"],
            Experiment::SbmTrotter => &["encoder", "dynamics"],
            Experiment::HardwareCompile => &["encoder", "solver", "hardware"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolsteinModel {
    #[serde(default = "d_three")]
    pub n_sites: usize,
    #[serde(default = "d_one")]
    pub v_hop: f64,
    #[serde(default = "d_one")]
    pub omega: f64,
    #[serde(default = "d_one")]
    pub g: f64,
    #[serde(default = "d_thirty_two")]
    pub n_levels: usize,
    #[serde(default = "d_true")]
    pub periodic: bool,
}

impl HolsteinModel {
    pub fn params(&self) -> HolsteinParams {
        HolsteinParams { n_sites: self.n_sites, v_hop: self.v_hop, omega: self.omega, g: self.g, n_levels: self.n_levels, periodic: self.periodic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubOhmicBath {
    pub alpha: f64,
    pub s: f64,
    pub omega_c: f64,
    pub n_modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinBosonModel {
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "d_one")]
    pub delta: f64,
    #[serde(default = "d_thirty_two")]
    pub n_levels: usize,
    /// Explicit modes; mutually exclusive with `spectral_density`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<BathMode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_density: Option<SubOhmicBath>,
}

impl SpinBosonModel {
    pub fn params(&self) -> Result<SpinBosonParams, vbse_core::Error> {
        let modes = match (&self.modes, &self.spectral_density) {
            (Some(m), None) => m.clone(),
            (None, Some(b)) => vbse_core::models::discretize_sub_ohmic(&SpectralDensity { alpha: b.alpha, s: b.s, omega_c: b.omega_c }, b.n_modes)?,
            _ => return Err(vbse_core::Error::InvalidParameter("give exactly one of `modes` and `spectral_density`".into())),
        };
        Ok(SpinBosonParams { epsilon: self.epsilon, delta: self.delta, modes, n_levels: self.n_levels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelConfig {
    Holstein(HolsteinModel),
    SpinBoson(SpinBosonModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "d_one_usize")]
    pub n_qubits: usize,
    #[serde(default)]
    pub shared: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { n_qubits: 1, shared: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "d_three")]
    pub layers: usize,
    /// Layers of the binary-encoding baseline circuit; defaults to `layers`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_layers: Option<usize>,
    #[serde(default = "d_ten")]
    pub max_iter: usize,
    #[serde(default = "d_e_tol")]
    pub e_tol: f64,
    #[serde(default = "d_e_tol")]
    pub vqe_grad_tol: f64,
    #[serde(default = "d_vqe_max_iter")]
    pub vqe_max_iter: usize,
    #[serde(default = "d_encoder_tol")]
    pub encoder_tol: f64,
    /// Estimate the final energy from this many measurement shots per term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { layers: 3, binary_layers: None, max_iter: 10, e_tol: 1e-7, vqe_grad_tol: 1e-7, vqe_max_iter: 500, encoder_tol: 1e-8, shots: None }
    }
}

impl SolverConfig {
    pub fn binary_layers(&self) -> usize {
        self.binary_layers.unwrap_or(self.layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "d_g_values")]
    pub g: Vec<f64>,
    #[serde(default = "d_levels")]
    pub n_levels: Vec<usize>,
    #[serde(default = "d_qubits")]
    pub n_qubits: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { g: d_g_values(), n_levels: d_levels(), n_qubits: d_qubits() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default = "d_sample_dt")]
    pub sample_dt: f64,
    #[serde(default = "d_rtol")]
    pub rtol: f64,
    #[serde(default = "d_atol")]
    pub atol: f64,
    #[serde(default)]
    pub split: bool,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_substep")]
    pub substep: EncoderSubstep,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { t_end: 5.0, sample_dt: 0.05, rtol: 1e-6, atol: 1e-8, split: false, tau: 0.01, substep: EncoderSubstep::Rk4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardwareEncoder {
    /// First two Fock states.
    Identity,
    /// Shared encoder from a macro-iteration with the single-parameter ansatz.
    Solved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    #[serde(default = "d_hw_encoder")]
    pub encoder: HardwareEncoder,
    #[serde(default = "d_theta_min")]
    pub theta_min: f64,
    #[serde(default = "d_theta_max")]
    pub theta_max: f64,
    #[serde(default = "d_points")]
    pub points: usize,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        Self { encoder: HardwareEncoder::Identity, theta_min: -1.5, theta_max: 1.5, points: 301 }
    }
}

impl HardwareConfig {
    pub fn grid(&self) -> Vec<f64> {
        let n = self.points;
        (0..n).map(|k| self.theta_min + (self.theta_max - self.theta_min) * k as f64 / (n - 1) as f64).collect()
    }
}

/// A validated experiment configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hardware: Option<HardwareConfig>,
}

impl ExperimentConfig {
    pub fn holstein(&self) -> Option<&HolsteinModel> {
        match &self.model {
            ModelConfig::Holstein(m) => Some(m),
            ModelConfig::SpinBoson(_) => None,
        }
    }

    pub fn spin_boson(&self) -> Option<&SpinBosonModel> {
        match &self.model {
            ModelConfig::SpinBoson(m) => Some(m),
            ModelConfig::Holstein(_) => None,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        self.encoder.clone().unwrap_or_default()
    }

    pub fn solver(&self) -> SolverConfig {
        self.solver.clone().unwrap_or_default()
    }

    pub fn sweep(&self) -> SweepConfig {
        self.sweep.clone().unwrap_or_default()
    }

    pub fn dynamics(&self) -> DynamicsConfig {
        self.dynamics.clone().unwrap_or_default()
    }

    pub fn hardware(&self) -> HardwareConfig {
        self.hardware.clone().unwrap_or_default()
    }

    /// Canonical JSON (fixed field order, defaults included).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

const TOP_LEVEL: [&str; 9] = ["experiment", "seed", "output_dir", "model", "encoder", "solver", "sweep", "dynamics", "hardware"];

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config("", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, CliError> {
    let root: Value = serde_json::from_str(text).map_err(|e| CliError::config("", format!("invalid JSON: {e}")))?;
    let Value::Object(obj) = root else {
        return Err(CliError::config("", "config must be a JSON object"));
    };
    for key in obj.keys() {
        if !TOP_LEVEL.contains(&key.as_str()) {
            return Err(CliError::config(key, format!("unknown key `{key}`")));
        }
    }
    let experiment: Experiment = section(&obj, "experiment")?.ok_or_else(|| CliError::config("experiment", "missing key"))?;
    let seed: u64 = section(&obj, "seed")?.unwrap_or(0);
    let output_dir: PathBuf = section(&obj, "output_dir")?.unwrap_or_else(|| PathBuf::from("runs"));
    for key in ["encoder", "solver", "sweep", "dynamics", "hardware"] {
        if obj.contains_key(key) && !experiment.sections().contains(&key) {
            return Err(CliError::config(key, format!("section `{key}` is not used by {}", experiment.name())));
        }
    }
    let model_value = obj.get("model").cloned().unwrap_or_else(|| Value::Object(Map::new()));
    let model = if experiment.uses_holstein() {
        let mut m: HolsteinModel = typed(model_value, "model")?;
        if experiment == Experiment::HardwareCompile && !obj.get("model").is_some_and(|v| v.get("n_sites").is_some()) {
            m.n_sites = 2;
        }
        ModelConfig::Holstein(m)
    } else {
        ModelConfig::SpinBoson(typed(model_value, "model")?)
    };
    let take = |key: &str| experiment.sections().contains(&key);
    let cfg = ExperimentConfig {
        experiment,
        seed,
        output_dir,
        model,
        encoder: if take("encoder") { Some(encoder_section(&obj, experiment)?) } else { None },
        solver: if take("solver") { Some(section(&obj, "solver")?.unwrap_or_default()) } else { None },
        sweep: if take("sweep") { Some(section(&obj, "sweep")?.unwrap_or_default()) } else { None },
        dynamics: if take("dynamics") { Some(section(&obj, "dynamics")?.unwrap_or_default()) } else { None },
        hardware: if take("hardware") { Some(section(&obj, "hardware")?.unwrap_or_default()) } else { None },
    };
    validate(&cfg)?;
    Ok(cfg)
}

// The hardware fixture shares one encoder between its two modes by default.
fn encoder_section(obj: &Map<String, Value>, experiment: Experiment) -> Result<EncoderConfig, CliError> {
    let mut enc: EncoderConfig = section(obj, "encoder")?.unwrap_or_default();
    if experiment == Experiment::HardwareCompile && !obj.get("encoder").is_some_and(|v| v.get("shared").is_some()) {
        enc.shared = true;
    }
    Ok(enc)
}

fn section<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<Option<T>, CliError> {
    obj.get(key).map(|v| typed(v.clone(), key)).transpose()
}

fn typed<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." { prefix.to_string() } else { format!("{prefix}.{inner}") };
        CliError::config(path, e.into_inner().to_string())
    })
}

fn require(ok: bool, path: &str, msg: impl Into<String>) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(path, msg))
    }
}

fn finite_positive(v: f64, path: &str) -> Result<(), CliError> {
    require(v.is_finite() && v > 0.0, path, format!("must be a positive finite number, got {v}"))
}

fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    match &cfg.model {
        ModelConfig::Holstein(m) => {
            require(m.n_sites >= 2, "model.n_sites", "must be at least 2")?;
            require(m.n_levels >= 2, "model.n_levels", "must be at least 2")?;
            for (k, v) in [("v_hop", m.v_hop), ("omega", m.omega), ("g", m.g)] {
                require(v.is_finite(), &format!("model.{k}"), "must be finite")?;
            }
        }
        ModelConfig::SpinBoson(m) => {
            require(m.n_levels >= 2, "model.n_levels", "must be at least 2")?;
            require(m.epsilon.is_finite() && m.delta.is_finite(), "model", "epsilon and delta must be finite")?;
            match (&m.modes, &m.spectral_density) {
                (Some(modes), None) => {
                    for (j, mode) in modes.iter().enumerate() {
                        finite_positive(mode.omega, &format!("model.modes[{j}].omega"))?;
                        require(mode.g.is_finite(), &format!("model.modes[{j}].g"), "must be finite")?;
                    }
                }
                (None, Some(b)) => {
                    finite_positive(b.alpha, "model.spectral_density.alpha")?;
                    finite_positive(b.s, "model.spectral_density.s")?;
                    finite_positive(b.omega_c, "model.spectral_density.omega_c")?;
                    require(b.n_modes >= 1, "model.spectral_density.n_modes", "must be at least 1")?;
                }
                (None, None) => return Err(CliError::config("model.modes", "give `modes` or `spectral_density`")),
                (Some(_), Some(_)) => return Err(CliError::config("model.spectral_density", "conflicts with `modes`")),
            }
        }
    }
    if let Some(e) = &cfg.encoder {
        require((1..=4).contains(&e.n_qubits), "encoder.n_qubits", "must be between 1 and 4")?;
        let levels = match &cfg.model {
            ModelConfig::Holstein(m) => m.n_levels,
            ModelConfig::SpinBoson(m) => m.n_levels,
        };
        require(levels >= 1 << e.n_qubits, "encoder.n_qubits", format!("{levels} levels cannot fill {} qubits", e.n_qubits))?;
    }
    if let Some(s) = &cfg.solver {
        require(s.layers >= 1, "solver.layers", "must be at least 1")?;
        require(s.binary_layers.is_none_or(|l| l >= 1), "solver.binary_layers", "must be at least 1")?;
        require(s.max_iter >= 1, "solver.max_iter", "must be at least 1")?;
        require(s.vqe_max_iter >= 1, "solver.vqe_max_iter", "must be at least 1")?;
        finite_positive(s.e_tol, "solver.e_tol")?;
        finite_positive(s.vqe_grad_tol, "solver.vqe_grad_tol")?;
        finite_positive(s.encoder_tol, "solver.encoder_tol")?;
        require(s.shots.is_none_or(|n| n >= 2), "solver.shots", "must be at least 2")?;
    }
    if let Some(s) = &cfg.sweep {
        require(!s.g.is_empty(), "sweep.g", "must not be empty")?;
        for (i, g) in s.g.iter().enumerate() {
            require(g.is_finite(), &format!("sweep.g[{i}]"), "must be finite")?;
        }
        require(!s.n_levels.is_empty(), "sweep.n_levels", "must not be empty")?;
        for (i, n) in s.n_levels.iter().enumerate() {
            require(*n >= 2, &format!("sweep.n_levels[{i}]"), "must be at least 2")?;
        }
        require(!s.n_qubits.is_empty(), "sweep.n_qubits", "must not be empty")?;
        for (i, q) in s.n_qubits.iter().enumerate() {
            require((1..=4).contains(q), &format!("sweep.n_qubits[{i}]"), "must be between 1 and 4")?;
            for n in &s.n_levels {
                require(*n >= 1 << q, &format!("sweep.n_qubits[{i}]"), format!("{n} levels cannot fill {q} qubits"))?;
            }
        }
    }
    if let Some(d) = &cfg.dynamics {
        require(d.t_end.is_finite() && d.t_end >= 0.0, "dynamics.t_end", "must be finite and non-negative")?;
        finite_positive(d.sample_dt, "dynamics.sample_dt")?;
        finite_positive(d.rtol, "dynamics.rtol")?;
        finite_positive(d.atol, "dynamics.atol")?;
        finite_positive(d.tau, "dynamics.tau")?;
        if cfg.experiment == Experiment::SbmTrotter {
            let steps = d.t_end / d.tau;
            require((steps - steps.round()).abs() < 1e-9 * steps.max(1.0), "dynamics.tau", "t_end must be a multiple of tau")?;
            let stride = d.sample_dt / d.tau;
            require(stride.round() >= 1.0 && (stride - stride.round()).abs() < 1e-9 * stride, "dynamics.sample_dt", "must be a multiple of tau")?;
        }
    }
    if cfg.experiment == Experiment::HardwareCompile {
        let m = cfg.holstein().expect("holstein model");
        require(m.n_sites == 2, "model.n_sites", "the hardware fixture has 2 sites")?;
        let e = cfg.encoder();
        require(e.n_qubits == 1, "encoder.n_qubits", "the hardware fixture uses 1 qubit per mode")?;
        require(e.shared, "encoder.shared", "the hardware fixture needs a shared encoder")?;
        let h = cfg.hardware();
        require(h.points >= 2, "hardware.points", "must be at least 2")?;
        require(h.theta_min.is_finite() && h.theta_max.is_finite() && h.theta_max > h.theta_min, "hardware.theta_max", "must exceed theta_min")?;
        require(m.v_hop != 0.0, "model.v_hop", "energies are reported in units of V")?;
    }
    Ok(())
}

fn d_one() -> f64 {
    1.0
}
fn d_one_usize() -> usize {
    1
}
fn d_three() -> usize {
    3
}
fn d_ten() -> usize {
    10
}
fn d_thirty_two() -> usize {
    32
}
fn d_true() -> bool {
    true
}
fn d_e_tol() -> f64 {
    1e-7
}
fn d_vqe_max_iter() -> usize {
    500
}
fn d_encoder_tol() -> f64 {
    1e-8
}
fn d_g_values() -> Vec<f64> {
    vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
}
fn d_levels() -> Vec<usize> {
    vec![32]
}
fn d_qubits() -> Vec<usize> {
    vec![1, 2]
}
fn d_t_end() -> f64 {
    5.0
}
fn d_sample_dt() -> f64 {
    0.05
}
fn d_rtol() -> f64 {
    1e-6
}
fn d_atol() -> f64 {
    1e-8
}
fn d_tau() -> f64 {
    0.01
}
fn d_substep() -> EncoderSubstep {
    EncoderSubstep::Rk4
}
fn d_hw_encoder() -> HardwareEncoder {
    HardwareEncoder::Identity
}
fn d_theta_min() -> f64 {
    -1.5
}
fn d_theta_max() -> f64 {
    1.5
}
fn d_points() -> usize {
    301
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config_str(r#"{"experiment": "holstein_vqe", "model": {"g": 2.0}}"#).unwrap();
        let m = cfg.holstein().unwrap();
        assert_eq!((m.n_sites, m.n_levels, m.g), (3, 32, 2.0));
        assert_eq!(cfg.solver().layers, 3);
        assert_eq!(cfg.encoder().n_qubits, 1);
        assert!(cfg.sweep.is_none());
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = parse_config_str(r#"{"experiment": "holstein_vqe", "model": {"g": "three"}}"#).unwrap_err();
        assert_eq!(err.key_path(), Some("model.g"));
        let err = parse_config_str(r#"{"experiment": "holstein_sweep", "sweep": {"g": [1.0, "x"]}}"#).unwrap_err();
        assert_eq!(err.key_path(), Some("sweep.g[1]"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config_str(r#"{"experiment": "holstein_vqe", "model": {"gee": 1.0}}"#).unwrap_err();
        assert!(err.key_path().unwrap().starts_with("model"));
        assert!(err.to_string().contains("gee"));
        let err = parse_config_str(r#"{"experiment": "holstein_vqe", "colour": 1}"#).unwrap_err();
        assert_eq!(err.key_path(), Some("colour"));
        let err = parse_config_str(r#"{"experiment": "holstein_vqe", "dynamics": {}}"#).unwrap_err();
        assert_eq!(err.key_path(), Some("dynamics"));
    }

    #[test]
    fn range_errors_name_the_key() {
        let err = parse_config_str(r#"{"experiment": "holstein_vqe", "model": {"n_sites": 1}}"#).unwrap_err();
        assert_eq!(err.key_path(), Some("model.n_sites"));
        let err = parse_config_str(r#"{"experiment": "sbm_vqd", "model": {"modes": [{"omega": -1, "g": 1}]}}"#).unwrap_err();
        assert_eq!(err.key_path(), Some("model.modes[0].omega"));
        let err =
            parse_config_str(r#"{"experiment": "sbm_trotter", "model": {"modes": [{"omega": 1, "g": 1}]}, "dynamics": {"tau": 0.03, "t_end": 1.0}}"#)
                .unwrap_err();
        assert_eq!(err.key_path(), Some("dynamics.tau"));
        let err = parse_config_str(r#"{"experiment": "holstein_vqe", "model": {"n_levels": 2}, "encoder": {"n_qubits": 2}}"#).unwrap_err();
        assert_eq!(err.key_path(), Some("encoder.n_qubits"));
    }

    #[test]
    fn defaults_round_trip() {
        for text in [
            r#"{"experiment": "holstein_sweep"}"#,
            r#"{"experiment": "sbm_vqd", "seed": 4, "model": {"spectral_density": {"alpha": 10, "s": 0.25, "omega_c": 4, "n_modes": 8}, "n_levels": 6}}"#,
            r#"{"experiment": "sbm_trotter", "model": {"modes": [{"omega": 1, "g": 1}], "n_levels": 16}}"#,
            r#"{"experiment": "hardware_compile", "model": {"g": 3}}"#,
            r#"{"experiment": "schmidt_analysis"}"#,
        ] {
            let cfg = parse_config_str(text).unwrap();
            let again = parse_config_str(&cfg.canonical_json()).unwrap();
            assert_eq!(cfg, again);
            assert_eq!(cfg.canonical_json(), again.canonical_json());
        }
    }

    #[test]
    fn hardware_defaults_to_two_sites() {
        let cfg = parse_config_str(r#"{"experiment": "hardware_compile"}"#).unwrap();
        assert_eq!(cfg.holstein().unwrap().n_sites, 2);
        let err = parse_config_str(r#"{"experiment": "hardware_compile", "model": {"n_sites": 3}}"#).unwrap_err();
        assert_eq!(err.key_path(), Some("model.n_sites"));
    }
}
