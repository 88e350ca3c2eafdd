use thiserror::Error;

use crate::encoder::BasisEncoder;
use crate::ground::MacroIterationRecord;
use crate::numerics::C64;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate basis: smallest singular value {0:e} is below 1e-12")]
    DegenerateBasis(f64),

    #[error("a truncated mode needs at least 2 levels, got {0}")]
    Truncation(usize),

    #[error("index {index} out of range (bound {bound})")]
    Index { index: usize, bound: usize },

    #[error("{levels} levels cannot be encoded into {qubits} qubits")]
    Capacity { levels: usize, qubits: usize },

    #[error("dimension {dim} exceeds the resource cap {cap}")]
    Resource { dim: usize, cap: usize },

    #[error("operator is not Hermitian: {0}")]
    Hermiticity(String),

    #[error("unknown degree of freedom `{0}`")]
    UnknownDof(String),

    #[error("state corruption: {0}")]
    StateCorruption(String),

    #[error("stiff system: {0}")]
    Stiffness(String),

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64, last: Vec<C64> },

    #[error("root solve failed after {iterations} iterations (residual {residual:e})")]
    NoRoot { best: Vec<f64>, residual: f64, iterations: usize },

    #[error("encoder solve for `{label}` failed for every initial guess (best residual {residual:e})")]
    EncoderNotConverged { label: String, best: Box<BasisEncoder>, residual: f64 },

    #[error("encoder drift {0:e} after re-orthonormalization")]
    EncoderDrift(f64),

    #[error("macro-iteration aborted after {} records: {source}", records.len())]
    MacroAborted { records: Vec<MacroIterationRecord>, source: Box<Error> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
