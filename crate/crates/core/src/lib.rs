//! Classical simulation engine for the variational basis state encoder.
//!
//! Phonon modes truncated to `N` Fock levels are compressed into `2^N_l`
//! qubit basis states through an isometry `C` (N x 2^N_l) that is optimized
//! together with a parameterized circuit. The crate covers the ground-state
//! macro-iteration (VQE + encoder solve), variational and Trotterized
//! dynamics with encoder equations of motion, the Holstein and spin-boson
//! model builders, and brute-force oracles used to validate everything.

pub mod circuits;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod ground;
pub mod hardware;
pub mod models;
pub mod numerics;
pub mod operators;

pub use error::{Error, Result};
pub use numerics::{CVector, ComplexMatrix, C64};
