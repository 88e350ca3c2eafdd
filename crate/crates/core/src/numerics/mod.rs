//! Dense complex linear algebra, root finding, quasi-Newton minimization,
//! adaptive Runge-Kutta integration and Krylov kernels.
//!
//! Everything here is a pure function of its inputs.

mod krylov;
mod linalg;
mod nonlinear;
mod ode;
mod optimize;

pub use krylov::{chebyshev_propagate, chebyshev_propagate_many, krylov_propagate, lanczos_ground, KrylovOptions};
pub use linalg::{
    checked_matrix, hermitian_eig, hermiticity_defect, is_finite, kron, matrix_exp, max_abs, orthonormality_defect, qr_orthonormalize, CVector,
    ComplexMatrix, C64,
};
pub use nonlinear::{solve_nonlinear, solve_nonlinear_with, DfSaneOptions, Root};
pub use ode::{rk45_integrate, rk45_integrate_with_hook, Rk45Options};
pub use optimize::{bfgs_minimize, BfgsOptions, Minimum};
