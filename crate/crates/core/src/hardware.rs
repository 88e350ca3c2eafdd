//! Three-qubit fixture for the 2-site Holstein model: Pauli-string
//! Hamiltonian, compiled single-parameter circuit and its energy landscape.
//!
//! Qubit `q1` holds the electron (`|0>` = site 0), `q0` and `q2` hold the
//! phonon modes of sites 0 and 1.

use serde::{Deserialize, Serialize};

use crate::circuits::{expectation, HybridState};
use crate::encoder::{encode_hamiltonian, encode_local_operator, BasisEncoder, EncoderSet};
use crate::error::{Error, Result};
use crate::models::{build_holstein, holstein_phonon, HolsteinParams, ELECTRON};
use crate::numerics::{hermiticity_defect, max_abs, ComplexMatrix, C64};
use crate::operators::{
    apply_on_axes, boson_position, build_dense, number_operator, pauli, DegreeOfFreedom, DofKind, LocalOperator, Pauli, ProductTerm, SumOfProducts,
};

pub const QUBITS: [&str; 3] = ["q0", "q1", "q2"];

/// `m = i I + x X + y Y + z Z` for a Hermitian 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauliCoefficients {
    pub i: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl PauliCoefficients {
    pub fn decompose(m: &ComplexMatrix) -> Result<Self> {
        if m.shape() != (2, 2) {
            return Err(Error::Dimension(format!("expected a 2x2 matrix, got {:?}", m.shape())));
        }
        if hermiticity_defect(m) > 1e-12 {
            return Err(Error::Hermiticity("single-qubit operator is not Hermitian".into()));
        }
        Ok(Self { i: 0.5 * (m[(0, 0)].re + m[(1, 1)].re), x: m[(0, 1)].re, y: -m[(0, 1)].im, z: 0.5 * (m[(0, 0)].re - m[(1, 1)].re) })
    }

    fn terms(&self, scale: f64) -> Vec<(f64, Pauli)> {
        [(self.i, Pauli::I), (self.x, Pauli::X), (self.y, Pauli::Y), (self.z, Pauli::Z)]
            .into_iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|(c, p)| (scale * c, p))
            .collect()
    }
}

fn qubit_dofs() -> Vec<DegreeOfFreedom> {
    QUBITS.iter().map(|q| DegreeOfFreedom::new(*q, DofKind::Spin, 2).expect("qubit")).collect()
}

fn check_fixture(p: &HolsteinParams) -> Result<()> {
    p.validate()?;
    if p.n_sites != 2 {
        return Err(Error::InvalidParameter(format!("the hardware fixture needs 2 sites, got {}", p.n_sites)));
    }
    Ok(())
}

/// Encoded Pauli-string Hamiltonian for a shared encoder with
/// `C^dag b^dag b C = c1` and `C^dag (b^dag + b) C = c2`.
pub fn pauli_hamiltonian(v_hop: f64, omega: f64, g: f64, c1: &PauliCoefficients, c2: &PauliCoefficients) -> Result<SumOfProducts> {
    let mut terms = vec![ProductTerm::new(-v_hop).with("q1", pauli(Pauli::X))];
    for q in ["q0", "q2"] {
        for (c, p) in c1.terms(omega) {
            terms.push(if p == Pauli::I { ProductTerm::new(c) } else { ProductTerm::new(c).with(q, pauli(p)) });
        }
    }
    // a_0^dag a_0 = (1 + Z1)/2, a_1^dag a_1 = (1 - Z1)/2
    for (q, sign) in [("q0", 1.0), ("q2", -1.0)] {
        for (c, p) in c2.terms(0.5 * g * omega) {
            let with_p = |t: ProductTerm| {
                if p == Pauli::I {
                    t
                } else {
                    t.with(q, pauli(p))
                }
            };
            terms.push(with_p(ProductTerm::new(c)));
            terms.push(with_p(ProductTerm::new(sign * c).with("q1", pauli(Pauli::Z))));
        }
    }
    SumOfProducts::new(qubit_dofs(), terms)
}

/// Pauli coefficients of the encoded number and position operators.
pub fn encoded_coefficients(enc: &BasisEncoder) -> Result<(PauliCoefficients, PauliCoefficients)> {
    if enc.n_qubits() != 1 {
        return Err(Error::InvalidParameter("the hardware fixture uses one qubit per mode".into()));
    }
    let n = enc.n_levels();
    let f1 = encode_local_operator(&LocalOperator::new(enc.dof_label(), number_operator(n)?), enc)?;
    let f2 = encode_local_operator(&LocalOperator::new(enc.dof_label(), boson_position(n)?), enc)?;
    Ok((PauliCoefficients::decompose(&f1)?, PauliCoefficients::decompose(&f2)?))
}

/// Both phonon modes carrying copies of `enc`.
pub fn shared_encoders(p: &HolsteinParams, enc: &BasisEncoder) -> Result<EncoderSet> {
    check_fixture(p)?;
    let mut set = EncoderSet::new();
    for i in 0..2 {
        set.insert(BasisEncoder::new(holstein_phonon(i), enc.n_qubits(), enc.matrix().clone())?);
    }
    Ok(set)
}

/// Max entry difference between the encoded sum-of-products Hamiltonian
/// (qubit order `ph0, el, ph1`) and the Pauli form built from the encoder's
/// coefficients.
pub fn dense_defect(p: &HolsteinParams, enc: &BasisEncoder) -> Result<f64> {
    check_fixture(p)?;
    let h = build_holstein(p)?;
    let encoded = encode_hamiltonian(&h, &shared_encoders(p, enc)?)?;
    let ordered = encoded.reorder(&[&holstein_phonon(0), ELECTRON, &holstein_phonon(1)])?;
    let (c1, c2) = encoded_coefficients(enc)?;
    let pauli_form = pauli_hamiltonian(p.v_hop, p.omega, p.g, &c1, &c2)?;
    Ok(max_abs(&(build_dense(&ordered)? - build_dense(&pauli_form)?)))
}

fn rz(lambda: f64) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(2, 2);
    m[(0, 0)] = C64::from_polar(1.0, -0.5 * lambda);
    m[(1, 1)] = C64::from_polar(1.0, 0.5 * lambda);
    m
}

fn hadamard() -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    crate::operators::real_matrix(2, 2, &[s, s, s, -s])
}

/// CNOT on axes `(target, control)` in ascending order, control `q1`.
fn cnot_control_second() -> ComplexMatrix {
    // basis |target control>; flip target when control = 1
    let mut m = ComplexMatrix::zeros(4, 4);
    for (from, to) in [(0, 0), (1, 3), (2, 2), (3, 1)] {
        m[(to, from)] = C64::new(1.0, 0.0);
    }
    m
}

/// CNOT on axes `(control, target)` in ascending order, control `q1`.
fn cnot_control_first() -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(4, 4);
    for (from, to) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
        m[(to, from)] = C64::new(1.0, 0.0);
    }
    m
}

/// Output of the 4-CNOT compiled circuit on `|000>`.
///
/// Equals the shared-displacement ansatz `prod_j exp(t a_j^dag a_j (b_j^dag - b_j))`
/// on the uniform electron state at `t = -theta`.
pub fn compiled_state(theta: f64) -> Result<HybridState> {
    use std::f64::consts::FRAC_PI_2;
    let dims = [2, 2, 2];
    let mut v = HybridState::basis(qubit_dofs(), &[0, 0, 0])?.into_amplitudes();
    let one = |v: &crate::numerics::CVector, m: &ComplexMatrix, q: usize| apply_on_axes(m, &[q], &dims, v);
    for q in [0, 2] {
        v = one(&v, &rz(-FRAC_PI_2), q);
        v = one(&v, &hadamard(), q);
    }
    v = one(&v, &hadamard(), 1);
    let c01 = cnot_control_second();
    let c12 = cnot_control_first();
    v = apply_on_axes(&c01, &[0, 1], &dims, &v);
    v = one(&v, &rz(-theta), 0);
    v = apply_on_axes(&c01, &[0, 1], &dims, &v);
    v = one(&v, &rz(-theta), 0);
    v = apply_on_axes(&c12, &[1, 2], &dims, &v);
    v = one(&v, &rz(theta), 2);
    v = apply_on_axes(&c12, &[1, 2], &dims, &v);
    v = one(&v, &rz(-theta), 2);
    for q in [0, 2] {
        v = one(&v, &hadamard(), q);
        v = one(&v, &rz(FRAC_PI_2), q);
    }
    HybridState::normalized(qubit_dofs(), v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareReport {
    pub v_hop: f64,
    pub omega: f64,
    pub g: f64,
    pub c1: PauliCoefficients,
    pub c2: PauliCoefficients,
    /// Binary-encoded sum-of-products vs Pauli form.
    pub binary_dense_defect: f64,
    /// Same check with the supplied encoder.
    pub encoded_dense_defect: f64,
    /// `(theta, E(theta)/V)` of the compiled circuit under the encoded Hamiltonian.
    pub landscape: Vec<(f64, f64)>,
    pub minimum: (f64, f64),
}

/// Energy landscape of the compiled circuit under `h_pauli`, divided by `v_hop`.
pub fn landscape(h_pauli: &SumOfProducts, v_hop: f64, thetas: &[f64]) -> Result<Vec<(f64, f64)>> {
    if v_hop == 0.0 {
        return Err(Error::InvalidParameter("landscape is reported in units of V, which is zero".into()));
    }
    thetas.iter().map(|&t| Ok((t, expectation(&compiled_state(t)?, h_pauli)? / v_hop))).collect()
}

/// Coefficients, dense checks and landscape for a shared encoder on
/// `p.n_levels` levels.
pub fn hardware_report(p: &HolsteinParams, enc: &BasisEncoder, thetas: &[f64]) -> Result<HardwareReport> {
    check_fixture(p)?;
    if thetas.is_empty() {
        return Err(Error::InvalidParameter("landscape grid is empty".into()));
    }
    let binary_params = HolsteinParams { n_levels: 2, ..p.clone() };
    let binary = crate::encoder::gray_encoder(&DegreeOfFreedom::phonon(holstein_phonon(0), 2)?, 1)?;
    let binary_dense_defect = dense_defect(&binary_params, &binary)?;
    let encoded_dense_defect = dense_defect(p, enc)?;
    let (c1, c2) = encoded_coefficients(enc)?;
    let h_pauli = pauli_hamiltonian(p.v_hop, p.omega, p.g, &c1, &c2)?;
    let landscape = landscape(&h_pauli, p.v_hop, thetas)?;
    let minimum = landscape.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty");
    Ok(HardwareReport { v_hop: p.v_hop, omega: p.omega, g: p.g, c1, c2, binary_dense_defect, encoded_dense_defect, landscape, minimum })
}
