//! Random instances shared by the property and acceptance suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vbse_core::circuits::HybridState;
use vbse_core::encoder::{compute_g_matrix, compute_j_table, encode_hamiltonian, half_encoded_hamiltonian, BasisEncoder, EncoderSet};
use vbse_core::numerics::{max_abs, qr_orthonormalize, CVector, ComplexMatrix, C64};
use vbse_core::operators::{DegreeOfFreedom, DofKind, ProductTerm, SumOfProducts};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
    let a = random_matrix(rng, n, n);
    (&a + a.adjoint()).scale(0.5)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    let v = CVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

pub fn random_isometry(rng: &mut ChaCha8Rng, n: usize, q: usize) -> ComplexMatrix {
    qr_orthonormalize(&random_matrix(rng, n, q)).unwrap()
}

/// Spin coupled to two modes with random Hermitian factors.
pub fn random_model(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> SumOfProducts {
    let dofs = vec![
        DegreeOfFreedom::new("s", DofKind::Spin, 2).unwrap(),
        DegreeOfFreedom::phonon("a", n1).unwrap(),
        DegreeOfFreedom::phonon("b", n2).unwrap(),
    ];
    let mut terms = Vec::new();
    for _ in 0..4 {
        let mut t = ProductTerm::new(rng.random_range(-1.0..1.0));
        if rng.random_bool(0.7) {
            t = t.with("s", random_hermitian(rng, 2));
        }
        if rng.random_bool(0.7) {
            t = t.with("a", random_hermitian(rng, n1));
        }
        if rng.random_bool(0.7) {
            t = t.with("b", random_hermitian(rng, n2));
        }
        terms.push(t);
    }
    SumOfProducts::new(dofs, terms).unwrap()
}

/// `D[m][n] = sum_r conj(phi(n, r)) (H' phi)(m, r)` with the mode index on `axis`.
pub fn dense_g(phi: &CVector, hv: &CVector, dims_phi: &[usize], dims_hv: &[usize], axis: usize) -> ComplexMatrix {
    let left: usize = dims_phi[..axis].iter().product();
    let right: usize = dims_phi[axis + 1..].iter().product();
    let (q, n) = (dims_phi[axis], dims_hv[axis]);
    let mut out = ComplexMatrix::zeros(n, q);
    for l in 0..left {
        for m in 0..n {
            for k in 0..q {
                for r in 0..right {
                    out[(m, k)] += phi[(l * q + k) * right + r].conj() * hv[(l * n + m) * right + r];
                }
            }
        }
    }
    out
}

/// Largest deviation between the G matrix contracted from J tables and the
/// dense contraction, over both modes of a random model with random encoders.
pub fn g_from_j_defect(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> f64 {
    let h = random_model(rng, n1, n2);
    let encs = EncoderSet::new()
        .with(BasisEncoder::new("a", 1, random_isometry(rng, n1, 2)).unwrap())
        .with(BasisEncoder::new("b", 1, random_isometry(rng, n2, 2)).unwrap());
    let h_enc = encode_hamiltonian(&h, &encs).unwrap();
    let phi = random_vector(rng, h_enc.total_dim());
    let state = HybridState::new(h_enc.dofs().to_vec(), phi.clone()).unwrap();
    let mut worst: f64 = 0.0;
    for (label, axis, n) in [("a", 1, n1), ("b", 2, n2)] {
        let j = compute_j_table(&state, &h, &encs, label).unwrap();
        let g = compute_g_matrix(&j, &h, encs.get(label).unwrap()).unwrap();
        let half = half_encoded_hamiltonian(&h, &encs, label).unwrap();
        let hv = half.apply(&phi).unwrap();
        let mut dims_hv = h_enc.dims();
        dims_hv[axis] = n;
        let dense = dense_g(&phi, &hv, &h_enc.dims(), &dims_hv, axis);
        worst = worst.max(max_abs(&(g - dense)));
    }
    worst
}
