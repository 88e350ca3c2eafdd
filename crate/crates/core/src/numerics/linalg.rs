use nalgebra::{DMatrix, DVector, SymmetricEigen, QR};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Build a matrix from row-major entries, rejecting NaN/Inf and bad shapes.
pub fn checked_matrix(rows: usize, cols: usize, entries: Vec<C64>) -> Result<ComplexMatrix> {
    if entries.len() != rows * cols {
        return Err(Error::Dimension(format!("{} entries for a {rows}x{cols} matrix", entries.len())));
    }
    if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Contract("matrix entries must be finite".into()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &entries))
}

pub fn is_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Largest entry modulus.
pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// `max |a - a^dagger|` entrywise; `INFINITY` for non-square input.
pub fn hermiticity_defect(a: &ComplexMatrix) -> f64 {
    if !a.is_square() {
        return f64::INFINITY;
    }
    max_abs(&(a - a.adjoint()))
}

/// `max |C^dagger C - I|` entrywise.
pub fn orthonormality_defect(c: &ComplexMatrix) -> f64 {
    let gram = c.adjoint() * c;
    max_abs(&(gram - ComplexMatrix::identity(c.ncols(), c.ncols())))
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
///
/// Column `i` of the returned matrix is the eigenvector for eigenvalue `i`.
pub fn hermitian_eig(a: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    if !a.is_square() {
        return Err(Error::Contract(format!("hermitian_eig needs a square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    let defect = hermiticity_defect(a);
    if defect > 1e-10 {
        return Err(Error::Hermiticity(format!("max |a - a^dagger| = {defect:e}")));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), ComplexMatrix::zeros(0, 0)));
    }
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Orthonormalize the columns of `c` by a QR decomposition.
///
/// Phases are fixed so that the triangular factor has a real positive
/// diagonal, which makes the map a projection: applying it to an
/// orthonormal input returns the input.
pub fn qr_orthonormalize(c: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (rows, cols) = c.shape();
    if cols > rows {
        return Err(Error::Contract(format!("cannot orthonormalize {cols} columns in dimension {rows}")));
    }
    if !is_finite(c) {
        return Err(Error::Contract("non-finite entries".into()));
    }
    let smallest = c.clone().svd(false, false).singular_values.iter().fold(f64::INFINITY, |acc, &s| acc.min(s));
    if cols > 0 && !(smallest > 1e-12) {
        return Err(Error::DegenerateBasis(smallest));
    }
    let qr = QR::new(c.clone());
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    Ok(q)
}

fn spectral_exp(vectors: &ComplexMatrix, phases: impl Iterator<Item = C64>) -> ComplexMatrix {
    let d = DVector::from_iterator(vectors.ncols(), phases);
    let mut scaled = vectors.clone();
    for (j, f) in d.iter().enumerate() {
        let mut col = scaled.column_mut(j);
        col *= *f;
    }
    scaled * vectors.adjoint()
}

/// Matrix exponential.
///
/// Hermitian and anti-Hermitian inputs go through the eigen-decomposition
/// (the anti-Hermitian result is unitary to rounding); anything else uses
/// scaling and squaring with a Pade approximant.
pub fn matrix_exp(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !a.is_square() {
        return Err(Error::Contract(format!("matrix_exp needs a square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if !is_finite(a) {
        return Err(Error::Contract("non-finite entries".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(a.clone());
    }
    let scale = max_abs(a).max(1.0);
    let tol = 1e-14 * scale;
    if max_abs(&(a - a.adjoint())) <= tol {
        let (values, vectors) = hermitian_eig(a)?;
        return Ok(spectral_exp(&vectors, values.iter().map(|&l| C64::new(l.exp(), 0.0))));
    }
    if max_abs(&(a + a.adjoint())) <= tol {
        // a = i h with h Hermitian
        let h = a.map(|z| z * C64::new(0.0, -1.0));
        let (values, vectors) = hermitian_eig(&h)?;
        return Ok(spectral_exp(&vectors, values.iter().map(|&l| C64::new(0.0, l).exp())));
    }
    Ok(a.clone().exp())
}
