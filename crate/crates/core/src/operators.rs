//! Truncated local operators and sum-of-products Hamiltonians.
//!
//! A [`SumOfProducts`] stores `sum_x c_x prod_k h[k]_x` with one dense
//! matrix per degree of freedom and term. Tensor products follow the
//! declaration order of `dofs`, first DOF most significant.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{kron, CVector, ComplexMatrix, C64};

/// Largest Hilbert-space dimension handled matrix-free (statevectors, oracles).
pub const STATE_DIM_CAP: usize = 1 << 22;
/// Largest dimension [`build_dense`] will materialize.
pub const DENSE_DIM_CAP: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofKind {
    ElectronSite,
    Spin,
    Phonon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegreeOfFreedom {
    pub label: String,
    pub kind: DofKind,
    /// Bra-side dimension.
    pub dim: usize,
    /// Ket-side dimension when it differs from `dim` (half-encoded operators).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ket_dim: Option<usize>,
}

impl DegreeOfFreedom {
    pub fn new(label: impl Into<String>, kind: DofKind, dim: usize) -> Result<Self> {
        let label = label.into();
        if dim < 2 {
            return Err(match kind {
                DofKind::Phonon => Error::Truncation(dim),
                _ => Error::InvalidParameter(format!("dimension of `{label}` must be at least 2, got {dim}")),
            });
        }
        Ok(Self { label, kind, dim, ket_dim: None })
    }

    pub fn phonon(label: impl Into<String>, n_levels: usize) -> Result<Self> {
        Self::new(label, DofKind::Phonon, n_levels)
    }

    pub fn ket_dim(&self) -> usize {
        self.ket_dim.unwrap_or(self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOperator {
    pub dof_label: String,
    pub matrix: ComplexMatrix,
}

impl LocalOperator {
    pub fn new(dof_label: impl Into<String>, matrix: ComplexMatrix) -> Self {
        Self { dof_label: dof_label.into(), matrix }
    }
}

/// `coefficient * prod_k factor_k`; DOFs without a factor carry the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductTerm {
    pub coefficient: C64,
    pub factors: Vec<LocalOperator>,
}

impl ProductTerm {
    pub fn new(coefficient: impl Into<C64>) -> Self {
        Self { coefficient: coefficient.into(), factors: Vec::new() }
    }

    /// Add a factor; replaces an existing factor on the same DOF.
    pub fn with(mut self, label: impl Into<String>, matrix: ComplexMatrix) -> Self {
        let label = label.into();
        self.factors.retain(|f| f.dof_label != label);
        self.factors.push(LocalOperator::new(label, matrix));
        self
    }

    pub fn factor(&self, label: &str) -> Option<&ComplexMatrix> {
        self.factors.iter().find(|f| f.dof_label == label).map(|f| &f.matrix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SumOfProductsDoc", into = "SumOfProductsDoc")]
pub struct SumOfProducts {
    dofs: Vec<DegreeOfFreedom>,
    terms: Vec<ProductTerm>,
}

impl SumOfProducts {
    pub fn new(dofs: Vec<DegreeOfFreedom>, terms: Vec<ProductTerm>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &dofs {
            if !seen.insert(d.label.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate DOF label `{}`", d.label)));
            }
            if d.dim == 0 || d.ket_dim() == 0 {
                return Err(Error::InvalidParameter(format!("DOF `{}` has zero dimension", d.label)));
            }
        }
        let out = Self { dofs, terms };
        for term in &out.terms {
            out.check_term(term)?;
        }
        Ok(out)
    }

    fn check_term(&self, term: &ProductTerm) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &term.factors {
            if !seen.insert(f.dof_label.as_str()) {
                return Err(Error::InvalidParameter(format!("two factors on `{}` in one term", f.dof_label)));
            }
            let dof = self.dof(&f.dof_label)?;
            if f.matrix.shape() != (dof.dim, dof.ket_dim()) {
                return Err(Error::Dimension(format!(
                    "factor on `{}` is {}x{}, DOF expects {}x{}",
                    f.dof_label,
                    f.matrix.nrows(),
                    f.matrix.ncols(),
                    dof.dim,
                    dof.ket_dim()
                )));
            }
            if !crate::numerics::is_finite(&f.matrix) {
                return Err(Error::Contract(format!("non-finite factor on `{}`", f.dof_label)));
            }
        }
        if !(term.coefficient.re.is_finite() && term.coefficient.im.is_finite()) {
            return Err(Error::Contract("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn dofs(&self) -> &[DegreeOfFreedom] {
        &self.dofs
    }

    pub fn terms(&self) -> &[ProductTerm] {
        &self.terms
    }

    pub fn push_term(&mut self, term: ProductTerm) -> Result<()> {
        self.check_term(&term)?;
        self.terms.push(term);
        Ok(())
    }

    pub fn dof(&self, label: &str) -> Result<&DegreeOfFreedom> {
        self.dofs.iter().find(|d| d.label == label).ok_or_else(|| Error::UnknownDof(label.to_string()))
    }

    pub fn axis(&self, label: &str) -> Result<usize> {
        self.dofs.iter().position(|d| d.label == label).ok_or_else(|| Error::UnknownDof(label.to_string()))
    }

    pub fn dims(&self) -> Vec<usize> {
        self.dofs.iter().map(|d| d.dim).collect()
    }

    pub fn ket_dims(&self) -> Vec<usize> {
        self.dofs.iter().map(DegreeOfFreedom::ket_dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.dofs.iter().map(|d| d.dim).product()
    }

    pub fn ket_total_dim(&self) -> usize {
        self.dofs.iter().map(DegreeOfFreedom::ket_dim).product()
    }

    /// Same operator with the DOFs listed in a new order.
    pub fn reorder(&self, labels: &[&str]) -> Result<Self> {
        if labels.len() != self.dofs.len() {
            return Err(Error::InvalidParameter("reorder needs every DOF exactly once".into()));
        }
        let dofs = labels.iter().map(|l| self.dof(l).cloned()).collect::<Result<Vec<_>>>()?;
        Self::new(dofs, self.terms.clone())
    }

    pub fn scaled(&self, alpha: C64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coefficient *= alpha;
        }
        out
    }

    /// Concatenate the terms of two operators on the same DOFs.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.dofs != other.dofs {
            return Err(Error::Dimension("operands act on different DOFs".into()));
        }
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        Ok(out)
    }

    /// Apply one term to a vector (matrix-free).
    pub fn apply_term(&self, term: &ProductTerm, v: &CVector) -> Result<CVector> {
        let mut out = CVector::zeros(self.total_dim());
        self.apply_term_into(term, v, &mut out)?;
        Ok(out)
    }

    /// `out += term v`.
    fn apply_term_into(&self, term: &ProductTerm, v: &CVector, out: &mut CVector) -> Result<()> {
        if v.len() != self.ket_total_dim() {
            return Err(Error::Dimension(format!("vector of length {} for operator with ket dimension {}", v.len(), self.ket_total_dim())));
        }
        let mut dims = self.ket_dims();
        // rectangular factors change the layout, so visit every DOF in order
        let mut steps: Vec<(usize, &ComplexMatrix)> = Vec::with_capacity(term.factors.len());
        for (axis, dof) in self.dofs.iter().enumerate() {
            match term.factor(&dof.label) {
                Some(m) => steps.push((axis, m)),
                None if dof.dim != dof.ket_dim() => {
                    return Err(Error::Dimension(format!("rectangular DOF `{}` needs an explicit factor", dof.label)));
                }
                None => {}
            }
        }
        let Some((&(last_axis, last_op), init)) = steps.split_last() else {
            out.axpy(term.coefficient, v, C64::new(1.0, 0.0));
            return Ok(());
        };
        let mut cur = std::borrow::Cow::Borrowed(v);
        for &(axis, m) in init {
            let next = apply_local(m, axis, &dims, &cur);
            dims[axis] = m.nrows();
            cur = std::borrow::Cow::Owned(next);
        }
        apply_local_into(last_op, last_axis, &dims, cur.as_slice(), out.as_mut_slice(), term.coefficient);
        Ok(())
    }

    /// `H v` without building the dense matrix.
    pub fn apply(&self, v: &CVector) -> Result<CVector> {
        let mut acc = CVector::zeros(self.total_dim());
        for term in &self.terms {
            self.apply_term_into(term, v, &mut acc)?;
        }
        Ok(acc)
    }
}

/// Apply `op` (rows = new dim, cols = dims[axis]) to one tensor axis of `v`.
pub fn apply_local(op: &ComplexMatrix, axis: usize, dims: &[usize], v: &CVector) -> CVector {
    let left: usize = dims[..axis].iter().product();
    let right: usize = dims[axis + 1..].iter().product();
    let mut out = CVector::zeros(left * op.nrows() * right);
    apply_local_into(op, axis, dims, v.as_slice(), out.as_mut_slice(), C64::new(1.0, 0.0));
    out
}

/// `dst += alpha * op[axis] src`, with `dst` laid out with `op.nrows()` on `axis`.
pub fn apply_local_into(op: &ComplexMatrix, axis: usize, dims: &[usize], src: &[C64], dst: &mut [C64], alpha: C64) {
    let d_in = dims[axis];
    debug_assert_eq!(op.ncols(), d_in);
    let d_out = op.nrows();
    let left: usize = dims[..axis].iter().product();
    let right: usize = dims[axis + 1..].iter().product();
    debug_assert_eq!(src.len(), left * d_in * right);
    debug_assert_eq!(dst.len(), left * d_out * right);
    let rows: Vec<Vec<(usize, C64)>> = (0..d_out)
        .map(|i| {
            (0..d_in)
                .filter_map(|j| {
                    let a = op[(i, j)];
                    (a.re != 0.0 || a.im != 0.0).then(|| (j, alpha * a))
                })
                .collect()
        })
        .collect();
    if right < 8 {
        for l in 0..left {
            for r in 0..right {
                let s = |j: usize| src[(l * d_in + j) * right + r];
                for (i, row) in rows.iter().enumerate() {
                    if row.is_empty() {
                        continue;
                    }
                    let mut acc = C64::new(0.0, 0.0);
                    for &(j, a) in row {
                        acc += a * s(j);
                    }
                    dst[(l * d_out + i) * right + r] += acc;
                }
            }
        }
        return;
    }
    for (i, row) in rows.iter().enumerate() {
        for &(j, a) in row {
            for l in 0..left {
                let s = &src[(l * d_in + j) * right..(l * d_in + j + 1) * right];
                let d = &mut dst[(l * d_out + i) * right..(l * d_out + i + 1) * right];
                for (x, y) in d.iter_mut().zip(s) {
                    *x += a * y;
                }
            }
        }
    }
}

/// Apply a square operator acting jointly on several axes (listed in
/// ascending order; the operator's basis is their row-major product).
pub fn apply_on_axes(op: &ComplexMatrix, axes: &[usize], dims: &[usize], v: &CVector) -> CVector {
    if axes.len() == 1 {
        return apply_local(op, axes[0], dims, v);
    }
    let n = dims.len();
    let mut strides = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let sub: usize = axes.iter().map(|&a| dims[a]).product();
    debug_assert_eq!(op.nrows(), sub);
    let mut offsets = vec![0usize; sub];
    for (s, off) in offsets.iter_mut().enumerate() {
        let mut rem = s;
        for &a in axes.iter().rev() {
            *off += (rem % dims[a]) * strides[a];
            rem /= dims[a];
        }
    }
    let rest: Vec<usize> = (0..n).filter(|k| !axes.contains(k)).collect();
    let n_rest: usize = rest.iter().map(|&k| dims[k]).product();
    let mut out = v.clone();
    let mut gathered = vec![C64::new(0.0, 0.0); sub];
    for r in 0..n_rest {
        let mut rem = r;
        let mut base = 0usize;
        for &k in rest.iter().rev() {
            base += (rem % dims[k]) * strides[k];
            rem /= dims[k];
        }
        for (g, off) in gathered.iter_mut().zip(&offsets) {
            *g = v[base + off];
        }
        for (i, off) in offsets.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (j, g) in gathered.iter().enumerate() {
                acc += op[(i, j)] * g;
            }
            out[base + off] = acc;
        }
    }
    out
}

/// Dense matrix `sum_x c_x (x)_k h[k]_x` with identity fill.
pub fn build_dense(h: &SumOfProducts) -> Result<ComplexMatrix> {
    let (rows, cols) = (h.total_dim(), h.ket_total_dim());
    if rows.max(cols) > DENSE_DIM_CAP {
        return Err(Error::Resource { dim: rows.max(cols), cap: DENSE_DIM_CAP });
    }
    let mut acc = ComplexMatrix::zeros(rows, cols);
    for term in h.terms() {
        let mut m = ComplexMatrix::from_element(1, 1, term.coefficient);
        for dof in h.dofs() {
            let f = match term.factor(&dof.label) {
                Some(f) => f.clone(),
                None if dof.dim == dof.ket_dim() => ComplexMatrix::identity(dof.dim, dof.dim),
                None => return Err(Error::Dimension(format!("rectangular DOF `{}` needs an explicit factor", dof.label))),
            };
            m = kron(&m, &f);
        }
        acc += m;
    }
    Ok(acc)
}

pub fn real_matrix(rows: usize, cols: usize, entries: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_row_slice(rows, cols, &entries.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>())
}

/// Truncated annihilation operator: `b|m> = sqrt(m)|m-1>`.
pub fn boson_annihilation(n_levels: usize) -> Result<ComplexMatrix> {
    if n_levels < 2 {
        return Err(Error::Truncation(n_levels));
    }
    let mut b = ComplexMatrix::zeros(n_levels, n_levels);
    for m in 1..n_levels {
        b[(m - 1, m)] = C64::new((m as f64).sqrt(), 0.0);
    }
    Ok(b)
}

pub fn boson_creation(n_levels: usize) -> Result<ComplexMatrix> {
    Ok(boson_annihilation(n_levels)?.adjoint())
}

/// `b^dagger b = diag(0, 1, ..., N-1)`.
pub fn number_operator(n_levels: usize) -> Result<ComplexMatrix> {
    if n_levels < 2 {
        return Err(Error::Truncation(n_levels));
    }
    Ok(ComplexMatrix::from_fn(n_levels, n_levels, |i, j| if i == j { C64::new(i as f64, 0.0) } else { C64::new(0.0, 0.0) }))
}

/// `b^dagger + b`.
pub fn boson_position(n_levels: usize) -> Result<ComplexMatrix> {
    let b = boson_annihilation(n_levels)?;
    Ok(&b + b.adjoint())
}

/// `b^dagger - b` (anti-Hermitian).
pub fn boson_momentum(n_levels: usize) -> Result<ComplexMatrix> {
    let b = boson_annihilation(n_levels)?;
    Ok(b.adjoint() - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
}

pub fn pauli(which: Pauli) -> ComplexMatrix {
    let (o, l, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
    let e = match which {
        Pauli::I => [l, o, o, l],
        Pauli::X => [o, l, l, o],
        Pauli::Y => [o, -i, i, o],
        Pauli::Z => [l, o, o, -l],
    };
    ComplexMatrix::from_row_slice(2, 2, &e)
}

/// Tensor product of Pauli matrices, first entry most significant.
pub fn pauli_string(ps: &[Pauli]) -> ComplexMatrix {
    ps.iter().fold(ComplexMatrix::identity(1, 1), |acc, &p| kron(&acc, &pauli(p)))
}

/// `|i><j|` on an `n`-dimensional site space.
pub fn site_operator(n: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(n, n);
    m[(i, j)] = C64::new(1.0, 0.0);
    m
}

/// Integer value of the `m`-th reflected binary Gray code.
pub fn gray_code(m: usize) -> usize {
    m ^ (m >> 1)
}

/// `m`-th element of the reflected Gray sequence as an `n_qubits`-bit string.
pub fn gray_index(m: usize, n_qubits: usize) -> Result<String> {
    let bound = 1usize.checked_shl(n_qubits as u32).unwrap_or(usize::MAX);
    if m >= bound {
        return Err(Error::Index { index: m, bound });
    }
    let g = gray_code(m);
    Ok((0..n_qubits).rev().map(|bit| if (g >> bit) & 1 == 1 { '1' } else { '0' }).collect())
}

/// Relabel an `N x N` operator into the `2^n_qubits` computational basis,
/// sending level `m` to the Gray code of `m`; unused basis states are zero.
pub fn binary_encode_operator(op: &ComplexMatrix, n_qubits: usize) -> Result<ComplexMatrix> {
    if !op.is_square() {
        return Err(Error::Dimension("binary encoding needs a square operator".into()));
    }
    let n = op.nrows();
    let dim = 1usize << n_qubits;
    if n > dim {
        return Err(Error::Capacity { levels: n, qubits: n_qubits });
    }
    let mut out = ComplexMatrix::zeros(dim, dim);
    for m in 0..n {
        for mp in 0..n {
            out[(gray_code(m), gray_code(mp))] = op[(m, mp)];
        }
    }
    Ok(out)
}

/// Complex entries serialized as `[re, im]` pairs, rows as nested arrays.
pub fn matrix_to_nested(m: &ComplexMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

pub fn matrix_from_nested(rows: &[Vec<[f64; 2]>]) -> Result<ComplexMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    crate::numerics::checked_matrix(r, c, rows.iter().flatten().map(|p| C64::new(p[0], p[1])).collect())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDoc {
    coeff: [f64; 2],
    factors: BTreeMap<String, Vec<Vec<[f64; 2]>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SumOfProductsDoc {
    dofs: Vec<DegreeOfFreedom>,
    terms: Vec<TermDoc>,
}

impl TryFrom<SumOfProductsDoc> for SumOfProducts {
    type Error = Error;

    fn try_from(doc: SumOfProductsDoc) -> Result<Self> {
        let terms = doc
            .terms
            .into_iter()
            .map(|t| {
                let mut term = ProductTerm::new(C64::new(t.coeff[0], t.coeff[1]));
                for (label, rows) in t.factors {
                    term = term.with(label, matrix_from_nested(&rows)?);
                }
                Ok(term)
            })
            .collect::<Result<Vec<_>>>()?;
        SumOfProducts::new(doc.dofs, terms)
    }
}

impl From<SumOfProducts> for SumOfProductsDoc {
    fn from(h: SumOfProducts) -> Self {
        SumOfProductsDoc {
            terms: h
                .terms
                .iter()
                .map(|t| TermDoc {
                    coeff: [t.coefficient.re, t.coefficient.im],
                    factors: t.factors.iter().map(|f| (f.dof_label.clone(), matrix_to_nested(&f.matrix))).collect(),
                })
                .collect(),
            dofs: h.dofs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{hermitian_eig, max_abs};

    fn spin(label: &str) -> DegreeOfFreedom {
        DegreeOfFreedom::new(label, DofKind::Spin, 2).unwrap()
    }

    #[test]
    fn ladder_operators() {
        let b2 = boson_annihilation(2).unwrap();
        assert_eq!(b2, real_matrix(2, 2, &[0., 1., 0., 0.]));
        let b3 = boson_annihilation(3).unwrap();
        assert!((b3[(1, 2)].re - 2f64.sqrt()).abs() < 1e-15);
        for n in 2..9 {
            let b = boson_annihilation(n).unwrap();
            assert!(max_abs(&(b.adjoint() * &b - number_operator(n).unwrap())) < 1e-12);
            // [b, b^dagger] = I - N |N-1><N-1|
            let comm = &b * b.adjoint() - b.adjoint() * &b;
            let mut expected = ComplexMatrix::identity(n, n);
            expected[(n - 1, n - 1)] -= C64::new(n as f64, 0.0);
            assert!(max_abs(&(comm - expected)) < 1e-12);
        }
        assert!(matches!(boson_annihilation(1), Err(Error::Truncation(1))));
    }

    #[test]
    fn pauli_algebra() {
        assert_eq!(pauli(Pauli::Z), real_matrix(2, 2, &[1., 0., 0., -1.]));
        assert_eq!(pauli(Pauli::X) * pauli(Pauli::X), ComplexMatrix::identity(2, 2));
        let xy = pauli(Pauli::X) * pauli(Pauli::Y);
        assert_eq!(xy, pauli(Pauli::Z) * C64::new(0.0, 1.0));
    }

    #[test]
    fn dense_single_term_and_linearity() {
        let dofs = vec![spin("a"), spin("b")];
        let h = SumOfProducts::new(dofs.clone(), vec![ProductTerm::new(1.0).with("a", pauli(Pauli::Z))]).unwrap();
        let d = build_dense(&h).unwrap();
        assert_eq!(d, kron(&pauli(Pauli::Z), &ComplexMatrix::identity(2, 2)));

        let g = SumOfProducts::new(dofs, vec![ProductTerm::new(C64::new(0.5, 0.0)).with("b", pauli(Pauli::X)).with("a", pauli(Pauli::Y))]).unwrap();
        let both = build_dense(&h.sum(&g).unwrap()).unwrap();
        assert!(max_abs(&(both - build_dense(&h).unwrap() - build_dense(&g).unwrap())) < 1e-15);
        let scaled = build_dense(&g.scaled(C64::new(-2.0, 1.0))).unwrap();
        assert!(max_abs(&(scaled - build_dense(&g).unwrap() * C64::new(-2.0, 1.0))) < 1e-15);
    }

    #[test]
    fn matrix_free_apply_matches_dense() {
        let dofs = vec![DegreeOfFreedom::new("e", DofKind::ElectronSite, 3).unwrap(), DegreeOfFreedom::phonon("p", 4).unwrap(), spin("s")];
        let h = SumOfProducts::new(
            dofs,
            vec![
                ProductTerm::new(0.7).with("p", boson_position(4).unwrap()).with("s", pauli(Pauli::Y)),
                ProductTerm::new(C64::new(0.1, -0.3)).with("e", site_operator(3, 0, 2)),
                ProductTerm::new(1.0).with("s", pauli(Pauli::X)).with("e", site_operator(3, 1, 1)).with("p", number_operator(4).unwrap()),
            ],
        )
        .unwrap();
        let v = CVector::from_fn(24, |i, _| C64::new((i as f64).sin(), (i as f64 * 0.3).cos()));
        let dense = build_dense(&h).unwrap() * &v;
        assert!((h.apply(&v).unwrap() - dense).norm() < 1e-12);
    }

    #[test]
    fn multi_axis_apply_matches_kron() {
        let dims = [2usize, 3, 2];
        let a = pauli(Pauli::X);
        let b = pauli(Pauli::Y);
        let v = CVector::from_fn(12, |i, _| C64::new(i as f64, 1.0 - i as f64));
        let joint = kron(&a, &b);
        let out = apply_on_axes(&joint, &[0, 2], &dims, &v);
        let full = kron(&kron(&a, &ComplexMatrix::identity(3, 3)), &b);
        assert!((out - full * v).norm() < 1e-12);
    }

    #[test]
    fn gray_sequence() {
        let seq: Vec<String> = (0..4).map(|m| gray_index(m, 2).unwrap()).collect();
        assert_eq!(seq, ["00", "01", "11", "10"]);
        assert_eq!(gray_index(2, 2).unwrap(), "11");
        assert_eq!(gray_index(3, 2).unwrap(), "10");
        for m in 0..63usize {
            assert_eq!((gray_code(m) ^ gray_code(m + 1)).count_ones(), 1);
        }
        assert!(matches!(gray_index(4, 2), Err(Error::Index { index: 4, bound: 4 })));
    }

    #[test]
    fn binary_encoding_relabels() {
        let x = binary_encode_operator(&boson_position(2).unwrap(), 1).unwrap();
        assert_eq!(x, pauli(Pauli::X));
        let d = binary_encode_operator(&number_operator(4).unwrap(), 2).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| d[(i, i)].re).collect();
        assert_eq!(diag, [0.0, 1.0, 3.0, 2.0]);
        assert!(matches!(binary_encode_operator(&number_operator(5).unwrap(), 2), Err(Error::Capacity { .. })));
        // padding keeps the spectrum plus zeros
        let p = binary_encode_operator(&boson_position(3).unwrap(), 2).unwrap();
        let (vals, _) = hermitian_eig(&p).unwrap();
        let (orig, _) = hermitian_eig(&boson_position(3).unwrap()).unwrap();
        let mut expected = orig.clone();
        expected.push(0.0);
        expected.sort_by(f64::total_cmp);
        for (a, b) in vals.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_and_strictness() {
        let h = SumOfProducts::new(
            vec![spin("s"), DegreeOfFreedom::phonon("m", 3).unwrap()],
            vec![ProductTerm::new(C64::new(0.5, -1.0)).with("m", boson_position(3).unwrap()).with("s", pauli(Pauli::Y))],
        )
        .unwrap();
        let text = serde_json::to_string(&h).unwrap();
        assert!(text.contains("\"coeff\":[0.5,-1.0]"));
        let back: SumOfProducts = serde_json::from_str(&text).unwrap();
        assert_eq!(back, h);
        let bad = text.replace("\"label\":\"m\"", "\"label\":\"q\"");
        assert!(serde_json::from_str::<SumOfProducts>(&bad).is_err());
    }

    #[test]
    fn rejects_inconsistent_terms() {
        let dofs = vec![spin("s")];
        assert!(SumOfProducts::new(dofs.clone(), vec![ProductTerm::new(1.0).with("x", pauli(Pauli::X))]).is_err());
        assert!(SumOfProducts::new(dofs, vec![ProductTerm::new(1.0).with("s", number_operator(3).unwrap())]).is_err());
        assert!(DegreeOfFreedom::phonon("p", 1).is_err());
    }
}
