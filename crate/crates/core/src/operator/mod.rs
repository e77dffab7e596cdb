//! Dense complex matrices and the operator primitives shared by every other
//! module.
//!
//! Storage is row-major. Composite indices of tensor products follow the
//! `(i_A, i_B)` convention: entry `(i_A * d_B + i_B, j_A * d_B + j_B)` of
//! `A ⊗ B` equals `A[i_A, j_A] * B[i_B, j_B]`.

mod sparse;
mod spectral;

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

pub use num_complex::Complex64 as C64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use sparse::SparseColumns;
pub use spectral::{
    hermitian_eig, liouvillian_apply, null_space, polar_unitary, positive_negative_parts, singular_values, solve,
    trace_norm, unitary_step, HermitianEigen,
};

use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// A dense complex matrix.
///
/// Operators on a Hilbert space are square; isometries and null-space bases
/// use the same type with `nrows != ncols`.
#[derive(Clone, PartialEq)]
pub struct ComplexOperator {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexOperator {
    pub fn zeros(dim: usize) -> Self {
        Self::zeros_rect(dim, dim)
    }

    pub fn zeros_rect(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            out.data[i * dim + i] = ONE;
        }
        out
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let nrows = rows.len();
        if nrows == 0 {
            return Err(Error::InvalidInput("matrix has no rows".into()));
        }
        let ncols = rows[0].len();
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} entries, row 0 has {ncols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: nrows,
            cols: ncols,
            data,
        })
    }

    /// Convenience constructor from real entries.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut out = Self::zeros(n);
        for (i, &d) in diag.iter().enumerate() {
            out.data[i * n + i] = d;
        }
        out
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d: Vec<C64> = diag.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_diagonal(&d)
    }

    /// `|ket⟩⟨bra|`.
    pub fn outer(ket: &[C64], bra: &[C64]) -> Self {
        Self::from_fn(ket.len(), bra.len(), |i, j| ket[i] * bra[j].conj())
    }

    /// Projector `|v⟩⟨v|` (not normalised).
    pub fn projector(v: &[C64]) -> Self {
        Self::outer(v, v)
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<C64>]) -> Self {
        Self::from_fn(rows, columns.len(), |i, j| columns[j][i])
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    /// Hilbert-space dimension of a square operator.
    pub fn dim(&self) -> usize {
        debug_assert!(self.is_square());
        self.rows
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    /// Horizontal concatenation.
    pub fn hstack(blocks: &[&ComplexOperator]) -> Result<Self> {
        let rows = blocks.first().map(|b| b.rows).unwrap_or(0);
        let mut cols = Vec::new();
        for b in blocks {
            if b.rows != rows {
                return Err(Error::dims(rows, b.rows));
            }
            for j in 0..b.cols {
                cols.push(b.column(j));
            }
        }
        Ok(Self::from_columns(rows, &cols))
    }

    pub fn ensure_square(&self) -> Result<()> {
        if self.is_square() && self.rows > 0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "expected a non-empty square operator, got {}x{}",
                self.rows, self.cols
            )))
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("operator has non-finite entries".into()))
        }
    }

    pub fn ensure_same_dim(&self, other: &ComplexOperator) -> Result<()> {
        if self.rows != other.rows {
            return Err(Error::dims(self.rows, other.rows));
        }
        if self.cols != other.cols {
            return Err(Error::dims(self.cols, other.cols));
        }
        Ok(())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: C64, other: &ComplexOperator) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .sum()
    }

    /// Matrix product.
    pub fn matmul(&self, other: &ComplexOperator) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul: inner dimensions {} and {} differ",
            self.cols, other.rows
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros_rect(m, n);
        if m == 0 || n == 0 || k == 0 {
            return out;
        }
        // SAFETY: Complex64 is repr(C) {re, im}, layout-identical to [f64; 2];
        // all three buffers are row-major with the stated strides.
        unsafe {
            matrixmultiply::zgemm(
                matrixmultiply::CGemmOption::Standard,
                matrixmultiply::CGemmOption::Standard,
                m,
                k,
                n,
                [1.0, 0.0],
                self.data.as_ptr() as *const [f64; 2],
                k as isize,
                1,
                other.data.as_ptr() as *const [f64; 2],
                n as isize,
                1,
                [0.0, 0.0],
                out.data.as_mut_ptr() as *mut [f64; 2],
                n as isize,
                1,
            );
        }
        out
    }

    /// `self · v`.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).fold(ZERO, |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    /// `m · self · m†`.
    pub fn conjugate_by(&self, m: &ComplexOperator) -> Self {
        m.matmul(self).matmul(&m.adjoint())
    }

    /// `AB - BA`.
    pub fn commutator(a: &ComplexOperator, b: &ComplexOperator) -> Self {
        &a.matmul(b) - &b.matmul(a)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Max-abs distance between two matrices of equal shape.
    pub fn max_abs_diff(&self, other: &ComplexOperator) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Max-abs entry of `A - A†`.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut dev = 0.0f64;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    pub fn ensure_hermitian(&self, tol: f64) -> Result<()> {
        self.ensure_square()?;
        self.ensure_finite()?;
        let deviation = self.hermitian_deviation();
        if deviation > tol {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(())
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        (self + &self.adjoint()).scale_real(0.5)
    }

    /// `Tr(A B)` without forming the product.
    pub fn trace_product(a: &ComplexOperator, b: &ComplexOperator) -> C64 {
        assert_eq!(a.cols, b.rows);
        assert_eq!(a.rows, b.cols);
        let mut acc = ZERO;
        for i in 0..a.rows {
            for k in 0..a.cols {
                acc += a.data[i * a.cols + k] * b.data[k * b.cols + i];
            }
        }
        acc
    }

    /// `⟨v| A |v⟩`.
    pub fn expectation(&self, v: &[C64]) -> C64 {
        let av = self.apply(v);
        v.iter().zip(&av).map(|(a, b)| a.conj() * b).sum()
    }
}

impl Index<(usize, usize)> for ComplexOperator {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexOperator {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &ComplexOperator {
    type Output = ComplexOperator;
    fn add(self, rhs: &ComplexOperator) -> ComplexOperator {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexOperator {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexOperator {
    type Output = ComplexOperator;
    fn sub(self, rhs: &ComplexOperator) -> ComplexOperator {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexOperator {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexOperator {
    type Output = ComplexOperator;
    fn mul(self, rhs: &ComplexOperator) -> ComplexOperator {
        self.matmul(rhs)
    }
}

impl Neg for &ComplexOperator {
    type Output = ComplexOperator;
    fn neg(self) -> ComplexOperator {
        self.scale_real(-1.0)
    }
}

impl AddAssign<&ComplexOperator> for ComplexOperator {
    fn add_assign(&mut self, rhs: &ComplexOperator) {
        self.axpy(ONE, rhs);
    }
}

impl SubAssign<&ComplexOperator> for ComplexOperator {
    fn sub_assign(&mut self, rhs: &ComplexOperator) {
        self.axpy(-ONE, rhs);
    }
}

impl fmt::Debug for ComplexOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexOperator {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:>9.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// JSON form: an array of rows, each entry a `[re, im]` pair.
impl Serialize for ComplexOperator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.rows)
            .map(|i| self.row(i).iter().map(|z| [z.re, z.im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComplexOperator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        let rows: Vec<Vec<C64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|[re, im]| C64::new(re, im)).collect())
            .collect();
        let op = ComplexOperator::from_rows(&rows).map_err(serde::de::Error::custom)?;
        op.ensure_finite().map_err(serde::de::Error::custom)?;
        Ok(op)
    }
}

/// Dimensions of the `S` and `R` tensor factors of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemShape {
    pub d_s: usize,
    pub d_r: usize,
}

impl SubsystemShape {
    pub fn new(d_s: usize, d_r: usize) -> Result<Self> {
        if d_s == 0 || d_r == 0 {
            return Err(Error::InvalidInput(format!(
                "subsystem dimensions must be positive, got ({d_s}, {d_r})"
            )));
        }
        Ok(Self { d_s, d_r })
    }

    pub fn dim(&self) -> usize {
        self.d_s * self.d_r
    }
}

/// Kronecker product `A ⊗ B`.
pub fn tensor(a: &ComplexOperator, b: &ComplexOperator) -> Result<ComplexOperator> {
    let rows = a
        .rows
        .checked_mul(b.rows)
        .ok_or_else(|| Error::InvalidInput("tensor product dimension overflows".into()))?;
    let cols = a
        .cols
        .checked_mul(b.cols)
        .ok_or_else(|| Error::InvalidInput("tensor product dimension overflows".into()))?;
    rows.checked_mul(cols)
        .ok_or_else(|| Error::InvalidInput("tensor product size overflows".into()))?;
    let mut out = ComplexOperator::zeros_rect(rows, cols);
    for ia in 0..a.rows {
        for ja in 0..a.cols {
            let x = a[(ia, ja)];
            if x == ZERO {
                continue;
            }
            for ib in 0..b.rows {
                let r = ia * b.rows + ib;
                for jb in 0..b.cols {
                    out.data[r * cols + ja * b.cols + jb] = x * b[(ib, jb)];
                }
            }
        }
    }
    Ok(out)
}

/// `Tr_R` of an operator on `S ⊗ R`.
pub fn partial_trace_r(a: &ComplexOperator, shape: SubsystemShape) -> Result<ComplexOperator> {
    a.ensure_square()?;
    if a.rows != shape.dim() {
        return Err(Error::dims(shape.dim(), a.rows));
    }
    let (ds, dr) = (shape.d_s, shape.d_r);
    Ok(ComplexOperator::from_fn(ds, ds, |i, j| {
        (0..dr).map(|r| a[(i * dr + r, j * dr + r)]).sum()
    }))
}

/// `Tr_S` of an operator on `S ⊗ R`.
pub fn partial_trace_s(a: &ComplexOperator, shape: SubsystemShape) -> Result<ComplexOperator> {
    a.ensure_square()?;
    if a.rows != shape.dim() {
        return Err(Error::dims(shape.dim(), a.rows));
    }
    let (ds, dr) = (shape.d_s, shape.d_r);
    Ok(ComplexOperator::from_fn(dr, dr, |i, j| {
        (0..ds).map(|s| a[(s * dr + i, s * dr + j)]).sum()
    }))
}

/// A validated density operator: Hermitian, positive semidefinite, unit trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DensityOperator {
    op: ComplexOperator,
}

impl DensityOperator {
    pub fn new(op: ComplexOperator, tol: &Tolerances) -> Result<Self> {
        op.ensure_hermitian(tol.herm)?;
        let tr = op.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(Error::InvalidInput(format!(
                "density operator has trace {:.12}{:+.3e}i",
                tr.re, tr.im
            )));
        }
        let eig = hermitian_eig(&op.hermitian_part(), f64::INFINITY)?;
        let min = eig.values.first().copied().unwrap_or(0.0);
        if min < -tol.psd {
            return Err(Error::InvalidInput(format!(
                "density operator is not positive semidefinite (min eigenvalue {min:.3e})"
            )));
        }
        Ok(Self { op })
    }

    /// Pure state `|ψ⟩⟨ψ|` after normalising `ψ`.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::InvalidInput("state vector has zero norm".into()));
        }
        let v: Vec<C64> = psi.iter().map(|z| z / norm).collect();
        Ok(Self {
            op: ComplexOperator::projector(&v),
        })
    }

    /// Maximally mixed state on `dim` levels.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            op: ComplexOperator::identity(dim).scale_real(1.0 / dim as f64),
        }
    }

    /// Wraps an operator produced by a trace- and positivity-preserving
    /// computation without re-running the spectral check.
    pub(crate) fn from_trusted(op: ComplexOperator) -> Self {
        Self { op }
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn op(&self) -> &ComplexOperator {
        &self.op
    }

    pub fn into_inner(self) -> ComplexOperator {
        self.op
    }

    /// `Tr(ρ B)`.
    pub fn expectation(&self, b: &ComplexOperator) -> C64 {
        ComplexOperator::trace_product(&self.op, b)
    }
}

impl<'de> Deserialize<'de> for DensityOperator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let op = ComplexOperator::deserialize(deserializer)?;
        DensityOperator::new(op, &Tolerances::default()).map_err(serde::de::Error::custom)
    }
}

/// Pauli matrices, handy in tests and examples.
pub mod pauli {
    use super::*;

    pub fn x() -> ComplexOperator {
        ComplexOperator::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap()
    }

    pub fn y() -> ComplexOperator {
        ComplexOperator::from_rows(&[vec![ZERO, -I], vec![I, ZERO]]).unwrap()
    }

    pub fn z() -> ComplexOperator {
        ComplexOperator::from_real_diagonal(&[1.0, -1.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_hermitian, random_operator, seeded_rng};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn tensor_of_identities_is_identity() {
        let i2 = ComplexOperator::identity(2);
        assert_eq!(tensor(&i2, &i2).unwrap(), ComplexOperator::identity(4));
    }

    #[test]
    fn tensor_of_diagonals() {
        let a = ComplexOperator::from_real_diagonal(&[1.0, 2.0]);
        let b = ComplexOperator::from_real_diagonal(&[3.0, 4.0]);
        let expected = ComplexOperator::from_real_diagonal(&[3.0, 4.0, 6.0, 8.0]);
        assert_eq!(tensor(&a, &b).unwrap(), expected);
    }

    #[test]
    fn tensor_matches_elementwise_definition() {
        let (x, z) = (pauli::x(), pauli::z());
        let t = tensor(&x, &z).unwrap();
        for ia in 0..2 {
            for ib in 0..2 {
                for ja in 0..2 {
                    for jb in 0..2 {
                        assert_eq!(t[(ia * 2 + ib, ja * 2 + jb)], x[(ia, ja)] * z[(ib, jb)]);
                    }
                }
            }
        }
        // σx ⊗ σz written out by hand
        let expected = ComplexOperator::from_real_rows(&[
            &[0.0, 0.0, 1.0, 0.0],
            &[0.0, 0.0, 0.0, -1.0],
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, -1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(t, expected);
    }

    #[test]
    fn partial_trace_of_factorised_operators() {
        let mut rng = seeded_rng(1);
        let x = random_operator(2, &mut rng);
        let y = random_operator(3, &mut rng);
        let shape = SubsystemShape::new(2, 3).unwrap();
        let tr_r = partial_trace_r(&tensor(&x, &ComplexOperator::identity(3)).unwrap(), shape).unwrap();
        assert!(tr_r.max_abs_diff(&x.scale_real(3.0)) < 1e-14);
        let tr_r = partial_trace_r(&tensor(&ComplexOperator::identity(2), &y).unwrap(), shape).unwrap();
        assert!(tr_r.max_abs_diff(&ComplexOperator::identity(2).scale(y.trace())) < 1e-14);
    }

    #[test]
    fn partial_trace_matches_index_contraction() {
        let mut rng = seeded_rng(2);
        let a = random_operator(6, &mut rng);
        let shape = SubsystemShape::new(2, 3).unwrap();
        let got = partial_trace_r(&a, shape).unwrap();
        for s in 0..2 {
            for t in 0..2 {
                let mut acc = ZERO;
                for r in 0..3 {
                    acc += a.as_slice()[(s * 3 + r) * 6 + (t * 3 + r)];
                }
                assert!((got[(s, t)] - acc).norm() < 1e-14);
            }
        }
        assert!((got.trace() - a.trace()).norm() < 1e-13);
        let got_s = partial_trace_s(&a, shape).unwrap();
        assert!((got_s.trace() - a.trace()).norm() < 1e-13);
    }

    #[test]
    fn partial_trace_rejects_bad_shape() {
        let a = ComplexOperator::identity(5);
        assert!(matches!(
            partial_trace_r(&a, SubsystemShape::new(2, 3).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matmul_agrees_with_naive_product() {
        let mut rng = seeded_rng(3);
        let a = random_operator(5, &mut rng);
        let b = random_operator(5, &mut rng);
        let p = a.matmul(&b);
        for i in 0..5 {
            for j in 0..5 {
                let naive: C64 = (0..5).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((p[(i, j)] - naive).norm() < 1e-13);
            }
        }
        let rect = ComplexOperator::from_fn(3, 2, |i, j| c(i as f64, j as f64));
        assert_eq!(a.columns(&[0, 1, 2]).matmul(&rect).nrows(), 5);
    }

    #[test]
    fn density_operator_validation() {
        let tol = Tolerances::default();
        assert!(DensityOperator::new(ComplexOperator::identity(2).scale_real(0.5), &tol).is_ok());
        assert!(DensityOperator::new(ComplexOperator::identity(2), &tol).is_err());
        let not_psd = ComplexOperator::from_real_diagonal(&[1.5, -0.5]);
        assert!(DensityOperator::new(not_psd, &tol).is_err());
        let mut rng = seeded_rng(4);
        assert!(DensityOperator::new(random_hermitian(3, &mut rng), &tol).is_err());
    }

    #[test]
    fn json_round_trip_keeps_entries() {
        let a =
            ComplexOperator::from_rows(&[vec![c(1.0, 0.5), c(0.0, -2.0)], vec![c(3.0, 0.0), c(-1.0, 1e-17)]]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "[[[1.0,0.5],[0.0,-2.0]],[[3.0,0.0],[-1.0,1e-17]]]");
        let back: ComplexOperator = serde_json::from_str(&s).unwrap();
        assert_eq!(a, back);
        assert!(serde_json::from_str::<ComplexOperator>("[[[1,0]],[[1,0],[2,0]]]").is_err());
    }
}
