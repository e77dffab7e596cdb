//! Column-compressed storage for operators with few nonzeros per column, such
//! as Pauli strings and projectors onto their eigenspaces.

use super::{ComplexOperator, C64, ZERO};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseColumns {
    dim: usize,
    col_start: Vec<usize>,
    row: Vec<usize>,
    val: Vec<C64>,
}

impl SparseColumns {
    pub fn from_dense(a: &ComplexOperator) -> Self {
        let dim = a.nrows();
        let mut col_start = Vec::with_capacity(dim + 1);
        let mut row = Vec::new();
        let mut val = Vec::new();
        col_start.push(0);
        for j in 0..a.ncols() {
            for i in 0..dim {
                let z = a[(i, j)];
                if z != ZERO {
                    row.push(i);
                    val.push(z);
                }
            }
            col_start.push(row.len());
        }
        Self {
            dim,
            col_start,
            row,
            val,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// Fraction of stored entries.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.dim * self.dim).max(1) as f64
    }

    fn column(&self, j: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let r = self.col_start[j]..self.col_start[j + 1];
        self.row[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    /// `out = A v`, skipping zero entries of `v`.
    pub fn apply_into(&self, v: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        for (j, &vj) in v.iter().enumerate() {
            if vj == ZERO {
                continue;
            }
            for (i, a) in self.column(j) {
                out[i] += a * vj;
            }
        }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.dim];
        self.apply_into(v, &mut out);
        out
    }

    /// `A ρ A†` in `O(nnz · dim)`.
    pub fn sandwich(&self, rho: &ComplexOperator) -> ComplexOperator {
        let n = self.dim;
        // T = A ρ, built row by row: T[i, :] = Σ_j A[i, j] ρ[j, :].
        let mut t = ComplexOperator::zeros(n);
        for j in 0..n {
            let rho_row = rho.row(j).to_vec();
            for (i, a) in self.column(j) {
                let dst = &mut t.as_mut_slice()[i * n..(i + 1) * n];
                for (d, &r) in dst.iter_mut().zip(&rho_row) {
                    *d += a * r;
                }
            }
        }
        // out = T A†: out[:, i] = Σ_j T[:, j] conj(A[i, j]).
        let mut out = ComplexOperator::zeros(n);
        for j in 0..n {
            for (i, a) in self.column(j) {
                let ac = a.conj();
                for r in 0..n {
                    out[(r, i)] += t[(r, j)] * ac;
                }
            }
        }
        out
    }

    /// `A† B A`.
    pub fn dual_sandwich(&self, b: &ComplexOperator) -> ComplexOperator {
        let n = self.dim;
        // (A† B A)[k, l] = Σ_{i, j} conj(A[i, k]) B[i, j] A[j, l]
        let mut ba = ComplexOperator::zeros(n);
        for l in 0..n {
            for (j, a) in self.column(l) {
                for r in 0..n {
                    ba[(r, l)] += b[(r, j)] * a;
                }
            }
        }
        let mut out = ComplexOperator::zeros(n);
        for k in 0..n {
            for (i, a) in self.column(k) {
                let ac = a.conj();
                for l in 0..n {
                    out[(k, l)] += ac * ba[(i, l)];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_hermitian, random_operator, seeded_rng};

    #[test]
    fn sparse_products_match_dense() {
        let mut rng = seeded_rng(21);
        let mut a = random_operator(5, &mut rng);
        for i in 0..5 {
            for j in 0..5 {
                if (i + 2 * j) % 3 != 0 {
                    a[(i, j)] = ZERO;
                }
            }
        }
        let s = SparseColumns::from_dense(&a);
        assert!(s.nnz() < 25);
        let rho = random_hermitian(5, &mut rng);
        assert!(s.sandwich(&rho).max_abs_diff(&rho.conjugate_by(&a)) < 1e-13);
        let dual = a.adjoint().matmul(&rho).matmul(&a);
        assert!(s.dual_sandwich(&rho).max_abs_diff(&dual) < 1e-13);
        let mut v: Vec<C64> = rho.column(0);
        v[2] = ZERO;
        let dense = a.apply(&v);
        let sparse = s.apply(&v);
        assert!(dense.iter().zip(&sparse).all(|(x, y)| (x - y).norm() < 1e-14));
    }
}
