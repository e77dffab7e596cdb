//! Spectral routines backed by nalgebra.

use nalgebra::DMatrix;

use super::{ComplexOperator, C64, ZERO};
use crate::error::{Error, Result};

fn to_na(a: &ComplexOperator) -> DMatrix<C64> {
    DMatrix::from_row_slice(a.nrows(), a.ncols(), a.as_slice())
}

fn from_na(m: &DMatrix<C64>) -> ComplexOperator {
    ComplexOperator::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigen-decomposition of a Hermitian operator.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `values`.
    pub vectors: ComplexOperator,
}

impl HermitianEigen {
    /// `V f(Λ) V†`.
    pub fn map(&self, f: impl Fn(f64) -> C64) -> ComplexOperator {
        let n = self.values.len();
        let v = &self.vectors;
        let fv: Vec<C64> = self.values.iter().map(|&x| f(x)).collect();
        let scaled = ComplexOperator::from_fn(n, n, |i, k| v[(i, k)] * fv[k]);
        scaled.matmul(&v.adjoint())
    }
}

/// Rotates `column` so its first entry with modulus above `eps` is real and positive.
fn fix_phase(v: &mut ComplexOperator, column: usize, eps: f64) {
    let n = v.nrows();
    let pivot = (0..n).map(|i| v[(i, column)]).find(|z| z.norm() > eps);
    if let Some(p) = pivot {
        let phase = p.conj() / p.norm();
        for i in 0..n {
            v[(i, column)] *= phase;
        }
    }
}

/// Eigen-decomposition of `a`, which must be Hermitian within `tol_herm`.
///
/// Eigenvalues are ascending; every eigenvector has its first non-negligible
/// component real and positive.
pub fn hermitian_eig(a: &ComplexOperator, tol_herm: f64) -> Result<HermitianEigen> {
    a.ensure_square()?;
    a.ensure_finite()?;
    let dev = a.hermitian_deviation();
    if dev > tol_herm {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::try_new(to_na(&a.hermitian_part()), 1e-15, 0)
        .ok_or_else(|| Error::Eigensolver("Hermitian eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = ComplexOperator::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    let eps = 1e-12 / (n as f64).sqrt();
    for j in 0..n {
        fix_phase(&mut vectors, j, eps);
    }
    Ok(HermitianEigen { values, vectors })
}

/// Singular values in descending order.
pub fn singular_values(a: &ComplexOperator) -> Result<Vec<f64>> {
    a.ensure_finite()?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    let svd = nalgebra::SVD::try_new(to_na(a), false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigensolver("SVD did not converge".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Sum of singular values. Hermitian inputs take the cheaper eigenvalue route.
pub fn trace_norm(a: &ComplexOperator) -> Result<f64> {
    a.ensure_finite()?;
    if a.is_square() && a.hermitian_deviation() <= 1e-13 * (1.0 + a.max_abs()) {
        let eig = hermitian_eig(a, f64::INFINITY)?;
        return Ok(eig.values.iter().map(|x| x.abs()).sum());
    }
    Ok(singular_values(a)?.iter().sum())
}

/// Orthonormal basis (as columns) of the right null space of `a`.
///
/// Singular values at or below `tol` count as zero.
pub fn null_space(a: &ComplexOperator, tol: f64) -> Result<ComplexOperator> {
    a.ensure_finite()?;
    let (m, n) = (a.nrows(), a.ncols());
    if n == 0 {
        return Ok(ComplexOperator::zeros_rect(0, 0));
    }
    // Thin SVD of a wide matrix drops the null directions; pad with zero rows.
    let padded = if m < n {
        let mut p = DMatrix::from_element(n, n, ZERO);
        p.view_mut((0, 0), (m, n)).copy_from(&to_na(a));
        p
    } else {
        to_na(a)
    };
    let svd = nalgebra::SVD::try_new(padded, false, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigensolver("SVD did not converge".into()))?;
    let v_t = svd.v_t.expect("requested V^T");
    let cols: Vec<Vec<C64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= tol)
        .map(|(k, _)| (0..n).map(|i| v_t[(k, i)].conj()).collect())
        .collect();
    let mut basis = ComplexOperator::from_columns(n, &cols);
    let eps = 1e-12 / (n as f64).sqrt();
    for j in 0..basis.ncols() {
        fix_phase(&mut basis, j, eps);
    }
    Ok(basis)
}

/// `e^{-iHt}` via the eigen-decomposition of `h`.
pub fn unitary_step(h: &ComplexOperator, t: f64, tol_herm: f64) -> Result<ComplexOperator> {
    let eig = hermitian_eig(h, tol_herm)?;
    Ok(eig.map(|x| C64::from_polar(1.0, -x * t)))
}

/// `-i[H, A]`.
pub fn liouvillian_apply(h: &ComplexOperator, a: &ComplexOperator) -> Result<ComplexOperator> {
    h.ensure_same_dim(a)?;
    Ok(ComplexOperator::commutator(h, a).scale(C64::new(0.0, -1.0)))
}

/// Positive and negative parts `A = A₊ − A₋` of a Hermitian operator.
pub fn positive_negative_parts(a: &ComplexOperator, tol_herm: f64) -> Result<(ComplexOperator, ComplexOperator)> {
    let eig = hermitian_eig(a, tol_herm)?;
    let plus = eig.map(|x| C64::new(x.max(0.0), 0.0));
    let minus = eig.map(|x| C64::new((-x).max(0.0), 0.0));
    Ok((plus, minus))
}

/// Unitary factor of the polar decomposition of a square matrix.
pub fn polar_unitary(a: &ComplexOperator) -> Result<ComplexOperator> {
    a.ensure_square()?;
    let svd = nalgebra::SVD::try_new(to_na(a), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigensolver("SVD did not converge".into()))?;
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    Ok(from_na(&(u * v_t)))
}

/// Solves `a x = b` for square invertible `a`.
pub fn solve(a: &ComplexOperator, b: &ComplexOperator) -> Result<ComplexOperator> {
    a.ensure_square()?;
    if a.nrows() != b.nrows() {
        return Err(Error::dims(a.nrows(), b.nrows()));
    }
    let lu = to_na(a).lu();
    let x = lu
        .solve(&to_na(b))
        .ok_or_else(|| Error::Eigensolver("singular linear system".into()))?;
    Ok(from_na(&x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::pauli;
    use crate::random::{random_hermitian, random_operator, seeded_rng};
    use proptest::prelude::*;

    #[test]
    fn trace_norm_of_simple_operators() {
        assert!((trace_norm(&ComplexOperator::identity(3)).unwrap() - 3.0).abs() < 1e-14);
        assert!((trace_norm(&pauli::z()).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn trace_norm_of_hermitian_matches_singular_values() {
        let mut rng = seeded_rng(11);
        let h = random_hermitian(4, &mut rng);
        let via_eig = trace_norm(&h).unwrap();
        let via_svd: f64 = singular_values(&h).unwrap().iter().sum();
        assert!((via_eig - via_svd).abs() < 1e-12);
    }

    #[test]
    fn trace_norm_rejects_nan() {
        let mut a = ComplexOperator::identity(2);
        a[(0, 1)] = C64::new(f64::NAN, 0.0);
        assert!(matches!(trace_norm(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn eig_of_diagonal_and_sigma_x() {
        let e = hermitian_eig(&ComplexOperator::from_real_diagonal(&[2.0, 1.0]), 1e-10).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0]);
        let e = hermitian_eig(&pauli::x(), 1e-10).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let v = &e.vectors;
        assert!((v[(0, 0)] - C64::new(r, 0.0)).norm() < 1e-14);
        assert!((v[(1, 0)] - C64::new(-r, 0.0)).norm() < 1e-14);
        assert!((v[(0, 1)] - C64::new(r, 0.0)).norm() < 1e-14);
        assert!((v[(1, 1)] - C64::new(r, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let a = ComplexOperator::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        assert!(matches!(hermitian_eig(&a, 1e-10), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let mut rng = seeded_rng(12);
        let h = random_hermitian(8, &mut rng);
        let e = hermitian_eig(&h, 1e-10).unwrap();
        let rebuilt = e.map(|x| C64::new(x, 0.0));
        assert!(rebuilt.max_abs_diff(&h) < 1e-10);
        let vv = e.vectors.adjoint().matmul(&e.vectors);
        assert!(vv.max_abs_diff(&ComplexOperator::identity(8)) < 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn unitary_step_cases() {
        let mut rng = seeded_rng(13);
        let h = random_hermitian(4, &mut rng);
        let u0 = unitary_step(&h, 0.0, 1e-10).unwrap();
        assert!(u0.max_abs_diff(&ComplexOperator::identity(4)) < 1e-12);
        let u = unitary_step(&pauli::z(), std::f64::consts::FRAC_PI_2, 1e-10).unwrap();
        let expected = ComplexOperator::from_diagonal(&[C64::new(0.0, -1.0), C64::new(0.0, 1.0)]);
        assert!(u.max_abs_diff(&expected) < 1e-14);
        let (t1, t2) = (0.37, -1.21);
        let lhs = unitary_step(&h, t1, 1e-10)
            .unwrap()
            .matmul(&unitary_step(&h, t2, 1e-10).unwrap());
        let rhs = unitary_step(&h, t1 + t2, 1e-10).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn liouvillian_pauli_algebra() {
        let h = pauli::z();
        assert!(liouvillian_apply(&h, &h).unwrap().max_abs() < 1e-15);
        let l = liouvillian_apply(&pauli::z(), &pauli::x()).unwrap();
        assert!(l.max_abs_diff(&pauli::y().scale_real(2.0)) < 1e-15);
        assert!(liouvillian_apply(&h, &ComplexOperator::identity(3)).is_err());
    }

    #[test]
    fn liouvillian_matches_finite_difference() {
        let mut rng = seeded_rng(14);
        let h = random_hermitian(3, &mut rng);
        let a = random_hermitian(3, &mut rng);
        let step = 1e-5;
        let ev = |t: f64| a.conjugate_by(&unitary_step(&h, t, 1e-10).unwrap());
        let fd = (&ev(step) - &ev(-step)).scale_real(0.5 / step);
        assert!(fd.max_abs_diff(&liouvillian_apply(&h, &a).unwrap()) < 1e-6);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = ComplexOperator::from_real_rows(&[&[1.0, 1.0, 0.0]]).unwrap();
        let ns = null_space(&a, 1e-12).unwrap();
        assert_eq!(ns.ncols(), 2);
        assert!(a.matmul(&ns).max_abs() < 1e-14);
    }

    #[test]
    fn polar_unitary_recovers_unitary() {
        let mut rng = seeded_rng(15);
        let u = unitary_step(&random_hermitian(3, &mut rng), 1.0, 1e-10).unwrap();
        let p = polar_unitary(&u.scale_real(2.5)).unwrap();
        assert!(p.max_abs_diff(&u) < 1e-12);
        let a = random_operator(3, &mut rng);
        let x = solve(&a, &u).unwrap();
        assert!(a.matmul(&x).max_abs_diff(&u) < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn trace_norm_is_a_norm(seed in any::<u64>(), dim in 1usize..6) {
            let mut rng = seeded_rng(seed);
            let a = random_hermitian(dim, &mut rng);
            let b = random_hermitian(dim, &mut rng);
            let (na, nb) = (trace_norm(&a).unwrap(), trace_norm(&b).unwrap());
            prop_assert!(na >= 0.0);
            prop_assert!(trace_norm(&(&a + &b)).unwrap() <= na + nb + 1e-12);
            prop_assert!(trace_norm(&ComplexOperator::zeros(dim)).unwrap() < 1e-15);
            let gen = random_operator(dim, &mut rng);
            let ng = trace_norm(&gen).unwrap();
            prop_assert!((trace_norm(&gen.scale_real(-2.0)).unwrap() - 2.0 * ng).abs() < 1e-10);
        }

        #[test]
        fn unitary_step_is_unitary(seed in any::<u64>(), dim in 1usize..7, t in -5.0f64..5.0) {
            let mut rng = seeded_rng(seed);
            let u = unitary_step(&random_hermitian(dim, &mut rng), t, 1e-10).unwrap();
            let uu = u.adjoint().matmul(&u);
            prop_assert!(uu.max_abs_diff(&ComplexOperator::identity(dim)) <= 1e-10);
        }

        #[test]
        fn liouvillian_output_is_traceless(seed in any::<u64>(), dim in 1usize..6) {
            let mut rng = seeded_rng(seed);
            let h = random_hermitian(dim, &mut rng);
            let a = random_operator(dim, &mut rng);
            prop_assert!(liouvillian_apply(&h, &a).unwrap().trace().norm() < 1e-12);
            let ah = random_hermitian(dim, &mut rng);
            prop_assert!(liouvillian_apply(&h, &ah).unwrap().hermitian_deviation() < 1e-12);
        }

        #[test]
        fn partial_trace_of_tensor_recovers_factors(seed in any::<u64>(), ds in 1usize..4, dr in 1usize..4) {
            use crate::operator::{partial_trace_r, partial_trace_s, tensor, SubsystemShape};
            let mut rng = seeded_rng(seed);
            let x = random_operator(ds, &mut rng);
            let y = random_operator(dr, &mut rng);
            let shape = SubsystemShape::new(ds, dr).unwrap();
            let t = tensor(&x, &y).unwrap();
            prop_assert!(partial_trace_r(&t, shape).unwrap().max_abs_diff(&x.scale(y.trace())) < 1e-12);
            prop_assert!(partial_trace_s(&t, shape).unwrap().max_abs_diff(&y.scale(x.trace())) < 1e-12);
        }
    }
}
