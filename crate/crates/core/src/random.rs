//! Seeded generators for random operators, states and channels.
//!
//! Used by the test suites and by the CLI's synthetic inputs. Every generator
//! takes a caller-owned RNG, so sequences are reproducible per seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::KrausChannel;
use crate::error::{Error, Result};
use crate::operator::{hermitian_eig, polar_unitary, tensor, ComplexOperator, DensityOperator, SubsystemShape, C64};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Ginibre matrix with i.i.d. standard complex normal entries.
pub fn random_rect(rows: usize, cols: usize, rng: &mut impl Rng) -> ComplexOperator {
    ComplexOperator::from_fn(rows, cols, |_, _| gaussian(rng))
}

pub fn random_operator(dim: usize, rng: &mut impl Rng) -> ComplexOperator {
    random_rect(dim, dim, rng)
}

pub fn random_hermitian(dim: usize, rng: &mut impl Rng) -> ComplexOperator {
    random_operator(dim, rng).hermitian_part()
}

/// Random Hermitian operator rescaled to unit trace norm.
pub fn random_hermitian_unit_norm(dim: usize, rng: &mut impl Rng) -> ComplexOperator {
    let h = random_hermitian(dim, rng);
    let n = crate::operator::trace_norm(&h).expect("finite by construction");
    h.scale_real(1.0 / n)
}

pub fn random_unitary(dim: usize, rng: &mut impl Rng) -> ComplexOperator {
    polar_unitary(&random_operator(dim, rng)).expect("Ginibre matrices are almost surely invertible")
}

pub fn random_state_vector(dim: usize, rng: &mut impl Rng) -> Vec<C64> {
    let v: Vec<C64> = (0..dim).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / n).collect()
}

pub fn random_density(dim: usize, rng: &mut impl Rng) -> DensityOperator {
    let g = random_operator(dim, rng);
    let p = g.matmul(&g.adjoint());
    let tr = p.trace().re;
    DensityOperator::from_trusted(p.scale_real(1.0 / tr).hermitian_part())
}

/// Orthonormalises the columns of a full-column-rank matrix: `G (G†G)^{-1/2}`.
fn orthonormalize(g: &ComplexOperator) -> Result<ComplexOperator> {
    let gram = g.adjoint().matmul(g);
    let eig = hermitian_eig(&gram.hermitian_part(), f64::INFINITY)?;
    if eig.values[0] <= 1e-12 * eig.values[eig.values.len() - 1] {
        return Err(Error::Eigensolver("rank-deficient random draw".into()));
    }
    Ok(g.matmul(&eig.map(|x| C64::new(x.powf(-0.5), 0.0))))
}

/// Kraus operators `M_q` stacked vertically from an isometry of shape `(count·dim) × dim`.
fn split_isometry(v: &ComplexOperator, dim: usize, count: usize) -> Vec<ComplexOperator> {
    (0..count)
        .map(|q| ComplexOperator::from_fn(dim, dim, |i, j| v[(q * dim + i, j)]))
        .collect()
}

/// Generic channel from a Haar-like random Stinespring isometry.
pub fn random_channel(dim: usize, kraus_count: usize, rng: &mut impl Rng) -> Result<KrausChannel> {
    let v = orthonormalize(&random_rect(kraus_count * dim, dim, rng))?;
    KrausChannel::new(split_isometry(&v, dim, kraus_count))
}

/// Projective channel `{π_j}` with the given ranks in a random basis.
pub fn random_projective_channel(ranks: &[usize], rng: &mut impl Rng) -> Result<KrausChannel> {
    let dim: usize = ranks.iter().sum();
    let u = random_unitary(dim, rng);
    let mut start = 0;
    let mut kraus = Vec::with_capacity(ranks.len());
    for &r in ranks {
        let cols: Vec<usize> = (start..start + r).collect();
        let w = u.columns(&cols);
        kraus.push(w.matmul(&w.adjoint()));
        start += r;
    }
    KrausChannel::new(kraus)
}

/// A channel with prescribed block structure.
///
/// In a random orthonormal basis the Kraus operators read
/// `M_q = [[⊕_j I_S ⊗ m_q^(j), B_q], [0, D_q]]`, where the `m^(j)` are generic
/// random channels on the `R` factors and the `C` columns form a random
/// isometry orthogonal to the block part. The complement block is transient
/// for generic draws.
#[derive(Clone, Debug)]
pub struct StructuredChannel {
    pub channel: KrausChannel,
    /// Basis change; its first columns span the blocks in order, the last `d_c` span `H_C`.
    pub basis: ComplexOperator,
    pub shapes: Vec<SubsystemShape>,
    pub d_c: usize,
}

pub fn random_structured_channel(
    shapes: &[SubsystemShape],
    d_c: usize,
    kraus_count: usize,
    rng: &mut impl Rng,
) -> Result<StructuredChannel> {
    if kraus_count == 0 {
        return Err(Error::InvalidInput("kraus_count must be positive".into()));
    }
    let d_sr: usize = shapes.iter().map(|s| s.dim()).sum();
    let dim = d_sr + d_c;
    let mut blocks: Vec<Vec<ComplexOperator>> = Vec::new();
    for s in shapes {
        let inner = if s.d_r == 1 {
            // Phases keep distinct one-dimensional blocks non-isomorphic.
            let raw: Vec<C64> = (0..kraus_count).map(|_| gaussian(rng)).collect();
            let n = raw.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            raw.iter()
                .map(|z| ComplexOperator::from_diagonal(&[z / n]))
                .collect::<Vec<_>>()
        } else {
            random_channel(s.d_r, kraus_count, rng)?.kraus().to_vec()
        };
        blocks.push(
            inner
                .iter()
                .map(|m| tensor(&ComplexOperator::identity(s.d_s), m))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    // Stacked block part X (kraus_count·dim × d_sr) is an isometry.
    let mut kraus: Vec<ComplexOperator> = vec![ComplexOperator::zeros(dim); kraus_count];
    for (q, k) in kraus.iter_mut().enumerate() {
        let mut off = 0;
        for b in &blocks {
            let m = &b[q];
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    k[(off + i, off + j)] = m[(i, j)];
                }
            }
            off += m.nrows();
        }
    }
    if d_c > 0 {
        let x = ComplexOperator::from_fn(kraus_count * dim, d_sr, |r, j| kraus[r / dim][(r % dim, j)]);
        let g = random_rect(kraus_count * dim, d_c, rng);
        let g = &g - &x.matmul(&x.adjoint().matmul(&g));
        let y = orthonormalize(&g)?;
        for (q, k) in kraus.iter_mut().enumerate() {
            for i in 0..dim {
                for j in 0..d_c {
                    k[(i, d_sr + j)] = y[(q * dim + i, j)];
                }
            }
        }
    }
    let basis = random_unitary(dim, rng);
    let kraus: Vec<ComplexOperator> = kraus.iter().map(|k| k.conjugate_by(&basis)).collect();
    Ok(StructuredChannel {
        channel: KrausChannel::new(kraus)?,
        basis,
        shapes: shapes.to_vec(),
        d_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_reproducible() {
        let a = random_operator(3, &mut seeded_rng(5));
        let b = random_operator(3, &mut seeded_rng(5));
        assert_eq!(a, b);
        let u = random_unitary(4, &mut seeded_rng(6));
        assert!(u.adjoint().matmul(&u).max_abs_diff(&ComplexOperator::identity(4)) < 1e-12);
    }

    #[test]
    fn structured_channel_is_complete() {
        let shapes = [SubsystemShape::new(2, 2).unwrap(), SubsystemShape::new(1, 1).unwrap()];
        let s = random_structured_channel(&shapes, 1, 3, &mut seeded_rng(7)).unwrap();
        assert_eq!(s.channel.dim(), 6);
        assert!(s.channel.completeness_deviation() < 1e-10);
    }
}
