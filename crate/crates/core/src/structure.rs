//! Decomposition `H = [⊕_j H_S^(j) ⊗ H_R^(j)] ⊕ H_C` of a channel's Hilbert
//! space, and the canonical forms of fixed points built on it.
//!
//! Pipeline of [`decompose`]:
//! 1. `Λ = S_∞(I)`; its kernel is `H_C`, its support `W`.
//! 2. Kraus operators are compressed to the support, `K_q = W† M_q W`.
//! 3. The commutant of `{K_q, K_q†}` is the null space of the stacked
//!    equations `[X, G] = 0`.
//! 4. A seeded random Hermitian commutant element is diagonalised; its
//!    eigenvalue clusters are the irreducible invariant subspaces.
//! 5. Subspaces are grouped by solving `K^(s) T = T K^(1)` for intertwiners
//!    and accepting those with `T†T ∝ I`.
//! 6. Each class becomes an isometry with columns ordered `(s, r)`.
//! 7. Block Kraus operators and `Λ_R = S_∞^(j)(I_R) / d_R` are computed per block.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::KrausChannel;
use crate::error::{Error, Result};
use crate::fixedpoint::{self, Method, SpectralProjector, SPECTRAL_MAX_DIM};
use crate::operator::{
    hermitian_eig, null_space, partial_trace_r, partial_trace_s, polar_unitary, singular_values, tensor, trace_norm,
    ComplexOperator, SubsystemShape, C64, ONE,
};
use crate::random::{random_rect, seeded_rng};
use crate::tolerance::Tolerances;

/// Maximum number of random commutant elements tried in step 4.
pub const MAX_COMMUTANT_DRAWS: usize = 8;

/// One isomorphism class of invariant subspaces: `H_S ⊗ H_R` embedded by `isometry`.
#[derive(Clone, Debug)]
pub struct Block {
    pub shape: SubsystemShape,
    /// `dim × (d_S·d_R)` column isometry; column `s·d_R + r` is copy `s`, vector `r`.
    pub isometry: ComplexOperator,
    /// `M_q^(j)`, acting on `H_R`.
    pub kraus_r: Vec<ComplexOperator>,
    /// Unique fixed point of the block channel, trace one.
    pub lambda_r: ComplexOperator,
}

impl Block {
    /// Orthogonal projector onto the block's range.
    pub fn projector(&self) -> ComplexOperator {
        self.isometry.matmul(&self.isometry.adjoint())
    }

    /// Compressed operator `V† A V` on `H_S ⊗ H_R`.
    pub fn compress(&self, a: &ComplexOperator) -> ComplexOperator {
        self.isometry.adjoint().matmul(a).matmul(&self.isometry)
    }

    /// `V A V†` for an operator on `H_S ⊗ H_R`.
    pub fn embed(&self, a: &ComplexOperator) -> ComplexOperator {
        self.isometry.matmul(a).matmul(&self.isometry.adjoint())
    }
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub dim: usize,
    /// Orthonormal columns spanning `H_C`; zero columns when `H_C` is empty.
    pub complement_basis: ComplexOperator,
    pub blocks: Vec<Block>,
}

impl Decomposition {
    pub fn complement_dim(&self) -> usize {
        self.complement_basis.ncols()
    }

    pub fn shapes(&self) -> Vec<SubsystemShape> {
        self.blocks.iter().map(|b| b.shape).collect()
    }

    /// `[C | V_1 | V_2 | …]`.
    pub fn full_basis(&self) -> Result<ComplexOperator> {
        let mut parts: Vec<&ComplexOperator> = vec![&self.complement_basis];
        parts.extend(self.blocks.iter().map(|b| &b.isometry));
        ComplexOperator::hstack(&parts)
    }
}

/// Stacked coefficient matrix of `X G − G X = 0` over the generators, in row-major vec form.
fn commutation_system(generators: &[ComplexOperator]) -> ComplexOperator {
    let d = generators[0].nrows();
    let n = d * d;
    let mut sys = ComplexOperator::zeros_rect(generators.len() * n, n);
    for (g_idx, g) in generators.iter().enumerate() {
        let off = g_idx * n;
        // (G ⊗ I − I ⊗ Gᵀ) acting on vec(X): vec(G X − X G)
        for i in 0..d {
            for j in 0..d {
                let row = off + i * d + j;
                for k in 0..d {
                    sys[(row, k * d + j)] += g[(i, k)];
                    sys[(row, i * d + k)] -= g[(k, j)];
                }
            }
        }
    }
    sys
}

fn null_tolerance(sys: &ComplexOperator, tol: f64) -> f64 {
    tol * sys.frobenius_norm().max(1.0)
}

/// Basis of the commutant of the given operators, one `d × d` matrix per element.
pub fn commutant_basis(generators: &[ComplexOperator], tol: f64) -> Result<Vec<ComplexOperator>> {
    let d = generators[0].nrows();
    let sys = commutation_system(generators);
    let ns = null_space(&sys, null_tolerance(&sys, tol))?;
    Ok((0..ns.ncols())
        .map(|c| ComplexOperator::from_vec(d, d, ns.column(c)).expect("d² entries"))
        .collect())
}

fn with_adjoints(ops: &[ComplexOperator]) -> Vec<ComplexOperator> {
    let mut g: Vec<ComplexOperator> = ops.to_vec();
    g.extend(ops.iter().map(|m| m.adjoint()));
    g
}

/// Intertwiners `T` with `a_q T = T b_q` for all `q`, returned as the null
/// space together with the smallest singular value of the system.
fn intertwiners(a: &[ComplexOperator], b: &[ComplexOperator], tol: f64) -> Result<(Vec<ComplexOperator>, f64)> {
    let (m, n) = (a[0].nrows(), b[0].nrows());
    let cols = m * n;
    let mut sys = ComplexOperator::zeros_rect(a.len() * cols, cols);
    for (idx, (aq, bq)) in a.iter().zip(b).enumerate() {
        let off = idx * cols;
        // vec(A T − T B), T is m × n
        for i in 0..m {
            for j in 0..n {
                let row = off + i * n + j;
                for k in 0..m {
                    sys[(row, k * n + j)] += aq[(i, k)];
                }
                for k in 0..n {
                    sys[(row, i * n + k)] -= bq[(k, j)];
                }
            }
        }
    }
    let sv = singular_values(&sys)?;
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let ns = null_space(&sys, null_tolerance(&sys, tol))?;
    let ts = (0..ns.ncols())
        .map(|c| ComplexOperator::from_vec(m, n, ns.column(c)).expect("m·n entries"))
        .collect();
    Ok((ts, smallest))
}

/// Orthonormal basis of `H_C`, the kernel of `Λ`.
pub fn complement_subspace(channel: &KrausChannel, tol: &Tolerances) -> Result<ComplexOperator> {
    let lambda = fixedpoint::lambda_operator(channel, Method::Spectral, tol)?;
    Ok(split_lambda(&lambda, tol)?.0)
}

/// Splits `Λ` into kernel and support bases.
fn split_lambda(lambda: &ComplexOperator, tol: &Tolerances) -> Result<(ComplexOperator, ComplexOperator)> {
    let eig = hermitian_eig(&lambda.hermitian_part(), f64::INFINITY)?;
    let scale = eig.values.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    let kernel: Vec<usize> = (0..eig.values.len())
        .filter(|&k| eig.values[k] <= tol.kernel * scale)
        .collect();
    let support: Vec<usize> = (0..eig.values.len())
        .filter(|&k| eig.values[k] > tol.kernel * scale)
        .collect();
    Ok((eig.vectors.columns(&kernel), eig.vectors.columns(&support)))
}

fn restrict(ops: &[ComplexOperator], e: &ComplexOperator) -> Vec<ComplexOperator> {
    let ea = e.adjoint();
    ops.iter().map(|k| ea.matmul(k).matmul(e)).collect()
}

/// Eigenvalue clusters of `z` (ascending), as column-index groups.
fn clusters(values: &[f64], gap: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (k, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(c) if v - values[*c.last().expect("non-empty")] <= gap => c.push(k),
            _ => out.push(vec![k]),
        }
    }
    out
}

/// Splits the support into irreducible invariant subspaces (step 4).
fn irreducible_subspaces(
    k: &[ComplexOperator],
    commutant: &[ComplexOperator],
    rng: &mut ChaCha8Rng,
    tol: &Tolerances,
) -> Result<Vec<ComplexOperator>> {
    let d = k[0].nrows();
    let generators = with_adjoints(k);
    for _ in 0..MAX_COMMUTANT_DRAWS {
        let coeffs = random_rect(commutant.len(), 1, rng);
        let mut z = ComplexOperator::zeros(d);
        for (c, x) in commutant.iter().enumerate() {
            z.axpy(coeffs[(c, 0)], x);
        }
        let z = z.hermitian_part();
        let norm = z.max_abs().max(f64::MIN_POSITIVE);
        let z = z.scale_real(1.0 / norm);
        let eig = hermitian_eig(&z, f64::INFINITY)?;
        let groups = clusters(&eig.values, tol.cluster_gap);
        let mut spaces = Vec::with_capacity(groups.len());
        let mut ok = true;
        for g in &groups {
            let e = eig.vectors.columns(g);
            let restricted = restrict(&generators, &e);
            if commutant_basis(&restricted, tol.structure)?.len() != 1 {
                ok = false;
                break;
            }
            spaces.push(e);
        }
        if ok {
            return Ok(spaces);
        }
    }
    Err(Error::DecompositionFailed {
        check: format!("no non-degenerate commutant element in {MAX_COMMUTANT_DRAWS} draws"),
        residual: f64::NAN,
    })
}

/// Unitary intertwiner `T` with `a_q T = T b_q`, if the subspaces are isomorphic.
fn unitary_intertwiner(
    a: &[ComplexOperator],
    b: &[ComplexOperator],
    tol: &Tolerances,
) -> Result<Option<ComplexOperator>> {
    if a[0].nrows() != b[0].nrows() {
        return Ok(None);
    }
    let m = a[0].nrows();
    let (ts, _) = intertwiners(a, b, tol.structure)?;
    let Some(t) = ts.into_iter().next() else {
        return Ok(None);
    };
    let tt = t.adjoint().matmul(&t);
    let mu = tt.trace().re / m as f64;
    if mu <= 0.0 {
        return Ok(None);
    }
    let dev = tt.scale_real(1.0 / mu).max_abs_diff(&ComplexOperator::identity(m));
    if dev > tol.isomorphism {
        return Ok(None);
    }
    Ok(Some(polar_unitary(&t)?))
}

/// Computes the decomposition; deterministic for a fixed `seed`.
pub fn decompose(channel: &KrausChannel, tol: &Tolerances, seed: u64) -> Result<Decomposition> {
    let dim = channel.dim();
    let method = if dim <= SPECTRAL_MAX_DIM {
        Method::Spectral
    } else {
        Method::Iterative
    };
    let lambda = fixedpoint::lambda_operator(channel, method, tol)?;
    let (complement, support) = split_lambda(&lambda, tol)?;
    let mut blocks = Vec::new();
    if support.ncols() > 0 {
        let k = restrict(channel.kraus(), &support);
        let commutant = commutant_basis(&with_adjoints(&k), tol.structure)?;
        let mut rng = seeded_rng(seed);
        let spaces = irreducible_subspaces(&k, &commutant, &mut rng, tol)?;

        // Step 5: group into isomorphism classes. Each class keeps its
        // representative's restricted Kraus operators and the copies' bases.
        struct Class {
            rep_kraus: Vec<ComplexOperator>,
            copies: Vec<ComplexOperator>,
            first: usize,
        }
        let mut classes: Vec<Class> = Vec::new();
        for (idx, e) in spaces.iter().enumerate() {
            let ks = restrict(&k, e);
            let mut placed = false;
            for class in classes.iter_mut() {
                if let Some(t) = unitary_intertwiner(&ks, &class.rep_kraus, tol)? {
                    class.copies.push(support.matmul(e).matmul(&t));
                    placed = true;
                    break;
                }
            }
            if !placed {
                classes.push(Class {
                    rep_kraus: ks,
                    copies: vec![support.matmul(e)],
                    first: idx,
                });
            }
        }
        classes.sort_by(|a, b| {
            b.copies
                .len()
                .cmp(&a.copies.len())
                .then(b.rep_kraus[0].nrows().cmp(&a.rep_kraus[0].nrows()))
                .then(a.first.cmp(&b.first))
        });

        for class in classes {
            let d_s = class.copies.len();
            let d_r = class.copies[0].ncols();
            let shape = SubsystemShape::new(d_s, d_r)?;
            let mut cols = Vec::with_capacity(d_s * d_r);
            for copy in &class.copies {
                for r in 0..d_r {
                    cols.push(copy.column(r));
                }
            }
            let isometry = ComplexOperator::from_columns(dim, &cols);
            let vad = isometry.adjoint();
            let kraus_r: Vec<ComplexOperator> = channel
                .kraus()
                .iter()
                .map(|m| {
                    let c = vad.matmul(m).matmul(&isometry);
                    partial_trace_s(&c, shape).map(|x| x.scale_real(1.0 / d_s as f64))
                })
                .collect::<Result<_>>()?;
            let lambda_r = block_fixed_point(&kraus_r, tol)?;
            blocks.push(Block {
                shape,
                isometry,
                kraus_r,
                lambda_r,
            });
        }
    }
    let dec = Decomposition {
        dim,
        complement_basis: complement,
        blocks,
    };
    let report = verify_decomposition_with_lambda(channel, &dec, tol.structure, Some(&lambda))?;
    if let Some(failed) = report.first_failure() {
        return Err(Error::DecompositionFailed {
            check: failed.name.clone(),
            residual: failed.residual,
        });
    }
    Ok(dec)
}

/// `Λ_R = S_∞(I_R) / d_R` for the block channel `{M_q^(j)}`.
fn block_fixed_point(kraus_r: &[ComplexOperator], tol: &Tolerances) -> Result<ComplexOperator> {
    let d_r = kraus_r[0].nrows();
    if d_r == 1 {
        return Ok(ComplexOperator::identity(1));
    }
    let block = KrausChannel::with_tolerances(kraus_r.to_vec(), &relaxed(tol))?;
    let method = if d_r <= SPECTRAL_MAX_DIM {
        Method::Spectral
    } else {
        Method::Iterative
    };
    let id = ComplexOperator::identity(d_r);
    let r = fixedpoint::fixed_point_limit(&block, &id, method, tol.fix, tol)?;
    Ok(r.value.hermitian_part().scale_real(1.0 / d_r as f64))
}

/// Block Kraus operators inherit the decomposition error; accept them at the structural tolerance.
fn relaxed(tol: &Tolerances) -> Tolerances {
    Tolerances {
        complete: tol.complete.max(tol.structure),
        ..*tol
    }
}

/// One named certificate entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Per-check residuals certifying a decomposition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    fn push_max(&mut self, name: impl Into<String>, residual: f64, tolerance: f64) {
        self.checks.push(Check {
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        });
    }

    fn push_min(&mut self, name: impl Into<String>, value: f64, threshold: f64) {
        self.checks.push(Check {
            name: name.into(),
            residual: value,
            tolerance: threshold,
            passed: value > threshold,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks every structural invariant of `dec` against `channel`.
pub fn verify_decomposition(channel: &KrausChannel, dec: &Decomposition, tol: f64) -> Result<VerificationReport> {
    verify_decomposition_with_lambda(channel, dec, tol, None)
}

fn verify_decomposition_with_lambda(
    channel: &KrausChannel,
    dec: &Decomposition,
    tol: f64,
    lambda: Option<&ComplexOperator>,
) -> Result<VerificationReport> {
    let tolerances = Tolerances::default();
    if channel.dim() != dec.dim {
        return Err(Error::dims(channel.dim(), dec.dim));
    }
    let mut report = VerificationReport::default();
    let n = dec.dim;
    let accounted = dec.complement_dim() + dec.blocks.iter().map(|b| b.shape.dim()).sum::<usize>();
    report.push_max("dimension_count", accounted.abs_diff(n) as f64, 0.0);
    let basis = dec.full_basis()?;
    let id_cols = ComplexOperator::identity(basis.ncols());
    report.push_max("isometry", basis.adjoint().matmul(&basis).max_abs_diff(&id_cols), tol);
    let completeness = if basis.ncols() == n {
        basis
            .matmul(&basis.adjoint())
            .max_abs_diff(&ComplexOperator::identity(n))
    } else {
        f64::INFINITY
    };
    report.push_max("completeness", completeness, tol);

    let lambda_owned;
    let lambda = match lambda {
        Some(l) => l,
        None => {
            let method = if n <= SPECTRAL_MAX_DIM {
                Method::Spectral
            } else {
                Method::Iterative
            };
            lambda_owned = fixedpoint::lambda_operator(channel, method, &tolerances)?;
            &lambda_owned
        }
    };

    let c = &dec.complement_basis;
    let pi_sr = &ComplexOperator::identity(n) - &c.matmul(&c.adjoint());
    let mut comp_inv = 0.0f64;
    if c.ncols() > 0 {
        for m in channel.kraus() {
            comp_inv = comp_inv.max(c.adjoint().matmul(m).matmul(&pi_sr).max_abs());
        }
        report.push_max("complement_invariance", comp_inv, tol);
        report.push_max(
            "complement_transient",
            c.adjoint().matmul(lambda).matmul(c).max_abs(),
            tol,
        );
    }

    for (j, b) in dec.blocks.iter().enumerate() {
        let (d_s, d_r) = (b.shape.d_s, b.shape.d_r);
        let id_s = ComplexOperator::identity(d_s);
        let v = &b.isometry;
        let out_of_block = &ComplexOperator::identity(n) - &b.projector();
        let (mut inter, mut inv) = (0.0f64, 0.0f64);
        for (m, mr) in channel.kraus().iter().zip(&b.kraus_r) {
            inter = inter.max(b.compress(m).max_abs_diff(&tensor(&id_s, mr)?));
            inv = inv.max(out_of_block.matmul(m).matmul(v).max_abs());
        }
        report.push_max(format!("block{j}.intertwining"), inter, tol);
        report.push_max(format!("block{j}.invariance"), inv, tol);
        let mut sum = ComplexOperator::identity(d_r).scale_real(-1.0);
        for mr in &b.kraus_r {
            sum += &mr.adjoint().matmul(mr);
        }
        report.push_max(format!("block{j}.completeness"), sum.max_abs(), tol);

        let mut image = ComplexOperator::zeros(d_r);
        for mr in &b.kraus_r {
            image += &b.lambda_r.conjugate_by(mr);
        }
        report.push_max(
            format!("block{j}.lambda_r_fixed"),
            trace_norm(&(&image - &b.lambda_r))?,
            tol,
        );
        report.push_max(
            format!("block{j}.lambda_r_trace"),
            (b.lambda_r.trace() - ONE).norm(),
            tol,
        );
        let min_eig = hermitian_eig(&b.lambda_r.hermitian_part(), f64::INFINITY)?.values[0];
        report.push_min(format!("block{j}.lambda_r_invertible"), min_eig, tol);

        if d_r > 1 && d_r <= 8 {
            let block_channel = KrausChannel::with_tolerances(b.kraus_r.clone(), &relaxed(&tolerances))?;
            let fixed_dim = SpectralProjector::new(&block_channel, &tolerances)?.fixed_dim();
            report.push_max(format!("block{j}.lambda_r_unique"), fixed_dim.abs_diff(1) as f64, 0.0);
        }
        if d_r <= 8 {
            let comm = commutant_basis(&with_adjoints(&b.kraus_r), tolerances.structure)?;
            report.push_max(format!("block{j}.irreducible"), comm.len().abs_diff(1) as f64, 0.0);
        }

        let compressed = b.compress(lambda);
        let a_s = partial_trace_r(&compressed, b.shape)?;
        let rebuilt = tensor(&a_s, &b.lambda_r)?;
        report.push_max(
            format!("block{j}.lambda_cross_check"),
            compressed.max_abs_diff(&rebuilt),
            tol,
        );
    }

    let mut min_sv = f64::INFINITY;
    for (i, a) in dec.blocks.iter().enumerate() {
        for b in &dec.blocks[i + 1..] {
            if a.shape.d_r != b.shape.d_r {
                continue;
            }
            let (_, smallest) = intertwiners(&a.kraus_r, &b.kraus_r, tol)?;
            min_sv = min_sv.min(smallest);
        }
    }
    if min_sv.is_finite() {
        report.push_min("non_isomorphic", min_sv, tol);
    }
    Ok(report)
}

fn check_components(dec: &Decomposition, components: &[ComplexOperator]) -> Result<()> {
    if components.len() != dec.blocks.len() {
        return Err(Error::InvalidInput(format!(
            "{} components for {} blocks",
            components.len(),
            dec.blocks.len()
        )));
    }
    for (a, b) in components.iter().zip(&dec.blocks) {
        if !a.is_square() || a.nrows() != b.shape.d_s {
            return Err(Error::dims(b.shape.d_s, a.nrows()));
        }
    }
    Ok(())
}

/// `Σ_j V_j (A_S^(j) ⊗ Λ_R^(j)) V_j†`.
pub fn mio_assemble(dec: &Decomposition, components: &[ComplexOperator]) -> Result<ComplexOperator> {
    check_components(dec, components)?;
    let mut out = ComplexOperator::zeros(dec.dim);
    for (a, b) in components.iter().zip(&dec.blocks) {
        out += &b.embed(&tensor(a, &b.lambda_r)?);
    }
    Ok(out)
}

/// Inverse of [`mio_assemble`]: `A_S^(j) = Tr_R(V_j† A V_j)`.
///
/// Fails unless `A` is reproduced by reassembly within `tol`.
pub fn mio_components(dec: &Decomposition, a: &ComplexOperator, tol: f64) -> Result<Vec<ComplexOperator>> {
    if !a.is_square() || a.nrows() != dec.dim {
        return Err(Error::dims(dec.dim, a.nrows()));
    }
    let mut components = Vec::with_capacity(dec.blocks.len());
    for b in &dec.blocks {
        let compressed = b.compress(a);
        let a_s = partial_trace_r(&compressed, b.shape)?;
        let mismatch = compressed.max_abs_diff(&tensor(&a_s, &b.lambda_r)?);
        if mismatch > tol {
            return Err(Error::DecompositionFailed {
                check: "R factor of the block differs from lambda_R".into(),
                residual: mismatch,
            });
        }
        components.push(a_s);
    }
    let rebuilt = mio_assemble(dec, &components)?;
    let residual = trace_norm(&(&rebuilt - a))?;
    if residual > tol {
        return Err(Error::NotFixedPoint {
            residual,
            tolerance: tol,
        });
    }
    Ok(components)
}

/// `Σ_j V_j (B_S^(j) ⊗ I_R) V_j†`.
pub fn dual_mio_assemble(dec: &Decomposition, components: &[ComplexOperator]) -> Result<ComplexOperator> {
    check_components(dec, components)?;
    let mut out = ComplexOperator::zeros(dec.dim);
    for (bs, b) in components.iter().zip(&dec.blocks) {
        out += &b.embed(&tensor(bs, &ComplexOperator::identity(b.shape.d_r))?);
    }
    Ok(out)
}

/// `‖π_SR (P†(B) − B) π_SR‖₁`, where `π_SR` projects onto the blocks.
///
/// Operators of the form `⊕_j B_S ⊗ I_R` are exact dual fixed points on the
/// block subspace; when `H_C` is non-empty the full dual fixed point carries
/// extra `H_C` components, so the comparison is made after compression.
pub fn dual_mio_residual(channel: &KrausChannel, dec: &Decomposition, b: &ComplexOperator) -> Result<f64> {
    let mut pi = ComplexOperator::zeros(dec.dim);
    for blk in &dec.blocks {
        pi += &blk.projector();
    }
    let diff = &channel.apply_dual(b)? - b;
    trace_norm(&diff.conjugate_by(&pi))
}

/// Random Hermitian components, one per block, for tests and examples.
pub fn random_components(dec: &Decomposition, rng: &mut impl Rng) -> Vec<ComplexOperator> {
    dec.blocks
        .iter()
        .map(|b| crate::random::random_hermitian(b.shape.d_s, rng))
        .collect()
}

/// `C64` helper for components given as real diagonals.
pub fn diagonal_component(values: &[f64]) -> ComplexOperator {
    ComplexOperator::from_diagonal(&values.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::QuantumMap;
    use crate::fixedpoint::{fixed_point_limit, fixed_point_residual, is_mio};
    use crate::models::{decay_channel, pauli_twirl_channel};
    use crate::random::{random_density, random_hermitian, random_structured_channel};
    use proptest::prelude::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn shape(d_s: usize, d_r: usize) -> SubsystemShape {
        SubsystemShape::new(d_s, d_r).unwrap()
    }

    #[test]
    fn identity_channel_is_one_trivial_block() {
        let dec = decompose(&KrausChannel::identity(3), &tol(), 1).unwrap();
        assert_eq!(dec.complement_dim(), 0);
        assert_eq!(dec.shapes(), vec![shape(3, 1)]);
        let report = verify_decomposition(&KrausChannel::identity(3), &dec, 1e-8).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn decay_channel_structure() {
        let ch = decay_channel();
        let c = complement_subspace(&ch, &tol()).unwrap();
        assert_eq!(c.ncols(), 1);
        assert!((c[(2, 0)].norm() - 1.0).abs() < 1e-12);
        let dec = decompose(&ch, &tol(), 7).unwrap();
        assert_eq!(dec.complement_dim(), 1);
        assert_eq!(dec.shapes(), vec![shape(2, 1)]);
        assert!(verify_decomposition(&ch, &dec, 1e-8).unwrap().passed());
    }

    #[test]
    fn projective_channel_blocks() {
        let p1 = ComplexOperator::from_real_diagonal(&[1.0, 1.0, 0.0]);
        let p2 = ComplexOperator::from_real_diagonal(&[0.0, 0.0, 1.0]);
        let ch = KrausChannel::new(vec![p1, p2]).unwrap();
        assert_eq!(complement_subspace(&ch, &tol()).unwrap().ncols(), 0);
        let dec = decompose(&ch, &tol(), 3).unwrap();
        assert_eq!(dec.shapes(), vec![shape(2, 1), shape(1, 1)]);
    }

    #[test]
    fn pauli_twirl_is_one_block_with_trivial_s() {
        let ch = pauli_twirl_channel();
        let dec = decompose(&ch, &tol(), 3).unwrap();
        assert_eq!(dec.shapes(), vec![shape(1, 2)]);
    }

    #[test]
    fn swapped_basis_vector_fails_intertwining() {
        let mut rng = seeded_rng(41);
        let s = random_structured_channel(&[shape(2, 2)], 1, 3, &mut rng).unwrap();
        let mut dec = decompose(&s.channel, &tol(), 5).unwrap();
        let v = &mut dec.blocks[0].isometry;
        for i in 0..v.nrows() {
            let tmp = v[(i, 0)];
            v[(i, 0)] = v[(i, 1)];
            v[(i, 1)] = tmp;
        }
        let report = verify_decomposition(&s.channel, &dec, 1e-8).unwrap();
        assert!(!report.get("block0.intertwining").unwrap().passed);
    }

    #[test]
    fn decomposition_is_deterministic_per_seed() {
        let mut rng = seeded_rng(42);
        let s = random_structured_channel(&[shape(2, 2), shape(1, 1)], 1, 2, &mut rng).unwrap();
        let a = decompose(&s.channel, &tol(), 9).unwrap();
        let b = decompose(&s.channel, &tol(), 9).unwrap();
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            assert_eq!(x.isometry, y.isometry);
            assert_eq!(x.lambda_r, y.lambda_r);
        }
    }

    #[test]
    fn mio_assembly_examples() {
        let ch = decay_channel();
        let dec = decompose(&ch, &tol(), 1).unwrap();
        let a = mio_assemble(&dec, &[diagonal_component(&[1.0, 0.0])]).unwrap();
        assert!(is_mio(&ch, &a, 1e-10).unwrap().0);
        assert!((a.trace() - ONE).norm() < 1e-12);
        assert!(a[(2, 2)].norm() < 1e-12);
        let half = ComplexOperator::from_real_diagonal(&[0.5, 0.5, 0.0]);
        let comps = mio_components(&dec, &half, 1e-10).unwrap();
        assert!(comps[0].max_abs_diff(&ComplexOperator::identity(2).scale_real(0.5)) < 1e-12);
        let mut e = ComplexOperator::zeros(3);
        e[(2, 2)] = ONE;
        assert!(mio_components(&dec, &e, 1e-8).is_err());
    }

    #[test]
    fn lambda_components_are_scaled_identities() {
        let mut rng = seeded_rng(43);
        let s = random_structured_channel(&[shape(2, 2), shape(1, 1)], 0, 2, &mut rng).unwrap();
        let dec = decompose(&s.channel, &tol(), 1).unwrap();
        let lam = fixedpoint::lambda_operator(&s.channel, Method::Spectral, &tol()).unwrap();
        let n = s.channel.dim() as f64;
        let comps = mio_components(&dec, &lam.scale_real(1.0 / n), 1e-8).unwrap();
        for (c, b) in comps.iter().zip(&dec.blocks) {
            let expected = ComplexOperator::identity(b.shape.d_s).scale_real(b.shape.d_r as f64 / n);
            assert!(c.max_abs_diff(&expected) < 1e-8);
        }
    }

    #[test]
    fn dual_mio_of_identity_is_identity() {
        let ch = pauli_twirl_channel();
        let dec = decompose(&ch, &tol(), 1).unwrap();
        let b = dual_mio_assemble(&dec, &[ComplexOperator::identity(1)]).unwrap();
        assert!(b.max_abs_diff(&ComplexOperator::identity(2)) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn structured_channels_recover_their_blocks(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let shapes = [shape(2, 2), shape(1, 1), shape(2, 1)];
            let s = random_structured_channel(&shapes, 1, 3, &mut rng).unwrap();
            let dec = decompose(&s.channel, &tol(), seed).unwrap();
            prop_assert_eq!(dec.shapes(), vec![shape(2, 2), shape(2, 1), shape(1, 1)]);
            prop_assert_eq!(dec.complement_dim(), 1);
        }

        #[test]
        fn fixed_points_have_canonical_form(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let s = random_structured_channel(&[shape(2, 2), shape(1, 1)], 1, 2, &mut rng).unwrap();
            let dec = decompose(&s.channel, &tol(), seed).unwrap();
            let a = random_hermitian(s.channel.dim(), &mut rng);
            let fixed = fixed_point_limit(&s.channel, &a, Method::Spectral, 1e-9, &tol()).unwrap().value;
            let c = &dec.complement_basis;
            prop_assert!(c.adjoint().matmul(&fixed).max_abs() < 1e-8);
            let (b0, b1) = (&dec.blocks[0].isometry, &dec.blocks[1].isometry);
            prop_assert!(b0.adjoint().matmul(&fixed).matmul(b1).max_abs() < 1e-8);
            let comps = mio_components(&dec, &fixed, 1e-8).unwrap();
            let rebuilt = mio_assemble(&dec, &comps).unwrap();
            prop_assert!(rebuilt.max_abs_diff(&fixed) < 1e-8);
        }

        #[test]
        fn assembled_mios_are_fixed_and_round_trip(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let s = random_structured_channel(&[shape(2, 2), shape(1, 2)], 2, 2, &mut rng).unwrap();
            let dec = decompose(&s.channel, &tol(), seed).unwrap();
            let comps = random_components(&dec, &mut rng);
            let a = mio_assemble(&dec, &comps).unwrap();
            prop_assert!(fixed_point_residual(&s.channel, &a).unwrap() < 1e-8);
            let back = mio_components(&dec, &a, 1e-8).unwrap();
            for (x, y) in back.iter().zip(&comps) {
                prop_assert!(x.max_abs_diff(y) < 1e-8);
            }
            let b = dual_mio_assemble(&dec, &comps).unwrap();
            prop_assert!(dual_mio_residual(&s.channel, &dec, &b).unwrap() < 1e-8);
        }

        #[test]
        fn lemma_two_and_three_block_forms(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let s = random_structured_channel(&[shape(2, 2), shape(1, 1)], 1, 2, &mut rng).unwrap();
            let dec = decompose(&s.channel, &tol(), seed).unwrap();
            let rho = random_density(s.channel.dim(), &mut rng);
            let c = &dec.complement_basis;
            let pi_sr = &ComplexOperator::identity(dec.dim) - &c.matmul(&c.adjoint());
            let a = rho.op().conjugate_by(&pi_sr);
            let pa = s.channel.apply(&a).unwrap();
            prop_assert!(c.adjoint().matmul(&pa).matmul(c).max_abs() < 1e-10);
            for b in &dec.blocks {
                let before = partial_trace_r(&b.compress(&a), b.shape).unwrap();
                let after = partial_trace_r(&b.compress(&pa), b.shape).unwrap();
                prop_assert!(before.max_abs_diff(&after) < 1e-10);
            }
            let limit = fixed_point_limit(&s.channel, &a, Method::Spectral, 1e-9, &tol()).unwrap().value;
            for b in &dec.blocks {
                let block = b.compress(&limit);
                let tilde = partial_trace_r(&block, b.shape).unwrap();
                prop_assert!(block.max_abs_diff(&tensor(&tilde, &b.lambda_r).unwrap()) < 1e-8);
            }
        }

        #[test]
        fn block_fixed_point_is_unique(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let s = random_structured_channel(&[shape(1, 3)], 1, 2, &mut rng).unwrap();
            let dec = decompose(&s.channel, &tol(), seed).unwrap();
            let block = KrausChannel::new(dec.blocks[0].kraus_r.clone()).unwrap();
            prop_assert_eq!(SpectralProjector::new(&block, &tol()).unwrap().fixed_dim(), 1);
            prop_assert!(QuantumMap::dim(&block) == 3);
        }
    }
}
