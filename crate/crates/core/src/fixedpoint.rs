//! Cesàro averages `S_N = (1/N) Σ_{m=1}^{N} P^m`, their limit `S_∞`, and the
//! fixed-point operator `Λ = S_∞(I)`.

use serde::{Deserialize, Serialize};

use crate::channel::QuantumMap;
use crate::error::{Error, Result};
use crate::operator::{null_space, solve, trace_norm, ComplexOperator, C64, ONE};
use crate::tolerance::Tolerances;

/// Largest dimension for which the `dim² × dim²` superoperator is built.
pub const SPECTRAL_MAX_DIM: usize = 64;

/// Default iteration cap of the Cesàro iteration.
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Projection onto the eigenvalue-1 eigenspace of the superoperator.
    #[default]
    Spectral,
    /// Cesàro averaging with a doubling schedule.
    Iterative,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Method::Spectral),
            "iterative" => Ok(Method::Iterative),
            other => Err(Error::InvalidInput(format!(
                "unknown method '{other}' (expected spectral or iterative)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CesaroResult {
    pub value: ComplexOperator,
    /// Number of channel applications averaged; 0 for the spectral method.
    pub iterations: usize,
    /// `‖P(value) − value‖₁`.
    pub residual: f64,
}

fn vec_of(a: &ComplexOperator) -> Vec<C64> {
    a.as_slice().to_vec()
}

fn unvec(v: &[C64], n: usize) -> ComplexOperator {
    ComplexOperator::from_vec(n, n, v.to_vec()).expect("n² entries")
}

/// Row-major superoperator: column `k·n + l` is `vec(P(|k⟩⟨l|))`.
pub fn superoperator(map: &impl QuantumMap) -> Result<ComplexOperator> {
    let n = map.dim();
    let mut s = ComplexOperator::zeros(n * n);
    for k in 0..n {
        for l in 0..n {
            let mut e = ComplexOperator::zeros(n);
            e[(k, l)] = ONE;
            let image = map.apply(&e)?;
            for (r, z) in image.as_slice().iter().enumerate() {
                s[(r, k * n + l)] = *z;
            }
        }
    }
    Ok(s)
}

/// Exact finite average `(1/N) Σ_{m=1}^{N} P^m(A)`.
pub fn cesaro_average(map: &impl QuantumMap, a: &ComplexOperator, n: usize) -> Result<ComplexOperator> {
    if n == 0 {
        return Err(Error::InvalidInput("Cesaro average needs N >= 1".into()));
    }
    check_dim(map, a)?;
    let mut x = a.clone();
    let mut sum = ComplexOperator::zeros(map.dim());
    for _ in 0..n {
        x = map.apply(&x)?;
        sum += &x;
    }
    Ok(sum.scale_real(1.0 / n as f64))
}

fn check_dim(map: &impl QuantumMap, a: &ComplexOperator) -> Result<()> {
    if !a.is_square() || a.nrows() != map.dim() {
        return Err(Error::dims(map.dim(), a.nrows()));
    }
    Ok(())
}

/// `‖P(A) − A‖₁`.
pub fn fixed_point_residual(map: &impl QuantumMap, a: &ComplexOperator) -> Result<f64> {
    trace_norm(&(&map.apply(a)? - a))
}

/// Whether `A` is a fixed point of the map within `tol`, with the residual.
pub fn is_mio(map: &impl QuantumMap, a: &ComplexOperator, tol: f64) -> Result<(bool, f64)> {
    check_dim(map, a)?;
    let r = fixed_point_residual(map, a)?;
    Ok((r <= tol, r))
}

/// The spectral projector `S_∞` as a `dim² × dim²` matrix.
///
/// `S_∞ = R (L†R)⁻¹ L†` with `R`, `L` bases of the right and left eigenvalue-1
/// eigenspaces. Peripheral eigenvalues other than 1 fall outside both and are
/// projected out, which is what the Cesàro limit does.
#[derive(Clone, Debug)]
pub struct SpectralProjector {
    dim: usize,
    proj: ComplexOperator,
    fixed_dim: usize,
}

impl SpectralProjector {
    pub fn new(map: &impl QuantumMap, tol: &Tolerances) -> Result<Self> {
        let n = map.dim();
        if n > SPECTRAL_MAX_DIM {
            return Err(Error::InvalidInput(format!(
                "dimension {n} exceeds the spectral limit of {SPECTRAL_MAX_DIM}; use the iterative method"
            )));
        }
        let mut t = superoperator(map)?;
        for i in 0..n * n {
            t[(i, i)] -= ONE;
        }
        let thr = tol.fix * (n as f64).max(1.0);
        let r = null_space(&t, thr)?;
        let l = null_space(&t.adjoint(), thr)?;
        if r.ncols() != l.ncols() || r.ncols() == 0 {
            return Err(Error::Eigensolver(format!(
                "left and right fixed spaces disagree ({} vs {})",
                l.ncols(),
                r.ncols()
            )));
        }
        let lr = l.adjoint().matmul(&r);
        let proj = r.matmul(&solve(&lr, &l.adjoint())?);
        Ok(Self {
            dim: n,
            proj,
            fixed_dim: r.ncols(),
        })
    }

    /// Dimension of the fixed-point space.
    pub fn fixed_dim(&self) -> usize {
        self.fixed_dim
    }

    pub fn apply(&self, a: &ComplexOperator) -> ComplexOperator {
        unvec(&self.proj.apply(&vec_of(a)), self.dim)
    }
}

/// Evaluates `S_∞(A)`.
///
/// The spectral method is used up to [`SPECTRAL_MAX_DIM`]; above that the
/// iterative method is forced.
pub fn fixed_point_limit(
    map: &impl QuantumMap,
    a: &ComplexOperator,
    method: Method,
    tol: f64,
    tolerances: &Tolerances,
) -> Result<CesaroResult> {
    check_dim(map, a)?;
    if method == Method::Spectral && map.dim() <= SPECTRAL_MAX_DIM {
        let value = SpectralProjector::new(map, tolerances)?.apply(a);
        let residual = fixed_point_residual(map, &value)?;
        return Ok(CesaroResult {
            value,
            iterations: 0,
            residual,
        });
    }
    iterative_limit(map, a, tol, DEFAULT_MAX_ITERATIONS)
}

/// Cesàro iteration with residual checks at powers of two.
///
/// With `X_m = P^m(A)` the residual of the running average is
/// `‖X_{N+1} − X_1‖₁ / N`. When the plain iterates themselves settle
/// (`‖X_{m+1} − X_m‖₁ ≤ tol`) they converge to the same limit and are returned
/// directly, which skips the slow `1/N` tail of the average.
pub fn iterative_limit(
    map: &impl QuantumMap,
    a: &ComplexOperator,
    tol: f64,
    max_iterations: usize,
) -> Result<CesaroResult> {
    check_dim(map, a)?;
    let x1 = map.apply(a)?;
    let mut x = x1.clone();
    let mut sum = x1.clone();
    let mut n = 1usize;
    let mut next_check = 1usize;
    let mut best = f64::INFINITY;
    while n <= max_iterations {
        let x_next = map.apply(&x)?;
        if n == next_check {
            let step = trace_norm(&(&x_next - &x))?;
            if step <= tol {
                return Ok(CesaroResult {
                    value: x,
                    iterations: n,
                    residual: step,
                });
            }
            let residual = trace_norm(&(&x_next - &x1))? / n as f64;
            best = best.min(residual);
            if residual <= tol {
                return Ok(CesaroResult {
                    value: sum.scale_real(1.0 / n as f64),
                    iterations: n,
                    residual,
                });
            }
            next_check *= 2;
        }
        sum += &x_next;
        x = x_next;
        n += 1;
    }
    Err(Error::NotConverged {
        iterations: max_iterations,
        best_residual: best,
    })
}

/// `Λ = S_∞(I)`, Hermitian positive semidefinite with trace `dim`.
pub fn lambda_operator(map: &impl QuantumMap, method: Method, tolerances: &Tolerances) -> Result<ComplexOperator> {
    let id = ComplexOperator::identity(map.dim());
    let r = fixed_point_limit(map, &id, method, tolerances.fix, tolerances)?;
    Ok(r.value.hermitian_part())
}
