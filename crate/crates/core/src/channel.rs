//! Kraus representation of measurements: `P(ρ) = Σ_q M_q ρ M_q†`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{ComplexOperator, DensityOperator, SparseColumns, C64, ZERO};
use crate::tolerance::Tolerances;

/// Default cap on the number of Kraus operators `compose` may materialise.
pub const DEFAULT_COMPOSE_CAP: usize = 4096;

/// Sparse storage kicks in when every Kraus operator is at most this dense.
const SPARSE_DENSITY: f64 = 0.25;

/// A finite set of Kraus operators obeying `Σ M_q†M_q = I`.
#[derive(Clone, Debug)]
pub struct KrausChannel {
    dim: usize,
    kraus: Vec<ComplexOperator>,
    labels: Option<Vec<String>>,
    /// `M_q†M_q`, used for outcome probabilities.
    effects: Vec<ComplexOperator>,
    sparse: Option<Vec<SparseColumns>>,
    pauli: Option<PauliForm>,
}

/// Kraus operators of the form `M_q = x_q I + y_q c`, with `c` a signed permutation.
#[derive(Clone, Debug)]
pub(crate) struct PauliForm {
    /// `c|j⟩ = coeff[j] |target[j]⟩`.
    pub(crate) target: Vec<usize>,
    pub(crate) coeff: Vec<C64>,
    /// `coeff` when every entry is real.
    pub(crate) real_coeff: Option<Vec<f64>>,
    pub(crate) diagonal: bool,
    pub(crate) weights: Vec<(f64, f64)>,
}

impl PauliForm {
    fn detect(c: &ComplexOperator, weights: Vec<(f64, f64)>) -> Option<Self> {
        let n = c.nrows();
        let mut target = Vec::with_capacity(n);
        let mut coeff = Vec::with_capacity(n);
        for j in 0..n {
            let mut hit = None;
            for i in 0..n {
                let z = c[(i, j)];
                if z != ZERO {
                    if hit.is_some() || (z.norm() - 1.0).abs() > 1e-14 {
                        return None;
                    }
                    hit = Some((i, z));
                }
            }
            let (i, z) = hit?;
            target.push(i);
            coeff.push(z);
        }
        let diagonal = target.iter().enumerate().all(|(j, &i)| i == j);
        let real_coeff = coeff
            .iter()
            .all(|z| z.im == 0.0)
            .then(|| coeff.iter().map(|z| z.re).collect());
        Some(Self {
            target,
            coeff,
            real_coeff,
            diagonal,
            weights,
        })
    }
}

/// Result of the completeness check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dim: usize,
    pub kraus_count: usize,
    /// Max-abs entry of `Σ M_q†M_q − I`.
    pub deviation: f64,
    pub tolerance: f64,
    pub ok: bool,
}

/// One sampled measurement outcome.
#[derive(Clone, Debug)]
pub struct OutcomeSample {
    pub index: usize,
    pub probability: f64,
    pub post_state: DensityOperator,
}

/// `M†M`, through the sparse product when `M` has few nonzeros.
fn gram(m: &ComplexOperator) -> ComplexOperator {
    let dim = m.nrows();
    if dim >= 8 {
        let sparse = SparseColumns::from_dense(m);
        if sparse.density() <= SPARSE_DENSITY {
            return sparse.dual_sandwich(&ComplexOperator::identity(dim));
        }
    }
    m.adjoint().matmul(m)
}

fn completeness_deviation_of(kraus: &[ComplexOperator]) -> f64 {
    let dim = kraus[0].nrows();
    let mut sum = ComplexOperator::identity(dim).scale_real(-1.0);
    for m in kraus {
        sum += &gram(m);
    }
    sum.max_abs()
}

/// Checks completeness of a raw Kraus list without constructing a channel.
pub fn validate(kraus: &[ComplexOperator], tol: &Tolerances) -> Result<ValidationReport> {
    check_shapes(kraus)?;
    let deviation = completeness_deviation_of(kraus);
    Ok(ValidationReport {
        dim: kraus[0].nrows(),
        kraus_count: kraus.len(),
        deviation,
        tolerance: tol.complete,
        ok: deviation <= tol.complete,
    })
}

fn check_shapes(kraus: &[ComplexOperator]) -> Result<()> {
    let first = kraus
        .first()
        .ok_or_else(|| Error::InvalidInput("channel needs at least one Kraus operator".into()))?;
    first.ensure_square()?;
    let dim = first.nrows();
    for m in kraus {
        if !m.is_square() || m.nrows() != dim {
            return Err(Error::dims(dim, m.nrows().max(m.ncols())));
        }
        m.ensure_finite()?;
    }
    Ok(())
}

impl KrausChannel {
    /// Builds a channel, rejecting it unless completeness holds within the default tolerance.
    pub fn new(kraus: Vec<ComplexOperator>) -> Result<Self> {
        Self::with_tolerances(kraus, &Tolerances::default())
    }

    pub fn with_tolerances(kraus: Vec<ComplexOperator>, tol: &Tolerances) -> Result<Self> {
        check_shapes(&kraus)?;
        let deviation = completeness_deviation_of(&kraus);
        if deviation > tol.complete {
            return Err(Error::IncompleteChannel {
                deviation,
                tolerance: tol.complete,
            });
        }
        Ok(Self::assemble(kraus, None))
    }

    fn assemble(kraus: Vec<ComplexOperator>, labels: Option<Vec<String>>) -> Self {
        let dim = kraus[0].nrows();
        let effects = kraus.iter().map(gram).collect();
        let sparse: Vec<SparseColumns> = kraus.iter().map(SparseColumns::from_dense).collect();
        let sparse = if dim >= 8 && sparse.iter().all(|s| s.density() <= SPARSE_DENSITY) {
            Some(sparse)
        } else {
            None
        };
        Self {
            dim,
            kraus,
            labels,
            effects,
            sparse,
            pauli: None,
        }
    }

    pub(crate) fn pauli_form(&self) -> Option<&PauliForm> {
        self.pauli.as_ref()
    }

    pub fn identity(dim: usize) -> Self {
        Self::assemble(vec![ComplexOperator::identity(dim)], None)
    }

    /// Attaches outcome labels, one per Kraus operator.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.kraus.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} Kraus operators",
                labels.len(),
                self.kraus.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kraus(&self) -> &[ComplexOperator] {
        &self.kraus
    }

    pub fn len(&self) -> usize {
        self.kraus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kraus.is_empty()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn effects(&self) -> &[ComplexOperator] {
        &self.effects
    }

    pub fn completeness_deviation(&self) -> f64 {
        completeness_deviation_of(&self.kraus)
    }

    pub fn validate(&self, tol: &Tolerances) -> ValidationReport {
        let deviation = self.completeness_deviation();
        ValidationReport {
            dim: self.dim,
            kraus_count: self.kraus.len(),
            deviation,
            tolerance: tol.complete,
            ok: deviation <= tol.complete,
        }
    }

    fn check_dim(&self, a: &ComplexOperator) -> Result<()> {
        if !a.is_square() || a.nrows() != self.dim {
            return Err(Error::dims(self.dim, a.nrows()));
        }
        Ok(())
    }

    /// `Σ M_q A M_q†`.
    pub fn apply(&self, a: &ComplexOperator) -> Result<ComplexOperator> {
        self.check_dim(a)?;
        let mut out = ComplexOperator::zeros(self.dim);
        match &self.sparse {
            Some(sp) => sp.iter().for_each(|m| out += &m.sandwich(a)),
            None => self.kraus.iter().for_each(|m| out += &a.conjugate_by(m)),
        }
        Ok(out)
    }

    /// `Σ M_q† B M_q`.
    pub fn apply_dual(&self, b: &ComplexOperator) -> Result<ComplexOperator> {
        self.check_dim(b)?;
        let mut out = ComplexOperator::zeros(self.dim);
        match &self.sparse {
            Some(sp) => sp.iter().for_each(|m| out += &m.dual_sandwich(b)),
            None => self.kraus.iter().for_each(|m| out += &m.adjoint().matmul(b).matmul(m)),
        }
        Ok(out)
    }

    /// `M_q A M_q†` for one outcome.
    pub fn apply_single(&self, q: usize, a: &ComplexOperator) -> ComplexOperator {
        match &self.sparse {
            Some(sp) => sp[q].sandwich(a),
            None => a.conjugate_by(&self.kraus[q]),
        }
    }

    /// `M_q v` for one outcome.
    pub fn apply_vector(&self, q: usize, v: &[C64], out: &mut [C64]) {
        match &self.sparse {
            Some(sp) => sp[q].apply_into(v, out),
            None => out.copy_from_slice(&self.kraus[q].apply(v)),
        }
    }

    /// Outcome probabilities `Tr(M_q ρ M_q†)`, computed exactly.
    pub fn probabilities(&self, rho: &ComplexOperator) -> Vec<f64> {
        self.effects
            .iter()
            .map(|e| ComplexOperator::trace_product(e, rho).re.max(0.0))
            .collect()
    }

    /// Draws one outcome by inverse CDF over the exact probabilities.
    pub fn sample_outcome(&self, rho: &DensityOperator, rng: &mut impl Rng, tol: &Tolerances) -> Result<OutcomeSample> {
        self.check_dim(rho.op())?;
        let p = self.probabilities(rho.op());
        let u: f64 = rng.gen();
        let q = inverse_cdf(&p, u, tol.prob)?;
        let post = self.apply_single(q, rho.op()).scale_real(1.0 / p[q]);
        Ok(OutcomeSample {
            index: q,
            probability: p[q],
            post_state: DensityOperator::from_trusted(post),
        })
    }

    /// `{M_a N_b}` with index `a · inner.len() + b`; `apply(compose) = apply(outer) ∘ apply(inner)`.
    pub fn compose(outer: &KrausChannel, inner: &KrausChannel, cap: usize) -> Result<KrausChannel> {
        if outer.dim != inner.dim {
            return Err(Error::dims(outer.dim, inner.dim));
        }
        let count = outer.len().saturating_mul(inner.len());
        if count > cap {
            return Err(Error::KrausCapExceeded { count, cap });
        }
        let mut kraus = Vec::with_capacity(count);
        for a in &outer.kraus {
            for b in &inner.kraus {
                kraus.push(a.matmul(b));
            }
        }
        let labels = match (&outer.labels, &inner.labels) {
            (None, None) => None,
            (o, i) => {
                let name = |l: &Option<Vec<String>>, k: usize| {
                    l.as_ref().map(|v| v[k].clone()).unwrap_or_else(|| k.to_string())
                };
                let mut out = Vec::with_capacity(count);
                for a in 0..outer.len() {
                    for b in 0..inner.len() {
                        out.push(format!("{}*{}", name(o, a), name(i, b)));
                    }
                }
                Some(out)
            }
        };
        Ok(Self::assemble(kraus, labels))
    }
}

/// A linear, trace-preserving map on operators of a fixed dimension.
pub trait QuantumMap: Sync {
    fn dim(&self) -> usize;
    /// Schrödinger-picture action.
    fn apply(&self, a: &ComplexOperator) -> Result<ComplexOperator>;
    /// Heisenberg-picture action.
    fn apply_dual(&self, b: &ComplexOperator) -> Result<ComplexOperator>;
}

impl QuantumMap for KrausChannel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, a: &ComplexOperator) -> Result<ComplexOperator> {
        KrausChannel::apply(self, a)
    }
    fn apply_dual(&self, b: &ComplexOperator) -> Result<ComplexOperator> {
        KrausChannel::apply_dual(self, b)
    }
}

impl QuantumMap for ChannelSequence {
    fn dim(&self) -> usize {
        ChannelSequence::dim(self)
    }
    fn apply(&self, a: &ComplexOperator) -> Result<ComplexOperator> {
        ChannelSequence::apply(self, a)
    }
    fn apply_dual(&self, b: &ComplexOperator) -> Result<ComplexOperator> {
        ChannelSequence::apply_dual(self, b)
    }
}

/// Index selected by `u ∈ [0, 1)` on the CDF of `p` (not necessarily normalised).
pub(crate) fn inverse_cdf(p: &[f64], u: f64, tol_prob: f64) -> Result<usize> {
    let total: f64 = p.iter().sum();
    if total.is_nan() || total <= tol_prob {
        return Err(Error::ProbabilityUnderflow { total });
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (q, &pq) in p.iter().enumerate() {
        if pq <= 0.0 {
            continue;
        }
        last_positive = q;
        acc += pq;
        if target < acc {
            return Ok(q);
        }
    }
    Ok(last_positive)
}

fn check_involution(c: &ComplexOperator, zeta: f64, tol: &Tolerances) -> Result<()> {
    c.ensure_hermitian(tol.herm)?;
    let deviation = gram(c).max_abs_diff(&ComplexOperator::identity(c.nrows()));
    if deviation > tol.complete {
        return Err(Error::NotInvolution { deviation });
    }
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::InvalidInput(format!(
            "measurement strength zeta must lie in [0, 1), got {zeta}"
        )));
    }
    Ok(())
}

/// `P_c(ζ)• = [(1+ζ)/2]• + [(1−ζ)/2] c•c` with Kraus operators `√((1+ζ)/2) I` and `√((1−ζ)/2) c`.
pub fn weak_pauli_measurement(c: &ComplexOperator, zeta: f64, tol: &Tolerances) -> Result<KrausChannel> {
    check_involution(c, zeta, tol)?;
    let a = ((1.0 + zeta) / 2.0).sqrt();
    let b = ((1.0 - zeta) / 2.0).sqrt();
    let kraus = vec![ComplexOperator::identity(c.nrows()).scale_real(a), c.scale_real(b)];
    let mut ch = KrausChannel::with_tolerances(kraus, tol)?.with_labels(vec!["keep".into(), "flip".into()])?;
    ch.pauli = PauliForm::detect(c, vec![(a, 0.0), (0.0, b)]);
    Ok(ch)
}

/// The same channel as [`weak_pauli_measurement`] with outcome-resolving Kraus
/// operators `K± = α Π± + β Π∓`, where `Π± = (I ± c)/2`.
///
/// At `ζ = 0` these are the projectors onto the `±1` eigenspaces of `c`, so a
/// sampled outcome is the measured eigenvalue.
pub fn pauli_outcome_measurement(c: &ComplexOperator, zeta: f64, tol: &Tolerances) -> Result<KrausChannel> {
    check_involution(c, zeta, tol)?;
    let s_plus = ((1.0 + zeta) / 2.0).sqrt();
    let s_minus = ((1.0 - zeta) / 2.0).sqrt();
    let alpha = (s_plus + s_minus) * std::f64::consts::FRAC_1_SQRT_2;
    let beta = (s_plus - s_minus) * std::f64::consts::FRAC_1_SQRT_2;
    let n = c.nrows();
    let id = ComplexOperator::identity(n);
    let pi_plus = (&id + c).scale_real(0.5);
    let pi_minus = (&id - c).scale_real(0.5);
    let k_plus = &pi_plus.scale_real(alpha) + &pi_minus.scale_real(beta);
    let k_minus = &pi_minus.scale_real(alpha) + &pi_plus.scale_real(beta);
    let clean = |m: ComplexOperator| {
        let data = m
            .as_slice()
            .iter()
            .map(|z| if z.norm() < 1e-15 { ZERO } else { *z })
            .collect();
        ComplexOperator::from_vec(n, n, data).expect("same shape")
    };
    let mut ch = KrausChannel::with_tolerances(vec![clean(k_plus), clean(k_minus)], tol)?
        .with_labels(vec!["+1".into(), "-1".into()])?;
    let (x, y) = ((alpha + beta) / 2.0, (alpha - beta) / 2.0);
    ch.pauli = PauliForm::detect(c, vec![(x, y), (x, -y)]);
    Ok(ch)
}

/// Channels applied in order: `stages[0]` first.
///
/// Equivalent to the composition `stages[k-1] ∘ … ∘ stages[0]` without
/// materialising the product Kraus set.
#[derive(Clone, Debug)]
pub struct ChannelSequence {
    stages: Vec<KrausChannel>,
}

impl From<KrausChannel> for ChannelSequence {
    fn from(c: KrausChannel) -> Self {
        Self { stages: vec![c] }
    }
}

impl ChannelSequence {
    pub fn new(stages: Vec<KrausChannel>) -> Result<Self> {
        let first = stages
            .first()
            .ok_or_else(|| Error::InvalidInput("channel sequence needs at least one stage".into()))?;
        for s in &stages {
            if s.dim() != first.dim() {
                return Err(Error::dims(first.dim(), s.dim()));
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[KrausChannel] {
        &self.stages
    }

    pub fn dim(&self) -> usize {
        self.stages[0].dim()
    }

    pub fn apply(&self, a: &ComplexOperator) -> Result<ComplexOperator> {
        let mut out = a.clone();
        for s in &self.stages {
            out = s.apply(&out)?;
        }
        Ok(out)
    }

    pub fn apply_dual(&self, b: &ComplexOperator) -> Result<ComplexOperator> {
        let mut out = b.clone();
        for s in self.stages.iter().rev() {
            out = s.apply_dual(&out)?;
        }
        Ok(out)
    }

    /// Single-index outcome of one round: the last stage is the most significant digit,
    /// matching the index order of [`KrausChannel::compose`].
    pub fn flatten_outcome(&self, per_stage: &[usize]) -> u64 {
        per_stage
            .iter()
            .zip(&self.stages)
            .rev()
            .fold(0u64, |acc, (&q, s)| acc * s.len() as u64 + q as u64)
    }

    /// Materialises the whole sequence as one channel.
    pub fn to_channel(&self, cap: usize) -> Result<KrausChannel> {
        let mut acc = self.stages[0].clone();
        for s in &self.stages[1..] {
            acc = KrausChannel::compose(s, &acc, cap)?;
        }
        Ok(acc)
    }
}
