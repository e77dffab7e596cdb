//! Repeated-measurement evolution `ρ(τ) = [P U(τ/N)]^N ρ(0)`, its error bound,
//! and selective-measurement trajectories.

use std::hash::{Hash, Hasher};
use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{inverse_cdf, ChannelSequence, KrausChannel, PauliForm};
use crate::effective::{effective_evolve_state, evolve_components, EffectiveHamiltonian};
use crate::error::{Error, Result};
use crate::fixedpoint::cesaro_average;
use crate::operator::{
    liouvillian_apply, trace_norm, unitary_step, ComplexOperator, DensityOperator, SparseColumns, C64, ZERO,
};
use crate::structure::{mio_assemble, mio_components, Decomposition};
use crate::tolerance::Tolerances;

/// Default number of evenly spaced observable checkpoints.
pub const DEFAULT_CHECKPOINTS: usize = 100;

#[derive(Clone, Debug)]
pub struct ZenoConfig {
    pub hamiltonian: ComplexOperator,
    pub channel: ChannelSequence,
    pub tau: f64,
    pub n: usize,
    pub split: Option<(usize, usize)>,
    pub tolerances: Tolerances,
    j: OnceLock<f64>,
}

/// `(N1, N2)` with `N1·N2 = N` and `N2` the divisor of `N` closest to `√N`.
pub fn default_split(n: usize) -> (usize, usize) {
    let root = (n as f64).sqrt();
    let n2 = (1..=n)
        .filter(|&d| n.is_multiple_of(d))
        .min_by(|a, b| {
            let da = (*a as f64 - root).abs();
            let db = (*b as f64 - root).abs();
            da.total_cmp(&db).then(b.cmp(a))
        })
        .unwrap_or(1);
    (n / n2, n2)
}

impl ZenoConfig {
    pub fn new(hamiltonian: ComplexOperator, channel: impl Into<ChannelSequence>, tau: f64, n: usize) -> Result<Self> {
        let channel = channel.into();
        let tolerances = Tolerances::default();
        hamiltonian.ensure_hermitian(tolerances.herm)?;
        if hamiltonian.nrows() != channel.dim() {
            return Err(Error::dims(channel.dim(), hamiltonian.nrows()));
        }
        if n == 0 {
            return Err(Error::InvalidInput("measurement count N must be at least 1".into()));
        }
        if !tau.is_finite() {
            return Err(Error::InvalidInput("total time tau must be finite".into()));
        }
        Ok(Self {
            hamiltonian,
            channel,
            tau,
            n,
            split: None,
            tolerances,
            j: OnceLock::new(),
        })
    }

    pub fn with_split(mut self, n1: usize, n2: usize) -> Result<Self> {
        if n1.checked_mul(n2) != Some(self.n) {
            return Err(Error::InvalidInput(format!(
                "split ({n1}, {n2}) does not multiply to N = {}",
                self.n
            )));
        }
        self.split = Some((n1, n2));
        Ok(self)
    }

    pub fn with_default_split(mut self) -> Self {
        self.split = Some(default_split(self.n));
        self
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    /// `J = ‖H‖₁`, computed on first use.
    pub fn j(&self) -> Result<f64> {
        if let Some(j) = self.j.get() {
            return Ok(*j);
        }
        let j = trace_norm(&self.hamiltonian)?;
        Ok(*self.j.get_or_init(|| j))
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn step_time(&self) -> f64 {
        self.tau / self.n as f64
    }

    /// `e^{−iHτ/N}`.
    pub fn step_unitary(&self) -> Result<ComplexOperator> {
        unitary_step(&self.hamiltonian, self.step_time(), self.tolerances.herm)
    }

    fn check_state(&self, rho: &ComplexOperator) -> Result<()> {
        if rho.nrows() != self.dim() {
            return Err(Error::dims(self.dim(), rho.nrows()));
        }
        Ok(())
    }
}

/// Evenly spaced steps `0, …, N`, at most `count + 1` of them.
pub fn default_checkpoints(n: usize, count: usize) -> Vec<usize> {
    let count = count.max(1);
    let mut steps: Vec<usize> = (0..=count).map(|k| k * n / count).collect();
    steps.dedup();
    steps
}

/// `Tr(ρ B_k)` for each requested observable after a given number of steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub step: usize,
    pub time: f64,
    pub values: Vec<f64>,
}

fn dense_record(
    cfg: &ZenoConfig,
    step: usize,
    rho: &ComplexOperator,
    observables: &[ComplexOperator],
) -> ObservableRecord {
    ObservableRecord {
        step,
        time: step as f64 * cfg.step_time(),
        values: observables
            .iter()
            .map(|b| ComplexOperator::trace_product(rho, b).re)
            .collect(),
    }
}

fn check_observables(cfg: &ZenoConfig, observables: &[ComplexOperator]) -> Result<()> {
    for b in observables {
        if b.nrows() != cfg.dim() || !b.is_square() {
            return Err(Error::dims(cfg.dim(), b.nrows()));
        }
    }
    Ok(())
}

/// Non-selective evolution. Returns the final state and `Tr(ρB_k)` at each checkpoint.
pub fn evolve_nonselective_recorded(
    cfg: &ZenoConfig,
    rho0: &DensityOperator,
    checkpoints: &[usize],
    observables: &[ComplexOperator],
) -> Result<(DensityOperator, Vec<ObservableRecord>)> {
    cfg.check_state(rho0.op())?;
    check_observables(cfg, observables)?;
    let u = cfg.step_unitary()?;
    let mut rho = rho0.op().clone();
    let mut records = Vec::new();
    for step in 0..=cfg.n {
        if step > 0 {
            rho = cfg.channel.apply(&rho.conjugate_by(&u))?;
        }
        if checkpoints.contains(&step) {
            records.push(dense_record(cfg, step, &rho, observables));
        }
    }
    Ok((DensityOperator::from_trusted(rho), records))
}

/// `ρ(τ) = [P U(τ/N)]^N ρ(0)`.
pub fn evolve_nonselective(cfg: &ZenoConfig, rho0: &DensityOperator) -> Result<DensityOperator> {
    Ok(evolve_nonselective_recorded(cfg, rho0, &[], &[])?.0)
}

/// `‖ρ(τ) − e^{L̃τ} ρ(0)‖₁` for a fixed-point initial state.
pub fn zeno_deviation(
    cfg: &ZenoConfig,
    dec: &Decomposition,
    heff: &EffectiveHamiltonian,
    rho0: &DensityOperator,
) -> Result<f64> {
    let ideal = effective_evolve_state(dec, heff, rho0, cfg.tau, &cfg.tolerances)?;
    let actual = evolve_nonselective(cfg, rho0)?;
    trace_norm(&(actual.op() - ideal.op()))
}

/// Terms of the deviation bound `‖Δ‖₁ ≤ δ_H + δ_H̃ + δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParts {
    pub total: f64,
    pub delta_h: f64,
    pub delta_h_tilde: f64,
    pub delta: f64,
}

/// `N2 [e^{2Jτ/N2} − (1 + 2Jτ/N2)]`, evaluated without cancellation.
pub fn exponential_remainder(j: f64, tau: f64, n2: usize) -> f64 {
    let x = 2.0 * j * tau / n2 as f64;
    n2 as f64 * (x.exp_m1() - x)
}

/// Evaluates the bound for the configured split `(N1, N2)`.
pub fn error_bound(
    cfg: &ZenoConfig,
    dec: &Decomposition,
    heff: &EffectiveHamiltonian,
    rho0: &DensityOperator,
) -> Result<BoundParts> {
    let (n1, n2) = cfg
        .split
        .ok_or_else(|| Error::InvalidInput("error bound needs a split (N1, N2)".into()))?;
    let tol = &cfg.tolerances;
    let delta_h = exponential_remainder(cfg.j()?, cfg.tau, n2);
    let delta_h_tilde = exponential_remainder(heff.trace_norm_j_tilde, cfg.tau, n2);
    let comps = mio_components(dec, rho0.op(), tol.structure)?;
    let dt = cfg.tau / n2 as f64;
    let mut delta = 0.0;
    for n in 1..=n2 {
        let rho_n = mio_assemble(dec, &evolve_components(heff, &comps, (n - 1) as f64 * dt, tol)?)?;
        let l_rho = liouvillian_apply(&cfg.hamiltonian, &rho_n)?;
        let averaged = cesaro_average(&cfg.channel, &l_rho, n1)?;
        let effective = liouvillian_apply(&heff.embedded, &rho_n)?;
        delta += trace_norm(&(&averaged - &effective))?;
    }
    delta *= dt;
    Ok(BoundParts {
        total: delta_h + delta_h_tilde + delta,
        delta_h,
        delta_h_tilde,
        delta,
    })
}

#[derive(Clone, Debug)]
pub struct ZenoResult {
    pub final_state: DensityOperator,
    pub deviation: f64,
    pub bound: f64,
    pub bound_parts: BoundParts,
}

/// Evolution, deviation from the Zeno limit, and the bound in one call.
pub fn run_zeno(
    cfg: &ZenoConfig,
    dec: &Decomposition,
    heff: &EffectiveHamiltonian,
    rho0: &DensityOperator,
) -> Result<ZenoResult> {
    let cfg_split;
    let cfg = if cfg.split.is_some() {
        cfg
    } else {
        cfg_split = cfg.clone().with_default_split();
        &cfg_split
    };
    let ideal = effective_evolve_state(dec, heff, rho0, cfg.tau, &cfg.tolerances)?;
    let final_state = evolve_nonselective(cfg, rho0)?;
    let deviation = trace_norm(&(final_state.op() - ideal.op()))?;
    let bound_parts = error_bound(cfg, dec, heff, rho0)?;
    Ok(ZenoResult {
        final_state,
        deviation,
        bound: bound_parts.total,
        bound_parts,
    })
}

/// RNG of trajectory `index` under master `seed`: one ChaCha8 stream per trajectory.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Final state of a trajectory.
#[derive(Clone, Debug)]
pub enum TrajectoryState {
    Mixed(DensityOperator),
    Pure(Vec<C64>),
}

impl TrajectoryState {
    pub fn density(&self) -> DensityOperator {
        match self {
            TrajectoryState::Mixed(r) => r.clone(),
            TrajectoryState::Pure(v) => DensityOperator::from_trusted(ComplexOperator::projector(v)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Outcome index per step; see [`ChannelSequence::flatten_outcome`].
    pub outcomes: Vec<u64>,
    /// `Σ ln p` over all sampled outcomes.
    pub log_weight: f64,
    pub final_state: TrajectoryState,
    pub records: Vec<ObservableRecord>,
}

impl Trajectory {
    /// Stable digest of the outcome sequence.
    pub fn outcome_digest(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.outcomes.hash(&mut h);
        h.finish()
    }
}

/// One selective trajectory on density operators.
///
/// Each step conjugates by `U` and then samples every stage of the channel
/// with one uniform draw and an inverse CDF over the exact probabilities.
pub fn evolve_selective(
    cfg: &ZenoConfig,
    rho0: &DensityOperator,
    rng: &mut impl Rng,
    checkpoints: &[usize],
    observables: &[ComplexOperator],
) -> Result<Trajectory> {
    cfg.check_state(rho0.op())?;
    check_observables(cfg, observables)?;
    let u = cfg.step_unitary()?;
    let mut rho = rho0.op().clone();
    let mut outcomes = Vec::with_capacity(cfg.n);
    let mut log_weight = 0.0;
    let mut records = Vec::new();
    let mut per_stage = vec![0usize; cfg.channel.stages().len()];
    if checkpoints.contains(&0) {
        records.push(dense_record(cfg, 0, &rho, observables));
    }
    for step in 1..=cfg.n {
        rho = rho.conjugate_by(&u);
        for (s, stage) in cfg.channel.stages().iter().enumerate() {
            let p = stage.probabilities(&rho);
            let q = inverse_cdf(&p, rng.gen::<f64>(), cfg.tolerances.prob)?;
            rho = stage.apply_single(q, &rho).scale_real(1.0 / p[q]);
            log_weight += p[q].ln();
            per_stage[s] = q;
        }
        outcomes.push(cfg.channel.flatten_outcome(&per_stage));
        if checkpoints.contains(&step) {
            records.push(dense_record(cfg, step, &rho, observables));
        }
    }
    Ok(Trajectory {
        outcomes,
        log_weight,
        final_state: TrajectoryState::Mixed(DensityOperator::from_trusted(rho)),
        records,
    })
}

/// Dense matrix stored by columns, for products with sparse vectors.
struct ColumnMajor {
    dim: usize,
    data: Vec<C64>,
}

impl ColumnMajor {
    fn new(a: &ComplexOperator) -> Self {
        Self {
            dim: a.nrows(),
            data: a.transpose().into_vec(),
        }
    }

    fn apply_into(&self, v: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        for (k, &vk) in v.iter().enumerate() {
            if vk == ZERO {
                continue;
            }
            let col = &self.data[k * self.dim..(k + 1) * self.dim];
            for (o, &a) in out.iter_mut().zip(col) {
                *o += a * vk;
            }
        }
    }
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Applies `U` and samples one round of measurements on a state vector.
pub(crate) struct PureStepper<'a> {
    cfg: &'a ZenoConfig,
    u: ColumnMajor,
    scratch: Vec<C64>,
    branches: Vec<Vec<C64>>,
    probs: Vec<f64>,
}

impl<'a> PureStepper<'a> {
    pub(crate) fn new(cfg: &'a ZenoConfig, u: &ComplexOperator) -> Self {
        let dim = cfg.dim();
        let max_kraus = cfg.channel.stages().iter().map(|s| s.len()).max().unwrap_or(1);
        Self {
            cfg,
            u: ColumnMajor::new(u),
            scratch: vec![ZERO; dim],
            branches: vec![vec![ZERO; dim]; max_kraus],
            probs: Vec::with_capacity(max_kraus),
        }
    }

    /// One step; returns the flattened outcome and `ln p` of the round.
    pub(crate) fn step(
        &mut self,
        psi: &mut Vec<C64>,
        rng: &mut impl Rng,
        per_stage: &mut [usize],
    ) -> Result<(u64, f64)> {
        self.u.apply_into(psi, &mut self.scratch);
        std::mem::swap(psi, &mut self.scratch);
        let mut log_p = 0.0;
        for (s, stage) in self.cfg.channel.stages().iter().enumerate() {
            let u = rng.gen::<f64>();
            let (q, p) = match stage.pauli_form() {
                Some(form) => self.pauli_stage(form, psi, u)?,
                None => self.general_stage(stage, psi, u)?,
            };
            log_p += p.ln();
            per_stage[s] = q;
        }
        Ok((self.cfg.channel.flatten_outcome(per_stage), log_p))
    }

    fn general_stage(&mut self, stage: &KrausChannel, psi: &mut [C64], u: f64) -> Result<(usize, f64)> {
        self.probs.clear();
        for q in 0..stage.len() {
            stage.apply_vector(q, psi, &mut self.branches[q]);
            self.probs.push(norm_sqr(&self.branches[q]));
        }
        let q = inverse_cdf(&self.probs, u, self.cfg.tolerances.prob)?;
        let scale = 1.0 / self.probs[q].sqrt();
        for (dst, src) in psi.iter_mut().zip(&self.branches[q]) {
            *dst = src * scale;
        }
        Ok((q, self.probs[q]))
    }

    /// `M_q ψ = x_q ψ + y_q cψ`, so `p_q = (x_q² + y_q²)‖ψ‖² + 2 x_q y_q Re⟨ψ|cψ⟩`.
    fn pauli_stage(&mut self, form: &PauliForm, psi: &mut Vec<C64>, u: f64) -> Result<(usize, f64)> {
        let (norm, overlap) = match (&form.real_coeff, form.diagonal) {
            (Some(sign), true) => psi.iter().zip(sign).fold((0.0, 0.0), |(n, o), (v, s)| {
                let a = v.norm_sqr();
                (n + a, o + s * a)
            }),
            (Some(sign), false) => psi
                .iter()
                .zip(sign)
                .zip(&form.target)
                .fold((0.0, 0.0), |(n, o), ((v, s), &t)| {
                    let w = psi[t];
                    (n + v.norm_sqr(), o + s * (w.re * v.re + w.im * v.im))
                }),
            (None, _) => psi
                .iter()
                .zip(&form.coeff)
                .zip(&form.target)
                .fold((0.0, 0.0), |(n, o), ((v, c), &t)| {
                    (n + v.norm_sqr(), o + (psi[t].conj() * c * v).re)
                }),
        };
        self.probs.clear();
        self.probs.extend(
            form.weights
                .iter()
                .map(|&(x, y)| ((x * x + y * y) * norm + 2.0 * x * y * overlap).max(0.0)),
        );
        let q = inverse_cdf(&self.probs, u, self.cfg.tolerances.prob)?;
        let (x, y) = form.weights[q];
        let scale = 1.0 / self.probs[q].sqrt();
        let (xs, ys) = (x * scale, y * scale);
        match (&form.real_coeff, form.diagonal) {
            (Some(sign), true) => {
                for (v, s) in psi.iter_mut().zip(sign) {
                    *v *= xs + ys * s;
                }
            }
            (Some(sign), false) => {
                for (j, (&v, s)) in psi.iter().zip(sign).enumerate() {
                    let i = form.target[j];
                    self.scratch[i] = psi[i] * xs + v * (s * ys);
                }
                std::mem::swap(psi, &mut self.scratch);
            }
            (None, _) => {
                for (j, &v) in psi.iter().enumerate() {
                    let i = form.target[j];
                    self.scratch[i] = psi[i] * xs + form.coeff[j] * v * ys;
                }
                std::mem::swap(psi, &mut self.scratch);
            }
        }
        Ok((q, self.probs[q]))
    }
}

/// One selective trajectory on a state vector.
///
/// Consumes the RNG exactly like [`evolve_selective`], so both engines draw
/// the same outcomes from the same seed up to rounding in the probabilities.
pub fn pure_state_trajectory(
    cfg: &ZenoConfig,
    psi0: &[C64],
    rng: &mut impl Rng,
    checkpoints: &[usize],
    observables: &[ComplexOperator],
) -> Result<Trajectory> {
    check_observables(cfg, observables)?;
    let u = cfg.step_unitary()?;
    let sparse: Vec<SparseColumns> = observables.iter().map(SparseColumns::from_dense).collect();
    pure_state_trajectory_with_unitary(cfg, &u, psi0, rng, checkpoints, &sparse)
}

pub(crate) fn pure_state_trajectory_with_unitary(
    cfg: &ZenoConfig,
    u: &ComplexOperator,
    psi0: &[C64],
    rng: &mut impl Rng,
    checkpoints: &[usize],
    observables: &[SparseColumns],
) -> Result<Trajectory> {
    if psi0.len() != cfg.dim() {
        return Err(Error::dims(cfg.dim(), psi0.len()));
    }
    let norm = norm_sqr(psi0).sqrt();
    if norm.is_nan() || norm <= 0.0 {
        return Err(Error::ProbabilityUnderflow { total: 0.0 });
    }
    let mut psi: Vec<C64> = psi0.iter().map(|z| z / norm).collect();
    let mut stepper = PureStepper::new(cfg, u);
    let mut per_stage = vec![0usize; cfg.channel.stages().len()];
    let mut outcomes = Vec::with_capacity(cfg.n);
    let mut log_weight = 0.0;
    let mut records = Vec::new();
    let mut scratch = vec![ZERO; cfg.dim()];
    let mut record = |step: usize, psi: &[C64], records: &mut Vec<ObservableRecord>| {
        let values = observables
            .iter()
            .map(|b| {
                b.apply_into(psi, &mut scratch);
                psi.iter().zip(&scratch).map(|(a, c)| a.conj() * c).sum::<C64>().re
            })
            .collect();
        records.push(ObservableRecord {
            step,
            time: step as f64 * cfg.step_time(),
            values,
        });
    };
    if checkpoints.contains(&0) {
        record(0, &psi, &mut records);
    }
    for step in 1..=cfg.n {
        let (outcome, log_p) = stepper.step(&mut psi, rng, &mut per_stage)?;
        outcomes.push(outcome);
        log_weight += log_p;
        if checkpoints.contains(&step) {
            record(step, &psi, &mut records);
        }
    }
    Ok(Trajectory {
        outcomes,
        log_weight,
        final_state: TrajectoryState::Pure(psi),
        records,
    })
}

/// Initial condition of a trajectory ensemble.
#[derive(Clone, Debug)]
pub enum InitialState {
    Mixed(DensityOperator),
    Pure(Vec<C64>),
}

/// Checkpoint statistics of an ensemble, aggregated in trajectory-index order.
///
/// Statistics are indexed `[observable][checkpoint]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub count: usize,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    /// Across-trajectory standard deviation.
    pub std_dev: Vec<Vec<f64>>,
    /// Standard error of the mean.
    pub std_err: Vec<Vec<f64>>,
    /// Observable values at the last checkpoint, indexed `[trajectory][observable]`.
    pub final_values: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    pub outcome_digests: Vec<u64>,
}

/// Per-trajectory data kept by the ensemble runner.
#[derive(Clone, Debug)]
pub struct TrajectorySummary {
    pub records: Vec<ObservableRecord>,
    pub log_weight: f64,
    pub outcome_digest: u64,
}

impl From<Trajectory> for TrajectorySummary {
    fn from(t: Trajectory) -> Self {
        let outcome_digest = t.outcome_digest();
        Self {
            records: t.records,
            log_weight: t.log_weight,
            outcome_digest,
        }
    }
}

/// Aggregates trajectories recorded at identical checkpoints.
pub fn summarize(trajectories: &[TrajectorySummary]) -> Result<EnsembleSummary> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InvalidInput("no trajectories to summarize".into()))?;
    let count = trajectories.len();
    let steps: Vec<usize> = first.records.iter().map(|r| r.step).collect();
    let times: Vec<f64> = first.records.iter().map(|r| r.time).collect();
    let n_obs = first.records.first().map_or(0, |r| r.values.len());
    if trajectories
        .iter()
        .any(|t| t.records.iter().map(|r| r.step).ne(steps.iter().copied()))
    {
        return Err(Error::InvalidInput("trajectories have different checkpoints".into()));
    }
    let mut mean = vec![vec![0.0; steps.len()]; n_obs];
    let mut std_dev = vec![vec![0.0; steps.len()]; n_obs];
    for o in 0..n_obs {
        for k in 0..steps.len() {
            let value = |t: &TrajectorySummary| t.records[k].values[o];
            let m = trajectories.iter().map(value).sum::<f64>() / count as f64;
            let var = if count > 1 {
                trajectories.iter().map(|t| (value(t) - m).powi(2)).sum::<f64>() / (count - 1) as f64
            } else {
                0.0
            };
            mean[o][k] = m;
            std_dev[o][k] = var.sqrt();
        }
    }
    let root = (count as f64).sqrt();
    let std_err = std_dev
        .iter()
        .map(|row| row.iter().map(|s| s / root).collect())
        .collect();
    Ok(EnsembleSummary {
        count,
        steps,
        times,
        mean,
        std_dev,
        std_err,
        final_values: trajectories
            .iter()
            .map(|t| t.records.last().map(|r| r.values.clone()).unwrap_or_default())
            .collect(),
        log_weights: trajectories.iter().map(|t| t.log_weight).collect(),
        outcome_digests: trajectories.iter().map(|t| t.outcome_digest).collect(),
    })
}

/// Runs `count` independent trajectories in parallel; trajectory `i` uses
/// [`trajectory_rng`]`(seed, i)`. Pure initial states use the state-vector engine.
pub fn run_trajectories(
    cfg: &ZenoConfig,
    init: &InitialState,
    count: usize,
    seed: u64,
    checkpoints: &[usize],
    observables: &[ComplexOperator],
) -> Result<EnsembleSummary> {
    if count == 0 {
        return Err(Error::InvalidInput("trajectory count must be positive".into()));
    }
    check_observables(cfg, observables)?;
    let u = cfg.step_unitary()?;
    let sparse: Vec<SparseColumns> = observables.iter().map(SparseColumns::from_dense).collect();
    let results: Vec<TrajectorySummary> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, i as u64);
            let t = match init {
                InitialState::Pure(psi) => {
                    pure_state_trajectory_with_unitary(cfg, &u, psi, &mut rng, checkpoints, &sparse)?
                }
                InitialState::Mixed(rho) => evolve_selective(cfg, rho, &mut rng, checkpoints, observables)?,
            };
            Ok(t.into())
        })
        .collect::<Result<_>>()?;
    summarize(&results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::effective_hamiltonian;
    use crate::models::decay_channel;
    use crate::operator::hermitian_eig;
    use crate::random::{
        random_channel, random_density, random_hermitian_unit_norm, random_state_vector, random_unitary, seeded_rng,
    };
    use crate::structure::decompose;

    fn g1() -> DensityOperator {
        DensityOperator::from_trusted(ComplexOperator::from_real_diagonal(&[1.0, 0.0, 0.0]))
    }

    #[test]
    fn split_defaults() {
        assert_eq!(default_split(1024), (32, 32));
        assert_eq!(default_split(64), (8, 8));
        assert_eq!(default_split(12), (4, 3));
        assert_eq!(default_split(7), (7, 1));
        let h = ComplexOperator::zeros(3);
        let cfg = ZenoConfig::new(h, decay_channel(), 1.0, 12).unwrap();
        assert!(cfg.clone().with_split(5, 2).is_err());
        assert!(ZenoConfig::new(ComplexOperator::zeros(3), decay_channel(), 1.0, 0).is_err());
    }

    #[test]
    fn exponential_remainder_value() {
        // 4 (e^{0.5} − 1.5)
        let expected = 4.0 * (0.5f64.exp() - 1.5);
        assert!((exponential_remainder(1.0, 1.0, 4) - expected).abs() < 1e-15);
        assert!((expected - 0.5948850828).abs() < 1e-9);
        assert_eq!(exponential_remainder(0.0, 1.0, 4), 0.0);
    }

    #[test]
    fn zero_hamiltonian_leaves_fixed_points_alone() {
        let ch = decay_channel();
        let dec = decompose(&ch, &Tolerances::default(), 1).unwrap();
        let h = ComplexOperator::zeros(3);
        let heff = effective_hamiltonian(&dec, &h, &Tolerances::default()).unwrap();
        let cfg = ZenoConfig::new(h, ch.clone(), 1.0, 16).unwrap().with_default_split();
        let out = evolve_nonselective(&cfg, &g1()).unwrap();
        assert!(out.op().max_abs_diff(g1().op()) < 1e-15);
        assert!(zeno_deviation(&cfg, &dec, &heff, &g1()).unwrap() < 1e-12);
        let b = error_bound(&cfg, &dec, &heff, &g1()).unwrap();
        assert_eq!((b.delta_h, b.delta_h_tilde), (0.0, 0.0));
        assert!(b.delta < 1e-15);
        let cfg = cfg.clone();
        let no_split = ZenoConfig { split: None, ..cfg };
        assert!(error_bound(&no_split, &dec, &heff, &g1()).is_err());
    }

    #[test]
    fn single_step_identity_channel_is_unitary_conjugation() {
        let mut rng = seeded_rng(61);
        let h = random_hermitian_unit_norm(3, &mut rng);
        let rho = random_density(3, &mut rng);
        let cfg = ZenoConfig::new(h.clone(), KrausChannel::identity(3), 0.7, 1).unwrap();
        let u = unitary_step(&h, 0.7, 1e-10).unwrap();
        let out = evolve_nonselective(&cfg, &rho).unwrap();
        assert!(out.op().max_abs_diff(&rho.op().conjugate_by(&u)) < 1e-14);
    }

    #[test]
    fn decay_channel_convergence_sweep() {
        let ch = decay_channel();
        let tol = Tolerances::default();
        let dec = decompose(&ch, &tol, 1).unwrap();
        let h = random_hermitian_unit_norm(3, &mut seeded_rng(62));
        let heff = effective_hamiltonian(&dec, &h, &tol).unwrap();
        let mut last = f64::INFINITY;
        for n in [10, 100, 1000] {
            let cfg = ZenoConfig::new(h.clone(), ch.clone(), 1.0, n).unwrap();
            let d = zeno_deviation(&cfg, &dec, &heff, &g1()).unwrap();
            assert!(d < last, "N = {n}: {d} !< {last}");
            last = d;
        }
    }

    #[test]
    fn bound_dominates_and_shrinks_on_decay_channel() {
        let ch = decay_channel();
        let tol = Tolerances::default();
        let dec = decompose(&ch, &tol, 1).unwrap();
        let h = random_hermitian_unit_norm(3, &mut seeded_rng(63));
        let heff = effective_hamiltonian(&dec, &h, &tol).unwrap();
        let mut last = f64::INFINITY;
        for n in [64, 256, 1024] {
            let cfg = ZenoConfig::new(h.clone(), ch.clone(), 1.0, n)
                .unwrap()
                .with_default_split();
            let r = run_zeno(&cfg, &dec, &heff, &g1()).unwrap();
            assert!(r.deviation <= r.bound);
            assert!(r.bound < last);
            last = r.bound;
        }
    }

    #[test]
    fn unitary_channel_trajectory_is_deterministic_evolution() {
        let mut rng = seeded_rng(64);
        let v = random_unitary(3, &mut rng);
        let h = random_hermitian_unit_norm(3, &mut rng);
        let cfg = ZenoConfig::new(h, KrausChannel::new(vec![v]).unwrap(), 1.0, 20).unwrap();
        let rho = random_density(3, &mut rng);
        let t = evolve_selective(&cfg, &rho, &mut trajectory_rng(1, 0), &[], &[]).unwrap();
        assert!(t.outcomes.iter().all(|&q| q == 0));
        let exact = evolve_nonselective(&cfg, &rho).unwrap();
        assert!(t.final_state.density().op().max_abs_diff(exact.op()) < 1e-12);
        let psi = random_state_vector(3, &mut rng);
        let pure = pure_state_trajectory(&cfg, &psi, &mut trajectory_rng(1, 0), &[], &[]).unwrap();
        let dense = evolve_nonselective(&cfg, &DensityOperator::pure(&psi).unwrap()).unwrap();
        assert!(pure.final_state.density().op().max_abs_diff(dense.op()) < 1e-12);
    }

    #[test]
    fn pure_and_mixed_engines_draw_identical_outcomes() {
        let mut rng = seeded_rng(65);
        let ch = random_channel(3, 3, &mut rng).unwrap();
        let h = random_hermitian_unit_norm(3, &mut rng);
        let cfg = ZenoConfig::new(h, ch, 1.0, 40).unwrap();
        let psi = random_state_vector(3, &mut rng);
        let rho = DensityOperator::pure(&psi).unwrap();
        let a = pure_state_trajectory(&cfg, &psi, &mut trajectory_rng(9, 3), &[], &[]).unwrap();
        let b = evolve_selective(&cfg, &rho, &mut trajectory_rng(9, 3), &[], &[]).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert!((a.log_weight - b.log_weight).abs() < 1e-9);
        assert!(a.final_state.density().op().max_abs_diff(b.final_state.density().op()) < 1e-9);
        let again = pure_state_trajectory(&cfg, &psi, &mut trajectory_rng(9, 3), &[], &[]).unwrap();
        assert_eq!(a.outcomes, again.outcomes);
    }

    #[test]
    fn trace_is_preserved_over_many_steps() {
        let mut rng = seeded_rng(66);
        let ch = random_channel(4, 2, &mut rng).unwrap();
        let h = random_hermitian_unit_norm(4, &mut rng);
        let cfg = ZenoConfig::new(h, ch, 3.0, 5000).unwrap();
        let rho = random_density(4, &mut rng);
        let out = evolve_nonselective(&cfg, &rho).unwrap();
        assert!((out.op().trace().re - 1.0).abs() < 1e-9);
        let eig = hermitian_eig(&out.op().hermitian_part(), 1e-9).unwrap();
        assert!(eig.values[0] > -1e-9);
        let t = evolve_selective(&cfg, &rho, &mut trajectory_rng(2, 0), &[], &[]).unwrap();
        assert!((t.final_state.density().op().trace().re - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ensembles_are_reproducible_and_ordered() {
        let mut rng = seeded_rng(67);
        let ch = random_channel(3, 2, &mut rng).unwrap();
        let h = random_hermitian_unit_norm(3, &mut rng);
        let cfg = ZenoConfig::new(h, ch, 1.0, 10).unwrap();
        let psi = random_state_vector(3, &mut rng);
        let b = random_density(3, &mut rng).into_inner();
        let cps = default_checkpoints(10, 5);
        assert_eq!(cps, vec![0, 2, 4, 6, 8, 10]);
        let obs = [b.clone(), ComplexOperator::identity(3)];
        let a = run_trajectories(&cfg, &InitialState::Pure(psi.clone()), 16, 5, &cps, &obs).unwrap();
        let c = run_trajectories(&cfg, &InitialState::Pure(psi.clone()), 16, 5, &cps, &obs).unwrap();
        assert_eq!(a, c);
        let single = pure_state_trajectory(&cfg, &psi, &mut trajectory_rng(5, 7), &cps, &obs).unwrap();
        assert_eq!(a.outcome_digests[7], single.outcome_digest());
        assert_eq!(a.final_values[7], single.records.last().unwrap().values);
        assert_eq!(a.steps, cps);
        assert!(a.mean[1].iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(a.std_dev[1].iter().all(|v| *v < 1e-6));
        let rho = DensityOperator::pure(&psi).unwrap();
        let mixed = run_trajectories(&cfg, &InitialState::Mixed(rho), 16, 5, &cps, &obs).unwrap();
        assert_eq!(mixed.outcome_digests, a.outcome_digests);
        for (x, y) in mixed.mean[0].iter().zip(&a.mean[0]) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
