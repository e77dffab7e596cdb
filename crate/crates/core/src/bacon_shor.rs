//! The 3×3 Bacon-Shor subsystem code under repeated gauge measurements.
//!
//! Qubits are numbered 1–9 in row-major order on a 3×3 grid, with qubit 1 the
//! most significant bit of a basis index. `Z_L = Z2 Z5 Z8` (middle column) and
//! `X_L = X4 X5 X6` (middle row). ZZ gauges join horizontal neighbours and XX
//! gauges join vertical neighbours, which are the orientations that commute with
//! both logical operators.

use std::fmt;
use std::io::Write;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::channel::{pauli_outcome_measurement, ChannelSequence};
use crate::error::{Error, Result};
use crate::operator::{
    partial_trace_r, unitary_step, ComplexOperator, DensityOperator, SparseColumns, SubsystemShape, C64, ONE, ZERO,
};
use crate::tolerance::Tolerances;
use crate::zeno::{
    default_checkpoints, evolve_nonselective_recorded, run_trajectories, InitialState, ZenoConfig, DEFAULT_CHECKPOINTS,
};

pub const N_QUBITS: usize = 9;
pub const DIM: usize = 1 << N_QUBITS;
/// Dimension of the gauge factor `H_G` (eight qubits).
pub const GAUGE_DIM: usize = DIM / 2;
/// Largest `N` accepted by the dense validation engine.
pub const DENSE_MAX_N: usize = 200;

fn bit(qubit: usize) -> u16 {
    1 << (N_QUBITS - qubit)
}

fn parity(x: u16) -> u32 {
    x.count_ones() & 1
}

/// A 9-qubit Pauli operator `i^phase X^x Z^z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    x: u16,
    z: u16,
    phase: u8,
}

impl PauliString {
    pub fn identity() -> Self {
        Self { x: 0, z: 0, phase: 0 }
    }

    /// Hermitian Pauli with the given letters and sign `+1`.
    fn from_masks(x: u16, z: u16) -> Self {
        Self {
            x,
            z,
            phase: ((x & z).count_ones() % 4) as u8,
        }
    }

    /// `σ^letter` on one qubit (1-based).
    pub fn single(qubit: usize, letter: char) -> Result<Self> {
        if !(1..=N_QUBITS).contains(&qubit) {
            return Err(Error::InvalidInput(format!("qubit {qubit} outside 1..={N_QUBITS}")));
        }
        let b = bit(qubit);
        let (x, z) = match letter.to_ascii_uppercase() {
            'I' => (0, 0),
            'X' => (b, 0),
            'Y' => (b, b),
            'Z' => (0, b),
            other => return Err(Error::InvalidInput(format!("unknown Pauli letter {other:?}"))),
        };
        Ok(Self::from_masks(x, z))
    }

    /// Parses nine letters, optionally preceded by `+` or `-`, e.g. `"-IZIIZIIZI"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        if body.chars().count() != N_QUBITS {
            return Err(Error::InvalidInput(format!(
                "Pauli string {s:?} must have {N_QUBITS} letters"
            )));
        }
        let mut p = body.chars().enumerate().try_fold(Self::identity(), |acc, (k, c)| {
            Ok::<_, Error>(acc * Self::single(k + 1, c)?)
        })?;
        if negative {
            p.phase = (p.phase + 2) % 4;
        }
        Ok(p)
    }

    /// Product of single-qubit operators with the same letter.
    pub fn uniform(letter: char, qubits: &[usize]) -> Result<Self> {
        qubits
            .iter()
            .try_fold(Self::identity(), |acc, &q| Ok(acc * Self::single(q, letter)?))
    }

    pub fn letter(&self, qubit: usize) -> char {
        let b = bit(qubit);
        match (self.x & b != 0, self.z & b != 0) {
            (false, false) => 'I',
            (true, false) => 'X',
            (true, true) => 'Y',
            (false, true) => 'Z',
        }
    }

    pub fn weight(&self) -> u32 {
        (self.x | self.z).count_ones()
    }

    pub fn is_hermitian(&self) -> bool {
        (self.phase as u32 & 1) == parity(self.x & self.z)
    }

    /// `±1` prefactor of the letter form, for Hermitian strings.
    pub fn sign(&self) -> Option<f64> {
        if !self.is_hermitian() {
            return None;
        }
        let k = (self.phase as i32 - (self.x & self.z).count_ones() as i32).rem_euclid(4);
        Some(if k == 0 { 1.0 } else { -1.0 })
    }

    pub fn commutes_with(&self, other: &Self) -> bool {
        symplectic(self.x, self.z, other.x, other.z) == 0
    }

    /// `H^{⊗9} P H^{⊗9}`: swaps X and Z and negates Y.
    pub fn hadamard_conjugate(&self) -> Self {
        Self {
            x: self.z,
            z: self.x,
            phase: ((self.phase as u32 + 2 * parity(self.x & self.z)) % 4) as u8,
        }
    }

    pub fn in_frame(&self, frame: Frame) -> Self {
        match frame {
            Frame::Physical => *self,
            Frame::Hadamard => self.hadamard_conjugate(),
        }
    }

    fn prefactor(&self) -> C64 {
        [ONE, C64::new(0.0, 1.0), -ONE, C64::new(0.0, -1.0)][self.phase as usize]
    }

    /// `P|b⟩ = c |b'⟩`, returned as `(b', c)`.
    pub fn apply_basis(&self, b: usize) -> (usize, C64) {
        let sign = if parity(b as u16 & self.z) == 1 { -ONE } else { ONE };
        (b ^ self.x as usize, self.prefactor() * sign)
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; v.len()];
        for (b, &vb) in v.iter().enumerate() {
            let (t, c) = self.apply_basis(b);
            out[t] += c * vb;
        }
        out
    }

    /// `target += coeff · P`.
    pub fn add_to(&self, coeff: f64, target: &mut ComplexOperator) {
        for b in 0..DIM {
            let (t, c) = self.apply_basis(b);
            target[(t, b)] += c * coeff;
        }
    }

    pub fn to_dense(&self) -> ComplexOperator {
        let mut m = ComplexOperator::zeros(DIM);
        self.add_to(1.0, &mut m);
        m
    }

    pub fn to_sparse(&self) -> SparseColumns {
        SparseColumns::from_dense(&self.to_dense())
    }
}

fn symplectic(x1: u16, z1: u16, x2: u16, z2: u16) -> u32 {
    parity(x1 & z2) ^ parity(z1 & x2)
}

impl Mul for PauliString {
    type Output = PauliString;

    fn mul(self, rhs: Self) -> Self {
        let swap = 2 * parity(self.z & rhs.x);
        Self {
            x: self.x ^ rhs.x,
            z: self.z ^ rhs.z,
            phase: ((self.phase as u32 + rhs.phase as u32 + swap) % 4) as u8,
        }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign() {
            Some(s) if s < 0.0 => write!(f, "-")?,
            Some(_) => write!(f, "+")?,
            None => write!(f, "(i^{})", self.phase)?,
        }
        for q in 1..=N_QUBITS {
            write!(f, "{}", self.letter(q))?;
        }
        Ok(())
    }
}

/// Basis in which operators are realized.
///
/// `Hadamard` applies a Hadamard to every qubit. There the XX gauges are
/// diagonal, so a state just after a measurement round has 8 nonzero amplitudes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Physical,
    Hadamard,
}

/// Horizontal then vertical nearest-neighbour pairs on the 3×3 grid.
pub fn neighbour_pairs() -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(12);
    for r in 0..3 {
        for c in 0..2 {
            pairs.push((3 * r + c + 1, 3 * r + c + 2));
        }
    }
    for c in 0..3 {
        for r in 0..2 {
            pairs.push((3 * r + c + 1, 3 * r + c + 4));
        }
    }
    pairs
}

/// The four stabilizer generators: Z on adjacent column pairs, X on adjacent row pairs.
pub fn stabilizers() -> Vec<PauliString> {
    let cols = |a: usize, b: usize| [a, a + 3, a + 6, b, b + 3, b + 6];
    let rows = |a: usize, b: usize| [3 * a + 1, 3 * a + 2, 3 * a + 3, 3 * b + 1, 3 * b + 2, 3 * b + 3];
    vec![
        PauliString::uniform('Z', &cols(1, 2)).expect("valid qubits"),
        PauliString::uniform('Z', &cols(2, 3)).expect("valid qubits"),
        PauliString::uniform('X', &rows(0, 1)).expect("valid qubits"),
        PauliString::uniform('X', &rows(1, 2)).expect("valid qubits"),
    ]
}

#[derive(Clone, Debug)]
pub struct BaconShorSetup {
    pub omega: f64,
    pub zeta: f64,
    /// Six ZZ gauges followed by six XX gauges, in measurement order.
    pub gauge_ops: Vec<PauliString>,
    pub z_l: PauliString,
    pub x_l: PauliString,
    /// `(ω/√2)(Z_L + X_L)` as weighted Pauli strings.
    pub h0_terms: Vec<(f64, PauliString)>,
    /// Every one-local Pauli and every two-local product on neighbouring qubits, weight `ω`.
    pub noise_terms: Vec<(f64, PauliString)>,
    /// Dense `H0` and `H_noise` in the physical frame.
    pub h0: ComplexOperator,
    pub h_noise: ComplexOperator,
}

pub fn build_setup(omega: f64, zeta: f64) -> Result<BaconShorSetup> {
    if !omega.is_finite() {
        return Err(Error::InvalidInput("omega must be finite".into()));
    }
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::InvalidInput(format!(
            "measurement strength zeta must lie in [0, 1), got {zeta}"
        )));
    }
    let pairs = neighbour_pairs();
    let (horizontal, vertical) = pairs.split_at(6);
    let gauge_ops = horizontal
        .iter()
        .map(|&(a, b)| PauliString::uniform('Z', &[a, b]))
        .chain(vertical.iter().map(|&(a, b)| PauliString::uniform('X', &[a, b])))
        .collect::<Result<Vec<_>>>()?;
    let z_l = PauliString::uniform('Z', &[2, 5, 8])?;
    let x_l = PauliString::uniform('X', &[4, 5, 6])?;
    let c = omega * std::f64::consts::FRAC_1_SQRT_2;
    let h0_terms = vec![(c, z_l), (c, x_l)];
    let mut noise_terms = Vec::with_capacity(27 + 9 * pairs.len());
    for q in 1..=N_QUBITS {
        for a in ['X', 'Y', 'Z'] {
            noise_terms.push((omega, PauliString::single(q, a)?));
        }
    }
    for &(i, j) in &pairs {
        for a in ['X', 'Y', 'Z'] {
            for b in ['X', 'Y', 'Z'] {
                noise_terms.push((omega, PauliString::single(i, a)? * PauliString::single(j, b)?));
            }
        }
    }
    let h0 = pauli_sum(&h0_terms, Frame::Physical);
    let h_noise = pauli_sum(&noise_terms, Frame::Physical);
    Ok(BaconShorSetup {
        omega,
        zeta,
        gauge_ops,
        z_l,
        x_l,
        h0_terms,
        noise_terms,
        h0,
        h_noise,
    })
}

/// `Σ c_k P_k` realized in `frame`.
pub fn pauli_sum(terms: &[(f64, PauliString)], frame: Frame) -> ComplexOperator {
    let mut m = ComplexOperator::zeros(DIM);
    for (c, p) in terms {
        p.in_frame(frame).add_to(*c, &mut m);
    }
    m
}

impl BaconShorSetup {
    /// `Y_L = i X_L Z_L`.
    pub fn y_l(&self) -> PauliString {
        PauliString { phase: 1, x: 0, z: 0 } * self.x_l * self.z_l
    }

    /// `H0 + H_noise` in `frame`.
    pub fn hamiltonian(&self, frame: Frame) -> ComplexOperator {
        let terms: Vec<_> = self.h0_terms.iter().chain(&self.noise_terms).copied().collect();
        pauli_sum(&terms, frame)
    }

    /// One measurement round: every ZZ gauge, then every XX gauge, each with
    /// outcome-resolving Kraus operators.
    pub fn gauge_channel(&self, frame: Frame, tol: &Tolerances) -> Result<ChannelSequence> {
        let stages = self
            .gauge_ops
            .iter()
            .map(|g| pauli_outcome_measurement(&g.in_frame(frame).to_dense(), self.zeta, tol))
            .collect::<Result<Vec<_>>>()?;
        ChannelSequence::new(stages)
    }

    /// Logical Paulis `[X_L, Y_L, Z_L]`.
    pub fn logical_paulis(&self) -> [PauliString; 3] {
        [self.x_l, self.y_l(), self.z_l]
    }
}

/// A basis `|l⟩ ⊗ |s⟩ ⊗ |g⟩` of the code space: one logical qubit, four
/// stabilizer qubits, and four gauge qubits.
///
/// Column `l·256 + s·16 + g` of `unitary` is the joint eigenvector of the
/// logical `Z_L`, the stabilizers, and four gauge operators, with the bits of
/// the index giving the eigenvalues (`0 ↔ +1`).
#[derive(Clone, Debug)]
pub struct CodeBasis {
    /// Pairs `(Z̄_k, X̄_k)` with `Z̄_0 = Z_L`, `X̄_0 = X_L`.
    pub pairs: Vec<(PauliString, PauliString)>,
    pub unitary: ComplexOperator,
}

/// Symplectic Gram–Schmidt starting from the logical pair, then the
/// stabilizers, then the gauge operators.
pub fn code_basis(setup: &BaconShorSetup) -> Result<CodeBasis> {
    let mut pairs: Vec<(u16, u16, u16, u16)> = vec![(setup.z_l.x, setup.z_l.z, setup.x_l.x, setup.x_l.z)];
    let mut cands: Vec<(u16, u16)> = stabilizers()
        .iter()
        .chain(&setup.gauge_ops)
        .map(|p| (p.x, p.z))
        .chain((1..=N_QUBITS).flat_map(|q| [(0, bit(q)), (bit(q), 0)]))
        .collect();
    loop {
        let &(ax, az, bx, bz) = pairs.last().expect("non-empty");
        for v in cands.iter_mut() {
            let wb = symplectic(v.0, v.1, bx, bz);
            let wa = symplectic(v.0, v.1, ax, az);
            if wb == 1 {
                *v = (v.0 ^ ax, v.1 ^ az);
            }
            if wa == 1 {
                *v = (v.0 ^ bx, v.1 ^ bz);
            }
        }
        cands.retain(|v| v.0 | v.1 != 0);
        if cands.is_empty() {
            break;
        }
        let v = cands.remove(0);
        let k = cands
            .iter()
            .position(|w| symplectic(v.0, v.1, w.0, w.1) == 1)
            .ok_or_else(|| Error::Eigensolver("symplectic basis construction found no partner".into()))?;
        let w = cands.remove(k);
        pairs.push((v.0, v.1, w.0, w.1));
    }
    if pairs.len() != N_QUBITS {
        return Err(Error::Eigensolver(format!(
            "symplectic basis has {} pairs, expected {N_QUBITS}",
            pairs.len()
        )));
    }
    let pairs: Vec<(PauliString, PauliString)> = pairs
        .into_iter()
        .enumerate()
        .map(|(k, (zx, zz, xx, xz))| {
            if k == 0 {
                (setup.z_l, setup.x_l)
            } else {
                (PauliString::from_masks(zx, zz), PauliString::from_masks(xx, xz))
            }
        })
        .collect();

    // Joint +1 eigenvector of every Z̄, projected from the best computational basis state.
    let project = |b: usize| {
        let mut v = vec![ZERO; DIM];
        v[b] = ONE;
        for (zbar, _) in &pairs {
            let zv = zbar.apply(&v);
            v.iter_mut().zip(&zv).for_each(|(a, c)| *a = (*a + c) * 0.5);
        }
        v
    };
    let norm = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut best = (0, 0.0);
    for b in 0..DIM {
        let n = norm(&project(b));
        if n > best.1 + 1e-12 {
            best = (b, n);
        }
    }
    let vacuum: Vec<C64> = project(best.0).iter().map(|z| z / best.1).collect();
    let columns: Vec<Vec<C64>> = (0..DIM)
        .map(|idx| {
            let mut v = vacuum.clone();
            for (k, (_, xbar)) in pairs.iter().enumerate() {
                if idx >> (N_QUBITS - 1 - k) & 1 == 1 {
                    v = xbar.apply(&v);
                }
            }
            v
        })
        .collect();
    Ok(CodeBasis {
        pairs,
        unitary: ComplexOperator::from_columns(DIM, &columns),
    })
}

impl CodeBasis {
    /// `W† A W`: the operator in the `L ⊗ G` basis.
    pub fn encode(&self, a: &ComplexOperator) -> ComplexOperator {
        self.unitary.adjoint().matmul(a).matmul(&self.unitary)
    }

    /// `(1/256) Tr_G A`.
    pub fn logical_part(&self, a: &ComplexOperator) -> Result<ComplexOperator> {
        let shape = SubsystemShape::new(2, GAUGE_DIM)?;
        Ok(partial_trace_r(&self.encode(a), shape)?.scale_real(1.0 / GAUGE_DIM as f64))
    }

    /// `(1/16) Tr_gauge` of `A` restricted to one stabilizer syndrome `s ∈ 0..16`.
    pub fn syndrome_logical_part(&self, a: &ComplexOperator, syndrome: usize) -> Result<ComplexOperator> {
        if syndrome >= 16 {
            return Err(Error::InvalidInput(format!("syndrome {syndrome} outside 0..16")));
        }
        let enc = self.encode(a);
        let idx = |l: usize, g: usize| l * GAUGE_DIM + syndrome * 16 + g;
        Ok(ComplexOperator::from_fn(2, 2, |l, m| {
            (0..16).map(|g| enc[(idx(l, g), idx(m, g))]).sum::<C64>() / 16.0
        }))
    }
}

/// Effective logical Hamiltonians `(1/256) Tr_G H` for the control and the noise.
#[derive(Clone, Debug)]
pub struct LogicalHamiltonians {
    pub control: ComplexOperator,
    pub noise: ComplexOperator,
}

pub fn effective_logical_hamiltonian(setup: &BaconShorSetup) -> Result<LogicalHamiltonians> {
    let basis = code_basis(setup)?;
    Ok(LogicalHamiltonians {
        control: basis.logical_part(&setup.h0)?,
        noise: basis.logical_part(&setup.h_noise)?,
    })
}

/// Bloch vector `(⟨X⟩, ⟨Y⟩, ⟨Z⟩)` of `e^{−iHt}|0⟩⟨0|e^{iHt}` for a 2×2 `H`.
pub fn ideal_logical_bloch(h: &ComplexOperator, t: f64, tol: &Tolerances) -> Result<[f64; 3]> {
    let u = unitary_step(h, t, tol.herm)?;
    let psi = [u[(0, 0)], u[(1, 0)]];
    let x = 2.0 * (psi[0].conj() * psi[1]).re;
    let y = 2.0 * (psi[0].conj() * psi[1]).im;
    let z = psi[0].norm_sqr() - psi[1].norm_sqr();
    Ok([x, y, z])
}

/// Physical initial state: `|0…0⟩` or a gauge-flipped copy `X1 X4 |0…0⟩`.
/// Both are `|0_L⟩` on the logical qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaugeInit {
    AllZero,
    FlippedPair,
}

impl GaugeInit {
    pub fn state(self, frame: Frame) -> Vec<C64> {
        let flip = match self {
            GaugeInit::AllZero => PauliString::identity(),
            GaugeInit::FlippedPair => PauliString::uniform('X', &[1, 4]).expect("valid qubits"),
        };
        let mut zero = vec![ZERO; DIM];
        zero[0] = ONE;
        match frame {
            Frame::Physical => flip.apply(&zero),
            Frame::Hadamard => {
                let plus = vec![C64::new((DIM as f64).sqrt().recip(), 0.0); DIM];
                flip.hadamard_conjugate().apply(&plus)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FigureEngine {
    /// State-vector trajectories.
    Trajectories,
    /// Exact non-selective evolution of the 512×512 density operator.
    Dense,
}

#[derive(Clone, Debug)]
pub struct FigureOptions {
    pub n_values: Vec<usize>,
    pub tau: f64,
    pub trajectories: usize,
    pub seed: u64,
    pub gauge_init: GaugeInit,
    pub engine: FigureEngine,
    pub checkpoints: usize,
}

impl FigureOptions {
    /// ωτ = 4π: eight logical Hadamards.
    pub fn new(omega: f64, n_values: Vec<usize>) -> Self {
        Self {
            n_values,
            tau: 4.0 * std::f64::consts::PI / omega,
            trajectories: 2000,
            seed: 0,
            gauge_init: GaugeInit::AllZero,
            engine: FigureEngine::Trajectories,
            checkpoints: DEFAULT_CHECKPOINTS,
        }
    }
}

/// Logical expectation values for one `N`, indexed `[X_L, Y_L, Z_L][checkpoint]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureSeries {
    pub n: usize,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub mean: [Vec<f64>; 3],
    pub std_err: [Vec<f64>; 3],
    /// Outcome digest per trajectory; empty for deterministic engines.
    pub outcome_digests: Vec<u64>,
}

impl FigureSeries {
    pub fn z_mean(&self) -> &[f64] {
        &self.mean[2]
    }

    pub fn z_std_err(&self) -> &[f64] {
        &self.std_err[2]
    }

    /// Logical Bloch vector at the last checkpoint.
    pub fn final_bloch(&self) -> [f64; 3] {
        let last = |v: &Vec<f64>| *v.last().unwrap_or(&f64::NAN);
        [last(&self.mean[0]), last(&self.mean[1]), last(&self.mean[2])]
    }
}

/// Seed of the trajectory ensemble for one `N`.
pub fn seed_for_n(seed: u64, n: usize) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `⟨X_L⟩, ⟨Y_L⟩, ⟨Z_L⟩` over `[0, τ]` for each `N`. `N = 0` is free evolution
/// under `H0 + H_noise`, sampled at the checkpoint grid.
pub fn run_figure(setup: &BaconShorSetup, opts: &FigureOptions, tol: &Tolerances) -> Result<Vec<FigureSeries>> {
    if opts.engine == FigureEngine::Dense {
        if let Some(&n) = opts.n_values.iter().find(|&&n| n > DENSE_MAX_N) {
            return Err(Error::InvalidInput(format!(
                "dense engine supports N <= {DENSE_MAX_N}, got {n}"
            )));
        }
    }
    let frame = Frame::Hadamard;
    let h = setup.hamiltonian(frame);
    let logical: Vec<ComplexOperator> = setup
        .logical_paulis()
        .iter()
        .map(|p| p.in_frame(frame).to_dense())
        .collect();
    let psi0 = opts.gauge_init.state(frame);
    let needs_channel = opts.n_values.iter().any(|&n| n > 0);
    let channel = if needs_channel {
        Some(setup.gauge_channel(frame, tol)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(opts.n_values.len());
    for &n in &opts.n_values {
        let series = if n == 0 {
            free_evolution(&h, &psi0, &logical, opts, tol)?
        } else {
            let cfg =
                ZenoConfig::new(h.clone(), channel.clone().expect("built above"), opts.tau, n)?.with_tolerances(*tol);
            let checkpoints = default_checkpoints(n, opts.checkpoints);
            match opts.engine {
                FigureEngine::Trajectories => {
                    let s = run_trajectories(
                        &cfg,
                        &InitialState::Pure(psi0.clone()),
                        opts.trajectories,
                        seed_for_n(opts.seed, n),
                        &checkpoints,
                        &logical,
                    )?;
                    FigureSeries {
                        n,
                        steps: s.steps,
                        times: s.times,
                        mean: to_triple(s.mean),
                        std_err: to_triple(s.std_err),
                        outcome_digests: s.outcome_digests,
                    }
                }
                FigureEngine::Dense => {
                    let rho0 = DensityOperator::pure(&psi0)?;
                    let (_, records) = evolve_nonselective_recorded(&cfg, &rho0, &checkpoints, &logical)?;
                    let mean = (0..3).map(|o| records.iter().map(|r| r.values[o]).collect()).collect();
                    FigureSeries {
                        n,
                        steps: records.iter().map(|r| r.step).collect(),
                        times: records.iter().map(|r| r.time).collect(),
                        mean: to_triple(mean),
                        std_err: std::array::from_fn(|_| vec![0.0; records.len()]),
                        outcome_digests: Vec::new(),
                    }
                }
            }
        };
        out.push(series);
    }
    Ok(out)
}

fn to_triple(v: Vec<Vec<f64>>) -> [Vec<f64>; 3] {
    let mut it = v.into_iter();
    std::array::from_fn(|_| it.next().unwrap_or_default())
}

fn free_evolution(
    h: &ComplexOperator,
    psi0: &[C64],
    logical: &[ComplexOperator],
    opts: &FigureOptions,
    tol: &Tolerances,
) -> Result<FigureSeries> {
    let count = opts.checkpoints.max(1);
    let dt = opts.tau / count as f64;
    let u = unitary_step(h, dt, tol.herm)?;
    let sparse: Vec<SparseColumns> = logical.iter().map(SparseColumns::from_dense).collect();
    let mut psi = psi0.to_vec();
    let mut mean: [Vec<f64>; 3] = Default::default();
    for k in 0..=count {
        if k > 0 {
            psi = u.apply(&psi);
        }
        for (o, b) in sparse.iter().enumerate() {
            let bpsi = b.apply(&psi);
            mean[o].push(psi.iter().zip(&bpsi).map(|(a, c)| a.conj() * c).sum::<C64>().re);
        }
    }
    Ok(FigureSeries {
        n: 0,
        steps: (0..=count).collect(),
        times: (0..=count).map(|k| k as f64 * dt).collect(),
        mean,
        std_err: std::array::from_fn(|_| vec![0.0; count + 1]),
        outcome_digests: Vec::new(),
    })
}

/// Writes `N,step,time,mean,stderr` rows of `⟨Z_L⟩`.
pub fn write_figure_csv(series: &[FigureSeries], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "N,step,time,mean,stderr")?;
    for s in series {
        for k in 0..s.steps.len() {
            writeln!(
                w,
                "{},{},{:.17e},{:.17e},{:.17e}",
                s.n,
                s.steps[k],
                s.times[k],
                s.z_mean()[k],
                s.z_std_err()[k]
            )?;
        }
    }
    Ok(())
}

/// Largest `|⟨Z_L⟩_sim − ⟨Z_L⟩_ideal|` over the checkpoints of one series.
pub fn max_z_deviation(series: &FigureSeries, ideal: impl Fn(f64) -> f64) -> f64 {
    series
        .times
        .iter()
        .zip(series.z_mean())
        .map(|(&t, &z)| (z - ideal(t)).abs())
        .fold(0.0, f64::max)
}
