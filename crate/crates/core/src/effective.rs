//! The effective Zeno Hamiltonian `H̃ = ⊕_j H̃_S^(j) ⊗ I_R` and the
//! Zeno-limit dynamics it generates.

use crate::channel::KrausChannel;
use crate::error::{Error, Result};
use crate::fixedpoint::{self, Method, SPECTRAL_MAX_DIM};
use crate::operator::{partial_trace_r, tensor, trace_norm, unitary_step, ComplexOperator, DensityOperator};
use crate::structure::{dual_mio_assemble, mio_assemble, mio_components, Decomposition};
use crate::tolerance::Tolerances;

#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    /// `H̃_S^(j) = Tr_R[V_j† H V_j (I_S ⊗ Λ_R^(j))]`.
    pub per_block: Vec<ComplexOperator>,
    /// `Σ_j V_j (H̃_S^(j) ⊗ I_R) V_j†`.
    pub embedded: ComplexOperator,
    /// `J̃ = ‖H̃‖₁`.
    pub trace_norm_j_tilde: f64,
}

pub fn effective_hamiltonian(
    dec: &Decomposition,
    h: &ComplexOperator,
    tol: &Tolerances,
) -> Result<EffectiveHamiltonian> {
    h.ensure_hermitian(tol.herm)?;
    if h.nrows() != dec.dim {
        return Err(Error::dims(dec.dim, h.nrows()));
    }
    let mut per_block = Vec::with_capacity(dec.blocks.len());
    for b in &dec.blocks {
        let weight = tensor(&ComplexOperator::identity(b.shape.d_s), &b.lambda_r)?;
        let hs = partial_trace_r(&b.compress(h).matmul(&weight), b.shape)?;
        let dev = hs.hermitian_deviation();
        if dev > tol.structure * (1.0 + h.max_abs()) {
            return Err(Error::DecompositionFailed {
                check: "effective Hamiltonian block is not Hermitian".into(),
                residual: dev,
            });
        }
        per_block.push(hs.hermitian_part());
    }
    let embedded = dual_mio_assemble(dec, &per_block)?;
    let trace_norm_j_tilde = trace_norm(&embedded)?;
    Ok(EffectiveHamiltonian {
        per_block,
        embedded,
        trace_norm_j_tilde,
    })
}

/// Residuals `‖S_∞(Hρ) − H̃ρ‖₁` and `‖S_∞(ρH) − ρH̃‖₁` for a fixed point `ρ`.
pub fn verify_effective_action(
    channel: &KrausChannel,
    dec: &Decomposition,
    heff: &EffectiveHamiltonian,
    h: &ComplexOperator,
    rho: &ComplexOperator,
    tol: &Tolerances,
) -> Result<(f64, f64)> {
    mio_components(dec, rho, tol.structure)?;
    let method = if channel.dim() <= SPECTRAL_MAX_DIM {
        Method::Spectral
    } else {
        Method::Iterative
    };
    let limit = |a: &ComplexOperator| fixedpoint::fixed_point_limit(channel, a, method, tol.fix, tol).map(|r| r.value);
    let left = &limit(&h.matmul(rho))? - &heff.embedded.matmul(rho);
    let right = &limit(&rho.matmul(h))? - &rho.matmul(&heff.embedded);
    Ok((trace_norm(&left)?, trace_norm(&right)?))
}

fn block_unitaries(heff: &EffectiveHamiltonian, t: f64, tol: &Tolerances) -> Result<Vec<ComplexOperator>> {
    heff.per_block.iter().map(|h| unitary_step(h, t, tol.herm)).collect()
}

/// Evolves the `S` components of a fixed point: `A_S → e^{−iH̃_S t} A_S e^{iH̃_S t}`.
pub fn evolve_components(
    heff: &EffectiveHamiltonian,
    components: &[ComplexOperator],
    t: f64,
    tol: &Tolerances,
) -> Result<Vec<ComplexOperator>> {
    Ok(block_unitaries(heff, t, tol)?
        .iter()
        .zip(components)
        .map(|(u, a)| a.conjugate_by(u))
        .collect())
}

/// `e^{L̃t} ρ0` for a fixed-point state `ρ0`.
pub fn effective_evolve_state(
    dec: &Decomposition,
    heff: &EffectiveHamiltonian,
    rho0: &DensityOperator,
    t: f64,
    tol: &Tolerances,
) -> Result<DensityOperator> {
    let comps = mio_components(dec, rho0.op(), tol.structure)?;
    let evolved = evolve_components(heff, &comps, t, tol)?;
    Ok(DensityOperator::from_trusted(mio_assemble(dec, &evolved)?))
}

/// `B(τ) = e^{−L̃τ} B` for a dual fixed point given by its `S` components:
/// `B_S → e^{iH̃_S τ} B_S e^{−iH̃_S τ}`.
pub fn effective_evolve_observable(
    dec: &Decomposition,
    heff: &EffectiveHamiltonian,
    components: &[ComplexOperator],
    tau: f64,
    tol: &Tolerances,
) -> Result<ComplexOperator> {
    if components.len() != heff.per_block.len() {
        return Err(Error::InvalidInput(format!(
            "{} components for {} blocks",
            components.len(),
            heff.per_block.len()
        )));
    }
    let evolved: Vec<ComplexOperator> = block_unitaries(heff, -tau, tol)?
        .iter()
        .zip(components)
        .map(|(u, b)| b.conjugate_by(u))
        .collect();
    dual_mio_assemble(dec, &evolved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{decay_channel, pauli_twirl_channel};
    use crate::operator::{pauli, SubsystemShape, C64};
    use crate::random::{random_hermitian, random_projective_channel, random_structured_channel, seeded_rng};
    use crate::structure::{decompose, diagonal_component, dual_mio_residual, random_components};
    use proptest::prelude::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn projective_channel_gives_zeno_subspace_hamiltonian() {
        let mut rng = seeded_rng(51);
        let ch = random_projective_channel(&[2, 1, 1], &mut rng).unwrap();
        let dec = decompose(&ch, &tol(), 1).unwrap();
        let h = random_hermitian(4, &mut rng);
        let heff = effective_hamiltonian(&dec, &h, &tol()).unwrap();
        let mut expected = ComplexOperator::zeros(4);
        for p in ch.kraus() {
            expected += &p.matmul(&h).matmul(p);
        }
        assert!(trace_norm(&(&heff.embedded - &expected)).unwrap() < 1e-9);
    }

    #[test]
    fn symmetrizing_channel_gives_group_average() {
        let ch = pauli_twirl_channel();
        let dec = decompose(&ch, &tol(), 1).unwrap();
        let h = random_hermitian(2, &mut seeded_rng(52));
        let heff = effective_hamiltonian(&dec, &h, &tol()).unwrap();
        assert!(trace_norm(&(&heff.embedded - &ch.apply(&h).unwrap())).unwrap() < 1e-9);
    }

    #[test]
    fn identity_channel_keeps_hamiltonian() {
        let ch = KrausChannel::identity(3);
        let dec = decompose(&ch, &tol(), 1).unwrap();
        let h = random_hermitian(3, &mut seeded_rng(53));
        let heff = effective_hamiltonian(&dec, &h, &tol()).unwrap();
        assert!(heff.embedded.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn effective_action_on_decay_channel() {
        let ch = decay_channel();
        let dec = decompose(&ch, &tol(), 1).unwrap();
        let h = random_hermitian(3, &mut seeded_rng(54));
        let heff = effective_hamiltonian(&dec, &h, &tol()).unwrap();
        let rho = ComplexOperator::from_real_diagonal(&[0.5, 0.5, 0.0]);
        let (l, r) = verify_effective_action(&ch, &dec, &heff, &h, &rho, &tol()).unwrap();
        assert!(l < 1e-8 && r < 1e-8, "{l} {r}");
        let mut e = ComplexOperator::zeros(3);
        e[(2, 2)] = C64::new(1.0, 0.0);
        assert!(verify_effective_action(&ch, &dec, &heff, &h, &e, &tol()).is_err());
    }

    #[test]
    fn commuting_hamiltonian_on_unital_channel() {
        let ch = KrausChannel::new(vec![
            pauli::z().scale_real(0.6),
            ComplexOperator::identity(2).scale_real(0.8),
        ])
        .unwrap();
        let dec = decompose(&ch, &tol(), 1).unwrap();
        let h = pauli::z();
        let heff = effective_hamiltonian(&dec, &h, &tol()).unwrap();
        let rho = ComplexOperator::from_real_diagonal(&[0.3, 0.7]);
        let (l, r) = verify_effective_action(&ch, &dec, &heff, &h, &rho, &tol()).unwrap();
        assert!(l < 1e-9 && r < 1e-9);
    }

    #[test]
    fn one_dimensional_s_blocks_freeze_the_state() {
        let mut rng = seeded_rng(55);
        let ch = random_projective_channel(&[1, 1, 1], &mut rng).unwrap();
        let dec = decompose(&ch, &tol(), 1).unwrap();
        let heff = effective_hamiltonian(&dec, &random_hermitian(3, &mut rng), &tol()).unwrap();
        let rho0 = DensityOperator::from_trusted(
            mio_assemble(
                &dec,
                &[
                    diagonal_component(&[0.2]),
                    diagonal_component(&[0.3]),
                    diagonal_component(&[0.5]),
                ],
            )
            .unwrap(),
        );
        for t in [0.0, 0.7, 5.0] {
            let rho = effective_evolve_state(&dec, &heff, &rho0, t, &tol()).unwrap();
            assert!(rho.op().max_abs_diff(rho0.op()) < 1e-12);
        }
    }

    #[test]
    fn logical_hadamard_rotation_of_observable() {
        // Single block with d_S = 2: Z(τ) under H̃ = (ω/√2)(Z + X) is a Heisenberg-rotated Pauli.
        let ch = KrausChannel::identity(2);
        let dec = decompose(&ch, &tol(), 1).unwrap();
        let omega = 1.3;
        let h = (&pauli::z() + &pauli::x()).scale_real(omega / 2f64.sqrt());
        let heff = effective_hamiltonian(&dec, &h, &tol()).unwrap();
        let tau = 0.4;
        let z_s = dec.blocks[0].compress(&pauli::z());
        let zt = effective_evolve_observable(&dec, &heff, &[z_s], tau, &tol()).unwrap();
        // Rotation by angle 2ωτ about n = (1, 0, 1)/√2: Z → cos θ Z + sin θ (n × z) + (1 − cos θ)(n·z) n
        let theta = 2.0 * omega * tau;
        let (c, s) = (theta.cos(), theta.sin());
        let r = 0.5 * (1.0 - c);
        let expected =
            &(&pauli::z().scale_real(c + r) + &pauli::x().scale_real(r)) + &pauli::y().scale_real(s / 2f64.sqrt());
        assert!(zt.max_abs_diff(&expected) < 1e-12);
        let id = effective_evolve_observable(&dec, &heff, &[ComplexOperator::identity(2)], tau, &tol()).unwrap();
        assert!(id.max_abs_diff(&ComplexOperator::identity(2)) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn effective_dynamics_invariants(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let shapes = [SubsystemShape::new(2, 2).unwrap(), SubsystemShape::new(1, 1).unwrap()];
            let s = random_structured_channel(&shapes, 1, 2, &mut rng).unwrap();
            let dec = decompose(&s.channel, &tol(), seed).unwrap();
            let h = random_hermitian(dec.dim, &mut rng);
            let heff = effective_hamiltonian(&dec, &h, &tol()).unwrap();
            prop_assert!(heff.embedded.hermitian_deviation() < 1e-12);
            prop_assert!(dual_mio_residual(&s.channel, &dec, &heff.embedded).unwrap() < 1e-8);

            let comps: Vec<ComplexOperator> = dec.blocks.iter().map(|b| {
                let d = crate::random::random_density(b.shape.d_s, &mut rng);
                d.op().scale_real(0.5)
            }).collect();
            let rho0 = DensityOperator::from_trusted(mio_assemble(&dec, &comps).unwrap());
            prop_assert!(effective_evolve_state(&dec, &heff, &rho0, 0.0, &tol()).unwrap().op().max_abs_diff(rho0.op()) < 1e-12);
            let (t1, t2) = (0.3, 1.1);
            let a = effective_evolve_state(&dec, &heff, &rho0, t1, &tol()).unwrap();
            let ab = effective_evolve_state(&dec, &heff, &a, t2, &tol()).unwrap();
            let direct = effective_evolve_state(&dec, &heff, &rho0, t1 + t2, &tol()).unwrap();
            prop_assert!(ab.op().max_abs_diff(direct.op()) < 1e-10);
            prop_assert!((direct.op().trace().re - 1.0).abs() < 1e-10);
            prop_assert!(crate::fixedpoint::fixed_point_residual(&s.channel, direct.op()).unwrap() < 1e-8);

            let b_comps = random_components(&dec, &mut rng);
            let b_tau = effective_evolve_observable(&dec, &heff, &b_comps, t1 + t2, &tol()).unwrap();
            let b0 = dual_mio_assemble(&dec, &b_comps).unwrap();
            let lhs = direct.expectation(&b0);
            let rhs = rho0.expectation(&b_tau);
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }

        #[test]
        fn unital_formula_matches_general_one(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let u = crate::random::random_unitary(4, &mut rng);
            let kraus: Vec<ComplexOperator> = pauli_twirl_channel()
                .kraus()
                .iter()
                .map(|k| tensor(&ComplexOperator::identity(2), k).unwrap().conjugate_by(&u))
                .collect();
            let ch = KrausChannel::new(kraus).unwrap();
            let dec = decompose(&ch, &tol(), seed).unwrap();
            prop_assert_eq!(dec.shapes(), vec![SubsystemShape::new(2, 2).unwrap()]);
            let h = random_hermitian(4, &mut rng);
            let heff = effective_hamiltonian(&dec, &h, &tol()).unwrap();
            for (b, hs) in dec.blocks.iter().zip(&heff.per_block) {
                let unital = partial_trace_r(&b.compress(&h), b.shape).unwrap().scale_real(1.0 / b.shape.d_r as f64);
                prop_assert!(unital.max_abs_diff(hs) < 1e-10);
            }
        }
    }
}
