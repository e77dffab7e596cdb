//! Small reference channels with known structure.

use crate::channel::KrausChannel;
use crate::operator::{pauli, ComplexOperator};

/// Three-level decay: `M1 = |g1⟩⟨g1| + |g2⟩⟨g2|`, `M2 = |g1⟩⟨e|/√2`, `M3 = |g2⟩⟨e|/√2`.
///
/// Basis order is `(|g1⟩, |g2⟩, |e⟩)`.
pub fn decay_channel() -> KrausChannel {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let m1 = ComplexOperator::from_real_diagonal(&[1.0, 1.0, 0.0]);
    let mut m2 = ComplexOperator::zeros(3);
    m2[(0, 2)] = r.into();
    let mut m3 = ComplexOperator::zeros(3);
    m3[(1, 2)] = r.into();
    KrausChannel::new(vec![m1, m2, m3])
        .expect("complete by construction")
        .with_labels(vec!["M1".into(), "M2".into(), "M3".into()])
        .expect("three labels")
}

/// Group average over the single-qubit Pauli group, `P• = (1/4) Σ_g g • g†`.
pub fn pauli_twirl_channel() -> KrausChannel {
    let kraus = [ComplexOperator::identity(2), pauli::x(), pauli::y(), pauli::z()]
        .iter()
        .map(|g| g.scale_real(0.5))
        .collect();
    KrausChannel::new(kraus)
        .expect("complete by construction")
        .with_labels(vec!["I".into(), "X".into(), "Y".into(), "Z".into()])
        .expect("four labels")
}

/// Projective measurement `{π_j}`; the projectors must resolve the identity.
pub fn projective_channel(projectors: Vec<ComplexOperator>) -> crate::Result<KrausChannel> {
    KrausChannel::new(projectors)
}
