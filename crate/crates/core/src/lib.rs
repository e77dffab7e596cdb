//! Quantum Zeno dynamics of general quantum operations.
//!
//! The crate decomposes a Kraus channel into its invariant-subsystem
//! structure, builds the effective Zeno Hamiltonian, and simulates repeated
//! measurements both non-selectively and along sampled trajectories.

pub mod bacon_shor;
pub mod channel;
pub mod effective;
pub mod error;
pub mod fixedpoint;
pub mod io;
pub mod models;
pub mod operator;
pub mod random;
pub mod structure;
pub mod tolerance;
pub mod zeno;

pub use channel::{ChannelSequence, KrausChannel, QuantumMap};
pub use error::{Error, Result};
pub use operator::{ComplexOperator, DensityOperator, SubsystemShape, C64};
pub use tolerance::Tolerances;
