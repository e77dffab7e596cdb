//! Numerical tolerances used across the crate.
//!
//! | field          | default | meaning                                                    |
//! |----------------|---------|------------------------------------------------------------|
//! | `herm`         | 1e-10   | max-abs deviation of `A - A†` accepted as Hermitian          |
//! | `eig`          | 1e-10   | eigen-reconstruction and unitarity                          |
//! | `psd`          | 1e-9    | most negative eigenvalue accepted as positive semidefinite |
//! | `trace`        | 1e-9    | trace normalisation of states                               |
//! | `complete`     | 1e-9    | max-abs deviation of `Σ M†M - I`                             |
//! | `fix`          | 1e-9    | superoperator eigenvalues within this of 1 count as fixed  |
//! | `kernel`       | 1e-9    | relative eigenvalue threshold for the kernel of Λ          |
//! | `prob`         | 1e-14   | total outcome probability below which sampling fails       |
//! | `cluster_gap`  | 1e-8    | eigenvalue gap splitting commutant eigenspaces             |
//! | `isomorphism`  | 1e-8    | `‖T†T/μ - I‖` accepted for an intertwiner                    |
//! | `structure`    | 1e-8    | residual accepted by decomposition verification            |

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub herm: f64,
    pub eig: f64,
    pub psd: f64,
    pub trace: f64,
    pub complete: f64,
    pub fix: f64,
    pub kernel: f64,
    pub prob: f64,
    pub cluster_gap: f64,
    pub isomorphism: f64,
    pub structure: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            herm: 1e-10,
            eig: 1e-10,
            psd: 1e-9,
            trace: 1e-9,
            complete: 1e-9,
            fix: 1e-9,
            kernel: 1e-9,
            prob: 1e-14,
            cluster_gap: 1e-8,
            isomorphism: 1e-8,
            structure: 1e-8,
        }
    }
}
