//! On-line parameter estimation with the interlaced gradient / DREM
//! estimator (first a GPEBO-style gradient stage, then determinant mixing),
//! its robustified and disturbance-rejecting variants, an estimator for
//! separable nonlinearly parameterized regressions, an input-error MRAC
//! application, and the reverse-order D+G scheme used as a baseline.
//!
//! Everything runs on fixed-step RK4 (continuous time) or exact recursions
//! (discrete time), so trajectories are bit-reproducible on one platform.

pub mod dg_baseline;
pub mod error;
pub mod excitation;
pub mod gd_estimator;
pub mod lre;
pub mod mrac;
pub mod nlpre;
pub mod numcore;
pub mod robust_reject;
pub mod signals;

pub use error::{Error, Result};
pub use numcore::{Mat, Vector};

/// Continuous-time or discrete-time operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    #[serde(rename = "ct")]
    Continuous,
    #[serde(rename = "dt")]
    Discrete,
}
