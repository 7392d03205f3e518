//! Small dense linear algebra, fixed-step integration and LTI filters.

mod grid;
mod linalg;
mod lti;
mod ode;
pub mod poly;

pub use grid::TimeGrid;
pub use linalg::{adjugate, det, lambda_min_sym, numeric_rank, DEFAULT_RANK_TOL};
pub use lti::LtiFilter;
pub use ode::{rk4_step, rk4_step_nodes, Node, StepInput};

/// Dense real matrix used for Φ, 𝒟, Ψ, Ω and friends.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type Vector = nalgebra::DVector<f64>;
