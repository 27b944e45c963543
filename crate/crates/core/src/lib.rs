//! Numerical laboratory for the periodic one-dimensional Cahn-Hilliard
//! equation with degenerate mobility,
//!
//! ```text
//! ∂t ν = ( ν ( W'(ν) - ε² ν_xx )_x )_x        on the unit torus,
//! ```
//!
//! and for its sharp-interface limit `∂t ν = ( ν (W**'(ν))_x )_x`, the
//! Wasserstein gradient flow of the convexified energy `∫ W**(ν)`.

pub mod diagnostics;
pub mod error;
pub mod field;
pub mod functionals;
pub mod jko;
pub mod linalg;
pub mod nonlocal;
pub mod potential;
pub mod solvers;
pub mod trajectory;
pub mod wasserstein1d;

pub use error::{Error, Result};
pub use field::DensityField;
pub use functionals::EnergyReport;
pub use potential::{ConvexEnvelope, PotentialSpec, UnstableSet};
pub use solvers::SolverConfig;
pub use trajectory::TrajectoryRecord;
pub use wasserstein1d::QuantileRepr;
