//! Monte Carlo tools for checking that a Girsanov change of measure carries
//! uniqueness in law over to a drifted stochastic heat equation.

pub mod coefficients;
pub mod error;
pub mod girsanov;
pub mod grid;
pub mod law;
pub mod sde;
pub mod solver;
pub mod stats;

pub use coefficients::{
    AllenCahnParams, CoefficientSet, Diffusion, Drift, InitialCondition, Ratio, RatioReport,
};
pub use error::{LabError, Result};
pub use girsanov::{accumulate, WeightTrajectory, DEFAULT_LEVELS};
pub use grid::{sample_noise, Grid, LatticeField, NoiseField};
pub use law::{compare, compare_levels, run_direct, run_reweighted, ArmSpec, CompareOptions, Functional, TestReport};
pub use solver::{simulate_path, BoundaryKind, PathField, SchemeConfig};
