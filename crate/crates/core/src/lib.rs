//! Neumann functions of `div(gamma grad) - i k` on a box, numerical probes of
//! their decay and Hölder estimates, and the small-anomaly photoacoustic
//! pipeline built on them.

pub mod diff;
pub mod error;
pub mod estimates;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod neumann;
pub mod operator;
pub mod photoacoustic;
pub mod potentials;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{
    generate_coefficient, validate_ellipticity, CoefficientField, CoefficientSpec, Domain,
    ScalarField, SmoothnessClass, C64,
};
pub use operator::{assemble, DiscreteOperator, SolveReport};
pub use solver::SolveOptions;
