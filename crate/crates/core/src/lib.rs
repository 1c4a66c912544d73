//! Finite dyadic models for two-weight norm inequalities: lattices and
//! measures, Haar systems, stopping families, positive dyadic and well
//! localized operators, operator norms and testing constants.

pub mod error;
pub mod exponent;
pub mod function;
pub mod haar;
pub mod instance;
pub mod lattice;
pub mod martingale;
pub mod measure;
pub mod norms;
pub mod operators;
pub mod signs;
pub mod stopping;
pub mod testing;

pub use error::{Error, Result};
pub use exponent::{Exponent, ExponentPair};
pub use function::StepFunction;
pub use lattice::{Cube, CubeId, DyadicLattice};
pub use measure::Measure;
