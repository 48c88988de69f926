//! Computational free probability for the deformed single ring model:
//! subordination numerics for free additive convolution of symmetric laws,
//! Brown-measure fields for T + a with T R-diagonal, and a random-matrix
//! simulation harness that validates the predictions on finite ensembles.

pub mod brown;
pub mod error;
pub mod experiments;
pub mod measures;
pub mod randmat;
pub mod subordination;
pub mod scalar;

pub use error::{Error, Result};

/// Concrete f64 aliases for the generic analytic core.
pub type C64 = num_complex::Complex<f64>;
pub type Measure = measures::AtomicMeasure<f64>;
pub type SymMeasure = measures::SymmetricMeasure<f64>;
pub type Quadrature = measures::QuadratureSettings<f64>;
