//! Scalar abstraction for the analytic core.
//!
//! Measures, transforms, the subordination solver, and quadrature are generic
//! over [`Real`] so they run at f32 or f64; the matrix lane is concrete f64.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Shorthand for lossy conversion from f64 literals.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must convert")
    }

    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Complex number over the generic scalar.
pub type Cplx<S> = Complex<S>;

/// A point in the open upper half plane, validated on construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlanePoint<S: Real>(Cplx<S>);

impl<S: Real> HalfPlanePoint<S> {
    pub fn new(re: S, im: S) -> crate::error::Result<Self> {
        Self::from_complex(Complex::new(re, im))
    }

    pub fn from_complex(z: Cplx<S>) -> crate::error::Result<Self> {
        if !(z.im > S::zero()) || !z.re.is_finite() || !z.im.is_finite() {
            return Err(crate::error::Error::Domain(format!(
                "point {}+{}i is not in the open upper half plane",
                z.re, z.im
            )));
        }
        Ok(HalfPlanePoint(z))
    }

    /// Purely imaginary point i*eta, eta > 0.
    pub fn imag(eta: S) -> crate::error::Result<Self> {
        Self::from_complex(Complex::new(S::zero(), eta))
    }

    pub fn get(self) -> Cplx<S> {
        self.0
    }
}
