//! Small numeric toolkit: a scalar abstraction over `f64` and
//! double-double, dense eigenvalue solvers generic over it, and a few
//! statistics helpers used by the verification suites.

pub mod dd;
pub mod eig;
pub mod stats;

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub use dd::DoubleDouble;

/// Real scalar used by the generic dense solvers.
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    /// Unit roundoff of the representation.
    const UNIT_ROUNDOFF: f64;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn is_zero(self) -> bool {
        self.to_f64() == 0.0
    }

    /// `|self|` carrying the sign of `sign` (Fortran `SIGN`).
    fn with_sign_of(self, sign: Self) -> Self {
        if sign >= Self::zero() {
            self.abs()
        } else {
            -self.abs()
        }
    }
}

impl Real for f64 {
    const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

impl Real for DoubleDouble {
    // 2^-104, a conservative figure for the sloppy (non-IEEE) dd add
    const UNIT_ROUNDOFF: f64 = 4.930380657631324e-32;

    fn from_f64(x: f64) -> Self {
        DoubleDouble::from_f64(x)
    }
    fn to_f64(self) -> f64 {
        DoubleDouble::to_f64(self)
    }
    fn abs(self) -> Self {
        DoubleDouble::abs(self)
    }
    fn sqrt(self) -> Self {
        DoubleDouble::sqrt(self)
    }
    fn is_zero(self) -> bool {
        self.hi() == 0.0 && self.lo() == 0.0
    }
}
