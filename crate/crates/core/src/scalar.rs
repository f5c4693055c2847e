//! Numeric abstraction shared by plain `f64` evaluation and the reverse-mode
//! tape. Every model component (REN, MLP, plant, loss) is written once against
//! [`Scalar`] and instantiated with `f64` for simulation or with
//! [`crate::tape::Var`] for gradients.

use core::fmt::Debug;
use core::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A value that carries no derivative information.
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;

    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// Square root; the derivative at zero is taken to be zero.
    fn sqrt(self) -> Self;
    /// Absolute value with subgradient `sign(x)` (zero at the origin).
    fn abs(self) -> Self;

    fn sigmoid(self) -> Self {
        let one = Self::cst(1.0);
        one / (one + (-self).exp())
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    fn softplus(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = Self::zero();
        for (x, y) in a.iter().zip(b) {
            acc = acc + *x * *y;
        }
        acc
    }

    /// Dot product with a constant coefficient vector.
    fn dot_cst(coeffs: &[f64], b: &[Self]) -> Self {
        debug_assert_eq!(coeffs.len(), b.len());
        let mut acc = Self::zero();
        for (c, y) in coeffs.iter().zip(b) {
            acc = acc + *y * *c;
        }
        acc
    }

    fn sum(a: &[Self]) -> Self {
        a.iter().fold(Self::zero(), |acc, x| acc + *x)
    }

    fn sq(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        libm::fabs(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    #[inline]
    fn softplus(self) -> Self {
        softplus(self)
    }
    #[inline]
    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    #[inline]
    fn dot_cst(coeffs: &[f64], b: &[f64]) -> f64 {
        Self::dot(coeffs, b)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + libm::exp(-x)
    } else {
        libm::log1p(libm::exp(x))
    }
}
