//! Scalar abstractions shared by every module.

use std::fmt::{Debug, Display};
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, One, Zero};

/// Real scalar type the geometry is generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Coefficient ring for truncated Taylor jets: either a real scalar or a
/// complex number over one.
pub trait Coeff:
    Copy
    + Debug
    + Send
    + Sync
    + Zero
    + One
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    type Re: Real;
    fn from_real(r: Self::Re) -> Self;
    fn scale(self, r: Self::Re) -> Self;
    /// Modulus, used for sup-norms and pivoting.
    fn modulus(self) -> Self::Re;
    fn conj(self) -> Self;
}

impl<R: Real> Coeff for R {
    type Re = R;
    #[inline]
    fn from_real(r: R) -> Self {
        r
    }
    #[inline]
    fn scale(self, r: R) -> Self {
        self * r
    }
    #[inline]
    fn modulus(self) -> R {
        self.abs()
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
}

impl<R: Real> Coeff for Complex<R> {
    type Re = R;
    #[inline]
    fn from_real(r: R) -> Self {
        Complex::new(r, R::zero())
    }
    #[inline]
    fn scale(self, r: R) -> Self {
        Complex::new(self.re * r, self.im * r)
    }
    #[inline]
    fn modulus(self) -> R {
        self.re.hypot(self.im)
    }
    #[inline]
    fn conj(self) -> Self {
        Complex::conj(&self)
    }
}

/// The imaginary unit over `R`.
#[inline]
pub fn imag_unit<R: Real>() -> Complex<R> {
    Complex::new(R::zero(), R::one())
}
