//! Forward-mode differentiation carriers.
//!
//! [`Dual<T>`] carries a value and one directional derivative. Nesting
//! (`Dual<Dual<f64>>`) yields mixed second derivatives: seed the outer
//! tangent along one direction and the inner tangent along another, then
//! read `out.eps.eps`.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed to write a model's rate laws once and evaluate them
/// on plain floats or on dual carriers.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + From<f64>
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
    /// The underlying real value, stripping every tangent.
    fn re(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, c: f64) -> Self;
    /// `self^e` with a differentiable exponent; requires `self > 0`.
    fn pow(self, e: Self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn powf(self, c: f64) -> Self {
        f64::powf(self, c)
    }
    #[inline]
    fn pow(self, e: Self) -> Self {
        f64::powf(self, e)
    }
}

/// Value plus one tangent component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

/// Carrier for mixed second derivatives.
pub type HyperDual = Dual<Dual<f64>>;

impl<T: Scalar> Dual<T> {
    #[inline]
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }

    #[inline]
    pub fn constant(re: T) -> Self {
        Self {
            re,
            eps: T::from(0.0),
        }
    }

    #[inline]
    pub fn variable(re: T) -> Self {
        Self {
            re,
            eps: T::from(1.0),
        }
    }

    /// Chain rule for a unary function with value `v` and derivative `d`.
    #[inline]
    fn chain(self, v: T, d: T) -> Self {
        Self {
            re: v,
            eps: d * self.eps,
        }
    }
}

impl<T: Scalar> From<f64> for Dual<T> {
    #[inline]
    fn from(v: f64) -> Self {
        Self::constant(T::from(v))
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Add<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Self::new(self.re + c, self.eps)
    }
}

impl<T: Scalar> Sub<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Self::new(self.re - c, self.eps)
    }
}

impl<T: Scalar> Mul<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        Self::new(self.re * c, self.eps * c)
    }
}

impl<T: Scalar> Div<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        Self::new(self.re / c, self.eps / c)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn re(&self) -> f64 {
        self.re.re()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::from(1.0) / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::from(0.5) / s)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, T::from(1.0) - t * t)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::from(1.0);
        }
        self.chain(self.re.powi(n), self.re.powi(n - 1) * n as f64)
    }
    fn powf(self, c: f64) -> Self {
        self.chain(self.re.powf(c), self.re.powf(c - 1.0) * c)
    }
    fn pow(self, e: Self) -> Self {
        // d(a^b) = a^b (b' ln a + b a'/a)
        let v = self.re.pow(e.re);
        let eps = v * (e.eps * self.re.ln() + e.re * self.eps / self.re);
        Self::new(v, eps)
    }
}
