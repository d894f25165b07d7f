//! Forward-mode dual numbers with a bounded number of partials.
//!
//! The hyperbolic maps are written once, generic over [`Real`], and evaluated
//! either on `f64` or on [`Dual`] to obtain exact parameter derivatives of the
//! wrapped-normal sampler and density.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Upper bound on seeded partials; covers a full Cholesky factor up to d = 8.
pub const MAX_PARTIALS: usize = 48;

/// Scalar arithmetic shared by `f64` and [`Dual`].
pub trait Real:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(x: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn constant(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(&self) -> f64 {
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
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    #[inline]
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
}

/// A value together with its partial derivatives.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    re: f64,
    du: [f64; MAX_PARTIALS],
    len: usize,
}

impl Dual {
    /// The `index`-th of `count` independent variables.
    pub fn variable(value: f64, index: usize, count: usize) -> Self {
        assert!(count <= MAX_PARTIALS, "too many partials: {count}");
        let mut du = [0.0; MAX_PARTIALS];
        du[index] = 1.0;
        Self {
            re: value,
            du,
            len: count,
        }
    }

    /// Seeds every entry of `values` as its own variable.
    pub fn variables(values: &[f64]) -> Vec<Self> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| Self::variable(v, i, values.len()))
            .collect()
    }

    pub fn partials(&self) -> &[f64] {
        &self.du[..self.len]
    }

    /// Partial `i`, zero when unseeded.
    pub fn partial(&self, i: usize) -> f64 {
        if i < self.len {
            self.du[i]
        } else {
            0.0
        }
    }

    #[inline]
    fn chain(self, value: f64, slope: f64) -> Self {
        let mut du = [0.0; MAX_PARTIALS];
        for i in 0..self.len {
            du[i] = slope * self.du[i];
        }
        Self {
            re: value,
            du,
            len: self.len,
        }
    }

    #[inline]
    fn combine(a: Self, b: Self, value: f64, da: f64, db: f64) -> Self {
        let len = a.len.max(b.len);
        let mut du = [0.0; MAX_PARTIALS];
        for i in 0..len {
            du[i] = da * a.du[i] + db * b.du[i];
        }
        Self { re: value, du, len }
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::combine(self, rhs, self.re + rhs.re, 1.0, 1.0)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::combine(self, rhs, self.re - rhs.re, 1.0, -1.0)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self::combine(self, rhs, self.re * rhs.re, rhs.re, self.re)
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let value = self.re * inv;
        Self::combine(self, rhs, value, inv, -value * inv)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.re, -1.0)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Add<f64> for Dual {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.re += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.re -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.chain(self.re * rhs, rhs)
    }
}

impl Div<f64> for Dual {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self.chain(self.re / rhs, 1.0 / rhs)
    }
}

impl Real for Dual {
    fn constant(x: f64) -> Self {
        Self {
            re: x,
            du: [0.0; MAX_PARTIALS],
            len: 0,
        }
    }
    fn value(&self) -> f64 {
        self.re
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    fn ln_1p(self) -> Self {
        self.chain(self.re.ln_1p(), 1.0 / (1.0 + self.re))
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn sinh(self) -> Self {
        self.chain(self.re.sinh(), self.re.cosh())
    }
    fn cosh(self) -> Self {
        self.chain(self.re.cosh(), self.re.sinh())
    }
}
