//! Forward-mode automatic differentiation.
//!
//! Utility formulas are written once against [`Real`] and evaluated either on
//! plain `f64` (reporting, prediction) or on [`Dual`] numbers (gradients for the
//! Hamiltonian sampler). Data such as rewards and probabilities always stay `f64`.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar field used by the utility and likelihood code.
pub trait Real:
    Copy
    + std::fmt::Debug
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
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn exp_m1(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    /// `self^e` for a positive base.
    fn powf(self, e: Self) -> Self;
    fn powi(self, n: i32) -> Self;

    /// `x^e` where the base is data and the exponent may carry derivatives.
    fn data_pow(x: f64, e: Self) -> Self {
        Self::data_pow_ln(x, x.ln(), e)
    }

    /// [`Real::data_pow`] with `ln x` supplied by the caller.
    fn data_pow_ln(x: f64, ln_x: f64, e: Self) -> Self {
        if x == 0.0 {
            return Self::cst(0.0);
        }
        (e * ln_x).exp()
    }

    /// `ln(1 + e^self)` without overflow.
    fn softplus(self) -> Self {
        if self.value() > 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
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
    fn powf(self, e: Self) -> Self {
        f64::powf(self, e)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Dual number carrying `N` partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    /// The `i`-th independent variable with value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= dv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a += b;
        }
        Self { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d.iter()) {
            *a -= b;
        }
        Self { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + o.d[i] * self.v;
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * o.d[i]) * inv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Self { v: self.v + o, d: self.d }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Self { v: self.v - o, d: self.d }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.chain(self.v * o, o)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self.chain(self.v / o, 1.0 / o)
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    #[inline]
    fn exp_m1(self) -> Self {
        let e = self.v.exp_m1();
        self.chain(e, e + 1.0)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        self.chain(self.v.ln_1p(), 1.0 / (1.0 + self.v))
    }
    #[inline]
    fn powf(self, e: Self) -> Self {
        let v = self.v.powf(e.v);
        let dbase = e.v * self.v.powf(e.v - 1.0);
        let dexp = if v == 0.0 { 0.0 } else { v * self.v.ln() };
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = dbase * self.d[i] + dexp * e.d[i];
        }
        Self { v, d }
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        self.chain(self.v.powi(n), n as f64 * self.v.powi(n - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_finite_differences() {
        let x = 0.7;
        let cases: Vec<(Box<dyn Fn(Dual<1>) -> Dual<1>>, Box<dyn Fn(f64) -> f64>)> = vec![
            (Box::new(|a| a.exp()), Box::new(|a: f64| a.exp())),
            (Box::new(|a| a.ln()), Box::new(|a: f64| a.ln())),
            (Box::new(|a| a.exp_m1() / a), Box::new(|a: f64| a.exp_m1() / a)),
            (Box::new(|a| a.powf(a)), Box::new(|a: f64| a.powf(a))),
            (Box::new(|a| a.powi(3) - a * 2.0), Box::new(|a: f64| a.powi(3) - a * 2.0)),
            (Box::new(|a| (-a * 40.0).softplus()), Box::new(|a: f64| (-a * 40.0).softplus())),
            (Box::new(|a| <Dual<1>>::data_pow(3.0, a)), Box::new(|a: f64| 3.0f64.powf(a))),
        ];
        for (fd, ff) in cases {
            let got = fd(Dual::var(x, 0));
            assert!((got.v - ff(x)).abs() < 1e-12);
            let fdiff = central_diff(&ff, x);
            assert!((got.d[0] - fdiff).abs() < 1e-6 * fdiff.abs().max(1.0), "{} vs {}", got.d[0], fdiff);
        }
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(800.0f64.softplus(), 800.0);
        assert!((-800.0f64).softplus() >= 0.0);
        assert!((-800.0f64).softplus() < 1e-300);
    }
}
