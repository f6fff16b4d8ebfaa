//! Second-order truncated Taylor jets in the four real coordinates
//! `(x1, y1, x2, y2)`.
//!
//! A jet stores `f(p + d) = c0 + sum c_i d_i + sum_{i<=j} c_ij d_i d_j`
//! truncated at its `order` (0, 1 or 2). Every operation truncates to the
//! lowest order among its operands, and differentiation lowers the order by
//! one, so a chain of differential operators carries its own bookkeeping
//! about how many derivatives are still trustworthy.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use num_complex::Complex;
use num_traits::{Float, FromPrimitive, One, Zero};

use crate::scalar::{Coeff, Real};

/// Highest order a jet can carry.
pub const MAX_ORDER: u8 = 2;
/// Number of Taylor coefficients at `MAX_ORDER`.
pub const NCOEF: usize = 15;

/// Position of the `d_i d_j` coefficient (`i <= j`).
#[inline]
pub const fn pair_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    // rows of the upper triangle: 0 -> 5.., 1 -> 9.., 2 -> 12.., 3 -> 14
    const ROW: [usize; 4] = [5, 9, 12, 14];
    ROW[a] + (b - a)
}

#[inline]
const fn ncoef(order: u8) -> usize {
    match order {
        0 => 1,
        1 => 5,
        _ => 15,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<T> {
    pub order: u8,
    pub c: [T; NCOEF],
}

pub type CJet<R> = Jet<Complex<R>>;

impl<T: Copy + num_traits::Zero> Jet<T> {
    /// Exact constant (carries full order).
    #[inline]
    pub fn constant(v: T) -> Self {
        let mut c = [T::zero(); NCOEF];
        c[0] = v;
        Jet { order: MAX_ORDER, c }
    }

    #[inline]
    pub fn zero_with_order(order: u8) -> Self {
        Jet {
            order: order.min(MAX_ORDER),
            c: [T::zero(); NCOEF],
        }
    }

    #[inline]
    pub fn value(&self) -> T {
        self.c[0]
    }
}

impl<T: Copy + num_traits::Zero + num_traits::One> Jet<T> {
    /// The coordinate function `x_k` expanded around `p_k`.
    #[inline]
    pub fn variable(value: T, k: usize) -> Self {
        let mut j = Self::constant(value);
        j.c[1 + k] = T::one();
        j
    }
}


impl<T: Copy> Jet<T> {
    /// First partial derivative `d f / d x_k` (requires order >= 1).
    #[inline]
    pub fn grad(&self, k: usize) -> T {
        debug_assert!(self.order >= 1);
        self.c[1 + k]
    }
}

impl<T: Coeff> Jet<T> {
    /// Builds a jet from value, gradient and (symmetric) Hessian.
    pub fn from_derivatives(value: T, grad: Option<[T; 4]>, hess: Option<[[T; 4]; 4]>) -> Self {
        let mut c = [T::zero(); NCOEF];
        c[0] = value;
        let mut order = 0;
        if let Some(g) = grad {
            order = 1;
            c[1..5].copy_from_slice(&g);
            if let Some(h) = hess {
                order = 2;
                let half = T::Re::lit(0.5);
                for i in 0..4 {
                    for j in i..4 {
                        c[pair_index(i, j)] = if i == j { h[i][i].scale(half) } else { h[i][j] };
                    }
                }
            }
        }
        Jet { order, c }
    }

    /// Second partial derivative `d^2 f / d x_i d x_j` (requires order 2).
    #[inline]
    pub fn hess(&self, i: usize, j: usize) -> T {
        debug_assert!(self.order >= 2);
        let v = self.c[pair_index(i, j)];
        if i == j {
            v + v
        } else {
            v
        }
    }

    #[inline]
    pub fn truncate(mut self, order: u8) -> Self {
        if order < self.order {
            for k in ncoef(order)..ncoef(self.order) {
                self.c[k] = T::zero();
            }
            self.order = order;
        }
        self
    }

    /// Partial derivative as a jet of one lower order.
    pub fn partial(&self, k: usize) -> Self {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let mut out = Jet::zero_with_order(self.order - 1);
        out.c[0] = self.c[1 + k];
        if self.order >= 2 {
            for i in 0..4 {
                let v = self.c[pair_index(i, k)];
                out.c[1 + i] = if i == k { v + v } else { v };
            }
        }
        out
    }

    /// Directional derivative `sum_m v^m d_m f` along a vector of jets.
    pub fn directional(&self, v: &[Jet<T>; 4]) -> Self {
        let mut acc = Jet::zero_with_order(self.order.saturating_sub(1));
        for (m, vm) in v.iter().enumerate() {
            acc += *vm * self.partial(m);
        }
        acc
    }

    #[inline]
    pub fn scale(mut self, r: T::Re) -> Self {
        for k in 0..ncoef(self.order) {
            self.c[k] = self.c[k].scale(r);
        }
        self
    }

    #[inline]
    pub fn mul_coeff(mut self, t: T) -> Self {
        for k in 0..ncoef(self.order) {
            self.c[k] = self.c[k] * t;
        }
        self
    }

    pub fn conj(mut self) -> Self {
        for k in 0..ncoef(self.order) {
            self.c[k] = self.c[k].conj();
        }
        self
    }

    /// Largest coefficient modulus; a cheap size measure for tests.
    pub fn sup_coeff(&self) -> T::Re {
        self.c[..ncoef(self.order)]
            .iter()
            .fold(T::Re::zero(), |m, c| m.max(c.modulus()))
    }

    /// `f(a)` for a univariate `f` given `f(a0), f'(a0), f''(a0)`.
    pub fn compose(&self, f0: T, f1: T, f2: T) -> Self {
        let mut d = *self;
        d.c[0] = T::zero();
        let mut out = d.mul_coeff(f1);
        out.c[0] = f0;
        if self.order >= 2 {
            let half = T::Re::lit(0.5);
            let dd = d * d;
            for k in 5..NCOEF {
                out.c[k] = out.c[k] + dd.c[k] * f2.scale(half);
            }
        }
        out
    }

    pub fn recip(&self) -> Self {
        let a = self.c[0];
        let inv = T::one() / a;
        let inv2 = inv * inv;
        self.compose(inv, -inv2, (inv2 * inv).scale(T::Re::lit(2.0)))
    }

    pub fn powi(&self, n: i32) -> Self {
        match n {
            0 => Jet::constant(T::one()).truncate(self.order),
            1 => *self,
            _ if n < 0 => self.powi(-n).recip(),
            _ => {
                let a = self.c[0];
                let pow = |e: i32| -> T {
                    if e < 0 {
                        return T::zero();
                    }
                    let mut acc = T::one();
                    for _ in 0..e {
                        acc = acc * a;
                    }
                    acc
                };
                let nf = T::Re::from_i32(n).unwrap();
                let f0 = pow(n);
                let f1 = pow(n - 1).scale(nf);
                let f2 = pow(n - 2).scale(nf * (nf - T::Re::one()));
                self.compose(f0, f1, f2)
            }
        }
    }
}

impl<R: Real> Jet<R> {
    pub fn exp(&self) -> Self {
        let e = self.c[0].exp();
        self.compose(e, e, e)
    }

    pub fn ln(&self) -> Self {
        let a = self.c[0];
        self.compose(a.ln(), a.recip(), -(a * a).recip())
    }

    pub fn sqrt(&self) -> Self {
        let a = self.c[0];
        let s = a.sqrt();
        self.compose(s, R::lit(0.5) / s, -R::lit(0.25) / (s * a))
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose(s, c, -s)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose(c, -s, -c)
    }

    pub fn powf(&self, e: R) -> Self {
        let a = self.c[0];
        let f0 = a.powf(e);
        let f1 = e * a.powf(e - R::one());
        let f2 = e * (e - R::one()) * a.powf(e - R::lit(2.0));
        self.compose(f0, f1, f2)
    }

    /// `|f|`, differentiated on the branch selected by the value (a.e. jet).
    pub fn abs(&self) -> Self {
        if self.c[0] < R::zero() {
            -*self
        } else {
            *self
        }
    }

    /// Branch-selecting maximum (a.e. jet of `max(f, g)`).
    pub fn max(self, other: Self) -> Self {
        if other.c[0] > self.c[0] {
            other.truncate(self.order.min(other.order))
        } else {
            self.truncate(self.order.min(other.order))
        }
    }

    pub fn min(self, other: Self) -> Self {
        if other.c[0] < self.c[0] {
            other.truncate(self.order.min(other.order))
        } else {
            self.truncate(self.order.min(other.order))
        }
    }

    pub fn to_complex(&self) -> CJet<R> {
        let mut c = [Complex::new(R::zero(), R::zero()); NCOEF];
        for k in 0..ncoef(self.order) {
            c[k] = Complex::new(self.c[k], R::zero());
        }
        Jet { order: self.order, c }
    }
}

impl<R: Real> CJet<R> {
    pub fn re(&self) -> Jet<R> {
        let mut c = [R::zero(); NCOEF];
        for k in 0..ncoef(self.order) {
            c[k] = self.c[k].re;
        }
        Jet { order: self.order, c }
    }

    pub fn im(&self) -> Jet<R> {
        let mut c = [R::zero(); NCOEF];
        for k in 0..ncoef(self.order) {
            c[k] = self.c[k].im;
        }
        Jet { order: self.order, c }
    }

    /// Multiplication by `i`.
    pub fn times_i(mut self) -> Self {
        for k in 0..ncoef(self.order) {
            let z = self.c[k];
            self.c[k] = Complex::new(-z.im, z.re);
        }
        self
    }
}

impl<T: Copy + Add<Output = T>> Add for Jet<T> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        let order = self.order.min(rhs.order);
        for k in 0..ncoef(order) {
            self.c[k] = self.c[k] + rhs.c[k];
        }
        if order < self.order {
            self.order = order;
        }
        self
    }
}

impl<T: Copy + Sub<Output = T>> Sub for Jet<T> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        let order = self.order.min(rhs.order);
        for k in 0..ncoef(order) {
            self.c[k] = self.c[k] - rhs.c[k];
        }
        self.order = order;
        self
    }
}

impl<T: Copy + Neg<Output = T>> Neg for Jet<T> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        for k in 0..ncoef(self.order) {
            self.c[k] = -self.c[k];
        }
        self
    }
}

impl<T: Copy + Add<Output = T>> AddAssign for Jet<T> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Copy + Sub<Output = T>> SubAssign for Jet<T> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<T> Mul for Jet<T>
where
    T: Copy + Add<Output = T> + Mul<Output = T> + num_traits::Zero,
{
    type Output = Self;
    #[inline]
    fn mul(self, b: Self) -> Self {
        let a = self;
        let order = a.order.min(b.order);
        let mut c = [T::zero(); NCOEF];
        c[0] = a.c[0] * b.c[0];
        if order >= 1 {
            for i in 1..5 {
                c[i] = a.c[0] * b.c[i] + a.c[i] * b.c[0];
            }
            if order >= 2 {
                for i in 0..4 {
                    for j in i..4 {
                        let k = pair_index(i, j);
                        let cross = if i == j {
                            a.c[1 + i] * b.c[1 + i]
                        } else {
                            a.c[1 + i] * b.c[1 + j] + a.c[1 + j] * b.c[1 + i]
                        };
                        c[k] = a.c[0] * b.c[k] + a.c[k] * b.c[0] + cross;
                    }
                }
            }
        }
        Jet { order, c }
    }
}

impl<T: Coeff> Div for Jet<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

/// Seeds the four coordinate jets at a point.
pub fn coordinate_jets<R: Real>(p: &[R; 4], order: u8) -> [Jet<R>; 4] {
    std::array::from_fn(|k| Jet::variable(p[k], k).truncate(order))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(x: &[Jet<f64>; 4]) -> Jet<f64> {
        // x1^2 y2 + exp(x2) sin(y1) / (1 + x1^2)
        let one = Jet::constant(1.0);
        x[0] * x[0] * x[3] + x[2].exp() * x[1].sin() / (one + x[0] * x[0])
    }

    fn f_plain(p: [f64; 4]) -> f64 {
        p[0] * p[0] * p[3] + p[2].exp() * p[1].sin() / (1.0 + p[0] * p[0])
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = [0.3, -0.7, 0.2, 1.1];
        let j = f(&coordinate_jets(&p, 2));
        assert!((j.value() - f_plain(p)).abs() < 1e-14);
        let h = 1e-4;
        for a in 0..4 {
            let mut pp = p;
            let mut pm = p;
            pp[a] += h;
            pm[a] -= h;
            let g = (f_plain(pp) - f_plain(pm)) / (2.0 * h);
            assert!((j.grad(a) - g).abs() < 1e-7, "grad {a}");
            for b in 0..4 {
                let e = |s: f64, t: f64| {
                    let mut q = p;
                    q[a] += s;
                    q[b] += t;
                    f_plain(q)
                };
                let hab = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
                assert!((j.hess(a, b) - hab).abs() < 1e-5, "hess {a}{b}");
            }
        }
    }

    #[test]
    fn partial_lowers_order_and_matches_hessian() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let j = f(&coordinate_jets(&p, 2));
        let d1 = j.partial(1);
        assert_eq!(d1.order, 1);
        assert!((d1.value() - j.grad(1)).abs() < 1e-15);
        for k in 0..4 {
            assert!((d1.grad(k) - j.hess(1, k)).abs() < 1e-13);
        }
    }

    #[test]
    fn order_truncates_to_minimum() {
        let a = Jet::variable(1.0, 0);
        let b = Jet::variable(2.0, 1).truncate(1);
        assert_eq!((a * b).order, 1);
        assert_eq!((a + b.truncate(0)).order, 0);
    }

    #[test]
    fn complex_recip_roundtrip() {
        let z = Jet::variable(Complex::new(1.0, 2.0), 2) * Jet::constant(Complex::new(0.5, -0.3))
            + Jet::constant(Complex::new(2.0, 1.0));
        let one = z * z.recip();
        assert!((one.value() - Complex::new(1.0, 0.0)).norm() < 1e-14);
        for k in 1..NCOEF {
            assert!(one.c[k].norm() < 1e-13);
        }
    }
}
