//! Real scalar fields with jet access.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{AcxError, Result};
use crate::expr::Expr;
use crate::geometry::{GridBox, Point};
use crate::jet::{coordinate_jets, Jet};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularity {
    C2,
    C11,
    Lipschitz,
    Continuous,
}

/// A real function on R^4 with value, gradient and Hessian at any point.
///
/// For fields that are only `C^{1,1}` or Lipschitz the jet is the one-sided
/// jet of whichever smooth branch is active at the point (almost-everywhere
/// derivatives).
pub trait ScalarField<R: Real>: Send + Sync {
    fn jet(&self, p: &Point<R>, order: u8) -> Jet<R>;

    fn value(&self, p: &Point<R>) -> R {
        self.jet(p, 0).value()
    }

    fn regularity(&self) -> Regularity {
        Regularity::C2
    }

    /// The pieces, when the field is a pointwise maximum of them.
    fn max_branches(&self) -> Option<Vec<FieldRef<R>>> {
        None
    }

    /// Radii `r` in `(r0, r1)` where the second derivatives of
    /// `t -> u(origin + t dir)` may jump. Quadrature splits there.
    fn breaks_along(&self, _origin: &Point<R>, _dir: &[R; 4], _r0: R, _r1: R) -> Vec<R> {
        Vec::new()
    }
}

pub type FieldRef<R> = Arc<dyn ScalarField<R>>;

impl<R: Real, F: ScalarField<R> + ?Sized> ScalarField<R> for Arc<F> {
    fn jet(&self, p: &Point<R>, order: u8) -> Jet<R> {
        (**self).jet(p, order)
    }
    fn value(&self, p: &Point<R>) -> R {
        (**self).value(p)
    }
    fn regularity(&self) -> Regularity {
        (**self).regularity()
    }
    fn max_branches(&self) -> Option<Vec<FieldRef<R>>> {
        (**self).max_branches()
    }
    fn breaks_along(&self, origin: &Point<R>, dir: &[R; 4], r0: R, r1: R) -> Vec<R> {
        (**self).breaks_along(origin, dir, r0, r1)
    }
}

/// Field given by a parsed arithmetic expression.
#[derive(Clone, Debug)]
pub struct ExprField {
    pub expr: Expr,
    pub regularity: Regularity,
}

impl ExprField {
    pub fn parse(src: &str) -> Result<Self> {
        let expr = Expr::parse(src)?;
        let regularity = if src.contains("max") || src.contains("min") || src.contains("abs") {
            Regularity::Lipschitz
        } else {
            Regularity::C2
        };
        Ok(ExprField { expr, regularity })
    }

    pub fn with_regularity(mut self, r: Regularity) -> Self {
        self.regularity = r;
        self
    }
}

impl fmt::Display for ExprField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)
    }
}

impl<R: Real> ScalarField<R> for ExprField {
    fn jet(&self, p: &Point<R>, order: u8) -> Jet<R> {
        self.expr.eval(&coordinate_jets(&p.0, order)).truncate(order)
    }
    fn value(&self, p: &Point<R>) -> R {
        self.expr.eval(&p.0)
    }
    fn regularity(&self) -> Regularity {
        self.regularity
    }
}

/// Field defined by a closure over coordinate jets.
pub struct JetFn<R, F> {
    f: F,
    regularity: Regularity,
    _r: std::marker::PhantomData<fn() -> R>,
}

impl<R: Real, F> JetFn<R, F>
where
    F: Fn(&[Jet<R>; 4]) -> Jet<R> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        JetFn { f, regularity: Regularity::C2, _r: std::marker::PhantomData }
    }

    pub fn with_regularity(mut self, r: Regularity) -> Self {
        self.regularity = r;
        self
    }
}

impl<R: Real, F> ScalarField<R> for JetFn<R, F>
where
    F: Fn(&[Jet<R>; 4]) -> Jet<R> + Send + Sync,
{
    fn jet(&self, p: &Point<R>, order: u8) -> Jet<R> {
        (self.f)(&coordinate_jets(&p.0, order)).truncate(order)
    }
    fn regularity(&self) -> Regularity {
        self.regularity
    }
}

/// `sum_k c_k u_k + constant`.
pub struct LinearCombination<R: Real> {
    pub terms: Vec<(R, FieldRef<R>)>,
    pub constant: R,
}

impl<R: Real> ScalarField<R> for LinearCombination<R> {
    fn jet(&self, p: &Point<R>, order: u8) -> Jet<R> {
        let mut acc = Jet::constant(self.constant).truncate(order);
        for (c, u) in &self.terms {
            acc += u.jet(p, order).scale(*c);
        }
        acc
    }
    fn value(&self, p: &Point<R>) -> R {
        self.terms
            .iter()
            .fold(self.constant, |s, (c, u)| s + *c * u.value(p))
    }
    fn regularity(&self) -> Regularity {
        worst(self.terms.iter().map(|(_, u)| u.regularity()))
    }
}

/// Pointwise product `u * v`.
pub struct Product<R: Real>(pub FieldRef<R>, pub FieldRef<R>);

impl<R: Real> ScalarField<R> for Product<R> {
    fn jet(&self, p: &Point<R>, order: u8) -> Jet<R> {
        self.0.jet(p, order) * self.1.jet(p, order)
    }
    fn value(&self, p: &Point<R>) -> R {
        self.0.value(p) * self.1.value(p)
    }
    fn regularity(&self) -> Regularity {
        worst([self.0.regularity(), self.1.regularity()].into_iter())
    }
}

/// Pointwise maximum (branch jets).
pub struct MaxField<R: Real>(pub Vec<FieldRef<R>>);

impl<R: Real> ScalarField<R> for MaxField<R> {
    fn jet(&self, p: &Point<R>, order: u8) -> Jet<R> {
        let mut it = self.0.iter();
        let first = it.next().expect("empty max").jet(p, order);
        it.fold(first, |m, u| m.max(u.jet(p, order)))
    }
    fn value(&self, p: &Point<R>) -> R {
        self.0
            .iter()
            .map(|u| u.value(p))
            .fold(R::neg_infinity(), |a, b| a.max(b))
    }
    fn regularity(&self) -> Regularity {
        Regularity::Lipschitz
    }
    fn max_branches(&self) -> Option<Vec<FieldRef<R>>> {
        Some(self.0.clone())
    }
}

fn worst(it: impl Iterator<Item = Regularity>) -> Regularity {
    let rank = |r: Regularity| match r {
        Regularity::C2 => 0,
        Regularity::C11 => 1,
        Regularity::Lipschitz => 2,
        Regularity::Continuous => 3,
    };
    it.max_by_key(|r| rank(*r)).unwrap_or(Regularity::C2)
}

/// Centered second-order finite-difference jets of a field from its values
/// alone, with step `h`.
pub fn fd_jet<R: Real>(f: impl Fn(&Point<R>) -> R, p: &Point<R>, h: R, order: u8) -> Jet<R> {
    let [j] = fd_jets(|q| [f(q)], p, h, order);
    j
}

/// [`fd_jet`] for a vector of `N` functions sharing one stencil.
pub fn fd_jets<R: Real, const N: usize>(
    f: impl Fn(&Point<R>) -> [R; N],
    p: &Point<R>,
    h: R,
    order: u8,
) -> [Jet<R>; N] {
    let f0 = f(p);
    if order == 0 {
        return f0.map(|v| Jet::constant(v).truncate(0));
    }
    let two = R::lit(2.0);
    let plus: [[R; N]; 4] = std::array::from_fn(|k| f(&p.offset(k, h)));
    let minus: [[R; N]; 4] = std::array::from_fn(|k| f(&p.offset(k, -h)));
    let grad = |n: usize| -> [R; 4] {
        std::array::from_fn(|k| (plus[k][n] - minus[k][n]) / (two * h))
    };
    if order == 1 {
        return std::array::from_fn(|n| Jet::from_derivatives(f0[n], Some(grad(n)), None));
    }
    let mut hs = [[[R::zero(); 4]; 4]; N];
    for i in 0..4 {
        for n in 0..N {
            hs[n][i][i] = (plus[i][n] - two * f0[n] + minus[i][n]) / (h * h);
        }
        for j in i + 1..4 {
            let e = |a: R, b: R| f(&p.offset(i, a).offset(j, b));
            let (pp, pm, mp, mm) = (e(h, h), e(h, -h), e(-h, h), e(-h, -h));
            for n in 0..N {
                let v = (pp[n] - pm[n] - mp[n] + mm[n]) / (R::lit(4.0) * h * h);
                hs[n][i][j] = v;
                hs[n][j][i] = v;
            }
        }
    }
    std::array::from_fn(|n| Jet::from_derivatives(f0[n], Some(grad(n)), Some(hs[n])))
}

/// Any field re-derived by centered finite differences with step `h`
/// (the "grid jets" mode).
pub struct FdField<R: Real> {
    pub inner: FieldRef<R>,
    pub h: R,
}

impl<R: Real> ScalarField<R> for FdField<R> {
    fn jet(&self, p: &Point<R>, order: u8) -> Jet<R> {
        fd_jet(|q| self.inner.value(q), p, self.h, order)
    }
    fn value(&self, p: &Point<R>) -> R {
        self.inner.value(p)
    }
    fn regularity(&self) -> Regularity {
        self.inner.regularity()
    }
}

/// Samples on the nodes of a box; jets come from centered differences at the
/// nearest admissible node, Taylor-shifted to the query point.
#[derive(Clone, Debug)]
pub struct GridField<R: Real> {
    pub grid: GridBox<R>,
    pub samples: Vec<R>,
    pub regularity: Regularity,
}

impl<R: Real> GridField<R> {
    pub fn sample(grid: &GridBox<R>, u: &dyn ScalarField<R>) -> Self {
        use rayon::prelude::*;
        let samples = (0..grid.len())
            .into_par_iter()
            .map(|f| u.value(&grid.node(grid.unflat(f))))
            .collect();
        GridField { grid: grid.clone(), samples, regularity: u.regularity() }
    }

    pub fn from_samples(grid: GridBox<R>, samples: Vec<R>) -> Self {
        assert_eq!(grid.len(), samples.len());
        GridField { grid, samples, regularity: Regularity::C2 }
    }

    pub fn at(&self, idx: [usize; 4]) -> R {
        self.samples[self.grid.flat(idx)]
    }

    fn nearest_node(&self, p: &Point<R>) -> ([usize; 4], bool) {
        let h = self.grid.spacing();
        let mut ok = true;
        let idx = std::array::from_fn(|k| {
            let t = ((p[k] - self.grid.lower[k]) / h[k]).round();
            let n = self.grid.resolution[k] as i64;
            let i = t.to_i64().unwrap_or(0);
            if i < 1 || i > n - 2 {
                ok = false;
            }
            i.clamp(1, n - 2) as usize
        });
        (idx, ok)
    }

    /// Jet at a node from the centered stencil (node must be interior).
    pub fn node_jet(&self, idx: [usize; 4], order: u8) -> Jet<R> {
        let h = self.grid.spacing();
        let two = R::lit(2.0);
        let f0 = self.at(idx);
        if order == 0 {
            return Jet::constant(f0).truncate(0);
        }
        let shifted = |k: usize, d: isize| {
            let mut i = idx;
            i[k] = (i[k] as isize + d) as usize;
            i
        };
        let g: [R; 4] = std::array::from_fn(|k| {
            (self.at(shifted(k, 1)) - self.at(shifted(k, -1))) / (two * h[k])
        });
        if order == 1 {
            return Jet::from_derivatives(f0, Some(g), None);
        }
        let mut hs = [[R::zero(); 4]; 4];
        for i in 0..4 {
            hs[i][i] = (self.at(shifted(i, 1)) - two * f0 + self.at(shifted(i, -1))) / (h[i] * h[i]);
            for j in i + 1..4 {
                let e = |a: isize, b: isize| {
                    let mut q = idx;
                    q[i] = (q[i] as isize + a) as usize;
                    q[j] = (q[j] as isize + b) as usize;
                    self.at(q)
                };
                let v = (e(1, 1) - e(1, -1) - e(-1, 1) + e(-1, -1)) / (R::lit(4.0) * h[i] * h[j]);
                hs[i][j] = v;
                hs[j][i] = v;
            }
        }
        Jet::from_derivatives(f0, Some(g), Some(hs))
    }

    /// Like [`ScalarField::jet`] but refuses points whose stencil would leave
    /// the box.
    pub fn checked_jet(&self, p: &Point<R>, order: u8) -> Result<Jet<R>> {
        let (_, ok) = self.nearest_node(p);
        if !ok || !self.grid.contains(p) {
            return Err(AcxError::OutsideGrid(p.to_f64()));
        }
        Ok(self.jet(p, order))
    }
}

impl<R: Real> ScalarField<R> for GridField<R> {
    fn jet(&self, p: &Point<R>, order: u8) -> Jet<R> {
        let (idx, _) = self.nearest_node(p);
        let node = self.grid.node(idx);
        let d: [R; 4] = std::array::from_fn(|k| p[k] - node[k]);
        if d.iter().all(|x| *x == R::zero()) {
            return self.node_jet(idx, order);
        }
        // re-expand the local quadratic model around p
        let full = self.node_jet(idx, 2);
        let mut value = full.value();
        let mut grad = [R::zero(); 4];
        for i in 0..4 {
            value = value + full.grad(i) * d[i];
            grad[i] = full.grad(i);
            for j in 0..4 {
                value = value + R::lit(0.5) * full.hess(i, j) * d[i] * d[j];
                grad[i] = grad[i] + full.hess(i, j) * d[j];
            }
        }
        let hs: [[R; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| full.hess(i, j)));
        Jet::from_derivatives(value, Some(grad), Some(hs)).truncate(order)
    }

    fn value(&self, p: &Point<R>) -> R {
        self.jet(p, 0).value()
    }

    fn regularity(&self) -> Regularity {
        self.regularity
    }
}

/// Common fields used throughout the examples.
pub mod common {
    use super::*;

    /// `|z|^2 = x1^2 + y1^2 + x2^2 + y2^2`.
    pub fn norm2<R: Real>() -> FieldRef<R> {
        Arc::new(ExprField::parse("x1^2+y1^2+x2^2+y2^2").unwrap())
    }

    pub fn coordinate<R: Real>(k: usize) -> FieldRef<R> {
        Arc::new(ExprField::parse(crate::expr::VAR_NAMES[k]).unwrap())
    }

    pub fn expr<R: Real>(src: &str) -> Result<FieldRef<R>> {
        Ok(Arc::new(ExprField::parse(src)?))
    }

    pub fn constant<R: Real>(c: R) -> FieldRef<R> {
        Arc::new(LinearCombination { terms: vec![], constant: c })
    }

    /// Seeded smooth field `|z|^2 / 2 + sum of three plane waves`, returned
    /// with its expression so runs can echo it.
    pub fn random_smooth<R: Real>(seed: u64, amplitude: f64) -> (FieldRef<R>, String) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut src = String::from("0.5*(x1^2+y1^2+x2^2+y2^2)");
        for _ in 0..3 {
            let a: f64 = amplitude * rng.gen_range(-1.0..1.0);
            let w: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5));
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            src.push_str(&format!(
                "+({a:?})*sin(({:?})*x1+({:?})*y1+({:?})*x2+({:?})*y2+({phi:?}))",
                w[0], w[1], w[2], w[3]
            ));
        }
        (Arc::new(ExprField::parse(&src).expect("generated expression parses")), src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_jets_converge_at_second_order() {
        let u: FieldRef<f64> = common::expr("sin(x1)*exp(0.5*y2) + x2^3*y1").unwrap();
        let p = Point([0.1, 0.2, -0.3, 0.25]);
        let exact = u.jet(&p, 2);
        let err = |n: usize| {
            let g = GridBox::centered_cube(&p, 0.5, n).unwrap();
            let gf = GridField::sample(&g, &*u);
            let j = gf.jet(&p, 2);
            let mut e: f64 = 0.0;
            for a in 0..4 {
                e = e.max((j.grad(a) - exact.grad(a)).abs());
                for b in 0..4 {
                    e = e.max((j.hess(a, b) - exact.hess(a, b)).abs());
                }
            }
            e
        };
        let ratio = err(9) / err(17);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn checked_jet_refuses_boundary() {
        let u: FieldRef<f64> = common::norm2();
        let g = GridBox::cube(1.0, 9).unwrap();
        let gf = GridField::sample(&g, &*u);
        assert!(gf.checked_jet(&Point([0.99, 0.0, 0.0, 0.0]), 2).is_err());
        let j = gf.checked_jet(&Point([0.5, 0.0, 0.0, 0.0]), 2).unwrap();
        assert!((j.hess(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_fields_are_reproducible() {
        let (u, a) = common::random_smooth::<f64>(3, 0.1);
        let (v, b) = common::random_smooth::<f64>(3, 0.1);
        assert_eq!(a, b);
        let p = Point([0.1, 0.2, 0.3, 0.4]);
        assert_eq!(u.value(&p), v.value(&p));
        assert_ne!(a, common::random_smooth::<f64>(4, 0.1).1);
    }
}
