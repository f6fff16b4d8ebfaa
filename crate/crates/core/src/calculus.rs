//! The operators `d`, `dbar`, `theta`, `thetabar` on `(p,q)`-forms, Lie
//! brackets, type projections and the integrability test.
//!
//! All four operators are components of one exterior derivative evaluated
//! on frame vectors:
//!
//! ```text
//! d w(e_0..e_m) = sum_i (-1)^i e_i(w(..^e_i..))
//!               + sum_{i<j} (-1)^{i+j} w([e_i, e_j], ..^e_i..^e_j..)
//! ```
//!
//! `partial` and `dbar` are its `(p+1,q)` and `(p,q+1)` parts. `theta` and
//! `thetabar` are the negatives of its `(p+2,q-1)` and `(p-1,q+2)` parts, so
//! that `d = partial + dbar - theta - thetabar` and the identities
//! `partial^2 = theta dbar + dbar theta` etc. hold with these signs.

use std::sync::{Arc, Mutex};

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{fd_jets, FieldRef};
use crate::forms::{anti_count, holo_count, mask_indices, masks, perm_sign, PQForm, RandomForm, NMASK};
use crate::frame::{CVec, Frame, FrameJet};
use crate::geometry::{GridBox, Point};
use crate::jet::{CJet, Jet};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Partial,
    Dbar,
    Theta,
    ThetaBar,
}

impl Op {
    pub fn shift(self) -> (i32, i32) {
        match self {
            Op::Partial => (1, 0),
            Op::Dbar => (0, 1),
            Op::Theta => (2, -1),
            Op::ThetaBar => (-1, 2),
        }
    }

    pub fn is_differential(self) -> bool {
        matches!(self, Op::Partial | Op::Dbar)
    }

    /// Jet order the input must carry for an output of order `k`.
    pub fn input_order(self, k: u8) -> u8 {
        if self.is_differential() {
            k + 1
        } else {
            k
        }
    }
}

/// Applies one operator pointwise. The frame must carry order >= 1.
pub fn apply<R: Real>(op: Op, w: &PQForm<R>, fj: &FrameJet<R>) -> PQForm<R> {
    assert!(fj.order >= 1, "operators need frame jets of order >= 1");
    let (dp, dq) = op.shift();
    let (tp, tq) = (w.p + dp, w.q + dq);
    let order = if op.is_differential() {
        assert!(w.order >= 1, "differential operator on an order-0 form");
        (w.order - 1).min(fj.order - 1)
    } else {
        w.order.min(fj.order - 1)
    };
    let mut out = PQForm::zero(tp, tq, order);
    let targets = masks(tp, tq);
    if targets.is_empty() || !w.in_range() {
        return out;
    }
    let c = fj.structure_functions();
    let source_ok = |m: usize| holo_count(m) == w.p && anti_count(m) == w.q;
    for k in targets {
        let idx = mask_indices(k);
        let mut acc = CJet::<R>::zero_with_order(order);
        if op.is_differential() {
            for i in 0..idx.len() {
                let sub = k & !(1 << idx[i]);
                if !source_ok(sub) {
                    continue;
                }
                let t = w.c[sub].directional(&fj.vectors[idx[i]]).truncate(order);
                acc = if i % 2 == 0 { acc + t } else { acc - t };
            }
        }
        for i in 0..idx.len() {
            for j in i + 1..idx.len() {
                let rest = k & !(1 << idx[i]) & !(1 << idx[j]);
                let rest_idx = mask_indices(rest);
                for e in 0..4 {
                    if rest & (1 << e) != 0 {
                        continue;
                    }
                    let me = rest | (1 << e);
                    if !source_ok(me) {
                        continue;
                    }
                    let mut seq = vec![e];
                    seq.extend(&rest_idx);
                    let sign = perm_sign(&seq) * if (i + j) % 2 == 0 { 1 } else { -1 };
                    let t = (c[idx[i]][idx[j]][e] * w.c[me]).truncate(order);
                    acc = if sign > 0 { acc + t } else { acc - t };
                }
            }
        }
        out.c[k] = if op.is_differential() { acc } else { -acc };
    }
    out
}

pub fn op_partial<R: Real>(w: &PQForm<R>, fj: &FrameJet<R>) -> PQForm<R> {
    apply(Op::Partial, w, fj)
}

pub fn op_dbar<R: Real>(w: &PQForm<R>, fj: &FrameJet<R>) -> PQForm<R> {
    apply(Op::Dbar, w, fj)
}

pub fn op_theta<R: Real>(w: &PQForm<R>, fj: &FrameJet<R>) -> PQForm<R> {
    apply(Op::Theta, w, fj)
}

pub fn op_thetabar<R: Real>(w: &PQForm<R>, fj: &FrameJet<R>) -> PQForm<R> {
    apply(Op::ThetaBar, w, fj)
}

/// `(V^{1,0}, V^{0,1}) = (1/2 (V - iJV), 1/2 (V + iJV))`.
pub fn pq_project<R: Real>(v: &CVec<R>, fj: &FrameJet<R>) -> (CVec<R>, CVec<R>) {
    let jv = fj.apply_j(v);
    let half = Complex::new(R::lit(0.5), R::zero());
    let i = Complex::new(R::zero(), R::lit(0.5));
    let v10 = std::array::from_fn(|m| v[m].mul_coeff(half) - jv[m].mul_coeff(i));
    let v01 = std::array::from_fn(|m| v[m].mul_coeff(half) + jv[m].mul_coeff(i));
    (v10, v01)
}

/// Projection of a 1-form (coordinate components) onto its `(1,0)` and
/// `(0,1)` parts: `a^{1,0} = 1/2 (a - i a J)`, `a^{0,1} = 1/2 (a + i a J)`.
pub fn pq_project_covector<R: Real>(a: &CVec<R>, fj: &FrameJet<R>) -> (CVec<R>, CVec<R>) {
    let aj: CVec<R> = std::array::from_fn(|k| {
        let mut s = a[0] * fj.j[0][k].to_complex();
        for m in 1..4 {
            s += a[m] * fj.j[m][k].to_complex();
        }
        s
    });
    let half = Complex::new(R::lit(0.5), R::zero());
    let i = Complex::new(R::zero(), R::lit(0.5));
    (
        std::array::from_fn(|m| a[m].mul_coeff(half) - aj[m].mul_coeff(i)),
        std::array::from_fn(|m| a[m].mul_coeff(half) + aj[m].mul_coeff(i)),
    )
}

/// Lazily evaluated form field.
pub trait FormField<R: Real>: Send + Sync {
    fn bidegree(&self) -> (i32, i32);
    fn eval(&self, p: &Point<R>, order: u8) -> Result<PQForm<R>>;
}

pub type FormRef<R> = Arc<dyn FormField<R>>;

/// A scalar field as a `(0,0)`-form.
pub struct FunctionForm<R: Real>(pub FieldRef<R>);

impl<R: Real> FormField<R> for FunctionForm<R> {
    fn bidegree(&self) -> (i32, i32) {
        (0, 0)
    }
    fn eval(&self, p: &Point<R>, order: u8) -> Result<PQForm<R>> {
        Ok(PQForm::function(self.0.jet(p, order).to_complex()))
    }
}

impl<R: Real> FormField<R> for RandomForm {
    fn bidegree(&self) -> (i32, i32) {
        (self.p, self.q)
    }
    fn eval(&self, p: &Point<R>, order: u8) -> Result<PQForm<R>> {
        Ok(self.at(p, order))
    }
}

/// `op(inner)` evaluated on demand.
pub struct Applied<R: Real> {
    pub op: Op,
    pub inner: FormRef<R>,
    pub frame: Frame<R>,
}

impl<R: Real> FormField<R> for Applied<R> {
    fn bidegree(&self) -> (i32, i32) {
        let (p, q) = self.inner.bidegree();
        let (dp, dq) = self.op.shift();
        (p + dp, q + dq)
    }
    fn eval(&self, p: &Point<R>, order: u8) -> Result<PQForm<R>> {
        let fj = self.frame.at(p, order + 1)?;
        let w = self.inner.eval(p, self.op.input_order(order))?;
        Ok(apply(self.op, &w, &fj).truncate(order))
    }
}

/// Re-derives jets of a form field from its values by centered differences
/// with step `h` (the grid-jet mode).
pub struct FdForm<R: Real> {
    pub inner: FormRef<R>,
    pub h: R,
}

impl<R: Real> FormField<R> for FdForm<R> {
    fn bidegree(&self) -> (i32, i32) {
        self.inner.bidegree()
    }
    fn eval(&self, p: &Point<R>, order: u8) -> Result<PQForm<R>> {
        let err = Mutex::new(None);
        let (bp, bq) = self.bidegree();
        let flat: [Jet<R>; 2 * NMASK] = fd_jets(
            |q| match self.inner.eval(q, 0) {
                Ok(w) => std::array::from_fn(|k| {
                    let z = w.c[k / 2].value();
                    if k % 2 == 0 {
                        z.re
                    } else {
                        z.im
                    }
                }),
                Err(e) => {
                    *err.lock().unwrap() = Some(e);
                    [R::nan(); 2 * NMASK]
                }
            },
            p,
            self.h,
            order,
        );
        if let Some(e) = err.into_inner().unwrap() {
            return Err(e);
        }
        let mut out = PQForm::zero(bp, bq, order);
        for m in masks(bp, bq) {
            out.c[m] = flat[2 * m].to_complex() + flat[2 * m + 1].to_complex().times_i();
        }
        Ok(out)
    }
}

/// `op(inner)`, with the input re-derived by finite differences when `fd`
/// is given.
pub fn op_field<R: Real>(op: Op, inner: FormRef<R>, frame: &Frame<R>, fd: Option<R>) -> FormRef<R> {
    let inner = match fd {
        Some(h) => Arc::new(FdForm { inner, h }) as FormRef<R>,
        None => inner,
    };
    Arc::new(Applied { op, inner, frame: frame.clone() })
}

/// Applies `ops` right to left: `chain(&[A, B], w) = A(B(w))`.
pub fn chain<R: Real>(ops: &[Op], base: FormRef<R>, frame: &Frame<R>, fd: Option<R>) -> FormRef<R> {
    ops.iter().rev().fold(base, |acc, &op| op_field(op, acc, frame, fd))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub identity: String,
    pub sup_residual: f64,
    pub argmax_point: [f64; 4],
    /// Finite-difference step, or `None` for exact jets.
    pub h: Option<f64>,
}

pub const IDENTITY_NAMES: [&str; 3] = [
    "d_dbar + dbar_d + theta_thetabar + thetabar_theta = 0",
    "d^2 = theta_dbar + dbar_theta",
    "dbar^2 = thetabar_d + d_thetabar",
];

/// Terms of each identity written as `sum sign * chain = 0`.
fn identity_terms(which: usize) -> Vec<(f64, Vec<Op>)> {
    use Op::*;
    match which {
        0 => vec![
            (1.0, vec![Partial, Dbar]),
            (1.0, vec![Dbar, Partial]),
            (1.0, vec![Theta, ThetaBar]),
            (1.0, vec![ThetaBar, Theta]),
        ],
        1 => vec![(1.0, vec![Partial, Partial]), (-1.0, vec![Theta, Dbar]), (-1.0, vec![Dbar, Theta])],
        _ => vec![
            (1.0, vec![Dbar, Dbar]),
            (-1.0, vec![ThetaBar, Partial]),
            (-1.0, vec![Partial, ThetaBar]),
        ],
    }
}

/// Residual form of one identity at a point.
pub fn identity_residual_at<R: Real>(
    which: usize,
    form: &FormRef<R>,
    frame: &Frame<R>,
    fd: Option<R>,
    p: &Point<R>,
) -> Result<PQForm<R>> {
    let mut acc: Option<PQForm<R>> = None;
    for (s, ops) in identity_terms(which) {
        let w = chain(&ops, form.clone(), frame, fd).eval(p, 0)?;
        let w = w.scale(Complex::new(R::lit(s), R::zero()));
        acc = Some(match acc {
            None => w,
            Some(a) => a.add(&w),
        });
    }
    Ok(acc.unwrap())
}

/// Sup-norm of the three operator identities over sample forms and points.
pub fn identity_residuals<R: Real>(
    frame: &Frame<R>,
    forms: &[FormRef<R>],
    points: &[Point<R>],
    fd: Option<R>,
) -> Result<Vec<ResidualRecord>> {
    (0..3)
        .map(|which| {
            let cases: Vec<(usize, usize)> = (0..forms.len())
                .flat_map(|f| (0..points.len()).map(move |k| (f, k)))
                .collect();
            let vals: Result<Vec<(f64, [f64; 4])>> = cases
                .par_iter()
                .map(|&(f, k)| {
                    let r = identity_residual_at(which, &forms[f], frame, fd, &points[k])?;
                    Ok((r.sup_value(), points[k].to_f64()))
                })
                .collect();
            let (sup, at) = vals?
                .into_iter()
                .fold((0.0, [0.0; 4]), |a, b| if b.0 > a.0 || b.0.is_nan() { b } else { a });
            Ok(ResidualRecord {
                identity: IDENTITY_NAMES[which].to_string(),
                sup_residual: sup,
                argmax_point: at,
                h: fd.map(|h| h.to_f64_lossy()),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub integrable: bool,
    /// `sup |[conj zeta_1, conj zeta_2]^{1,0}|` (frame components).
    pub sup_norm: f64,
    pub witness: [f64; 4],
    pub tolerance: f64,
}

/// Default tolerance for exact jets.
pub const INTEGRABILITY_TOL: f64 = 1e-7;

/// Largest `(1,0)` part of `[conj zeta_1, conj zeta_2]` at `p`.
pub fn torsion_at<R: Real>(frame: &Frame<R>, p: &Point<R>) -> Result<f64> {
    let fj = frame.at(p, 1)?;
    let c = fj.structure_functions();
    Ok((0..2).map(|e| c[2][3][e].value().norm().to_f64_lossy()).fold(0.0, f64::max))
}

pub fn integrability_check<R: Real>(frame: &Frame<R>, grid: &GridBox<R>, tol: f64) -> Result<IntegrabilityReport> {
    let vals: Result<Vec<(f64, [f64; 4])>> = (0..grid.len())
        .into_par_iter()
        .map(|f| {
            let p = grid.node(grid.unflat(f));
            Ok((torsion_at(frame, &p)?, p.to_f64()))
        })
        .collect();
    let (sup, at) = vals?
        .into_iter()
        .fold((0.0, [0.0; 4]), |a, b| if b.0 > a.0 { b } else { a });
    Ok(IntegrabilityReport { integrable: sup <= tol, sup_norm: sup, witness: at, tolerance: tol })
}

/// Grid tolerance `5 h^2 |J|_{C^2}` with the C^2 norm estimated on the nodes.
pub fn grid_integrability_tol<R: Real>(frame: &Frame<R>, grid: &GridBox<R>) -> f64 {
    let h = grid.h().to_f64_lossy();
    let norm = (0..grid.len())
        .into_par_iter()
        .map(|f| {
            let p = grid.node(grid.unflat(f));
            let m = frame.structure.jet(&p, 2);
            m.iter().flatten().map(|e| e.sup_coeff().to_f64_lossy()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    5.0 * h * h * norm.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{Ja, Jst};

    fn pt() -> Point<f64> {
        Point([0.31, -0.22, 0.17, 0.4])
    }

    #[test]
    fn standard_structure_has_no_theta() {
        let frame = Frame::new(Arc::new(Jst));
        let fj = frame.at(&pt(), 2).unwrap();
        for (p, q) in [(1, 0), (0, 1), (1, 1), (0, 2), (2, 0)] {
            let w = RandomForm::new(p, q, 7).at(&pt(), 2);
            assert!(op_theta(&w, &fj).sup_value() < 1e-15);
            assert!(op_thetabar(&w, &fj).sup_value() < 1e-15);
        }
    }

    #[test]
    fn identities_hold_for_nonintegrable_ja() {
        let frame = Frame::new(Arc::new(Ja::<f64>::parse("x1*x2").unwrap()));
        for (p, q) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let w: FormRef<f64> = Arc::new(RandomForm::new(p, q, 11));
            for which in 0..3 {
                let r = identity_residual_at(which, &w, &frame, None, &pt()).unwrap();
                assert!(r.sup_value() < 1e-12, "({p},{q}) identity {which}: {}", r.sup_value());
            }
        }
    }

    #[test]
    fn dbar_of_conjugate_is_conjugate_of_partial() {
        let frame = Frame::new(Arc::new(Ja::<f64>::parse("sin(x1)*x2 + 0.2*y2").unwrap()));
        let fj = frame.at(&pt(), 2).unwrap();
        let w = RandomForm::new(1, 0, 5).at(&pt(), 2);
        let a = op_dbar(&w.conj(), &fj);
        let b = op_partial(&w, &fj).conj();
        assert_eq!((a.p, a.q), (b.p, b.q));
        assert!(a.sub(&b).sup_value() < 1e-13);
        let t1 = op_thetabar(&w.conj(), &fj);
        let t2 = op_theta(&w, &fj).conj();
        assert!(t1.sub(&t2).sup_value() < 1e-13);
    }

    #[test]
    fn theta_out_of_range_is_zero() {
        let frame = Frame::new(Arc::new(Ja::<f64>::parse("x1").unwrap()));
        let fj = frame.at(&pt(), 2).unwrap();
        let w = RandomForm::new(1, 0, 1).at(&pt(), 2);
        let t = op_theta(&w, &fj);
        assert_eq!((t.p, t.q), (3, -1));
        assert!(t.masks().is_empty());
    }
}
