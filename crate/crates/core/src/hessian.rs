//! The complex Hessian `i ddbar u = i sum h_pq zeta_p^* ^ conj(zeta_q)^*`,
//! plurisubharmonicity tests and Hermitian metrics.

use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::ScalarField;
use crate::frame::{Frame, FrameJet};
use crate::geometry::Point;
use crate::jet::{CJet, Jet};
use crate::linalg::{det2, herm2_eigs};
use crate::scalar::Real;

pub type Herm<R> = [[Complex<R>; 2]; 2];

/// Hessian coefficients as jets, from a function jet of order `k + 2` and a
/// frame of order `k + 1`.
pub fn hessian_jets<R: Real>(u: &Jet<R>, fj: &FrameJet<R>) -> [[CJet<R>; 2]; 2] {
    let u = u.to_complex();
    let c = fj.structure_functions();
    let du: [CJet<R>; 4] = std::array::from_fn(|a| u.directional(&fj.vectors[a]));
    std::array::from_fn(|p| {
        std::array::from_fn(|q| {
            let mut h = du[q + 2].directional(&fj.vectors[p]);
            for e in 2..4 {
                h -= c[p][q + 2][e] * du[e];
            }
            h
        })
    })
}

pub fn values2<R: Real>(h: &[[CJet<R>; 2]; 2]) -> Herm<R> {
    std::array::from_fn(|p| std::array::from_fn(|q| h[p][q].value()))
}

/// `h_pq = zeta_p(conj(zeta_q) u) - [zeta_p, conj(zeta_q)]^{0,1} u` at `p`.
pub fn i_ddbar<R: Real>(u: &dyn ScalarField<R>, frame: &Frame<R>, p: &Point<R>) -> Result<Herm<R>> {
    let fj = frame.at(p, 1)?;
    Ok(values2(&hessian_jets(&u.jet(p, 2), &fj)))
}

/// Departure from Hermitian symmetry.
pub fn hermitian_defect<R: Real>(h: &Herm<R>) -> f64 {
    let mut d = 0.0f64;
    for p in 0..2 {
        for q in 0..2 {
            d = d.max((h[p][q] - h[q][p].conj()).norm().to_f64_lossy());
        }
    }
    d
}

pub fn min_eigenvalue<R: Real>(h: &Herm<R>) -> f64 {
    herm2_eigs(h).0.to_f64_lossy()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PshClass {
    StrictlyPsh,
    Psh,
    NotPsh,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PshReport {
    pub class: PshClass,
    pub lambda_min: f64,
    pub argmin: [f64; 4],
    /// Smallest eigenvalue at every sample point, in input order.
    pub lambda_field: Vec<f64>,
}

/// Classifies `u` on sample points by the smallest eigenvalue of `h_pq`.
/// `tol` is the slack for "psh"; strict means `lambda_min >= margin > 0`.
pub fn psh_check<R: Real>(
    u: &dyn ScalarField<R>,
    frame: &Frame<R>,
    points: &[Point<R>],
    tol: f64,
    margin: f64,
) -> Result<PshReport> {
    let lambda_field: Result<Vec<f64>> = points
        .par_iter()
        .map(|p| Ok(min_eigenvalue(&i_ddbar(u, frame, p)?)))
        .collect();
    let lambda_field = lambda_field?;
    let (k, lambda_min) = lambda_field
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 || b.1.is_nan() { b } else { a });
    let class = if lambda_min >= margin.max(f64::MIN_POSITIVE) {
        PshClass::StrictlyPsh
    } else if lambda_min >= -tol {
        PshClass::Psh
    } else {
        PshClass::NotPsh
    };
    let argmin = points.get(k).map(|p| p.to_f64()).unwrap_or([f64::NAN; 4]);
    Ok(PshReport { class, lambda_min, argmin, lambda_field })
}

/// Largest `eps >= 0` with `lambda_min(h_u) >= eps * lambda_max(h_phi)` at
/// every sample point.
pub fn strictness_margin<R: Real>(
    u: &dyn ScalarField<R>,
    phi: &dyn ScalarField<R>,
    frame: &Frame<R>,
    points: &[Point<R>],
) -> Result<f64> {
    let ratios: Result<Vec<f64>> = points
        .par_iter()
        .map(|p| {
            let lu = min_eigenvalue(&i_ddbar(u, frame, p)?);
            let lphi = herm2_eigs(&i_ddbar(phi, frame, p)?).1.to_f64_lossy();
            Ok(if lphi <= 0.0 {
                if lu >= 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                lu / lphi
            })
        })
        .collect();
    let m = ratios?.into_iter().fold(f64::INFINITY, f64::min);
    Ok(if m.is_finite() { m.max(0.0) } else { 0.0 })
}

/// A positive `(1,1)`-form `omega = i sum k_pq zeta_p^* ^ conj(zeta_q)^*`.
#[derive(Clone)]
pub enum HermitianMetric<R: Real> {
    /// `k = 2 I`, for which `omega^2 / 2` is Lebesgue measure under `J_st`.
    Standard,
    Constant(Herm<R>),
    Field(Arc<dyn Fn(&Point<R>) -> Herm<R> + Send + Sync>),
}

impl<R: Real> Default for HermitianMetric<R> {
    fn default() -> Self {
        HermitianMetric::Standard
    }
}

impl<R: Real> HermitianMetric<R> {
    pub fn at(&self, p: &Point<R>) -> Herm<R> {
        match self {
            HermitianMetric::Standard => {
                let two = Complex::new(R::lit(2.0), R::zero());
                let z = Complex::new(R::zero(), R::zero());
                [[two, z], [z, two]]
            }
            HermitianMetric::Constant(k) => *k,
            HermitianMetric::Field(f) => f(p),
        }
    }

    /// Smallest eigenvalue over sample points (must be positive).
    pub fn min_eigenvalue(&self, points: &[Point<R>]) -> f64 {
        points.iter().map(|p| min_eigenvalue(&self.at(p))).fold(f64::INFINITY, f64::min)
    }
}

/// `(alpha ^ beta)` coefficient against `zeta_1^* ^ zeta_2^* ^ conj ^ conj`
/// for two `(1,1)`-forms `i sum a_pq ...` and `i sum b_pq ...`.
pub fn cross_density<R: Real>(a: &Herm<R>, b: &Herm<R>) -> Complex<R> {
    a[0][0] * b[1][1] + a[1][1] * b[0][0] - a[0][1] * b[1][0] - a[1][0] * b[0][1]
}

/// `(i ddbar u)^2` coefficient against the frame volume: `2 det h`.
pub fn square_density<R: Real>(h: &Herm<R>) -> Complex<R> {
    det2(h) * R::lit(2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::common;
    use crate::structure::{Ja, Jst};

    #[test]
    fn norm_squared_under_standard_structure() {
        let frame = Frame::new(Arc::new(Jst));
        let h = i_ddbar(common::norm2::<f64>().as_ref(), &frame, &Point([0.3, 0.1, -0.2, 0.5])).unwrap();
        for p in 0..2 {
            for q in 0..2 {
                let want = if p == q { 4.0 } else { 0.0 };
                assert!((h[p][q] - Complex::new(want, 0.0)).norm() < 1e-14);
            }
        }
        let h = i_ddbar(common::coordinate::<f64>(0).as_ref(), &frame, &Point::origin()).unwrap();
        assert!(h.iter().flatten().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn real_functions_give_hermitian_coefficients() {
        let frame = Frame::new(Arc::new(Ja::<f64>::parse("x1*x2 + sin(y2)").unwrap()));
        let u = common::expr::<f64>("exp(x1)*y2 + x2^3 - y1*x1").unwrap();
        let h = i_ddbar(u.as_ref(), &frame, &Point([0.2, -0.4, 0.3, 0.1])).unwrap();
        assert!(hermitian_defect(&h) < 1e-12);
    }

    #[test]
    fn signature_detected() {
        let frame = Frame::new(Arc::new(Jst));
        let u = common::expr::<f64>("x1^2+y1^2-x2^2-y2^2").unwrap();
        let pts = vec![Point([0.1, 0.2, 0.3, 0.4]), Point::origin()];
        let r = psh_check(u.as_ref(), &frame, &pts, 1e-9, 1e-6).unwrap();
        assert_eq!(r.class, PshClass::NotPsh);
        assert!((r.lambda_min + 4.0).abs() < 1e-12);
    }
}
