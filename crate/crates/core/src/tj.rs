//! `(i ddbar)^2 u = dbar theta thetabar d u + d thetabar theta dbar u` and
//! the real vector field `T_J` it contains.

use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{chain, pq_project, FormRef, FunctionForm, Op};
use crate::error::Result;
use crate::field::{common, FieldRef, ScalarField};
use crate::frame::{lie_bracket, CVec, Frame, FrameJet};
use crate::geometry::Point;
use crate::hessian::{cross_density, hessian_jets, values2, Herm, HermitianMetric};
use crate::jet::{CJet, Jet};
use crate::scalar::{imag_unit, Real};

/// Index of `zeta_1^* ^ zeta_2^* ^ conj(zeta_1)^* ^ conj(zeta_2)^*`.
const TOP: usize = 0b1111;

/// The two operator chains whose sum is `(i ddbar)^2` on functions.
pub fn iddbar_squared_chains<R: Real>(
    u: FieldRef<R>,
    frame: &Frame<R>,
    fd: Option<R>,
) -> [FormRef<R>; 2] {
    use Op::*;
    let base: FormRef<R> = Arc::new(FunctionForm(u));
    [
        chain(&[Dbar, Theta, ThetaBar, Partial], base.clone(), frame, fd),
        chain(&[Partial, ThetaBar, Theta, Dbar], base, frame, fd),
    ]
}

/// `(i ddbar)^2 u (zeta_1, zeta_2, conj zeta_1, conj zeta_2)`; the imaginary
/// part is an extraction residue and should vanish.
pub fn iddbar_squared<R: Real>(
    u: &FieldRef<R>,
    frame: &Frame<R>,
    p: &Point<R>,
    fd: Option<R>,
) -> Result<Complex<R>> {
    let [a, b] = iddbar_squared_chains(u.clone(), frame, fd);
    Ok(a.eval(p, 0)?.c[TOP].value() + b.eval(p, 0)?.c[TOP].value())
}

/// `[[zeta_1, zeta_2]^{0,1}, conj zeta_k]^{1,0}` for `k = 2` (A) and `k = 1`
/// (B), at order 0. Needs a frame of order 2.
pub fn correction_vectors<R: Real>(fj: &FrameJet<R>) -> (CVec<R>, CVec<R>) {
    let z = lie_bracket(&fj.vectors[0], &fj.vectors[1]);
    let (_, z01) = pq_project(&z, fj);
    let a = pq_project(&lie_bracket(&z01, &fj.vectors[3]), fj).0;
    let b = pq_project(&lie_bracket(&z01, &fj.vectors[2]), fj).0;
    (a, b)
}

/// `ddbar u (V, conj zeta_k) = sum_p h_pk zeta_p^*(V)` for `(1,0)` vectors `V`.
fn ddbar_on<R: Real>(h: &Herm<R>, fj: &FrameJet<R>, v: &CVec<R>, k: usize) -> Complex<R> {
    let c = fj.components(v);
    h[0][k] * c[0].value() + h[1][k] * c[1].value()
}

/// The correction `2 Re(ddbar u(A, conj zeta_1) - ddbar u(B, conj zeta_2))`.
pub fn tj_correction<R: Real>(h: &Herm<R>, fj: &FrameJet<R>) -> R {
    let (a, b) = correction_vectors(fj);
    let z = ddbar_on(h, fj, &a, 0) - ddbar_on(h, fj, &b, 1);
    R::lit(2.0) * z.re
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TjValue {
    pub point: [f64; 4],
    pub components: [f64; 4],
    /// Largest imaginary part met while extracting the components.
    pub imag_residue: f64,
}

/// `T_J u = (i ddbar)^2 u - correction` for a single function.
pub fn tj_apply<R: Real>(u: &FieldRef<R>, frame: &Frame<R>, p: &Point<R>, fd: Option<R>) -> Result<Complex<R>> {
    let sq = iddbar_squared(u, frame, p, fd)?;
    let fj = frame.at(p, 2)?;
    let h = values2(&hessian_jets(&u.jet(p, 2), &fj));
    Ok(sq - Complex::new(tj_correction(&h, &fj), R::zero()))
}

/// Components of `T_J` at `p`, probed with the coordinate functions.
pub fn tj_field<R: Real>(frame: &Frame<R>, p: &Point<R>, fd: Option<R>) -> Result<TjValue> {
    let mut components = [0.0; 4];
    let mut imag: f64 = 0.0;
    for m in 0..4 {
        let t = tj_apply(&common::coordinate(m), frame, p, fd)?;
        components[m] = t.re.to_f64_lossy();
        imag = imag.max(t.im.to_f64_lossy().abs());
    }
    Ok(TjValue { point: p.to_f64(), components, imag_residue: imag })
}

/// Closed-form coefficients for `J_a`:
/// `[zeta_1, zeta_2] = alpha zeta_2 + beta conj(zeta_2)` and
/// `[zeta_2, conj zeta_2] = gamma zeta_2 + delta conj(zeta_2)`.
///
/// `gamma`, `delta` and `tj` are the closed forms built on `(conj zeta_2 - zeta_2) a`.
/// Direct differentiation gives the bracket with `-(zeta_2 + conj zeta_2) a`
/// in place of `(conj zeta_2 - zeta_2) a` (`gamma_bracket`, `delta_bracket`),
/// and `T_{J_a} = conj(zeta_2)(|beta|^2) zeta_2 + zeta_2(|beta|^2) conj(zeta_2)`
/// (`tj_bracket`).
#[derive(Clone, Copy, Debug)]
pub struct JaCoefficients<R: Real> {
    pub alpha: Complex<R>,
    pub beta: Complex<R>,
    pub gamma: Complex<R>,
    pub delta: Complex<R>,
    /// `((2 gamma |beta|^2 - conj(zeta_2)(|beta|^2)) zeta_2 + conj.)` in coordinates.
    pub tj: [R; 4],
    pub gamma_bracket: Complex<R>,
    pub delta_bracket: Complex<R>,
    pub tj_bracket: [R; 4],
}

/// Evaluates the closed forms for `J_a` at `p` directly from the jets of `a`,
/// without going through frames or operators.
pub fn ja_closed_form<R: Real>(a: &dyn ScalarField<R>, p: &Point<R>) -> JaCoefficients<R> {
    let i = imag_unit::<R>();
    let one = Complex::new(R::one(), R::zero());
    let aj = a.jet(p, 2);
    let ac = aj.to_complex();
    // zeta_1 = d/dx1 + i d/dy1
    // zeta_2 = (1 - i a) d/dx2 + i (1 + a^2) d/dy2
    let cst = |z: Complex<R>| Jet::constant(z).truncate(2);
    let zeta2: CVec<R> = [
        cst(Complex::new(R::zero(), R::zero())),
        cst(Complex::new(R::zero(), R::zero())),
        cst(one) - ac.mul_coeff(i),
        (cst(one) + ac * ac).mul_coeff(i),
    ];
    let zeta2bar: CVec<R> = zeta2.map(|c| c.conj());
    let zeta1_a = ac.partial(0) + ac.partial(1).mul_coeff(i);
    let d2 = ac.directional(&zeta2bar) - ac.directional(&zeta2);
    let first = |z: &CJet<R>| -> CJet<R> {
        let t = Jet::constant(one).truncate(z.order);
        let ai = ac.truncate(z.order).mul_coeff(i);
        (ac.truncate(z.order) / (t - ai) - t.mul_coeff(i.scale(R::lit(0.5)))) * *z
    };
    let second = |z: &CJet<R>| -> CJet<R> {
        let t = Jet::constant(one).truncate(z.order);
        let ai = ac.truncate(z.order).mul_coeff(i);
        -((ac.truncate(z.order) / (t + ai) + t.mul_coeff(i.scale(R::lit(0.5)))) * *z)
    };
    let alpha = first(&zeta1_a);
    let beta = second(&zeta1_a);
    let gamma = first(&d2);
    let delta = second(&d2);
    let s2 = -(ac.directional(&zeta2bar) + ac.directional(&zeta2));
    let beta2 = beta * beta.conj();
    let dbeta2 = beta2.directional(&zeta2bar).value();
    let c = gamma.value() * beta2.value() * R::lit(2.0) - dbeta2;
    let z2 = zeta2.map(|v| v.value());
    let tj = std::array::from_fn(|m| R::lit(2.0) * (c * z2[m]).re);
    let tj_bracket = std::array::from_fn(|m| R::lit(2.0) * (dbeta2 * z2[m]).re);
    JaCoefficients {
        alpha: alpha.value(),
        beta: beta.value(),
        gamma: gamma.value(),
        delta: delta.value(),
        tj,
        gamma_bracket: first(&s2).value(),
        delta_bracket: second(&s2).value(),
        tj_bracket,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HessianBoundProbe {
    /// `sup |(i ddbar)^2 u| / (|T_J u| omega^2 + i ddbar u ^ omega + delta)`.
    pub ratio: f64,
    pub argmax_point: [f64; 4],
    pub function_index: usize,
}

/// Empirical constant of the two-sided bound of `(i ddbar)^2 u` by
/// `|T_J u| omega^2 + i ddbar u ^ omega`, all densities against the frame
/// volume.
pub fn hessian_bound_probe<R: Real>(
    frame: &Frame<R>,
    family: &[FieldRef<R>],
    points: &[Point<R>],
    metric: &HermitianMetric<R>,
    fd: Option<R>,
) -> Result<HessianBoundProbe> {
    const DELTA: f64 = 1e-12;
    let cases: Vec<(usize, usize)> =
        (0..family.len()).flat_map(|f| (0..points.len()).map(move |k| (f, k))).collect();
    let vals: Result<Vec<(f64, usize, usize)>> = cases
        .par_iter()
        .map(|&(f, k)| {
            let p = &points[k];
            let u = &family[f];
            let sq = iddbar_squared(u, frame, p, fd)?.re.to_f64_lossy();
            let tj = tj_field(frame, p, fd)?;
            let g = u.jet(p, 1);
            let tu: f64 = (0..4).map(|m| tj.components[m] * g.grad(m).to_f64_lossy()).sum();
            let fj = frame.at(p, 1)?;
            let h = values2(&hessian_jets(&u.jet(p, 2), &fj));
            let kk = metric.at(p);
            let omega2 = cross_density(&kk, &kk).re.to_f64_lossy();
            let cross = cross_density(&h, &kk).re.to_f64_lossy();
            Ok((sq.abs() / (tu.abs() * omega2 + cross.abs() + DELTA), f, k))
        })
        .collect();
    let (ratio, f, k) = vals?
        .into_iter()
        .fold((0.0, 0, 0), |a, b| if b.0 > a.0 { b } else { a });
    Ok(HessianBoundProbe { ratio, argmax_point: points[k].to_f64(), function_index: f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{Ja, Jst};

    #[test]
    fn standard_structure_has_zero_square_and_field() {
        let frame = Frame::new(Arc::new(Jst));
        let u = common::expr::<f64>("x1^3*y2 + exp(x2)").unwrap();
        let p = Point([0.2, 0.1, -0.3, 0.4]);
        assert!(iddbar_squared(&u, &frame, &p, None).unwrap().norm() < 1e-14);
        let t = tj_field(&frame, &p, None).unwrap();
        assert!(t.components.iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn ja_bracket_coefficients_at_origin() {
        let a = common::expr::<f64>("x1").unwrap();
        let c = ja_closed_form(a.as_ref(), &Point::origin());
        assert!((c.alpha - Complex::new(0.0, -0.5)).norm() < 1e-15);
        assert!((c.beta - Complex::new(0.0, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn ja_generic_matches_direct_bracket_computation() {
        let p = Point([0.3, -0.2, 0.4, 0.1]);
        for src in ["x1*x2", "x1*y2", "0.3*x1*x2 + y1*x2^2", "sin(x2)*y1 + x1"] {
            let a = common::expr::<f64>(src).unwrap();
            let frame = Frame::new(Arc::new(Ja::<f64>::parse(src).unwrap()));
            let cf = ja_closed_form(a.as_ref(), &p);
            let fj = frame.at(&p, 2).unwrap();
            let c = fj.structure_functions();
            assert!((c[0][1][1].value() - cf.alpha).norm() < 1e-12, "{src}");
            assert!((c[0][1][3].value() - cf.beta).norm() < 1e-12, "{src}");
            assert!((c[1][3][1].value() - cf.gamma_bracket).norm() < 1e-12, "{src}");
            assert!((c[1][3][3].value() - cf.delta_bracket).norm() < 1e-12, "{src}");
            let t = tj_field(&frame, &p, None).unwrap();
            for m in 0..4 {
                assert!((t.components[m] - cf.tj_bracket[m]).abs() < 1e-10, "{src} {m}");
            }
        }
    }

    #[test]
    fn ja_depending_on_first_variable_only_has_zero_field() {
        let p = Point([0.3, -0.2, 0.4, 0.1]);
        for src in ["x1*y1", "sin(x1) + y1^2", "x1"] {
            let frame = Frame::new(Arc::new(Ja::<f64>::parse(src).unwrap()));
            let t = tj_field(&frame, &p, None).unwrap();
            assert!(t.components.iter().all(|c| c.abs() < 1e-12), "{src} {:?}", t.components);
        }
    }

    #[test]
    fn square_is_real() {
        let frame = Frame::new(Arc::new(Ja::<f64>::parse("x1*x2").unwrap()));
        let u = common::expr::<f64>("x2^2 + x1*y2 + y1^3").unwrap();
        let z = iddbar_squared(&u, &frame, &Point([0.3, -0.2, 0.4, 0.1]), None).unwrap();
        assert!(z.im.abs() < 1e-12, "{z}");
    }
}
