//! `(p,q)`-forms in the frame basis.
//!
//! A form is stored by its components on increasing index sets `K` of the
//! frame `(zeta_1, zeta_2, conj zeta_1, conj zeta_2)`, encoded as bit masks:
//! bit `a` of `K` set means covector `a` appears. The component `c[K]` is the
//! value `omega(e_{k_1}, ..., e_{k_m})` for `k_1 < ... < k_m`, so
//! `omega = sum_K c[K] e^{k_1} ^ ... ^ e^{k_m}` with the determinant
//! convention `(a ^ b)(X, Y) = a(X) b(Y) - a(Y) b(X)`.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::{CVec, FrameJet};
use crate::geometry::Point;
use crate::jet::{coordinate_jets, CJet, Jet};
use crate::scalar::Real;

pub const NMASK: usize = 16;

#[inline]
pub fn holo_count(mask: usize) -> i32 {
    (mask & 0b0011).count_ones() as i32
}

#[inline]
pub fn anti_count(mask: usize) -> i32 {
    (mask & 0b1100).count_ones() as i32
}

/// Masks carrying bidegree `(p, q)`; empty when out of range.
pub fn masks(p: i32, q: i32) -> Vec<usize> {
    (0..NMASK).filter(|&m| holo_count(m) == p && anti_count(m) == q).collect()
}

pub fn mask_indices(mask: usize) -> Vec<usize> {
    (0..4).filter(|a| mask & (1 << a) != 0).collect()
}

/// `(-1)^(number of inversions)` of a sequence of distinct indices.
pub fn perm_sign(seq: &[usize]) -> i32 {
    let mut s = 1;
    for i in 0..seq.len() {
        for j in i + 1..seq.len() {
            if seq[i] > seq[j] {
                s = -s;
            }
        }
    }
    s
}

#[derive(Clone, Debug)]
pub struct PQForm<R: Real> {
    pub p: i32,
    pub q: i32,
    pub order: u8,
    pub c: [CJet<R>; NMASK],
}

impl<R: Real> PQForm<R> {
    pub fn zero(p: i32, q: i32, order: u8) -> Self {
        PQForm { p, q, order, c: [CJet::zero_with_order(order); NMASK] }
    }

    /// Function as a `(0,0)`-form.
    pub fn function(f: CJet<R>) -> Self {
        let mut w = PQForm::zero(0, 0, f.order);
        w.c[0] = f;
        w
    }

    pub fn degree(&self) -> i32 {
        self.p + self.q
    }

    pub fn in_range(&self) -> bool {
        (0..=2).contains(&self.p) && (0..=2).contains(&self.q)
    }

    pub fn masks(&self) -> Vec<usize> {
        masks(self.p, self.q)
    }

    /// Value on frame vectors given by (possibly unsorted) indices.
    pub fn on_frame(&self, idx: &[usize]) -> CJet<R> {
        let mut mask = 0;
        for &a in idx {
            if mask & (1 << a) != 0 {
                return CJet::zero_with_order(self.order);
            }
            mask |= 1 << a;
        }
        if holo_count(mask) != self.p || anti_count(mask) != self.q {
            return CJet::zero_with_order(self.order);
        }
        let v = self.c[mask];
        if perm_sign(idx) < 0 {
            -v
        } else {
            v
        }
    }

    /// `omega(v_1, ..., v_m)` on arbitrary complex vectors.
    pub fn eval(&self, fj: &FrameJet<R>, vs: &[CVec<R>]) -> CJet<R> {
        assert_eq!(vs.len() as i32, self.degree());
        let comps: Vec<[CJet<R>; 4]> = vs.iter().map(|v| fj.components(v)).collect();
        let mut acc = CJet::zero_with_order(self.order.min(fj.order));
        for m in self.masks() {
            let idx = mask_indices(m);
            let rows: Vec<Vec<CJet<R>>> =
                idx.iter().map(|&a| comps.iter().map(|c| c[a]).collect()).collect();
            acc += self.c[m] * det_jets(&rows);
        }
        acc
    }

    pub fn map(&self, f: impl Fn(CJet<R>) -> CJet<R>) -> Self {
        let mut out = self.clone();
        for m in self.masks() {
            out.c[m] = f(self.c[m]);
        }
        out.order = self.masks().iter().map(|&m| out.c[m].order).min().unwrap_or(out.order);
        out
    }

    pub fn truncate(&self, order: u8) -> Self {
        let mut out = self.map(|c| c.truncate(order));
        out.order = out.order.min(order);
        out
    }

    pub fn scale(&self, s: Complex<R>) -> Self {
        self.map(|c| c.mul_coeff(s))
    }

    /// Sum of two forms of the same bidegree.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.p, self.q), (other.p, other.q), "bidegree mismatch");
        let order = self.order.min(other.order);
        let mut out = PQForm::zero(self.p, self.q, order);
        for m in self.masks() {
            out.c[m] = self.c[m] + other.c[m];
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(Complex::new(-R::one(), R::zero())))
    }

    /// Complex conjugate: swaps `zeta_a^*` with `conj(zeta_a)^*`.
    pub fn conj(&self) -> Self {
        let mut out = PQForm::zero(self.q, self.p, self.order);
        for m in self.masks() {
            let swapped: Vec<usize> = mask_indices(m).iter().map(|&a| (a + 2) % 4).collect();
            let target = swapped.iter().fold(0, |acc, a| acc | (1 << a));
            let v = self.c[m].conj();
            out.c[target] = if perm_sign(&swapped) < 0 { -v } else { v };
        }
        out
    }

    /// Largest coefficient modulus (values only).
    pub fn sup_value(&self) -> f64 {
        self.masks()
            .iter()
            .map(|&m| self.c[m].value().norm().to_f64_lossy())
            .fold(0.0, f64::max)
    }

    /// Coefficient values in mask order, as `(re, im)` pairs.
    pub fn values(&self) -> Vec<(usize, Complex<R>)> {
        self.masks().into_iter().map(|m| (m, self.c[m].value())).collect()
    }
}

/// Exterior product.
pub fn wedge<R: Real>(a: &PQForm<R>, b: &PQForm<R>) -> PQForm<R> {
    let (p, q) = (a.p + b.p, a.q + b.q);
    let order = a.order.min(b.order);
    let mut out = PQForm::zero(p, q, order);
    for k in masks(p, q) {
        for ma in a.masks() {
            if ma & !k != 0 {
                continue;
            }
            let mb = k & !ma;
            if holo_count(mb) != b.p || anti_count(mb) != b.q {
                continue;
            }
            let mut seq = mask_indices(ma);
            seq.extend(mask_indices(mb));
            let t = a.c[ma] * b.c[mb];
            out.c[k] = if perm_sign(&seq) < 0 { out.c[k] - t } else { out.c[k] + t };
        }
    }
    out
}

fn det_jets<R: Real>(rows: &[Vec<CJet<R>>]) -> CJet<R> {
    // Laplace expansion; sizes here are at most 4
    let n = rows.len();
    match n {
        0 => Jet::constant(Complex::new(R::one(), R::zero())),
        1 => rows[0][0],
        _ => {
            let mut s: Option<CJet<R>> = None;
            for j in 0..n {
                let minor: Vec<Vec<CJet<R>>> = rows[1..]
                    .iter()
                    .map(|r| r.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| *v).collect())
                    .collect();
                let t = rows[0][j] * det_jets(&minor);
                s = Some(match s {
                    None => t,
                    Some(acc) if j % 2 == 0 => acc + t,
                    Some(acc) => acc - t,
                });
            }
            s.unwrap()
        }
    }
}

/// Smooth random `(p,q)`-form: each coefficient is a sum of three complex
/// plane waves `A sin(w . x + phi)` with seeded parameters.
#[derive(Clone, Debug)]
pub struct RandomForm {
    pub p: i32,
    pub q: i32,
    waves: Vec<[(f64, f64, [f64; 4], f64); 3]>,
}

impl RandomForm {
    pub fn new(p: i32, q: i32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..NMASK)
            .map(|_| {
                std::array::from_fn(|_| {
                    (
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        std::array::from_fn(|_| rng.gen_range(-1.5..1.5)),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
            })
            .collect();
        RandomForm { p, q, waves }
    }

    pub fn at<R: Real>(&self, p: &Point<R>, order: u8) -> PQForm<R> {
        let x = coordinate_jets(&p.0, order);
        let mut out = PQForm::zero(self.p, self.q, order);
        for m in masks(self.p, self.q) {
            let mut acc = CJet::<R>::zero_with_order(order);
            for &(re, im, w, phi) in &self.waves[m] {
                let mut arg = Jet::constant(R::lit(phi)).truncate(order);
                for k in 0..4 {
                    arg += x[k].scale(R::lit(w[k]));
                }
                acc += arg.sin().to_complex().mul_coeff(Complex::new(R::lit(re), R::lit(im)));
            }
            out.c[m] = acc;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cst(re: f64, im: f64) -> CJet<f64> {
        Jet::constant(Complex::new(re, im))
    }

    #[test]
    fn wedge_of_one_forms_is_antisymmetric() {
        let mut a = PQForm::<f64>::zero(1, 0, 2);
        a.c[0b0001] = cst(1.0, 0.0);
        a.c[0b0010] = cst(0.5, 2.0);
        let mut b = PQForm::<f64>::zero(0, 1, 2);
        b.c[0b0100] = cst(-1.0, 1.0);
        b.c[0b1000] = cst(3.0, 0.0);
        let ab = wedge(&a, &b);
        let ba = wedge(&b, &a);
        for m in masks(1, 1) {
            assert!((ab.c[m].value() + ba.c[m].value()).norm() < 1e-15);
        }
        // (zeta_1^* ^ conj(zeta_2)^*) coefficient = a_1 b_2
        assert_eq!(ab.c[0b1001].value(), Complex::new(3.0, 0.0));
    }

    #[test]
    fn conjugation_is_an_involution_and_swaps_bidegree() {
        let w = RandomForm::new(1, 2, 3).at::<f64>(&Point([0.1, 0.2, 0.3, 0.4]), 1);
        let c = w.conj();
        assert_eq!((c.p, c.q), (2, 1));
        let cc = c.conj();
        for m in w.masks() {
            assert!((cc.c[m].value() - w.c[m].value()).norm() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_bidegree_has_no_components() {
        assert!(masks(0, -1).is_empty());
        assert!(masks(3, 0).is_empty());
        assert_eq!(masks(1, 1).len(), 4);
        assert_eq!(masks(2, 2), vec![15]);
    }
}
