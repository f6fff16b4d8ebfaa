//! Frames `zeta_k = X_k - i J X_k` of `T^{1,0}` and their dual coframes.
//!
//! Frame index convention used throughout: `0 = zeta_1`, `1 = zeta_2`,
//! `2 = conj(zeta_1)`, `3 = conj(zeta_2)`.

use std::sync::OnceLock;

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{AcxError, Result};
use crate::geometry::{GridBox, Point};
use crate::jet::{CJet, Jet};
use crate::linalg::{det4, invert4, MatJet};
use crate::scalar::Real;
use crate::structure::StructureRef;

/// A complex vector field at a point: coordinate components as jets.
pub type CVec<R> = [CJet<R>; 4];

/// Default lower bound on `|det(X1, JX1, X2, JX2)|`.
pub const FRAME_DET_MIN: f64 = 1e-8;

#[derive(Clone)]
pub struct Frame<R: Real> {
    pub structure: StructureRef<R>,
    pub seeds: [[R; 4]; 2],
    pub threshold: f64,
}

/// Frame and coframe jets at one point.
#[derive(Clone, Debug)]
pub struct FrameJet<R: Real> {
    pub point: Point<R>,
    pub order: u8,
    /// Vector `b` of the frame, coordinate component `m`: `vectors[b][m]`.
    pub vectors: [CVec<R>; 4],
    /// Covector `a`, coordinate component `m`: `coframe[a][m]`.
    pub coframe: [CVec<R>; 4],
    /// `J` entry jets at the same order.
    pub j: MatJet<R>,
    brackets: OnceLock<Box<Brackets<R>>>,
}

/// `c[a][b][e]`: component `e` of `[e_a, e_b]`.
pub type Brackets<R> = [[[CJet<R>; 4]; 4]; 4];

fn cjet<R: Real>(x: R, order: u8) -> CJet<R> {
    Jet::constant(Complex::new(x, R::zero())).truncate(order)
}

impl<R: Real> Frame<R> {
    /// Coordinate seeds `d/dx1`, `d/dx2`.
    pub fn new(structure: StructureRef<R>) -> Self {
        let mut seeds = [[R::zero(); 4]; 2];
        seeds[0][0] = R::one();
        seeds[1][2] = R::one();
        Frame { structure, seeds, threshold: FRAME_DET_MIN }
    }

    pub fn with_seeds(structure: StructureRef<R>, seeds: [[R; 4]; 2]) -> Self {
        Frame { structure, seeds, threshold: FRAME_DET_MIN }
    }

    /// `det(X1, JX1, X2, JX2)` at `p`.
    pub fn seed_determinant(&self, p: &Point<R>) -> R {
        let j = self.structure.matrix(p);
        let jx = |x: &[R; 4]| -> [R; 4] {
            std::array::from_fn(|i| (0..4).fold(R::zero(), |s, k| s + j[i][k] * x[k]))
        };
        let cols = [self.seeds[0], jx(&self.seeds[0]), self.seeds[1], jx(&self.seeds[1])];
        let m: [[R; 4]; 4] = std::array::from_fn(|r| std::array::from_fn(|c| cols[c][r]));
        det4(&m)
    }

    pub fn at(&self, p: &Point<R>, order: u8) -> Result<FrameJet<R>> {
        let d = self.seed_determinant(p).to_f64_lossy();
        if !(d.abs() >= self.threshold) {
            return Err(AcxError::DegenerateFrame {
                point: p.to_f64(),
                det: d.abs(),
                threshold: self.threshold,
            });
        }
        let j = self.structure.jet(p, order);
        let i = crate::scalar::imag_unit::<R>();
        let zeta = |x: &[R; 4]| -> CVec<R> {
            std::array::from_fn(|m| {
                let mut jx = Jet::<R>::zero_with_order(order);
                for k in 0..4 {
                    jx += j[m][k].scale(x[k]);
                }
                cjet(x[m], order) - jx.to_complex().mul_coeff(i)
            })
        };
        let z1 = zeta(&self.seeds[0]);
        let z2 = zeta(&self.seeds[1]);
        let vectors = [z1, z2, z1.map(|c| c.conj()), z2.map(|c| c.conj())];
        let m: MatJet<Complex<R>> = std::array::from_fn(|r| std::array::from_fn(|b| vectors[b][r]));
        let (coframe, _) = invert4(&m).ok_or(AcxError::DegenerateFrame {
            point: p.to_f64(),
            det: 0.0,
            threshold: self.threshold,
        })?;
        Ok(FrameJet { point: *p, order, vectors, coframe, j, brackets: OnceLock::new() })
    }

    /// Worst duality residual and smallest seed determinant over the nodes.
    pub fn validate(&self, grid: &GridBox<R>) -> Result<(f64, f64)> {
        let out: Result<Vec<(f64, f64)>> = (0..grid.len())
            .into_par_iter()
            .map(|f| {
                let p = grid.node(grid.unflat(f));
                let fj = self.at(&p, 0)?;
                Ok((fj.duality_residual(), self.seed_determinant(&p).to_f64_lossy().abs()))
            })
            .collect();
        Ok(out?.into_iter().fold((0.0, f64::INFINITY), |a, b| (a.0.max(b.0), a.1.min(b.1))))
    }
}

impl<R: Real> FrameJet<R> {
    /// Frame components `(zeta_1^*(v), ..., conj(zeta_2)^*(v))` of a vector.
    pub fn components(&self, v: &CVec<R>) -> [CJet<R>; 4] {
        std::array::from_fn(|a| {
            let mut s = self.coframe[a][0] * v[0];
            for m in 1..4 {
                s += self.coframe[a][m] * v[m];
            }
            s
        })
    }

    /// Vector with the given frame components.
    pub fn from_components(&self, c: &[CJet<R>; 4]) -> CVec<R> {
        std::array::from_fn(|m| {
            let mut s = c[0] * self.vectors[0][m];
            for b in 1..4 {
                s += c[b] * self.vectors[b][m];
            }
            s
        })
    }

    /// `sup |zeta_a^*(zeta_b) - delta_ab|` on values.
    pub fn duality_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for b in 0..4 {
            let c = self.components(&self.vectors[b]);
            for a in 0..4 {
                let want = if a == b { 1.0 } else { 0.0 };
                let v = c[a].value();
                let e = (v.re.to_f64_lossy() - want).hypot(v.im.to_f64_lossy());
                worst = worst.max(e);
            }
        }
        worst
    }

    /// Frame components of `[e_a, e_b]`, one order lower than the frame.
    /// Computed once per frame jet.
    pub fn structure_functions(&self) -> &Brackets<R> {
        self.brackets.get_or_init(|| {
            if self.order == 0 {
                panic!("structure functions need frame jets of order >= 1");
            }
            let mut c = Box::new([[[CJet::zero_with_order(self.order - 1); 4]; 4]; 4]);
            for a in 0..4 {
                for b in a + 1..4 {
                    let br = self.components(&lie_bracket(&self.vectors[a], &self.vectors[b]));
                    c[a][b] = br;
                    c[b][a] = br.map(|x| -x);
                }
            }
            c
        })
    }

    /// `J v` for a complex vector.
    pub fn apply_j(&self, v: &CVec<R>) -> CVec<R> {
        std::array::from_fn(|i| {
            let mut s = self.j[i][0].to_complex() * v[0];
            for k in 1..4 {
                s += self.j[i][k].to_complex() * v[k];
            }
            s
        })
    }
}

/// `[Z, W]^m = sum_j (Z^j d_j W^m - W^j d_j Z^m)`.
pub fn lie_bracket<R: Real>(z: &CVec<R>, w: &CVec<R>) -> CVec<R> {
    std::array::from_fn(|m| w[m].directional(z) - z[m].directional(w))
}

/// Derivative of a function along a complex vector.
pub fn derivative<R: Real>(v: &CVec<R>, f: &CJet<R>) -> CJet<R> {
    f.directional(v)
}

/// Complex vector from plain values (order 0).
pub fn cvec_values<R: Real>(v: &CVec<R>) -> [Complex<R>; 4] {
    v.map(|c| c.value())
}

pub fn cvec_zero<R: Real>(order: u8) -> CVec<R> {
    [CJet::zero_with_order(order); 4]
}

pub fn cvec_is_zero<R: Real>(v: &[Complex<R>; 4], tol: f64) -> bool {
    v.iter().all(|c| c.norm().to_f64_lossy() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{Ja, Jst};
    use std::sync::Arc;

    #[test]
    fn standard_frame_and_coframe() {
        let f = Frame::new(Arc::new(Jst));
        let fj = f.at(&Point([0.1, 0.2, 0.3, 0.4]), 1).unwrap();
        let v = cvec_values(&fj.vectors[0]);
        assert_eq!(v[0], Complex::new(1.0, 0.0));
        assert_eq!(v[1], Complex::new(0.0, -1.0));
        // zeta_1^* = (dx1 + i dy1) / 2
        let c = cvec_values(&fj.coframe[0]);
        assert!((c[0] - Complex::new(0.5, 0.0)).norm() < 1e-15);
        assert!((c[1] - Complex::new(0.0, 0.5)).norm() < 1e-15);
        assert!(fj.duality_residual() < 1e-15);
    }

    #[test]
    fn ja_frame_duality_and_commuting_first_pair() {
        let f = Frame::new(Arc::new(Ja::<f64>::parse("x1*x2 + 0.3*y1").unwrap()));
        let fj = f.at(&Point([0.4, -0.3, 0.2, 0.7]), 2).unwrap();
        assert!(fj.duality_residual() < 1e-12);
        let c = fj.structure_functions();
        for e in 0..4 {
            assert!(c[0][2][e].value().norm() < 1e-13);
        }
    }

    #[test]
    fn dependent_seeds_rejected() {
        let f = Frame::with_seeds(Arc::new(Jst), [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);
        assert!(matches!(f.at(&Point::origin(), 0), Err(AcxError::DegenerateFrame { .. })));
    }
}
