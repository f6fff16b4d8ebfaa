//! Points and uniform coordinate boxes in R^4.

use serde::{Deserialize, Serialize};

use crate::error::{AcxError, Result};
use crate::scalar::Real;

/// A point `(x1, y1, x2, y2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point<R>(pub [R; 4]);

impl<R: Real> Point<R> {
    pub fn new(x1: R, y1: R, x2: R, y2: R) -> Self {
        Point([x1, y1, x2, y2])
    }

    pub fn origin() -> Self {
        Point([R::zero(); 4])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn offset(&self, axis: usize, d: R) -> Self {
        let mut q = *self;
        q.0[axis] = q.0[axis] + d;
        q
    }

    pub fn dist2(&self, other: &Self) -> R {
        (0..4).fold(R::zero(), |s, k| {
            let d = self.0[k] - other.0[k];
            s + d * d
        })
    }

    pub fn dist(&self, other: &Self) -> R {
        self.dist2(other).sqrt()
    }

    pub fn norm2(&self) -> R {
        self.dist2(&Point::origin())
    }

    pub fn to_f64(&self) -> [f64; 4] {
        self.0.map(|c| c.to_f64_lossy())
    }

    pub fn from_f64(p: [f64; 4]) -> Self {
        Point(p.map(R::lit))
    }
}

impl<R> std::ops::Index<usize> for Point<R> {
    type Output = R;
    fn index(&self, i: usize) -> &R {
        &self.0[i]
    }
}

/// A closed coordinate box with a uniform node grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBox<R> {
    pub lower: Point<R>,
    pub upper: Point<R>,
    pub resolution: [usize; 4],
}

impl<R: Real> GridBox<R> {
    pub fn new(lower: Point<R>, upper: Point<R>, resolution: [usize; 4]) -> Result<Self> {
        for k in 0..4 {
            if !(lower[k] < upper[k]) {
                return Err(AcxError::InvalidBox(format!(
                    "lower corner must be below upper corner on axis {k}"
                )));
            }
            if resolution[k] < 3 {
                return Err(AcxError::InvalidBox(format!(
                    "resolution {} on axis {k} is below 3",
                    resolution[k]
                )));
            }
        }
        if !lower.is_finite() || !upper.is_finite() {
            return Err(AcxError::InvalidBox("non-finite corner".into()));
        }
        Ok(GridBox { lower, upper, resolution })
    }

    /// The cube `[-r, r]^4` with `n` nodes per axis.
    pub fn cube(r: R, n: usize) -> Result<Self> {
        GridBox::new(Point([-r; 4]), Point([r; 4]), [n; 4])
    }

    pub fn centered_cube(center: &Point<R>, r: R, n: usize) -> Result<Self> {
        let lo = Point(std::array::from_fn(|k| center[k] - r));
        let hi = Point(std::array::from_fn(|k| center[k] + r));
        GridBox::new(lo, hi, [n; 4])
    }

    pub fn spacing(&self) -> [R; 4] {
        std::array::from_fn(|k| {
            (self.upper[k] - self.lower[k]) / R::from_usize(self.resolution[k] - 1).unwrap()
        })
    }

    /// Largest spacing over the axes.
    pub fn h(&self) -> R {
        self.spacing().iter().fold(R::zero(), |m, &s| m.max(s))
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, idx: [usize; 4]) -> Point<R> {
        let h = self.spacing();
        Point(std::array::from_fn(|k| {
            self.lower[k] + h[k] * R::from_usize(idx[k]).unwrap()
        }))
    }

    pub fn flat(&self, idx: [usize; 4]) -> usize {
        let n = self.resolution;
        ((idx[0] * n[1] + idx[1]) * n[2] + idx[2]) * n[3] + idx[3]
    }

    pub fn unflat(&self, mut f: usize) -> [usize; 4] {
        let n = self.resolution;
        let mut idx = [0; 4];
        for k in (0..4).rev() {
            idx[k] = f % n[k];
            f /= n[k];
        }
        idx
    }

    /// Node indices at least `margin` nodes away from every face.
    pub fn interior_indices(&self, margin: usize) -> Vec<[usize; 4]> {
        let n = self.resolution;
        let mut out = Vec::new();
        if (0..4).any(|k| n[k] <= 2 * margin) {
            return out;
        }
        for a in margin..n[0] - margin {
            for b in margin..n[1] - margin {
                for c in margin..n[2] - margin {
                    for d in margin..n[3] - margin {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
        out
    }

    pub fn nodes(&self) -> Vec<Point<R>> {
        (0..self.len()).map(|f| self.node(self.unflat(f))).collect()
    }

    pub fn interior_nodes(&self, margin: usize) -> Vec<Point<R>> {
        self.interior_indices(margin)
            .into_iter()
            .map(|i| self.node(i))
            .collect()
    }

    pub fn contains(&self, p: &Point<R>) -> bool {
        (0..4).all(|k| p[k] >= self.lower[k] && p[k] <= self.upper[k])
    }

    /// Distance from `p` to the nearest face (negative outside).
    pub fn face_distance(&self, p: &Point<R>) -> R {
        (0..4).fold(R::infinity(), |m, k| {
            m.min(p[k] - self.lower[k]).min(self.upper[k] - p[k])
        })
    }

    /// Same box with a different node count per axis.
    pub fn with_resolution(&self, n: usize) -> Result<Self> {
        GridBox::new(self.lower, self.upper, [n; 4])
    }

    /// Halves the spacing: `n -> 2n - 1` nodes per axis.
    pub fn refined(&self) -> Self {
        GridBox {
            lower: self.lower,
            upper: self.upper,
            resolution: self.resolution.map(|n| 2 * n - 1),
        }
    }

    pub fn cell_volume(&self) -> R {
        self.spacing().iter().fold(R::one(), |v, &s| v * s)
    }

    pub fn volume(&self) -> R {
        (0..4).fold(R::one(), |v, k| v * (self.upper[k] - self.lower[k]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_validation() {
        assert!(GridBox::<f64>::cube(1.0, 2).is_err());
        assert!(GridBox::new(Point([0.0; 4]), Point([1.0, 1.0, 0.0, 1.0]), [5; 4]).is_err());
        let b = GridBox::<f64>::cube(1.0, 5).unwrap();
        assert_eq!(b.h(), 0.5);
        assert_eq!(b.len(), 625);
        for f in [0, 17, 624, 311] {
            assert_eq!(b.flat(b.unflat(f)), f);
        }
        assert_eq!(b.interior_indices(1).len(), 81);
        assert_eq!(b.refined().resolution, [9; 4]);
    }
}
