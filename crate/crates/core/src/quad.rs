//! Quadrature rules on boxes, balls and intervals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{GridBox, Point};

/// Surface area of the unit sphere in R^4.
pub const S3_AREA: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;

/// Midpoints of the cells of a node grid, with the common cell volume.
pub fn cell_centers(grid: &GridBox<f64>) -> (Vec<Point<f64>>, f64) {
    let h = grid.spacing();
    let n = grid.resolution.map(|r| r - 1);
    let mut out = Vec::with_capacity(n.iter().product());
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                for l in 0..n[3] {
                    let idx = [i, j, k, l];
                    out.push(Point(std::array::from_fn(|m| {
                        grid.lower[m] + (idx[m] as f64 + 0.5) * h[m]
                    })));
                }
            }
        }
    }
    (out, grid.cell_volume())
}

/// Seeded directions on the unit sphere of R^4, in antipodal pairs.
pub fn sphere_directions(count: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count + 1);
    while out.len() < count {
        let g: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-12 {
            continue;
        }
        let d = g.map(|x| x / n);
        out.push(d);
        out.push(d.map(|x| -x));
    }
    out.truncate(count);
    out
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol || diff.abs() <= 1e-14 * (left + right).abs() {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (t * pn - pm) / (t * t - 1.0);
            let dt = pn / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        x[i] = t;
        w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_handles_a_kink() {
        let f = |r: f64| (r - 0.3).abs();
        let v = adaptive_simpson(&f, 0.0, 1.0, 1e-12, 50);
        assert!((v - (0.045 + 0.245)).abs() < 1e-10);
    }

    #[test]
    fn directions_are_unit_and_paired() {
        let d = sphere_directions(10, 7);
        assert_eq!(d.len(), 10);
        for p in d.chunks(2) {
            assert!((p[0].iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
            assert_eq!(p[0].map(|x| -x), p[1]);
        }
    }

    #[test]
    fn cell_centers_cover_the_box() {
        let g = GridBox::cube(1.0, 5).unwrap();
        let (c, v) = cell_centers(&g);
        assert_eq!(c.len(), 256);
        assert!((v * c.len() as f64 - 16.0).abs() < 1e-12);
    }
}
