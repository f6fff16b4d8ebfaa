//! Small dense linear algebra over jets and plain scalars.

use num_complex::Complex;
use num_traits::Zero;

use crate::jet::Jet;
use crate::scalar::{Coeff, Real};

pub type MatJet<T> = [[Jet<T>; 4]; 4];

/// Inverse and determinant of a 4x4 jet matrix by Gauss-Jordan elimination
/// with partial pivoting on the values. `None` if a pivot vanishes.
pub fn invert4<T: Coeff>(m: &MatJet<T>) -> Option<(MatJet<T>, Jet<T>)> {
    let order = m.iter().flatten().map(|j| j.order).min().unwrap_or(0);
    let mut a = *m;
    let mut inv: MatJet<T> = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            Jet::constant(if i == j { T::one() } else { T::zero() }).truncate(order)
        })
    });
    let mut det = Jet::constant(T::one()).truncate(order);
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&r, &s| {
                a[r][col].value().modulus().partial_cmp(&a[s][col].value().modulus()).unwrap()
            })
            .unwrap();
        if a[piv][col].value().modulus() == T::Re::zero() {
            return None;
        }
        if piv != col {
            a.swap(piv, col);
            inv.swap(piv, col);
            det = -det;
        }
        let p = a[col][col];
        det = det * p;
        let pr = p.recip();
        for j in 0..4 {
            a[col][j] = a[col][j] * pr;
            inv[col][j] = inv[col][j] * pr;
        }
        for r in 0..4 {
            if r == col {
                continue;
            }
            let f = a[r][col];
            for j in 0..4 {
                a[r][j] = a[r][j] - f * a[col][j];
                inv[r][j] = inv[r][j] - f * inv[col][j];
            }
        }
    }
    Some((inv, det))
}

pub fn mat_mul<T: Coeff>(a: &MatJet<T>, b: &MatJet<T>) -> MatJet<T> {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let mut s = a[i][0] * b[0][j];
            for k in 1..4 {
                s += a[i][k] * b[k][j];
            }
            s
        })
    })
}

pub fn mat_vec<T: Coeff>(a: &MatJet<T>, v: &[Jet<T>; 4]) -> [Jet<T>; 4] {
    std::array::from_fn(|i| {
        let mut s = a[i][0] * v[0];
        for k in 1..4 {
            s += a[i][k] * v[k];
        }
        s
    })
}

pub fn values<T: Coeff>(m: &MatJet<T>) -> [[T; 4]; 4] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[i][j].value()))
}

/// Determinant of a plain 4x4 matrix (real or complex).
pub fn det4<T: Coeff>(m: &[[T; 4]; 4]) -> T {
    let jm: MatJet<T> = std::array::from_fn(|i| {
        std::array::from_fn(|j| Jet::constant(m[i][j]).truncate(0))
    });
    match invert4(&jm) {
        Some((_, d)) => d.value(),
        None => T::zero(),
    }
}

/// Determinant of a small square matrix given row-major (Laplace expansion;
/// used for at most 4x4).
pub fn det_small<T: Coeff>(m: &[Vec<T>]) -> T {
    let n = m.len();
    match n {
        0 => T::one(),
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => {
            let mut s = T::zero();
            for j in 0..n {
                let minor: Vec<Vec<T>> = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(k, _)| *k != j)
                            .map(|(_, v)| *v)
                            .collect()
                    })
                    .collect();
                let t = m[0][j] * det_small(&minor);
                s = if j % 2 == 0 { s + t } else { s - t };
            }
            s
        }
    }
}

/// Eigenvalues `(min, max)` of a 2x2 Hermitian matrix (the anti-Hermitian
/// part, if any, is discarded).
pub fn herm2_eigs<R: Real>(h: &[[Complex<R>; 2]; 2]) -> (R, R) {
    let two = R::lit(2.0);
    let a = h[0][0].re;
    let d = h[1][1].re;
    let b = (h[0][1] + h[1][0].conj()) / two;
    let mean = (a + d) / two;
    let rad = (((a - d) / two).powi(2) + b.norm_sqr()).sqrt();
    (mean - rad, mean + rad)
}

/// Determinant of a 2x2 complex matrix.
pub fn det2<R: Real>(h: &[[Complex<R>; 2]; 2]) -> Complex<R> {
    h[0][0] * h[1][1] - h[0][1] * h[1][0]
}

/// Identity matrix of jets.
pub fn identity<T: Coeff>() -> MatJet<T> {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| Jet::constant(if i == j { T::one() } else { T::zero() }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::coordinate_jets;

    #[test]
    fn jet_inverse_is_inverse() {
        let x = coordinate_jets(&[0.3, -0.2, 0.1, 0.4], 2);
        let m: MatJet<f64> = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let base = if i == j { Jet::constant(2.0) } else { Jet::constant(0.0) };
                base + x[(i + j) % 4] * x[j].sin().scale(0.3)
            })
        });
        let (inv, det) = invert4(&m).unwrap();
        let prod = mat_mul(&m, &inv);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                let mut e = prod[i][j];
                e.c[0] -= want;
                assert!(e.sup_coeff() < 1e-13, "{i}{j}");
            }
        }
        let d = det4(&values(&m));
        assert!((d - det.value()).abs() < 1e-13);
        let rows: Vec<Vec<f64>> = values(&m).iter().map(|r| r.to_vec()).collect();
        assert!((det_small(&rows) - d).abs() < 1e-12);
    }

    #[test]
    fn hermitian_eigs() {
        let h = [
            [Complex::new(3.0, 0.0), Complex::new(0.0, 1.0)],
            [Complex::new(0.0, -1.0), Complex::new(3.0, 0.0)],
        ];
        let (lo, hi): (f64, f64) = herm2_eigs(&h);
        assert!((lo - 2.0).abs() < 1e-14 && (hi - 4.0).abs() < 1e-14);
    }
}
