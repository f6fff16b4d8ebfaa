//! Almost complex structures `J` on a coordinate box.
//!
//! Matrices act on column vectors: `(J v)^i = sum_j J[i][j] v^j`, with the
//! coordinate order `(x1, y1, x2, y2)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AcxError, Result};
use crate::field::{fd_jets, ExprField, FieldRef};
use crate::geometry::{GridBox, Point};
use crate::jet::{coordinate_jets, Jet, NCOEF};
use crate::linalg::{invert4, mat_mul, values, MatJet};
use crate::scalar::Real;

/// Default tolerance on `|J^2 + I|` for analytic structures.
pub const STRUCTURE_TOL: f64 = 1e-9;

pub trait AlmostComplexStructure<R: Real>: Send + Sync {
    /// Entry jets of `J(p)` up to `order`.
    fn jet(&self, p: &Point<R>, order: u8) -> MatJet<R>;

    fn matrix(&self, p: &Point<R>) -> [[R; 4]; 4] {
        values(&self.jet(p, 0))
    }

    fn label(&self) -> String;

    /// `true` when the entry jets are exact rather than finite differences.
    fn analytic(&self) -> bool {
        true
    }
}

pub type StructureRef<R> = Arc<dyn AlmostComplexStructure<R>>;

fn const_matrix<R: Real>(m: [[f64; 4]; 4], order: u8) -> MatJet<R> {
    std::array::from_fn(|i| std::array::from_fn(|j| Jet::constant(R::lit(m[i][j])).truncate(order)))
}

const JST: [[f64; 4]; 4] = [
    [0.0, -1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, -1.0],
    [0.0, 0.0, 1.0, 0.0],
];

/// The standard structure: `J d/dx_k = d/dy_k`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Jst;

impl<R: Real> AlmostComplexStructure<R> for Jst {
    fn jet(&self, _p: &Point<R>, order: u8) -> MatJet<R> {
        const_matrix(JST, order)
    }
    fn label(&self) -> String {
        "jst".into()
    }
}

/// The family
/// ```text
/// [  0   1    0   0 ]
/// [ -1   0    0   0 ]
/// [  0   0    a   1 ]
/// [  0   0 -1-a^2 -a ]
/// ```
/// for a smooth real function `a`.
#[derive(Clone)]
pub struct Ja<R: Real> {
    pub a: FieldRef<R>,
    pub source: String,
}

impl<R: Real> Ja<R> {
    pub fn new(a: FieldRef<R>, source: impl Into<String>) -> Self {
        Ja { a, source: source.into() }
    }

    pub fn parse(src: &str) -> Result<Self> {
        Ok(Ja::new(Arc::new(ExprField::parse(src)?), src))
    }
}

impl<R: Real> AlmostComplexStructure<R> for Ja<R> {
    fn jet(&self, p: &Point<R>, order: u8) -> MatJet<R> {
        let a = self.a.jet(p, order);
        let mut m = const_matrix::<R>([[0.0; 4]; 4], order);
        let one = Jet::constant(R::one()).truncate(order);
        m[0][1] = one;
        m[1][0] = -one;
        m[2][2] = a;
        m[2][3] = one;
        m[3][2] = -one - a * a;
        m[3][3] = -a;
        m
    }
    fn label(&self) -> String {
        format!("ja:{}", self.source)
    }
}

/// A structure given by a closure over the coordinate jets; no validity is
/// assumed, so it should go through [`make_structure`].
pub struct MatrixFn<R, F> {
    f: F,
    name: String,
    _r: std::marker::PhantomData<fn() -> R>,
}

impl<R: Real, F> MatrixFn<R, F>
where
    F: Fn(&[Jet<R>; 4]) -> MatJet<R> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        MatrixFn { f, name: name.into(), _r: std::marker::PhantomData }
    }
}

impl<R: Real, F> AlmostComplexStructure<R> for MatrixFn<R, F>
where
    F: Fn(&[Jet<R>; 4]) -> MatJet<R> + Send + Sync,
{
    fn jet(&self, p: &Point<R>, order: u8) -> MatJet<R> {
        let m = (self.f)(&coordinate_jets(&p.0, order));
        m.map(|row| row.map(|e| e.truncate(order)))
    }
    fn label(&self) -> String {
        self.name.clone()
    }
}

/// Matrix field whose entries are polynomials of degree at most two, stored
/// with the same coefficient layout as a jet at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyMatrix {
    pub coeffs: Vec<[f64; NCOEF]>,
}

impl PolyMatrix {
    pub fn constant(m: [[f64; 4]; 4]) -> Self {
        let coeffs = (0..16)
            .map(|k| {
                let mut c = [0.0; NCOEF];
                c[0] = m[k / 4][k % 4];
                c
            })
            .collect();
        PolyMatrix { coeffs }
    }

    /// `I + amplitude * P` with the coefficients of `P` uniform in `[-1, 1]`.
    pub fn random_perturbation(seed: u64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..16)
            .map(|k| {
                let mut c: [f64; NCOEF] = std::array::from_fn(|_| amplitude * rng.gen_range(-1.0..=1.0));
                if k % 5 == 0 {
                    c[0] += 1.0;
                }
                c
            })
            .collect();
        PolyMatrix { coeffs }
    }

    pub fn jet<R: Real>(&self, p: &Point<R>, order: u8) -> MatJet<R> {
        let x = coordinate_jets(&p.0, order);
        let eval = |c: &[f64; NCOEF]| {
            let mut s = Jet::constant(R::lit(c[0])).truncate(order);
            for i in 0..4 {
                s += x[i].scale(R::lit(c[1 + i]));
                for j in i..4 {
                    s += (x[i] * x[j]).scale(R::lit(c[crate::jet::pair_index(i, j)]));
                }
            }
            s
        };
        std::array::from_fn(|i| std::array::from_fn(|j| eval(&self.coeffs[4 * i + j])))
    }
}

/// `J = S J_st S^{-1}` for an invertible matrix field `S`; satisfies
/// `J^2 = -I` up to roundoff.
#[derive(Clone, Debug)]
pub struct Similarity {
    pub s: PolyMatrix,
    pub name: String,
}

/// Rejection threshold on `|det S|`.
pub const SIMILARITY_DET_MIN: f64 = 1e-6;

impl<R: Real> AlmostComplexStructure<R> for Similarity {
    fn jet(&self, p: &Point<R>, order: u8) -> MatJet<R> {
        let s = self.s.jet(p, order);
        let (inv, _) = invert4(&s).expect("singular similarity matrix");
        mat_mul(&mat_mul(&s, &const_matrix(JST, order)), &inv)
    }
    fn label(&self) -> String {
        self.name.clone()
    }
}

/// Builds the similarity structure after checking `|det S|` on every node.
pub fn similarity_structure<R: Real>(
    s: PolyMatrix,
    name: impl Into<String>,
    grid: &GridBox<R>,
) -> Result<StructureRef<R>> {
    let worst = (0..grid.len())
        .into_par_iter()
        .map(|f| {
            let p = grid.node(grid.unflat(f));
            let d = crate::linalg::det4(&values(&s.jet(&p, 0))).to_f64_lossy().abs();
            (d, p.to_f64())
        })
        .reduce(|| (f64::INFINITY, [0.0; 4]), |a, b| if b.0 < a.0 { b } else { a });
    if !(worst.0 >= SIMILARITY_DET_MIN) {
        return Err(AcxError::SingularSimilarity { det: worst.0, point: worst.1 });
    }
    Ok(Arc::new(Similarity { s, name: name.into() }))
}

/// Finite-difference jets of another structure with step `h` (grid backing).
pub struct FdStructure<R: Real> {
    pub inner: StructureRef<R>,
    pub h: R,
}

impl<R: Real> AlmostComplexStructure<R> for FdStructure<R> {
    fn jet(&self, p: &Point<R>, order: u8) -> MatJet<R> {
        let flat: [Jet<R>; 16] = fd_jets(
            |q| {
                let m = self.inner.matrix(q);
                std::array::from_fn(|k| m[k / 4][k % 4])
            },
            p,
            self.h,
            order,
        );
        std::array::from_fn(|i| std::array::from_fn(|j| flat[4 * i + j]))
    }
    fn matrix(&self, p: &Point<R>) -> [[R; 4]; 4] {
        self.inner.matrix(p)
    }
    fn label(&self) -> String {
        format!("fd({})", self.inner.label())
    }
    fn analytic(&self) -> bool {
        false
    }
}

/// `max_ij |(J^2 + I)_ij|` at a point.
pub fn square_residual<R: Real>(j: &[[R; 4]; 4]) -> R {
    let mut worst = R::zero();
    for r in 0..4 {
        for c in 0..4 {
            let mut s = if r == c { R::one() } else { R::zero() };
            for k in 0..4 {
                s = s + j[r][k] * j[k][c];
            }
            worst = worst.max(s.abs());
        }
    }
    worst
}

/// Largest `|J^2 + I|` over the grid nodes and where it occurs.
pub fn structure_residual<R: Real>(j: &dyn AlmostComplexStructure<R>, grid: &GridBox<R>) -> (f64, [f64; 4]) {
    (0..grid.len())
        .into_par_iter()
        .map(|f| {
            let p = grid.node(grid.unflat(f));
            let r = square_residual(&j.matrix(&p)).to_f64_lossy();
            (if r.is_nan() { f64::INFINITY } else { r }, p.to_f64())
        })
        .reduce(|| (0.0, [0.0; 4]), |a, b| if b.0 > a.0 { b } else { a })
}

/// Accepts a matrix field as an almost complex structure if `J^2 = -I`
/// holds within `tol` at every node of `grid`.
pub fn make_structure<R: Real>(
    provider: StructureRef<R>,
    grid: &GridBox<R>,
    tol: f64,
) -> Result<StructureRef<R>> {
    let (residual, point) = structure_residual(provider.as_ref(), grid);
    if residual > tol {
        return Err(AcxError::NotAlmostComplex { residual, point, tol });
    }
    Ok(provider)
}

/// Textual structure selector: `jst`, `ja:<expr>` or `similarity:<seed>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StructureSpec {
    Jst,
    Ja(String),
    Similarity(u64),
}

impl FromStr for StructureSpec {
    type Err = AcxError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "jst" {
            return Ok(StructureSpec::Jst);
        }
        if let Some(e) = s.strip_prefix("ja:") {
            crate::expr::Expr::parse(e)?;
            return Ok(StructureSpec::Ja(e.to_string()));
        }
        if let Some(seed) = s.strip_prefix("similarity:") {
            let seed = seed
                .trim()
                .parse()
                .map_err(|_| AcxError::Config(format!("bad similarity seed `{seed}`")))?;
            return Ok(StructureSpec::Similarity(seed));
        }
        Err(AcxError::Config(format!(
            "unknown structure `{s}` (expected jst, ja:<expr> or similarity:<seed>)"
        )))
    }
}

impl fmt::Display for StructureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureSpec::Jst => write!(f, "jst"),
            StructureSpec::Ja(e) => write!(f, "ja:{e}"),
            StructureSpec::Similarity(s) => write!(f, "similarity:{s}"),
        }
    }
}

/// Amplitude of the random polynomial perturbation behind `similarity:<seed>`.
pub const SIMILARITY_AMPLITUDE: f64 = 0.1;

impl StructureSpec {
    /// Builds and validates the structure on `grid`.
    pub fn build<R: Real>(&self, grid: &GridBox<R>) -> Result<StructureRef<R>> {
        let j: StructureRef<R> = match self {
            StructureSpec::Jst => Arc::new(Jst),
            StructureSpec::Ja(e) => Arc::new(Ja::parse(e)?),
            StructureSpec::Similarity(seed) => similarity_structure(
                PolyMatrix::random_perturbation(*seed, SIMILARITY_AMPLITUDE),
                self.to_string(),
                grid,
            )?,
        };
        let tol = STRUCTURE_TOL.max(100.0 * R::epsilon().to_f64_lossy());
        make_structure(j, grid, tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridBox<f64> {
        GridBox::cube(1.0, 5).unwrap()
    }

    #[test]
    fn standard_and_ja_accepted() {
        assert!(make_structure(Arc::new(Jst), &grid(), STRUCTURE_TOL).is_ok());
        let ja: StructureRef<f64> = Arc::new(Ja::parse("x1*x2").unwrap());
        assert!(make_structure(ja.clone(), &grid(), STRUCTURE_TOL).is_ok());
        let m = ja.matrix(&Point([0.5, 0.0, 0.5, 0.0]));
        assert_eq!(m[2][2], 0.25);
        assert_eq!(m[3][2], -1.0625);
        assert_eq!(m[0][1], 1.0);
    }

    #[test]
    fn shifted_standard_rejected_with_point() {
        let bad: StructureRef<f64> = Arc::new(MatrixFn::new("jst+0.5I", |_x: &[Jet<f64>; 4]| {
            let mut m = const_matrix::<f64>(JST, 2);
            for k in 0..4 {
                m[k][k] = Jet::constant(0.5);
            }
            m
        }));
        match make_structure(bad, &grid(), STRUCTURE_TOL) {
            Err(AcxError::NotAlmostComplex { residual, .. }) => assert!(residual > 0.2),
            other => panic!("expected rejection, got {:?}", other.map(|j| j.label())),
        }
    }

    #[test]
    fn similarity_squares_to_minus_identity() {
        let g = grid();
        let j = similarity_structure(PolyMatrix::random_perturbation(42, 0.1), "s42", &g).unwrap();
        let (r, _) = structure_residual(j.as_ref(), &g);
        assert!(r < 1e-13, "{r}");
        let id = similarity_structure::<f64>(PolyMatrix::constant(crate::linalg::values(&crate::linalg::identity())), "id", &g)
            .unwrap();
        assert_eq!(id.matrix(&Point([0.2, 0.1, 0.0, 0.3])), JST);
    }

    #[test]
    fn singular_similarity_rejected() {
        let mut s = PolyMatrix::constant(crate::linalg::values(&crate::linalg::identity::<f64>()));
        // S = diag(x1, 1, 1, 1) degenerates on the hyperplane x1 = 0
        s.coeffs[0] = [0.0; NCOEF];
        s.coeffs[0][1] = 1.0;
        assert!(matches!(
            similarity_structure::<f64>(s, "line", &grid()),
            Err(AcxError::SingularSimilarity { .. })
        ));
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("jst".parse::<StructureSpec>().unwrap(), StructureSpec::Jst);
        assert_eq!(
            "ja:x1*x2".parse::<StructureSpec>().unwrap(),
            StructureSpec::Ja("x1*x2".into())
        );
        assert!("foo".parse::<StructureSpec>().is_err());
        assert!("ja:x1*".parse::<StructureSpec>().is_err());
    }
}
