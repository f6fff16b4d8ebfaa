//! Regularized maximum, `max_s` gluing and Richberg-type approximation of
//! continuous strictly psh functions by smooth ones. Runs on `f64`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AcxError, Result};
use crate::field::{FieldRef, GridField, Regularity, ScalarField};
use crate::frame::Frame;
use crate::geometry::{GridBox, Point};
use crate::hessian::psh_check;
use crate::jet::{coordinate_jets, Jet};
use crate::quad::{gauss_legendre, sphere_directions};

pub use crate::hessian::strictness_margin;

/// The `C^{1,1}` profile `g(t) = (t^2 + 1) / 2` on `|t| <= 1`, `|t|`
/// outside, with `g'` and `g''`.
pub fn profile(t: f64) -> (f64, f64, f64) {
    if t.abs() <= 1.0 {
        (0.5 * (t * t + 1.0), t, 1.0)
    } else {
        (t.abs(), t.signum(), 0.0)
    }
}

/// `m_s(x, y) = (x + y) / 2 + (s / 2) g((x - y) / s)`.
///
/// Convex, nondecreasing in both arguments, `max <= m_s <= max + s / 4`, and
/// `m_s = max` once `|x - y| >= s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizedMax {
    pub s: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MaxPropertyReport {
    pub samples: usize,
    /// Largest `max - m_s` (should be `<= 0`).
    pub below_max: f64,
    /// Largest `m_s - max - s`.
    pub above_band: f64,
    /// Largest `|m_s - max|` over pairs with `|x - y| >= s`.
    pub off_diagonal: f64,
    /// Largest midpoint-convexity defect.
    pub convexity: f64,
}

impl MaxPropertyReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.below_max <= tol && self.above_band <= tol && self.off_diagonal <= tol && self.convexity <= tol
    }
}

impl RegularizedMax {
    pub fn new(s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(AcxError::Config(format!("smoothing width must be positive, got {s}")));
        }
        Ok(RegularizedMax { s })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        if (x - y).abs() >= self.s {
            return x.max(y);
        }
        let (g, _, _) = profile((x - y) / self.s);
        0.5 * (x + y) + 0.5 * self.s * g
    }

    pub fn jet(&self, a: &Jet<f64>, b: &Jet<f64>) -> Jet<f64> {
        let d = a.value() - b.value();
        if d.abs() >= self.s {
            return if d > 0.0 { *a } else { *b };
        }
        let t = (*a - *b).scale(1.0 / self.s);
        let (g0, g1, g2) = profile(t.value());
        (*a + *b).scale(0.5) + t.compose(g0, g1, g2).scale(0.5 * self.s)
    }

    /// Checks the defining properties on seeded pairs around the diagonal.
    pub fn check(&self, samples: usize, seed: u64) -> MaxPropertyReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.s;
        let mut r = MaxPropertyReport {
            samples,
            below_max: f64::NEG_INFINITY,
            above_band: f64::NEG_INFINITY,
            off_diagonal: 0.0,
            convexity: f64::NEG_INFINITY,
        };
        for _ in 0..samples {
            let x = rng.gen_range(-1.0..1.0);
            let y = x + rng.gen_range(-3.0 * s..3.0 * s);
            let m = self.eval(x, y);
            let mx = x.max(y);
            r.below_max = r.below_max.max(mx - m);
            r.above_band = r.above_band.max(m - mx - s);
            if (x - y).abs() >= s {
                r.off_diagonal = r.off_diagonal.max((m - mx).abs());
            }
            let x2 = x + rng.gen_range(-2.0 * s..2.0 * s);
            let y2 = y + rng.gen_range(-2.0 * s..2.0 * s);
            let mid = self.eval(0.5 * (x + x2), 0.5 * (y + y2));
            r.convexity = r.convexity.max(mid - 0.5 * (m + self.eval(x2, y2)));
        }
        r
    }
}

/// An open Euclidean ball in the coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point<f64>, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn contains(&self, p: &Point<f64>) -> bool {
        p.dist2(&self.center) < self.radius * self.radius
    }

    pub fn closure_contains(&self, p: &Point<f64>) -> bool {
        p.dist2(&self.center) <= self.radius * self.radius
    }

    pub fn intersects(&self, other: &Ball) -> bool {
        self.center.dist(&other.center) < self.radius + other.radius
    }

    /// `center + t * radius * d`.
    pub fn at(&self, d: &[f64; 4], t: f64) -> Point<f64> {
        Point(std::array::from_fn(|k| self.center[k] + t * self.radius * d[k]))
    }

    pub fn sphere(&self, dirs: &[[f64; 4]]) -> Vec<Point<f64>> {
        dirs.iter().map(|d| self.at(d, 1.0)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Whole,
    Ball(Ball),
}

impl Domain {
    pub fn contains(&self, p: &Point<f64>) -> bool {
        match self {
            Domain::Whole => true,
            Domain::Ball(b) => b.contains(p),
        }
    }

    fn boundary(&self, dirs: &[[f64; 4]]) -> Vec<Point<f64>> {
        match self {
            Domain::Whole => Vec::new(),
            Domain::Ball(b) => b.sphere(dirs),
        }
    }
}

/// `max_s {u1, u2}`: `m_s(u1, u2)` on the overlap, the single input elsewhere.
pub struct GluedMax {
    pub rm: RegularizedMax,
    pub u1: FieldRef<f64>,
    pub d1: Domain,
    pub u2: FieldRef<f64>,
    pub d2: Domain,
}

impl ScalarField<f64> for GluedMax {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        match (self.d1.contains(p), self.d2.contains(p)) {
            (true, true) => self.rm.jet(&self.u1.jet(p, order), &self.u2.jet(p, order)),
            (true, false) => self.u1.jet(p, order),
            (false, true) => self.u2.jet(p, order),
            (false, false) => Jet::constant(f64::NAN).truncate(order),
        }
    }

    fn value(&self, p: &Point<f64>) -> f64 {
        match (self.d1.contains(p), self.d2.contains(p)) {
            (true, true) => self.rm.eval(self.u1.value(p), self.u2.value(p)),
            (true, false) => self.u1.value(p),
            (false, true) => self.u2.value(p),
            (false, false) => f64::NAN,
        }
    }

    fn regularity(&self) -> Regularity {
        match (self.u1.regularity(), self.u2.regularity()) {
            (Regularity::C2 | Regularity::C11, Regularity::C2 | Regularity::C11) => Regularity::C11,
            (a, _) if a != Regularity::C2 && a != Regularity::C11 => a,
            (_, b) => b,
        }
    }
}

/// Glues `u1` on `U1` and `u2` on `U2`, after checking `u1 + s < u2` on
/// `bd U1 n U2` and `u2 + s < u1` on `bd U2 n U1` at `directions` seeded
/// boundary points of each ball.
pub fn regularized_max(
    s: f64,
    (u1, d1): (FieldRef<f64>, Domain),
    (u2, d2): (FieldRef<f64>, Domain),
    directions: usize,
    seed: u64,
) -> Result<GluedMax> {
    let rm = RegularizedMax::new(s)?;
    let dirs = sphere_directions(directions, seed);
    let seam = |lo: &FieldRef<f64>, lo_dom: &Domain, hi: &FieldRef<f64>, hi_dom: &Domain, name: &str| {
        for q in lo_dom.boundary(&dirs).iter().filter(|q| hi_dom.contains(q)) {
            let gap = hi.value(q) - lo.value(q);
            if !(gap > s) {
                return Err(AcxError::SeamViolation {
                    point: q.to_f64(),
                    what: format!("{name}: gap {gap:e} does not exceed s = {s:e}"),
                });
            }
        }
        Ok(())
    };
    seam(&u1, &d1, &u2, &d2, "u1 + s < u2 fails on the boundary of U1")?;
    seam(&u2, &d2, &u1, &d1, "u2 + s < u1 fails on the boundary of U2")?;
    Ok(GluedMax { rm, u1, d1, u2, d2 })
}

/// `m_s(a, b)` of two fields on the whole space.
pub struct SmoothMax {
    pub rm: RegularizedMax,
    pub a: FieldRef<f64>,
    pub b: FieldRef<f64>,
}

impl ScalarField<f64> for SmoothMax {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        self.rm.jet(&self.a.jet(p, order), &self.b.jet(p, order))
    }
    fn value(&self, p: &Point<f64>) -> f64 {
        self.rm.eval(self.a.value(p), self.b.value(p))
    }
    fn regularity(&self) -> Regularity {
        Regularity::C11
    }
    /// Edges of the band `|a - b| <= s`, plus the breaks of `a` and `b`.
    fn breaks_along(&self, origin: &Point<f64>, dir: &[f64; 4], r0: f64, r1: f64) -> Vec<f64> {
        let at = |r: f64| Point(std::array::from_fn(|m| origin[m] + r * dir[m]));
        let gap = |r: f64| {
            let p = at(r);
            self.a.value(&p) - self.b.value(&p)
        };
        let mut out = self.a.breaks_along(origin, dir, r0, r1);
        out.extend(self.b.breaks_along(origin, dir, r0, r1));
        let s = self.rm.s;
        out.extend(level_crossings(&gap, s, r0, r1));
        out.extend(level_crossings(&gap, -s, r0, r1));
        out
    }
}

/// Roots of `f = level` on `(r0, r1)`, from sign changes on 64 samples
/// refined by bisection.
fn level_crossings(f: &dyn Fn(f64) -> f64, level: f64, r0: f64, r1: f64) -> Vec<f64> {
    const SAMPLES: usize = 64;
    let xs: Vec<f64> = (0..=SAMPLES).map(|i| r0 + (r1 - r0) * i as f64 / SAMPLES as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x) - level).collect();
    let mut out = Vec::new();
    for i in 0..SAMPLES {
        if ys[i] == 0.0 {
            out.push(xs[i]);
            continue;
        }
        if ys[i] * ys[i + 1] >= 0.0 {
            continue;
        }
        let (mut a, mut b, fa) = (xs[i], xs[i + 1], ys[i]);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if (f(m) - level) * fa > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        out.push(0.5 * (a + b));
    }
    out
}

/// Discrete convolution with the normalized kernel `(1 - |y|^2)^4` on the
/// ball of radius `delta`, by a product Gauss-Legendre rule.
pub struct Mollified {
    pub u: FieldRef<f64>,
    pub delta: f64,
    nodes: Vec<([f64; 4], f64)>,
}

impl Mollified {
    pub fn new(u: FieldRef<f64>, delta: f64, points_per_axis: usize) -> Self {
        let (x, w) = gauss_legendre(points_per_axis);
        let mut nodes = Vec::new();
        let n = x.len();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let y = [x[a], x[b], x[c], x[d]];
                        let r2: f64 = y.iter().map(|t| t * t).sum();
                        if r2 < 1.0 {
                            nodes.push((y, w[a] * w[b] * w[c] * w[d] * (1.0 - r2).powi(4)));
                        }
                    }
                }
            }
        }
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        for n in &mut nodes {
            n.1 /= total;
        }
        Mollified { u, delta, nodes }
    }

    fn shifted(&self, p: &Point<f64>, y: &[f64; 4]) -> Point<f64> {
        Point(std::array::from_fn(|k| p[k] - self.delta * y[k]))
    }
}

impl ScalarField<f64> for Mollified {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        let mut acc = Jet::zero_with_order(order);
        for (y, w) in &self.nodes {
            acc += self.u.jet(&self.shifted(p, y), order).scale(*w);
        }
        acc
    }
    fn value(&self, p: &Point<f64>) -> f64 {
        self.nodes.iter().map(|(y, w)| w * self.u.value(&self.shifted(p, y))).sum()
    }
    fn regularity(&self) -> Regularity {
        self.u.regularity()
    }
}

/// A `C^{1,1}` psh-preserving smoothing of `u` at width `delta`.
///
/// Maxima of smooth branches are replaced by nested `m_delta`, which keeps
/// psh-ness and overshoots by at most `delta / 4` per nesting level; other
/// non-smooth fields are mollified.
pub fn smoothed(u: &FieldRef<f64>, delta: f64) -> FieldRef<f64> {
    if let Some(branches) = u.max_branches() {
        let rm = RegularizedMax { s: delta };
        let mut it = branches.iter().map(|b| smoothed(b, delta));
        let first = it.next().expect("empty maximum");
        return it.fold(first, |a, b| Arc::new(SmoothMax { rm, a, b }) as FieldRef<f64>);
    }
    match u.regularity() {
        Regularity::C2 | Regularity::C11 => u.clone(),
        _ => Arc::new(Mollified::new(u.clone(), delta, 4)),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverParams {
    /// Lattice cells per axis to start from.
    pub initial_counts: [usize; 4],
    /// `r_U / r_V`.
    pub radius_ratio: f64,
    /// `r_V` over the circumradius of a lattice cell.
    pub covering_slack: f64,
    pub max_pieces: usize,
    pub shell_directions: usize,
    pub seed: u64,
}

impl Default for CoverParams {
    fn default() -> Self {
        CoverParams {
            initial_counts: [2, 1, 1, 1],
            radius_ratio: 2.0,
            covering_slack: 1.05,
            max_pieces: 4096,
            shell_directions: 128,
            seed: 0,
        }
    }
}

/// One ball pair `V ⋐ U` of a cover with its defining function
/// `rho = |z - c|^2 - r_U^2` and the oscillation certificate.
#[derive(Clone)]
pub struct CoverPiece {
    pub index: usize,
    pub v: Ball,
    pub u: Ball,
    pub rho: FieldRef<f64>,
    pub sup_u: f64,
    pub inf_u_plus_h: f64,
    pub rho_lambda_min: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PieceSummary {
    pub index: usize,
    pub center: [f64; 4],
    pub r_v: f64,
    pub r_u: f64,
    pub sup_u: f64,
    pub inf_u_plus_h: f64,
    pub rho_lambda_min: f64,
}

impl CoverPiece {
    /// A piece with `rho = |z - c|^2 - r_U^2` whose oscillation bounds are
    /// not yet measured (`NaN`).
    pub fn from_balls(index: usize, v: Ball, u: Ball) -> Self {
        CoverPiece {
            index,
            v,
            u,
            rho: Arc::new(Bowl { center: u.center, constant: -u.radius * u.radius }),
            sup_u: f64::NAN,
            inf_u_plus_h: f64::NAN,
            rho_lambda_min: f64::NAN,
        }
    }

    pub fn summary(&self) -> PieceSummary {
        PieceSummary {
            index: self.index,
            center: self.u.center.to_f64(),
            r_v: self.v.radius,
            r_u: self.u.radius,
            sup_u: self.sup_u,
            inf_u_plus_h: self.inf_u_plus_h,
            rho_lambda_min: self.rho_lambda_min,
        }
    }
}

/// `|z - c|^2 + constant`.
pub struct Bowl {
    pub center: Point<f64>,
    pub constant: f64,
}

impl ScalarField<f64> for Bowl {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        let x = coordinate_jets(&p.0, order);
        let mut acc = Jet::constant(self.constant).truncate(order);
        for k in 0..4 {
            let d = x[k] - Jet::constant(self.center[k]);
            acc += d * d;
        }
        acc
    }
    fn value(&self, p: &Point<f64>) -> f64 {
        p.dist2(&self.center) + self.constant
    }
}

/// Sample sets of a piece: the sphere `bd U`, the closed ball `V̄` and `U`.
pub struct PieceSamples {
    pub boundary: Vec<Point<f64>>,
    pub closure_v: Vec<Point<f64>>,
    pub interior: Vec<Point<f64>>,
    /// Indices into the grid of the nodes lying in `U`.
    pub grid_nodes: Vec<usize>,
}

pub fn piece_samples(u: &Ball, v: &Ball, grid: &GridBox<f64>, directions: usize, seed: u64) -> PieceSamples {
    let dirs = sphere_directions(directions, seed);
    let grid_nodes: Vec<usize> = (0..grid.len())
        .filter(|&f| u.contains(&grid.node(grid.unflat(f))))
        .collect();
    let mut closure_v = vec![v.center];
    let mut interior = vec![u.center];
    for &f in &grid_nodes {
        let p = grid.node(grid.unflat(f));
        if v.closure_contains(&p) {
            closure_v.push(p);
        }
        interior.push(p);
    }
    for d in &dirs {
        for t in [0.5, 1.0] {
            closure_v.push(v.at(d, t));
        }
        for t in [0.25, 0.5, 0.75, 0.95] {
            interior.push(u.at(d, t));
        }
    }
    PieceSamples { boundary: u.sphere(&dirs), closure_v, interior, grid_nodes }
}

fn lattice(k: &GridBox<f64>, counts: [usize; 4]) -> (Vec<Point<f64>>, [f64; 4]) {
    let side: [f64; 4] = std::array::from_fn(|a| (k.upper[a] - k.lower[a]) / counts[a] as f64);
    let mut centers = Vec::new();
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for l in 0..counts[2] {
                for m in 0..counts[3] {
                    let idx = [i, j, l, m];
                    centers.push(Point(std::array::from_fn(|a| {
                        k.lower[a] + (idx[a] as f64 + 0.5) * side[a]
                    })));
                }
            }
        }
    }
    (centers, side)
}

/// Ball pairs `V_n ⋐ U_n` over a lattice of `k` whose `V_n` cover `k`,
/// refined until `sup_U u < inf_U (u + h)` and `rho_n` is strictly psh on
/// every `U_n`. Pieces are enumerated in lexicographic order of centers.
pub fn ball_cover(
    u: &dyn ScalarField<f64>,
    h: &dyn ScalarField<f64>,
    k: &GridBox<f64>,
    frame: &Frame<f64>,
    params: &CoverParams,
) -> Result<Vec<CoverPiece>> {
    if params.radius_ratio <= 1.0 || params.covering_slack < 1.0 {
        return Err(AcxError::Config("cover needs radius_ratio > 1 and covering_slack >= 1".into()));
    }
    let mut counts = params.initial_counts.map(|c| c.max(1));
    loop {
        let total: usize = counts.iter().product();
        let (centers, side) = lattice(k, counts);
        let r_v = params.covering_slack * 0.5 * side.iter().map(|s| s * s).sum::<f64>().sqrt();
        let r_u = params.radius_ratio * r_v;
        if total > params.max_pieces {
            return Err(AcxError::CoverFailure(format!(
                "oscillation condition still fails with {total} pieces (limit {}) at r_U = {r_u:e}",
                params.max_pieces
            )));
        }
        let pieces: Result<Vec<Option<CoverPiece>>> = centers
            .par_iter()
            .enumerate()
            .map(|(index, c)| {
                let ub = Ball::new(*c, r_u);
                let vb = Ball::new(*c, r_v);
                let s = piece_samples(&ub, &vb, k, params.shell_directions, params.seed);
                let mut sup_u = f64::NEG_INFINITY;
                let mut inf_uh = f64::INFINITY;
                for p in s.interior.iter().chain(&s.boundary) {
                    let up = u.value(p);
                    sup_u = sup_u.max(up);
                    inf_uh = inf_uh.min(up + h.value(p));
                }
                if !(sup_u < inf_uh) {
                    return Ok(None);
                }
                let rho: FieldRef<f64> = Arc::new(Bowl { center: *c, constant: -r_u * r_u });
                let rep = psh_check(rho.as_ref(), frame, &s.interior, 0.0, 0.0)?;
                if !(rep.lambda_min > 0.0) {
                    return Ok(None);
                }
                Ok(Some(CoverPiece {
                    index,
                    v: vb,
                    u: ub,
                    rho,
                    sup_u,
                    inf_u_plus_h: inf_uh,
                    rho_lambda_min: rep.lambda_min,
                }))
            })
            .collect();
        let pieces = pieces?;
        if pieces.iter().all(Option::is_some) {
            return Ok(pieces.into_iter().flatten().collect());
        }
        // refine along the longest cell side
        let a = (0..4)
            .max_by(|&i, &j| side[i].partial_cmp(&side[j]).unwrap().then(j.cmp(&i)))
            .unwrap();
        counts[a] += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Patch,
    Dirichlet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateOptions {
    /// Width of the smoothing applied to `u` by the patch backend.
    pub smoothing_width: f64,
    /// `epsilon` as a fraction of the strictness margin of `u` against `rho`.
    pub epsilon_fraction: f64,
    pub shell_directions: usize,
    pub seed: u64,
    /// Nodes per axis of the Dirichlet backend solve.
    pub dirichlet_resolution: usize,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        CandidateOptions {
            smoothing_width: 0.01,
            epsilon_fraction: 0.5,
            shell_directions: 128,
            seed: 0,
            dirichlet_resolution: 17,
        }
    }
}

/// `v` on `U` with `v < u` on `bd U`, `v > u` on `V̄`, `v < u + h` and `v`
/// strictly psh, all verified on samples.
#[derive(Clone)]
pub struct LocalCandidate {
    pub piece: usize,
    pub v: FieldRef<f64>,
    pub epsilon: f64,
    /// `sup_{bd U} (v - u)`.
    pub boundary_gap: f64,
    /// `inf_{V̄} (v - u)`.
    pub inner_gap: f64,
    /// `sup_U (v - u - h)`.
    pub band_gap: f64,
    pub lambda_min: f64,
}

/// `smooth + eps * (m - |z - c|^2)`.
pub struct PatchCandidate {
    pub smooth: FieldRef<f64>,
    pub eps: f64,
    pub bowl: Bowl,
}

impl ScalarField<f64> for PatchCandidate {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        self.smooth.jet(p, order) - self.bowl.jet(p, order).scale(self.eps)
    }
    fn value(&self, p: &Point<f64>) -> f64 {
        self.smooth.value(p) - self.eps * self.bowl.value(p)
    }
    fn regularity(&self) -> Regularity {
        self.smooth.regularity()
    }
}

fn extreme(
    points: &[Point<f64>],
    f: impl Fn(&Point<f64>) -> f64 + Sync,
    largest: bool,
) -> (f64, [f64; 4]) {
    points
        .par_iter()
        .map(|p| (f(p), p.to_f64()))
        .reduce(
            || (if largest { f64::NEG_INFINITY } else { f64::INFINITY }, [f64::NAN; 4]),
            |a, b| {
                let better = if largest { b.0 > a.0 } else { b.0 < a.0 };
                if better || b.0.is_nan() {
                    b
                } else {
                    a
                }
            },
        )
}

/// Runs the four checks every local candidate must pass.
pub fn verify_candidate(
    piece: &CoverPiece,
    v: FieldRef<f64>,
    epsilon: f64,
    u: &dyn ScalarField<f64>,
    h: &dyn ScalarField<f64>,
    frame: &Frame<f64>,
    samples: &PieceSamples,
) -> Result<LocalCandidate> {
    let reject = |inequality: &str, point: [f64; 4], detail: String| AcxError::CandidateRejected {
        inequality: inequality.into(),
        point,
        detail,
    };
    let (boundary_gap, at) = extreme(&samples.boundary, |p| v.value(p) - u.value(p), true);
    if !(boundary_gap < 0.0) {
        return Err(reject("v < u on bd U", at, format!("v - u = {boundary_gap:e}")));
    }
    let (inner_gap, at) = extreme(&samples.closure_v, |p| v.value(p) - u.value(p), false);
    if !(inner_gap > 0.0) {
        return Err(reject("v > u on closed V", at, format!("v - u = {inner_gap:e}")));
    }
    let (band_gap, at) = extreme(&samples.interior, |p| v.value(p) - u.value(p) - h.value(p), true);
    if !(band_gap < 0.0) {
        return Err(reject("v < u + h on U", at, format!("v - u - h = {band_gap:e}")));
    }
    let rep = psh_check(v.as_ref(), frame, &samples.interior, 0.0, 0.0)?;
    if !(rep.lambda_min > 0.0) {
        return Err(reject("v strictly psh on U", rep.argmin, format!("lambda_min = {:e}", rep.lambda_min)));
    }
    Ok(LocalCandidate {
        piece: piece.index,
        v,
        epsilon,
        boundary_gap,
        inner_gap,
        band_gap,
        lambda_min: rep.lambda_min,
    })
}

/// Builds and verifies a local candidate for one cover piece.
pub fn local_candidate(
    u: &FieldRef<f64>,
    h: &dyn ScalarField<f64>,
    piece: &CoverPiece,
    frame: &Frame<f64>,
    grid: &GridBox<f64>,
    backend: Backend,
    opts: &CandidateOptions,
) -> Result<LocalCandidate> {
    let samples = piece_samples(&piece.u, &piece.v, grid, opts.shell_directions, opts.seed);
    let smooth = smoothed(u, opts.smoothing_width);
    let margin = strictness_margin(smooth.as_ref(), piece.rho.as_ref(), frame, &samples.interior)?;
    if !(margin > 0.0) {
        return Err(AcxError::NoMargin(format!(
            "lambda_min(u) >= eps lambda_max(rho) fails for every eps > 0 on piece {}",
            piece.index
        )));
    }
    let eps = opts.epsilon_fraction * margin;
    let v: FieldRef<f64> = match backend {
        Backend::Patch => {
            // place the bowl level so that the V̄ and bd U margins balance
            let d_sup = extreme(&samples.boundary, |p| smooth.value(p) - u.value(p), true).0;
            let d_inf = extreme(&samples.closure_v, |p| smooth.value(p) - u.value(p), false).0;
            let (rv2, ru2) = (piece.v.radius.powi(2), piece.u.radius.powi(2));
            let gap = ru2 - rv2;
            let theta = (0.5 * (gap - (d_sup + d_inf) / eps)).clamp(0.0, gap);
            Arc::new(PatchCandidate {
                smooth,
                eps,
                bowl: Bowl { center: piece.u.center, constant: -(rv2 + theta) },
            })
        }
        Backend::Dirichlet => {
            let sup_k = extreme(&samples.closure_v, |p| piece.rho.value(p), true).0;
            crate::dirichlet::dirichlet_candidate(&smooth, piece, eps, sup_k, frame, opts.dirichlet_resolution)?
        }
    };
    verify_candidate(piece, v, eps, u.as_ref(), h, frame, &samples)
}

struct Layer {
    ball: Ball,
    v: FieldRef<f64>,
    rm: RegularizedMax,
}

/// `psi_n = max_{s_n} {v_n, psi_{n-1}}` with `psi_0 = u`.
pub struct GluedField {
    pub base: FieldRef<f64>,
    layers: Vec<Layer>,
}

impl GluedField {
    pub fn new(base: FieldRef<f64>) -> Self {
        GluedField { base, layers: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn push(&mut self, ball: Ball, v: FieldRef<f64>, s: f64) {
        self.layers.push(Layer { ball, v, rm: RegularizedMax { s } });
    }

    /// Value of `psi_n` (the first `n` layers).
    pub fn prefix_value(&self, n: usize, p: &Point<f64>) -> f64 {
        let mut acc = self.base.value(p);
        for l in self.layers[..n].iter().filter(|l| l.ball.contains(p)) {
            acc = l.rm.eval(l.v.value(p), acc);
        }
        acc
    }
}

impl ScalarField<f64> for GluedField {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        let mut acc = self.base.jet(p, order);
        for l in self.layers.iter().filter(|l| l.ball.contains(p)) {
            acc = l.rm.jet(&l.v.jet(p, order), &acc);
        }
        acc
    }
    fn value(&self, p: &Point<f64>) -> f64 {
        self.prefix_value(self.layers.len(), p)
    }
    fn regularity(&self) -> Regularity {
        Regularity::C11
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RichbergOptions {
    pub cover: CoverParams,
    pub candidate: CandidateOptions,
    pub backend: Backend,
    /// Largest accepted growth of the finite-difference second derivatives
    /// when the grid is refined once.
    pub fd_ratio_max: f64,
}

impl Default for RichbergOptions {
    fn default() -> Self {
        RichbergOptions {
            cover: CoverParams::default(),
            candidate: CandidateOptions::default(),
            backend: Backend::Patch,
            fd_ratio_max: 1.5,
        }
    }
}

/// One gluing step of the pipeline report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GluingStep {
    pub piece: usize,
    pub s: f64,
    pub binding: String,
    /// Suprema of admissible `s` from the band, boundary and bookkeeping
    /// constraints.
    pub band_limit: f64,
    pub boundary_limit: f64,
    pub bookkeeping_limit: f64,
    /// `min (psi - u)` and `max (psi - u - h)` over the grid after the step.
    pub band_min: f64,
    pub band_max: f64,
    /// Smallest Hessian eigenvalue of the new iterate on grid nodes in `U`.
    pub lambda_min: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RichbergCertificates {
    pub band_min: f64,
    pub band_max: f64,
    pub band_ok: bool,
    pub lambda_min: f64,
    pub psh_ok: bool,
    /// Largest finite-difference second derivative on the grid and on its
    /// refinement.
    pub fd_coarse: f64,
    pub fd_fine: f64,
    pub fd_ratio: f64,
    pub fd_ok: bool,
    /// Number of steps after which the iterates no longer change on the grid.
    pub stabilized_after: usize,
}

impl RichbergCertificates {
    pub fn all_ok(&self) -> bool {
        self.band_ok && self.psh_ok && self.fd_ok
    }
}

pub struct RichbergOutput {
    pub psi: Arc<GluedField>,
    pub grid: GridField<f64>,
    pub cover: Vec<PieceSummary>,
    pub candidates: Vec<LocalCandidate>,
    pub steps: Vec<GluingStep>,
    pub certificates: RichbergCertificates,
}

fn max_fd_hessian(g: &GridField<f64>) -> f64 {
    g.grid
        .interior_indices(1)
        .par_iter()
        .map(|idx| {
            let j = g.node_jet(*idx, 2);
            let mut m: f64 = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    m = m.max(j.hess(a, b).abs());
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max)
}

/// Glues verified local candidates into a smooth strictly psh `psi` with
/// `u <= psi <= u + h` on the grid of `k`.
pub fn richberg(
    u: &FieldRef<f64>,
    h: &FieldRef<f64>,
    k: &GridBox<f64>,
    frame: &Frame<f64>,
    opts: &RichbergOptions,
) -> Result<RichbergOutput> {
    let pieces = ball_cover(u.as_ref(), h.as_ref(), k, frame, &opts.cover)?;
    let candidates: Result<Vec<LocalCandidate>> = pieces
        .par_iter()
        .map(|p| local_candidate(u, h.as_ref(), p, frame, k, opts.backend, &opts.candidate))
        .collect();
    let candidates = candidates?;
    let overlaps: Vec<usize> = pieces
        .iter()
        .map(|p| pieces.iter().filter(|q| q.u.intersects(&p.u)).count())
        .collect();
    let s_p: Vec<f64> = candidates
        .iter()
        .zip(&overlaps)
        .map(|(c, &n)| c.inner_gap / n as f64)
        .collect();

    let nodes = k.nodes();
    let u_vals: Vec<f64> = nodes.par_iter().map(|p| u.value(p)).collect();
    let h_vals: Vec<f64> = nodes.par_iter().map(|p| h.value(p)).collect();
    let mut psi_vals = u_vals.clone();
    let mut last_change = vec![0usize; nodes.len()];
    let mut psi = GluedField::new(u.clone());
    let mut steps = Vec::with_capacity(pieces.len());

    for (n, (piece, cand)) in pieces.iter().zip(&candidates).enumerate() {
        let samples =
            piece_samples(&piece.u, &piece.v, k, opts.candidate.shell_directions, opts.candidate.seed);
        let v = &cand.v;
        let v_grid: Vec<(usize, f64)> = samples.grid_nodes.par_iter().map(|&f| (f, v.value(&nodes[f]))).collect();
        let mut band_limit = v_grid
            .iter()
            .map(|&(f, vf)| u_vals[f] + h_vals[f] - vf.max(psi_vals[f]))
            .fold(f64::INFINITY, f64::min);
        let shells: Vec<&Point<f64>> = std::iter::once(&piece.u.center)
            .chain(&samples.interior[1 + samples.grid_nodes.len()..])
            .collect();
        band_limit = band_limit.min(
            shells
                .par_iter()
                .map(|p| u.value(p) + h.value(p) - v.value(p).max(psi.prefix_value(n, p)))
                .reduce(|| f64::INFINITY, f64::min),
        );
        let boundary_limit = samples
            .boundary
            .par_iter()
            .map(|p| psi.prefix_value(n, p) - v.value(p))
            .reduce(|| f64::INFINITY, f64::min);
        let bookkeeping_limit = pieces
            .iter()
            .zip(&s_p)
            .filter(|(q, _)| q.u.intersects(&piece.u))
            .map(|(_, s)| *s)
            .fold(f64::INFINITY, f64::min);
        let limits = [
            ("band", band_limit),
            ("boundary", boundary_limit),
            ("bookkeeping", bookkeeping_limit),
        ];
        let (binding, sup) = limits
            .iter()
            .copied()
            .fold(("", f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        if !(sup > 0.0) {
            return Err(AcxError::InfeasibleWidth { piece: n, constraint: binding.into(), value: sup });
        }
        let s = 0.5 * sup;
        psi.push(piece.u, v.clone(), s);
        let rm = RegularizedMax { s };
        for &(f, vf) in &v_grid {
            let new = rm.eval(vf, psi_vals[f]);
            if new != psi_vals[f] {
                last_change[f] = n + 1;
            }
            psi_vals[f] = new;
        }
        let (band_min, band_max) = band_extremes(&psi_vals, &u_vals, &h_vals);
        let in_u: Vec<Point<f64>> = samples.grid_nodes.iter().map(|&f| nodes[f]).collect();
        let lambda_min = if in_u.is_empty() {
            f64::INFINITY
        } else {
            psh_check(&psi, frame, &in_u, 0.0, 0.0)?.lambda_min
        };
        steps.push(GluingStep {
            piece: piece.index,
            s,
            binding: binding.into(),
            band_limit,
            boundary_limit,
            bookkeeping_limit,
            band_min,
            band_max,
            lambda_min,
        });
    }

    let psi = Arc::new(psi);
    let grid = GridField::from_samples(k.clone(), psi_vals);
    let (band_min, band_max) = band_extremes(&grid.samples, &u_vals, &h_vals);
    let lambda_min = psh_check(psi.as_ref(), frame, &k.interior_nodes(1), 0.0, 0.0)?.lambda_min;
    let fd_coarse = max_fd_hessian(&grid);
    let fine = GridField::sample(&k.refined(), psi.as_ref());
    let fd_fine = max_fd_hessian(&fine);
    let fd_ratio = fd_fine / fd_coarse;
    let certificates = RichbergCertificates {
        band_min,
        band_max,
        band_ok: band_min >= -1e-12 && band_max <= 0.0,
        lambda_min,
        psh_ok: lambda_min > 0.0,
        fd_coarse,
        fd_fine,
        fd_ratio,
        fd_ok: fd_ratio.is_finite() && fd_ratio <= opts.fd_ratio_max,
        stabilized_after: last_change.iter().copied().max().unwrap_or(0),
    };
    Ok(RichbergOutput {
        psi,
        grid,
        cover: pieces.iter().map(CoverPiece::summary).collect(),
        candidates,
        steps,
        certificates,
    })
}

fn band_extremes(psi: &[f64], u: &[f64], h: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..psi.len() {
        lo = lo.min(psi[i] - u[i]);
        hi = hi.max(psi[i] - u[i] - h[i]);
    }
    (lo, hi)
}
