//! Monge-Ampere densities and measures, the weak wedge current, the
//! `log|z| + A|z|` point-mass model and `W^{1,2}` diagnostics.
//!
//! Densities are reported against `dV = omega^2 / 2`; masses are integrals
//! against Lebesgue measure of the coordinate box, converted through the
//! coframe volume. Everything here runs on `f64`.

use std::sync::Mutex;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{apply, Op};
use crate::error::{AcxError, Result};
use crate::field::{FieldRef, Regularity, ScalarField};
use crate::forms::{wedge, PQForm};
use crate::frame::{Frame, FrameJet};
use crate::geometry::{GridBox, Point};
use crate::hessian::{cross_density, hessian_jets, psh_check, values2, Herm, HermitianMetric, PshClass};
use crate::jet::{coordinate_jets, Jet};
use crate::linalg::{det2, det4};
use crate::quad::{adaptive_simpson, cell_centers, gauss_legendre, sphere_directions, S3_AREA};

const TOP: usize = 0b1111;

/// `Re det [zeta_a^*(d/dx_m)]`: the frame volume against `dx1 dy1 dx2 dy2`.
pub fn coframe_volume(fj: &FrameJet<f64>) -> f64 {
    let m: [[Complex<f64>; 4]; 4] = std::array::from_fn(|a| fj.coframe[a].map(|c| c.value()));
    det4(&m).re
}

/// `dV / dx` at `p`.
pub fn volume_factor(frame: &Frame<f64>, metric: &HermitianMetric<f64>, p: &Point<f64>) -> Result<f64> {
    let fj = frame.at(p, 0)?;
    Ok(det2(&metric.at(p)).re * coframe_volume(&fj))
}

fn hessian_at(u: &dyn ScalarField<f64>, fj: &FrameJet<f64>, p: &Point<f64>) -> Herm<f64> {
    values2(&hessian_jets(&u.jet(p, 2), fj))
}

/// Density of `(i ddbar u)^2` against `dV`: `2 det h / det k`.
pub fn ma_density_smooth(
    u: &dyn ScalarField<f64>,
    frame: &Frame<f64>,
    metric: &HermitianMetric<f64>,
    p: &Point<f64>,
) -> Result<f64> {
    let fj = frame.at(p, 1)?;
    let h = hessian_at(u, &fj, p);
    Ok(2.0 * det2(&h).re / det2(&metric.at(p)).re)
}

/// Density of `(i ddbar u)^2` against Lebesgue measure.
pub fn ma_lebesgue_density(u: &dyn ScalarField<f64>, frame: &Frame<f64>, p: &Point<f64>) -> Result<f64> {
    let fj = frame.at(p, 1)?;
    let h = hessian_at(u, &fj, p);
    Ok(2.0 * det2(&h).re * coframe_volume(&fj))
}

/// Density of `i ddbar u ^ i ddbar v` against Lebesgue measure.
pub fn cross_lebesgue_density(
    u: &dyn ScalarField<f64>,
    v: &dyn ScalarField<f64>,
    frame: &Frame<f64>,
    p: &Point<f64>,
) -> Result<f64> {
    let fj = frame.at(p, 1)?;
    let (hu, hv) = (hessian_at(u, &fj, p), hessian_at(v, &fj, p));
    Ok(cross_density(&hu, &hv).re * coframe_volume(&fj))
}

/// Where and how to integrate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Region {
    /// Midpoint rule on the cells of the box.
    Box(GridBox<f64>),
    /// Midpoint rule on the cells whose centers lie in the ball.
    MaskedBall { grid: GridBox<f64>, center: Point<f64>, radius: f64 },
    /// Radial shells: adaptive Simpson in `r` along seeded directions.
    Ball(BallRule),
    /// Adaptive Simpson along lines parallel to one axis of a box, with a
    /// Gauss-Legendre product rule across them.
    Lines(LineRule),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LineRule {
    pub lower: Point<f64>,
    pub upper: Point<f64>,
    pub axis: usize,
    /// Gauss-Legendre nodes per transverse axis.
    pub transverse: usize,
    /// Absolute tolerance per line.
    pub tol: f64,
}

impl LineRule {
    pub fn new(lower: Point<f64>, upper: Point<f64>) -> Self {
        LineRule { lower, upper, axis: 0, transverse: 8, tol: 1e-11 }
    }

    pub fn cube(center: &Point<f64>, half: f64) -> Self {
        LineRule::new(Point(center.0.map(|c| c - half)), Point(center.0.map(|c| c + half)))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallRule {
    pub center: Point<f64>,
    pub radius: f64,
    /// Excluded core radius (0 for the full ball).
    pub inner_radius: f64,
    pub directions: usize,
    pub seed: u64,
    /// Absolute tolerance per ray.
    pub tol: f64,
}

impl BallRule {
    pub fn new(center: Point<f64>, radius: f64) -> Self {
        BallRule { center, radius, inner_radius: 0.0, directions: 2000, seed: 0, tol: 1e-11 }
    }
}

impl Region {
    pub fn describe(&self) -> String {
        match self {
            Region::Box(g) => format!("box {:?}..{:?} n={:?}", g.lower.0, g.upper.0, g.resolution),
            Region::MaskedBall { center, radius, .. } => format!("masked ball {:?} r={radius}", center.0),
            Region::Ball(b) => format!(
                "ball {:?} r={} core={} directions={}",
                b.center.0, b.radius, b.inner_radius, b.directions
            ),
            Region::Lines(l) => format!(
                "lines along axis {} in {:?}..{:?}, {} nodes per transverse axis",
                l.axis, l.lower.0, l.upper.0, l.transverse
            ),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureCell {
    pub index: usize,
    /// Cell midpoint, or for radial rules the centroid of the ray's cone.
    pub center: [f64; 4],
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureTable {
    pub cells: Vec<MeasureCell>,
    pub region: String,
    pub total: f64,
}

impl MeasureTable {
    pub fn from_cells(cells: Vec<MeasureCell>, region: &Region) -> Self {
        let total = cells.iter().map(|c| c.mass).sum();
        MeasureTable { cells, region: region.describe(), total }
    }

    pub fn min_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.mass).fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell,x1,y1,x2,y2,mass\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                c.index, c.center[0], c.center[1], c.center[2], c.center[3], c.mass
            ));
        }
        s
    }
}

/// Radii along a ray (origin, direction, r0, r1) where the integrand may jump.
pub type RayBreaks<'a> = dyn Fn(&Point<f64>, &[f64; 4], f64, f64) -> Vec<f64> + Sync + 'a;

/// Integrates a Lebesgue density over a region, cell by cell.
pub fn integrate(region: &Region, f: &(dyn Fn(&Point<f64>) -> Result<f64> + Sync)) -> Result<MeasureTable> {
    integrate_split(region, f, &|_, _, _, _| Vec::new())
}

/// [`integrate`], with radial rules split at the given breaks.
pub fn integrate_split(
    region: &Region,
    f: &(dyn Fn(&Point<f64>) -> Result<f64> + Sync),
    breaks: &RayBreaks<'_>,
) -> Result<MeasureTable> {
    let cells: Result<Vec<MeasureCell>> = match region {
        Region::Box(grid) => {
            let (centers, vol) = cell_centers(grid);
            centers
                .par_iter()
                .enumerate()
                .map(|(i, p)| Ok(MeasureCell { index: i, center: p.0, mass: f(p)? * vol }))
                .collect()
        }
        Region::MaskedBall { grid, center, radius } => {
            let (centers, vol) = cell_centers(grid);
            centers
                .par_iter()
                .enumerate()
                .filter(|(_, p)| p.dist(center) <= *radius)
                .map(|(i, p)| Ok(MeasureCell { index: i, center: p.0, mass: f(p)? * vol }))
                .collect()
        }
        Region::Ball(rule) => {
            let dirs = sphere_directions(rule.directions, rule.seed);
            let w = S3_AREA / dirs.len() as f64;
            let c = rule.center;
            let r_mid = 0.8 * rule.radius + 0.2 * rule.inner_radius;
            dirs.par_iter()
                .enumerate()
                .map(|(i, d)| {
                    let err = Mutex::new(None);
                    let g = |r: f64| {
                        let p = Point(std::array::from_fn(|m| c[m] + r * d[m]));
                        match f(&p) {
                            Ok(v) => v * r * r * r,
                            Err(e) => {
                                err.lock().unwrap().get_or_insert(e);
                                0.0
                            }
                        }
                    };
                    let (r0, r1) = (rule.inner_radius, rule.radius);
                    let mut knots = vec![r0, r1];
                    knots.extend(breaks(&c, d, r0, r1).into_iter().filter(|r| *r > r0 && *r < r1));
                    knots.sort_by(f64::total_cmp);
                    knots.dedup();
                    let m: f64 = knots
                        .windows(2)
                        .map(|w| adaptive_simpson(&g, w[0], w[1], rule.tol * (w[1] - w[0]) / (r1 - r0), 48))
                        .sum();
                    if let Some(e) = err.into_inner().unwrap() {
                        return Err(e);
                    }
                    let center = std::array::from_fn(|k| c[k] + r_mid * d[k]);
                    Ok(MeasureCell { index: i, center, mass: m * w })
                })
                .collect()
        }
        Region::Lines(rule) => {
            let (x, wts) = gauss_legendre(rule.transverse);
            let others: Vec<usize> = (0..4).filter(|&k| k != rule.axis).collect();
            let n = rule.transverse;
            let (a, b) = (rule.lower[rule.axis], rule.upper[rule.axis]);
            let mut dir = [0.0; 4];
            dir[rule.axis] = 1.0;
            (0..n * n * n)
                .into_par_iter()
                .map(|i| {
                    let idx = [i / (n * n), (i / n) % n, i % n];
                    let mut origin = [0.0; 4];
                    let mut weight = 1.0;
                    for (slot, &k) in others.iter().enumerate() {
                        let (lo, hi) = (rule.lower[k], rule.upper[k]);
                        origin[k] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x[idx[slot]];
                        weight *= 0.5 * (hi - lo) * wts[idx[slot]];
                    }
                    origin[rule.axis] = a;
                    let origin = Point(origin);
                    let err = Mutex::new(None);
                    let g = |t: f64| {
                        let mut p = origin;
                        p.0[rule.axis] = a + t;
                        match f(&p) {
                            Ok(v) => v,
                            Err(e) => {
                                err.lock().unwrap().get_or_insert(e);
                                0.0
                            }
                        }
                    };
                    let len = b - a;
                    let mut knots = vec![0.0, len];
                    knots.extend(breaks(&origin, &dir, 0.0, len).into_iter().filter(|t| *t > 0.0 && *t < len));
                    knots.sort_by(f64::total_cmp);
                    knots.dedup();
                    let m: f64 = knots
                        .windows(2)
                        .map(|w| adaptive_simpson(&g, w[0], w[1], rule.tol * (w[1] - w[0]) / len, 48))
                        .sum();
                    if let Some(e) = err.into_inner().unwrap() {
                        return Err(e);
                    }
                    let mut center = origin.0;
                    center[rule.axis] = 0.5 * (a + b);
                    Ok(MeasureCell { index: i, center, mass: m * weight })
                })
                .collect()
        }
    };
    Ok(MeasureTable::from_cells(cells?, region))
}

/// Mass table of `(i ddbar u)^2` for a `C^2` or `C^{1,1}` function.
pub fn ma_table(u: &dyn ScalarField<f64>, frame: &Frame<f64>, region: &Region) -> Result<MeasureTable> {
    integrate_split(region, &|p| ma_lebesgue_density(u, frame, p), &|c, d, r0, r1| u.breaks_along(c, d, r0, r1))
}

// ---------------------------------------------------------------------------
// weak wedge current

/// `phi(x) = (1 - |x - c|^2 / r^2)^power` inside the ball, zero outside.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point<f64>,
    pub radius: f64,
    pub power: i32,
}

impl Bump {
    pub fn new(center: Point<f64>, radius: f64) -> Self {
        Bump { center, radius, power: 6 }
    }

    pub fn support_box(&self, cells: usize) -> Result<GridBox<f64>> {
        GridBox::centered_cube(&self.center, self.radius, cells + 1)
    }
}

impl ScalarField<f64> for Bump {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        if p.dist2(&self.center) >= self.radius * self.radius {
            return Jet::zero_with_order(order);
        }
        let x = coordinate_jets(&p.0, order);
        let mut s = Jet::constant(1.0).truncate(order);
        for k in 0..4 {
            let d = x[k] - Jet::constant(self.center[k]).truncate(order);
            s -= (d * d).scale(1.0 / (self.radius * self.radius));
        }
        s.powi(self.power)
    }
}

fn function_form(u: &dyn ScalarField<f64>, p: &Point<f64>, order: u8) -> PQForm<f64> {
    PQForm::function(u.jet(p, order).to_complex())
}

/// Lebesgue density of the pairing integrand at `p`, after moving the outer
/// derivatives onto `phi`. Precisely `-(i ddbar phi) ^ (i du ^ dbar v) - d phi ^ d u ^ thetabar d v
/// - dbar phi ^ theta dbar u ^ dbar v + phi theta thetabar d u ^ dbar v
/// - phi theta dbar u ^ thetabar d v`, where `d` stands for `partial`.
/// Only first derivatives of `u` and `v` are used.
pub fn wedge_integrand(
    u: &dyn ScalarField<f64>,
    v: &dyn ScalarField<f64>,
    phi: &dyn ScalarField<f64>,
    frame: &Frame<f64>,
    p: &Point<f64>,
) -> Result<Complex<f64>> {
    let fj = frame.at(p, 1)?;
    let fu = function_form(u, p, 1);
    let fv = function_form(v, p, 1);
    let fphi = function_form(phi, p, 2);
    let du = apply(Op::Partial, &fu, &fj);
    let dbu = apply(Op::Dbar, &fu, &fj);
    let dv = apply(Op::Partial, &fv, &fj);
    let dbv = apply(Op::Dbar, &fv, &fj);
    let tbdv = apply(Op::ThetaBar, &dv, &fj);
    let tdbu = apply(Op::Theta, &dbu, &fj);
    let ttbdu = apply(Op::Theta, &apply(Op::ThetaBar, &du, &fj), &fj);
    let dphi = apply(Op::Partial, &fphi, &fj).truncate(0);
    let dbphi = apply(Op::Dbar, &fphi, &fj);
    // ddbar phi (zeta_p, conj zeta_q) = h_pq
    let hphi = hessian_jets(&phi.jet(p, 2), &fj);
    let mut ddbphi = PQForm::zero(1, 1, 0);
    for a in 0..2 {
        for b in 0..2 {
            ddbphi.c[(1 << a) | (1 << (b + 2))] = hphi[a][b].truncate(0);
        }
    }
    let phi0 = fphi.c[0].value();

    let top = |w: &PQForm<f64>| w.c[TOP].value();
    let t1 = top(&wedge(&ddbphi, &wedge(&du, &dbv)));
    let t2 = -top(&wedge(&dphi, &wedge(&du, &tbdv)));
    let t3 = -top(&wedge(&dbphi.truncate(0), &wedge(&tdbu, &dbv)));
    let t4 = top(&wedge(&ttbdu, &dbv)) * phi0;
    let t5 = -top(&wedge(&tdbu, &tbdv)) * phi0;
    Ok((t1 + t2 + t3 + t4 + t5) * coframe_volume(&fj))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WedgePairing {
    pub value: f64,
    pub imag_residue: f64,
    /// Quadrature cell size.
    pub h: f64,
}

fn check_support(phi: &Bump, domain: &GridBox<f64>) -> Result<()> {
    let margin = domain.h();
    let room = domain.face_distance(&phi.center);
    if room < phi.radius + margin {
        return Err(AcxError::SupportTooLarge(format!(
            "support radius {} around {:?} needs {} of room, box leaves {}",
            phi.radius,
            phi.center.0,
            phi.radius + margin,
            room
        )));
    }
    Ok(())
}

/// `<i ddbar u ^ i ddbar v, phi>` on a midpoint grid of `cells^4` cells over
/// the support of `phi`.
pub fn wedge_pairing(
    u: &dyn ScalarField<f64>,
    v: &dyn ScalarField<f64>,
    phi: &Bump,
    frame: &Frame<f64>,
    domain: &GridBox<f64>,
    cells: usize,
) -> Result<WedgePairing> {
    check_support(phi, domain)?;
    let grid = phi.support_box(cells)?;
    let (centers, vol) = cell_centers(&grid);
    let parts: Result<Vec<Complex<f64>>> = centers
        .par_iter()
        .filter(|p| p.dist2(&phi.center) < phi.radius * phi.radius)
        .map(|p| wedge_integrand(u, v, phi, frame, p))
        .collect();
    let s: Complex<f64> = parts?.into_iter().sum::<Complex<f64>>() * vol;
    Ok(WedgePairing { value: s.re, imag_residue: s.im.abs(), h: grid.h() })
}

/// `int phi (i ddbar u ^ i ddbar v)` with the same quadrature, from second
/// derivatives.
pub fn cross_pairing(
    u: &dyn ScalarField<f64>,
    v: &dyn ScalarField<f64>,
    phi: &Bump,
    frame: &Frame<f64>,
    domain: &GridBox<f64>,
    cells: usize,
) -> Result<f64> {
    check_support(phi, domain)?;
    let grid = phi.support_box(cells)?;
    let (centers, vol) = cell_centers(&grid);
    let parts: Result<Vec<f64>> = centers
        .par_iter()
        .filter(|p| p.dist2(&phi.center) < phi.radius * phi.radius)
        .map(|p| Ok(phi.value(p) * cross_lebesgue_density(u, v, frame, p)?))
        .collect();
    Ok(parts?.into_iter().sum::<f64>() * vol)
}

// ---------------------------------------------------------------------------
// regularization schedules and measures

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Monotonicity {
    Decreasing,
    IncreasingBounded,
}

#[derive(Clone)]
pub struct RegularizationSchedule {
    pub members: Vec<FieldRef<f64>>,
    pub direction: Monotonicity,
}

impl RegularizationSchedule {
    pub fn new(members: Vec<FieldRef<f64>>, direction: Monotonicity) -> Self {
        RegularizationSchedule { members, direction }
    }

    /// Checks monotonicity at the sample points (slack `1e-10`) and returns
    /// the sup-norm gap between consecutive members.
    pub fn check(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        const SLACK: f64 = 1e-10;
        let mut gaps = vec![0.0];
        for step in 1..self.members.len() {
            let (prev, next) = (&self.members[step - 1], &self.members[step]);
            let diffs: Vec<(f64, usize)> = points
                .par_iter()
                .enumerate()
                .map(|(i, p)| (next.value(p) - prev.value(p), i))
                .collect();
            let mut sup: f64 = 0.0;
            for (d, i) in diffs {
                let wrong = match self.direction {
                    Monotonicity::Decreasing => d,
                    Monotonicity::IncreasingBounded => -d,
                };
                if wrong > SLACK || d.is_nan() {
                    return Err(AcxError::NonMonotoneSchedule { step, gap: wrong, point: points[i].0 });
                }
                sup = sup.max(d.abs());
            }
            gaps.push(sup);
        }
        Ok(gaps)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub step: usize,
    pub total_mass: f64,
    /// Relative change of the total from the previous step.
    pub delta: Option<f64>,
    pub sup_gap: f64,
}

pub fn json_lines<T: Serialize>(records: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaReport {
    /// Mass table of the last iterate used.
    pub table: MeasureTable,
    pub log: Vec<ConvergenceRecord>,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MaOptions {
    /// Stop once two consecutive relative deltas fall below this.
    pub rel_tol: f64,
    /// Cells below `-neg_tol` flag a non-psh iterate.
    pub neg_tol: f64,
}

impl Default for MaOptions {
    fn default() -> Self {
        MaOptions { rel_tol: 1e-3, neg_tol: 1e-10 }
    }
}

/// Monge-Ampere measure of a non-smooth psh function through a monotone
/// schedule of smooth approximants.
pub fn ma_measure(
    schedule: &RegularizationSchedule,
    frame: &Frame<f64>,
    region: &Region,
    samples: &[Point<f64>],
    opts: MaOptions,
) -> Result<MaReport> {
    let gaps = schedule.check(samples)?;
    let mut log: Vec<ConvergenceRecord> = Vec::new();
    let mut last = None;
    let mut small = 0;
    for (step, u) in schedule.members.iter().enumerate() {
        let table = ma_table(u.as_ref(), frame, region)?;
        let neg_tol = opts.neg_tol * table.cells.len().max(1) as f64;
        if let Some(c) = table.cells.iter().find(|c| c.mass < -neg_tol) {
            return Err(AcxError::NegativeMass { mass: c.mass, cell: c.index, step });
        }
        let delta = log.last().map(|r| {
            let prev: f64 = r.total_mass;
            (table.total - prev).abs() / table.total.abs().max(f64::MIN_POSITIVE)
        });
        log.push(ConvergenceRecord { step, total_mass: table.total, delta, sup_gap: gaps[step] });
        last = Some(table);
        if matches!(delta, Some(d) if d < opts.rel_tol) {
            small += 1;
        } else {
            small = 0;
        }
        if small >= 2 {
            break;
        }
    }
    let table = last.ok_or_else(|| AcxError::Config("empty regularization schedule".into()))?;
    Ok(MaReport { table, log, converged: small >= 2 })
}

// ---------------------------------------------------------------------------
// the log|z| + A|z| model

/// `L(z) = log|z| + A|z|`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LogPole {
    pub a: f64,
    pub center: Point<f64>,
}

impl LogPole {
    pub fn new(a: f64) -> Self {
        LogPole { a, center: Point::origin() }
    }
}

fn radius2_jet(center: &Point<f64>, p: &Point<f64>, order: u8) -> Jet<f64> {
    let x = coordinate_jets(&p.0, order);
    let mut s = Jet::zero_with_order(order);
    for k in 0..4 {
        let d = x[k] - Jet::constant(center[k]).truncate(order);
        s += d * d;
    }
    s
}

impl ScalarField<f64> for LogPole {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        let s = radius2_jet(&self.center, p, order);
        s.ln().scale(0.5) + s.sqrt().scale(self.a)
    }
    fn regularity(&self) -> Regularity {
        Regularity::Continuous
    }
}

/// `L_k`: `L` outside `B_k = {|z| <= 1/k}` and `k(k + A)|z|^2 / 2 + c(k, A)`
/// inside, with `c` fixed by continuity at `|z| = 1/k`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SingularModel {
    pub a: f64,
    pub k: f64,
    pub cap_constant: f64,
    pub center: Point<f64>,
}

impl SingularModel {
    pub fn new(a: f64, k: f64) -> Self {
        SingularModel { a, k, cap_constant: -(k - a) / (2.0 * k) - k.ln(), center: Point::origin() }
    }

    /// Builds the model and checks that `L_k` is psh on the sample points.
    pub fn checked(a: f64, k: f64, frame: &Frame<f64>, samples: &[Point<f64>], tol: f64) -> Result<Self> {
        if !(a >= 0.0) || !(k >= 1.0) {
            return Err(AcxError::Config(format!("singular model needs A >= 0 and k >= 1, got A={a}, k={k}")));
        }
        let m = SingularModel::new(a, k);
        let r = psh_check(&m, frame, samples, tol, 0.0)?;
        if r.class == PshClass::NotPsh {
            return Err(AcxError::NotPsh(format!(
                "L_k with A={a}, k={k}: smallest eigenvalue {:e} at {:?}",
                r.lambda_min, r.argmin
            )));
        }
        Ok(m)
    }

    /// `-(k + 3A)/(2k) - log k`, which glues continuously only when `A = 0`.
    pub fn naive_constant(&self) -> f64 {
        -(self.k + 3.0 * self.a) / (2.0 * self.k) - self.k.ln()
    }

    pub fn ball_radius(&self) -> f64 {
        1.0 / self.k
    }

    pub fn pole(&self) -> LogPole {
        LogPole { a: self.a, center: self.center }
    }

    /// `pi^2 (k + A)^2 / k^2`.
    pub fn closed_form_mass(&self) -> f64 {
        let q = (self.k + self.a) / self.k;
        std::f64::consts::PI.powi(2) * q * q
    }

    /// Cap density `2 k^2 (k + A)^2` under the standard structure.
    pub fn cap_density(&self) -> f64 {
        2.0 * self.k * self.k * (self.k + self.a).powi(2)
    }

    /// `(|value gap|, |radial slope gap|)` between the two branches at
    /// `|z| = 1/k`.
    pub fn seam_mismatch(&self) -> (f64, f64) {
        let r = 1.0 / self.k;
        let inner = 0.5 * self.k * (self.k + self.a) * r * r + self.cap_constant;
        let outer = r.ln() + self.a * r;
        let dinner = self.k * (self.k + self.a) * r;
        let douter = 1.0 / r + self.a;
        ((inner - outer).abs(), (dinner - douter).abs())
    }
}

impl ScalarField<f64> for SingularModel {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        let s = radius2_jet(&self.center, p, order);
        if s.value() <= 1.0 / (self.k * self.k) {
            s.scale(0.5 * self.k * (self.k + self.a)) + Jet::constant(self.cap_constant).truncate(order)
        } else {
            s.ln().scale(0.5) + s.sqrt().scale(self.a)
        }
    }
    fn regularity(&self) -> Regularity {
        Regularity::C11
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointMassRow {
    pub k: f64,
    pub a: f64,
    pub mass: f64,
    pub closed_form: f64,
    pub rel_err: f64,
    /// `(k+A)^2 / (8k^2) pi^2 [min f, max f]` with `f` the density of
    /// `(i ddbar |z|^2)^2` on `B_k`.
    pub bracket: (f64, f64),
}

impl PointMassRow {
    /// Inside the bracket up to a relative slack (the bracket is a single
    /// point when `f` is constant).
    pub fn inside_bracket(&self, rel: f64) -> bool {
        let slack = rel * self.closed_form.abs();
        self.bracket.0 - slack <= self.mass && self.mass <= self.bracket.1 + slack
    }
}

/// `(i ddbar L_k)^2 (B_k)` by radial-shell quadrature.
pub fn point_mass(
    model: &SingularModel,
    frame: &Frame<f64>,
    metric: &HermitianMetric<f64>,
    directions: usize,
    seed: u64,
) -> Result<PointMassRow> {
    let mut rule = BallRule::new(model.center, model.ball_radius());
    rule.directions = directions;
    rule.seed = seed;
    rule.tol = 1e-12;
    let table = ma_table(model, frame, &Region::Ball(rule))?;
    let mass = table.total;
    let closed = model.closed_form_mass();
    let norm2 = NormSquared { center: model.center };
    let r = model.ball_radius();
    let mut fmin = f64::INFINITY;
    let mut fmax = f64::NEG_INFINITY;
    for d in sphere_directions(directions.min(64), seed) {
        for t in [0.0, 0.5, 1.0] {
            let p = Point(std::array::from_fn(|m| model.center[m] + t * r * d[m]));
            let f = ma_density_smooth(&norm2, frame, metric, &p)?;
            fmin = fmin.min(f);
            fmax = fmax.max(f);
        }
    }
    let q = (model.k + model.a).powi(2) / (8.0 * model.k * model.k) * std::f64::consts::PI.powi(2);
    Ok(PointMassRow {
        k: model.k,
        a: model.a,
        mass,
        closed_form: closed,
        rel_err: (mass - closed).abs() / closed,
        bracket: (q * fmin, q * fmax),
    })
}

/// `|z - c|^2`.
#[derive(Clone, Copy, Debug)]
pub struct NormSquared {
    pub center: Point<f64>,
}

impl ScalarField<f64> for NormSquared {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        radius2_jet(&self.center, p, order)
    }
}

// ---------------------------------------------------------------------------
// W^{1,2}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SobolevNorm {
    pub value_part: f64,
    pub gradient_part: f64,
    pub norm: f64,
}

/// Lebesgue densities of `|u|^2 dV` and `i du ^ dbar u ^ omega` at `p`.
pub fn sobolev_densities(
    u: &dyn ScalarField<f64>,
    frame: &Frame<f64>,
    metric: &HermitianMetric<f64>,
    p: &Point<f64>,
) -> Result<(f64, f64)> {
    let fj = frame.at(p, 0)?;
    let g = u.jet(p, 1).to_complex();
    let dz: [Complex<f64>; 4] = std::array::from_fn(|a| g.directional(&fj.vectors[a]).value());
    let a: Herm<f64> = std::array::from_fn(|p| std::array::from_fn(|q| dz[p] * dz[q + 2]));
    let k = metric.at(p);
    let vol = coframe_volume(&fj);
    let val = g.value().re;
    Ok((val * val * det2(&k).re * vol, cross_density(&a, &k).re * vol))
}

/// `(int |u|^2 + i du ^ dbar u ^ omega)^{1/2}` over a region.
pub fn sobolev_norm(
    u: &dyn ScalarField<f64>,
    frame: &Frame<f64>,
    metric: &HermitianMetric<f64>,
    region: &Region,
) -> Result<SobolevNorm> {
    let vals = integrate(region, &|p| Ok(sobolev_densities(u, frame, metric, p)?.0))?;
    let grads = integrate(region, &|p| Ok(sobolev_densities(u, frame, metric, p)?.1))?;
    Ok(SobolevNorm {
        value_part: vals.total,
        gradient_part: grads.total,
        norm: (vals.total + grads.total).max(0.0).sqrt(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub radii: Vec<f64>,
    pub norms: Vec<f64>,
}

/// Least-squares slope of `log ||v||_{W^{1,2}(D(R))}` against `log R`.
pub fn scaling_probe(
    v: &dyn ScalarField<f64>,
    z0: &Point<f64>,
    radii: &[f64],
    frame: &Frame<f64>,
    metric: &HermitianMetric<f64>,
    directions: usize,
    seed: u64,
) -> Result<ScalingFit> {
    if radii.len() < 3 {
        return Err(AcxError::TooFewRadii(radii.len()));
    }
    let mut norms = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut rule = BallRule::new(*z0, r);
        rule.directions = directions;
        rule.seed = seed;
        rule.tol = 1e-14;
        norms.push(sobolev_norm(v, frame, metric, &Region::Ball(rule))?.norm);
    }
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|n| n.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let residual =
        (xs.iter().zip(&ys).map(|(x, y)| (y - intercept - exponent * x).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ScalingFit { exponent, intercept, residual, radii: radii.to_vec(), norms })
}

/// `max(L, -level) - L`, supported where `L < -level`.
#[derive(Clone, Copy, Debug)]
pub struct Truncation {
    pub pole: LogPole,
    pub level: f64,
}

impl ScalarField<f64> for Truncation {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        let l = self.pole.jet(p, order);
        if l.value() >= -self.level {
            Jet::zero_with_order(order)
        } else {
            -(l + Jet::constant(self.level).truncate(order))
        }
    }
    fn regularity(&self) -> Regularity {
        Regularity::Lipschitz
    }
}

/// `||max(L, -j) - L||_{W^{1,2}}` for each level `j`, integrated over the
/// ball `|z| < e^{-j}` that contains the support.
pub fn truncation_norms(
    pole: &LogPole,
    levels: &[f64],
    frame: &Frame<f64>,
    metric: &HermitianMetric<f64>,
    directions: usize,
    seed: u64,
) -> Result<Vec<SobolevNorm>> {
    levels
        .iter()
        .map(|&j| {
            let radius = (-j).exp();
            let mut rule = BallRule::new(pole.center, radius);
            rule.inner_radius = 1e-12 * radius;
            rule.directions = directions;
            rule.seed = seed;
            rule.tol = 1e-16;
            sobolev_norm(&Truncation { pole: *pole, level: j }, frame, metric, &Region::Ball(rule))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::common;
    use crate::structure::{Ja, Jst};
    use std::sync::Arc;

    fn jst() -> Frame<f64> {
        Frame::new(Arc::new(Jst))
    }

    #[test]
    fn standard_volume_is_lebesgue() {
        let f = jst();
        let v = volume_factor(&f, &HermitianMetric::Standard, &Point([0.1, 0.2, -0.3, 0.4])).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn norm_squared_density_is_eight() {
        let f = jst();
        let u = common::norm2::<f64>();
        let d = ma_density_smooth(u.as_ref(), &f, &HermitianMetric::Standard, &Point([0.3, 0.1, 0.0, -0.2])).unwrap();
        assert!((d - 8.0).abs() < 1e-12);
        let x = common::coordinate::<f64>(0);
        assert_eq!(ma_density_smooth(x.as_ref(), &f, &HermitianMetric::Standard, &Point::origin()).unwrap(), 0.0);
    }

    #[test]
    fn cap_constant_matches_naive_one_at_a_zero() {
        let m = SingularModel::new(0.0, 10.0);
        assert!((m.cap_constant - m.naive_constant()).abs() < 1e-15);
        let m = SingularModel::new(1.0, 10.0);
        assert!((m.naive_constant() - m.cap_constant + 2.0 / 10.0).abs() < 1e-14);
        let (dv, ds) = m.seam_mismatch();
        assert!(dv < 1e-12 && ds < 1e-12);
    }

    #[test]
    fn log_pole_is_maximal_away_from_zero() {
        let f = jst();
        let l = LogPole::new(0.0);
        let d = ma_lebesgue_density(&l, &f, &Point([0.3, -0.2, 0.1, 0.5])).unwrap();
        assert!(d.abs() < 1e-12, "{d}");
    }

    #[test]
    fn bump_support_checked() {
        let dom = GridBox::cube(1.0, 9).unwrap();
        let phi = Bump::new(Point::origin(), 0.95);
        let u = common::norm2::<f64>();
        let r = wedge_pairing(u.as_ref(), u.as_ref(), &phi, &jst(), &dom, 4);
        assert!(matches!(r, Err(AcxError::SupportTooLarge(_))));
    }

    #[test]
    fn wedge_integrand_matches_cross_density_after_integration_ja() {
        let f = Frame::new(Arc::new(Ja::<f64>::parse("0.5*x1*x2 + 0.2*y1").unwrap()));
        let u = common::expr::<f64>("x1^2 + y1^2 + x2^2 + y2^2 + 0.3*x1*y2").unwrap();
        let v = common::expr::<f64>("exp(0.4*x1) + x2^2 + y2^2 + 0.2*y1*x2").unwrap();
        let dom = GridBox::cube(1.0, 9).unwrap();
        let phi = Bump::new(Point([0.05, -0.02, 0.03, 0.01]), 0.5);
        let w = wedge_pairing(u.as_ref(), v.as_ref(), &phi, &f, &dom, 14).unwrap();
        let c = cross_pairing(u.as_ref(), v.as_ref(), &phi, &f, &dom, 14).unwrap();
        assert!((w.value - c).abs() < 1e-5 * c.abs(), "{} vs {c}", w.value);
    }

    #[test]
    fn truncation_norm_matches_radial_integral() {
        // A = 0, R = e^-j: value part int_0^R (j + log r)^2 2 pi^2 r^3 dr
        // = 2 pi^2 R^4 / 32, gradient part proportional to R^2.
        let f = jst();
        let n = truncation_norms(&LogPole::new(0.0), &[1.0, 2.0], &f, &HermitianMetric::Standard, 64, 0).unwrap();
        for (k, j) in [1.0f64, 2.0].iter().enumerate() {
            let r = (-j).exp();
            let val = 2.0 * std::f64::consts::PI.powi(2) * r.powi(4) / 32.0;
            assert!((n[k].value_part - val).abs() < 1e-9 * val, "{} {val}", n[k].value_part);
            assert!(n[k].gradient_part > 0.0);
        }
        let ratio = n[1].gradient_part / n[0].gradient_part;
        assert!((ratio - (-2.0f64).exp()).abs() < 1e-6, "{ratio}");
    }

    #[test]
    fn line_rule_integrates_a_kinked_maximum() {
        // On [-1/2, 1/2]^4 under J_st, m_s(|z|^2, |z|^2 + x1) has density
        // 8 + 1/s on the band |x1| < s, so its mass is 8 + 2 for every s < 1/2.
        let f = jst();
        let mut rule = LineRule::cube(&Point::origin(), 0.5);
        rule.transverse = 2;
        let t = ma_table(common::norm2::<f64>().as_ref(), &f, &Region::Lines(rule.clone())).unwrap();
        assert!((t.total - 8.0).abs() < 1e-12, "{}", t.total);
        let u: FieldRef<f64> = Arc::new(crate::field::MaxField(vec![
            common::norm2(),
            common::expr("x1^2+y1^2+x2^2+y2^2+x1").unwrap(),
        ]));
        for s in [1e-2, 1e-3, 1e-4] {
            let smooth = crate::smoothing::smoothed(&u, s);
            let m = ma_table(smooth.as_ref(), &f, &Region::Lines(rule.clone())).unwrap().total;
            assert!((m - 10.0).abs() < 1e-8, "s={s}: {m}");
        }
    }
}
