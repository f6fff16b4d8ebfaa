//! Finite-difference solver for `(i ddbar u)^2 = f dV` on a ball with
//! Dirichlet data, and numerical comparison-principle harnesses.
//!
//! The scheme is a damped global Newton iteration on `det h_pq(u) = f det k / 2`
//! with central differences; success is claimed only through post-hoc
//! certificates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AcxError, Result};
use crate::field::{FieldRef, GridField, Regularity, ScalarField};
use crate::frame::Frame;
use crate::geometry::{GridBox, Point};
use crate::hessian::{hessian_jets, psh_check, HermitianMetric, PshClass};
use crate::jet::Jet;
use crate::linalg::det2;
use crate::ma::ma_density_smooth;
use crate::quad::sphere_directions;
use crate::smoothing::{smoothed, Ball, Bowl, CoverPiece};

/// `rho = |z - c|^2 - r^2` for a ball, with its certified strictness.
pub struct DefiningFunction {
    pub rho: FieldRef<f64>,
    pub lambda_min: f64,
    /// Smallest `|grad rho|` on the boundary band.
    pub min_gradient: f64,
}

/// Defining function of `ball`, which must lie inside `working`.
pub fn defining_function(
    ball: &Ball,
    working: &GridBox<f64>,
    frame: &Frame<f64>,
    samples: usize,
    seed: u64,
) -> Result<DefiningFunction> {
    if !(working.face_distance(&ball.center) > ball.radius) {
        return Err(AcxError::InvalidProblem(format!(
            "ball of radius {} at {:?} is not inside the working box",
            ball.radius,
            ball.center.to_f64()
        )));
    }
    let rho: FieldRef<f64> = Arc::new(Bowl { center: ball.center, constant: -ball.radius * ball.radius });
    let dirs = sphere_directions(samples, seed);
    let mut pts = vec![ball.center];
    for d in &dirs {
        for t in [0.25, 0.5, 0.75, 1.0] {
            pts.push(ball.at(d, t));
        }
    }
    let rep = psh_check(rho.as_ref(), frame, &pts, 0.0, 0.0)?;
    if rep.class != PshClass::StrictlyPsh {
        return Err(AcxError::NotPsh(format!(
            "defining function of the ball has lambda_min {:e} at {:?}",
            rep.lambda_min, rep.argmin
        )));
    }
    let min_gradient = dirs
        .iter()
        .map(|d| {
            let j = rho.jet(&ball.at(d, 1.0), 1);
            (0..4).map(|k| j.grad(k).powi(2)).sum::<f64>().sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(DefiningFunction { rho, lambda_min: rep.lambda_min, min_gradient })
}

/// `(i ddbar u)^2 = f dV` in `{rho < 0}`, `u = phi` on the boundary.
#[derive(Clone)]
pub struct DirichletProblem {
    pub domain: Ball,
    pub rho: FieldRef<f64>,
    pub boundary: FieldRef<f64>,
    /// Right-hand density against `dV`.
    pub density: FieldRef<f64>,
    pub frame: Frame<f64>,
    pub metric: HermitianMetric<f64>,
    /// Starting iterate at the unknown nodes (the boundary data if absent).
    pub initial: Option<FieldRef<f64>>,
}

impl DirichletProblem {
    pub fn on_ball(domain: Ball, boundary: FieldRef<f64>, density: FieldRef<f64>, frame: Frame<f64>) -> Self {
        DirichletProblem {
            domain,
            rho: Arc::new(Bowl { center: domain.center, constant: -domain.radius * domain.radius }),
            boundary,
            density,
            frame,
            metric: HermitianMetric::Standard,
            initial: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Nodes per axis.
    pub resolution: usize,
    pub max_newton: usize,
    /// Tolerance on `sup |det h - f det k / 2|`.
    pub tol: f64,
    pub linear_tol: f64,
    pub max_linear: usize,
    /// Slack of the psd certificate.
    pub psd_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            resolution: 17,
            max_newton: 40,
            tol: 1e-9,
            linear_tol: 1e-12,
            max_linear: 4000,
            psd_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub newton_steps: usize,
    pub linear_iterations: usize,
    pub unknowns: usize,
    pub h: f64,
    /// `sup |det h_pq(u) - f det k / 2|` over the unknown nodes.
    pub residual: f64,
    pub lambda_min: f64,
    pub lambda_argmin: [f64; 4],
    /// `sup |u - phi|` over the boundary band.
    pub boundary_error: f64,
    pub converged: bool,
}

pub struct DirichletSolution {
    pub u: GridField<f64>,
    /// Which nodes were unknowns (the rest carry boundary data).
    pub unknown: Vec<bool>,
    pub report: SolveReport,
}

// channels: h11, h22, Re h12, Im h12; second derivatives in the order
// (0,0) (0,1) (0,2) (0,3) (1,1) (1,2) (1,3) (2,2) (2,3) (3,3)
const PAIRS: [(usize, usize); 10] =
    [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];

#[derive(Clone, Copy)]
struct NodeCoef {
    a: [[f64; 10]; 4],
    b: [[f64; 4]; 4],
}

fn channels(h: &[[num_complex::Complex<f64>; 2]; 2]) -> [f64; 4] {
    [h[0][0].re, h[1][1].re, h[0][1].re, h[0][1].im]
}

fn node_coefficients(frame: &Frame<f64>, p: &Point<f64>) -> Result<NodeCoef> {
    let fj = frame.at(p, 1)?;
    let eval = |g: [f64; 4], hs: [[f64; 4]; 4]| {
        let j = Jet::from_derivatives(0.0, Some(g), Some(hs));
        let h = hessian_jets(&j, &fj);
        channels(&std::array::from_fn(|p| std::array::from_fn(|q| h[p][q].value())))
    };
    let mut c = NodeCoef { a: [[0.0; 10]; 4], b: [[0.0; 4]; 4] };
    for (m, &(i, j)) in PAIRS.iter().enumerate() {
        let mut hs = [[0.0; 4]; 4];
        hs[i][j] = 1.0;
        hs[j][i] = 1.0;
        let ch = eval([0.0; 4], hs);
        for k in 0..4 {
            c.a[k][m] = ch[k];
        }
    }
    for i in 0..4 {
        let mut g = [0.0; 4];
        g[i] = 1.0;
        let ch = eval(g, [[0.0; 4]; 4]);
        for k in 0..4 {
            c.b[k][i] = ch[k];
        }
    }
    Ok(c)
}

struct Stencil {
    strides: [isize; 4],
    h: f64,
}

impl Stencil {
    /// Central first and second differences of `u` at flat index `f`.
    fn derivatives(&self, u: &[f64], f: usize) -> ([f64; 4], [f64; 10]) {
        let at = |d: isize| u[(f as isize + d) as usize];
        let s = self.strides;
        let h = self.h;
        let d1 = std::array::from_fn(|i| (at(s[i]) - at(-s[i])) / (2.0 * h));
        let d2 = std::array::from_fn(|m| {
            let (i, j) = PAIRS[m];
            if i == j {
                (at(s[i]) - 2.0 * at(0) + at(-s[i])) / (h * h)
            } else {
                (at(s[i] + s[j]) - at(s[i] - s[j]) - at(s[j] - s[i]) + at(-s[i] - s[j])) / (4.0 * h * h)
            }
        });
        (d1, d2)
    }
}

fn apply_channels(c: &NodeCoef, d1: &[f64; 4], d2: &[f64; 10]) -> [f64; 4] {
    std::array::from_fn(|k| {
        (0..10).map(|m| c.a[k][m] * d2[m]).sum::<f64>() + (0..4).map(|i| c.b[k][i] * d1[i]).sum::<f64>()
    })
}

fn det_of(ch: &[f64; 4]) -> f64 {
    ch[0] * ch[1] - ch[2] * ch[2] - ch[3] * ch[3]
}

fn lambda_min_of(ch: &[f64; 4]) -> f64 {
    let tr = ch[0] + ch[1];
    let disc = ((ch[0] - ch[1]).powi(2) + 4.0 * (ch[2] * ch[2] + ch[3] * ch[3])).sqrt();
    0.5 * (tr - disc)
}

struct System<'a> {
    stencil: Stencil,
    unknowns: &'a [usize],
    coef: &'a [NodeCoef],
    target: &'a [f64],
}

impl System<'_> {
    fn channels_at(&self, u: &[f64], n: usize) -> [f64; 4] {
        let (d1, d2) = self.stencil.derivatives(u, self.unknowns[n]);
        apply_channels(&self.coef[n], &d1, &d2)
    }

    fn residuals(&self, u: &[f64]) -> Vec<f64> {
        (0..self.unknowns.len())
            .into_par_iter()
            .map(|n| det_of(&self.channels_at(u, n)) - self.target[n])
            .collect()
    }

    fn lambda_mins(&self, u: &[f64]) -> Vec<f64> {
        (0..self.unknowns.len())
            .into_par_iter()
            .map(|n| lambda_min_of(&self.channels_at(u, n)))
            .collect()
    }

    /// Linearization of `det h` at `u` as per-node operator coefficients.
    fn linearize(&self, u: &[f64]) -> Vec<NodeCoef> {
        (0..self.unknowns.len())
            .into_par_iter()
            .map(|n| {
                let ch = self.channels_at(u, n);
                let w = [ch[1], ch[0], -2.0 * ch[2], -2.0 * ch[3]];
                let c = &self.coef[n];
                let mut out = NodeCoef { a: [[0.0; 10]; 4], b: [[0.0; 4]; 4] };
                for k in 0..4 {
                    for m in 0..10 {
                        out.a[0][m] += w[k] * c.a[k][m];
                    }
                    for i in 0..4 {
                        out.b[0][i] += w[k] * c.b[k][i];
                    }
                }
                out
            })
            .collect()
    }
}

/// `(unknown-indexed) -> (unknown-indexed)` action of a linearized operator.
fn matvec(sys: &System, lin: &[NodeCoef], x: &[f64], full: &mut [f64]) -> Vec<f64> {
    for (n, &f) in sys.unknowns.iter().enumerate() {
        full[f] = x[n];
    }
    let full = &*full;
    (0..sys.unknowns.len())
        .into_par_iter()
        .map(|n| {
            let (d1, d2) = sys.stencil.derivatives(full, sys.unknowns[n]);
            apply_channels(&lin[n], &d1, &d2)[0]
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned BiCGSTAB for `A x = b`; returns `(x, iterations)`.
fn bicgstab(
    sys: &System,
    lin: &[NodeCoef],
    diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
    full: &mut [f64],
) -> (Vec<f64>, usize) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let bnorm = dot(b, b).sqrt().max(1e-300);
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for it in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            return (x, it);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y: Vec<f64> = p.iter().zip(diag).map(|(a, d)| a / d).collect();
        v = matvec(sys, lin, &y, full);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if dot(&s, &s).sqrt() <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return (x, it + 1);
        }
        let z: Vec<f64> = s.iter().zip(diag).map(|(a, d)| a / d).collect();
        let t = matvec(sys, lin, &z, full);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return (x, it + 1);
        }
    }
    (x, max_iter)
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Grid enclosing the domain with two spare node layers beyond the sphere.
pub fn solve_grid(domain: &Ball, resolution: usize) -> Result<GridBox<f64>> {
    if resolution < 9 {
        return Err(AcxError::InvalidProblem(format!("resolution {resolution} is below 9")));
    }
    let half = domain.radius / (1.0 - 4.0 / (resolution as f64 - 1.0));
    GridBox::centered_cube(&domain.center, half, resolution)
}

pub fn solve_dirichlet(problem: &DirichletProblem, opts: &SolveOptions) -> Result<DirichletSolution> {
    let grid = solve_grid(&problem.domain, opts.resolution)?;
    let h = grid.h();
    let nodes = grid.nodes();
    // signed distance estimate -rho / |grad rho|
    let depth: Vec<f64> = nodes
        .par_iter()
        .map(|p| {
            let j = problem.rho.jet(p, 1);
            let g = (0..4).map(|k| j.grad(k).powi(2)).sum::<f64>().sqrt();
            -j.value() / g
        })
        .collect();
    let unknown: Vec<bool> = depth.iter().map(|&d| d >= 1.5 * h).collect();
    let unknowns: Vec<usize> = (0..nodes.len()).filter(|&f| unknown[f]).collect();
    let band: Vec<usize> = (0..nodes.len()).filter(|&f| depth[f] >= 0.0 && !unknown[f]).collect();

    let coef: Result<Vec<NodeCoef>> =
        unknowns.par_iter().map(|&f| node_coefficients(&problem.frame, &nodes[f])).collect();
    let coef = coef?;
    let target: Vec<f64> = unknowns
        .par_iter()
        .map(|&f| {
            let p = &nodes[f];
            problem.density.value(p) * det2(&problem.metric.at(p)).re / 2.0
        })
        .collect();
    if let Some(n) = target.iter().position(|t| *t < 0.0 || t.is_nan()) {
        return Err(AcxError::InvalidProblem(format!(
            "right-hand density is negative at {:?}",
            nodes[unknowns[n]].to_f64()
        )));
    }

    let phi: Vec<f64> = nodes.par_iter().map(|p| problem.boundary.value(p)).collect();
    let mut u = phi.clone();
    if let Some(init) = &problem.initial {
        for &f in &unknowns {
            u[f] = init.value(&nodes[f]);
        }
    }
    let n = grid.resolution;
    let sys = System {
        stencil: Stencil {
            strides: [(n[1] * n[2] * n[3]) as isize, (n[2] * n[3]) as isize, n[3] as isize, 1],
            h,
        },
        unknowns: &unknowns,
        coef: &coef,
        target: &target,
    };
    let mut full = vec![0.0; nodes.len()];
    let mut res = sys.residuals(&u);
    let mut sup = sup_abs(&res);
    let (mut steps, mut linear_iterations) = (0, 0);
    let psd_ok = |lm: &[f64]| lm.iter().all(|l| *l >= -opts.psd_tol);
    while sup >= opts.tol && steps < opts.max_newton {
        steps += 1;
        let lin = sys.linearize(&u);
        let diag: Vec<f64> = lin
            .iter()
            .map(|c| {
                let d = -2.0 / (h * h) * (c.a[0][0] + c.a[0][4] + c.a[0][7] + c.a[0][9]);
                if d.abs() > 1e-300 {
                    d
                } else {
                    1.0
                }
            })
            .collect();
        let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
        let (delta, its) = bicgstab(&sys, &lin, &diag, &rhs, opts.linear_tol, opts.max_linear, &mut full);
        linear_iterations += its;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let mut trial = u.clone();
            for (k, &f) in unknowns.iter().enumerate() {
                trial[f] += lambda * delta[k];
            }
            let r = sys.residuals(&trial);
            let s = sup_abs(&r);
            if s < sup && psd_ok(&sys.lambda_mins(&trial)) {
                u = trial;
                res = r;
                sup = s;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let lm = sys.lambda_mins(&u);
    let (k, lambda_min) = lm
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let boundary_error = band.iter().map(|&f| (u[f] - phi[f]).abs()).fold(0.0, f64::max);
    let report = SolveReport {
        newton_steps: steps,
        linear_iterations,
        unknowns: unknowns.len(),
        h,
        residual: sup,
        lambda_min,
        lambda_argmin: unknowns.get(k).map(|&f| nodes[f].to_f64()).unwrap_or([f64::NAN; 4]),
        boundary_error,
        converged: sup < opts.tol && lambda_min >= -opts.psd_tol && boundary_error < opts.tol,
    };
    let mut field = GridField::from_samples(grid, u);
    field.regularity = Regularity::C2;
    Ok(DirichletSolution { u: field, unknown, report })
}

/// Independent recomputation of the residual and psd certificate from the
/// returned grid through [`ma_density_smooth`] and grid jets.
pub fn recompute_certificates(problem: &DirichletProblem, sol: &DirichletSolution) -> Result<(f64, f64)> {
    let grid = &sol.u.grid;
    let idx: Vec<usize> = (0..grid.len()).filter(|&f| sol.unknown[f]).collect();
    let out: Result<Vec<(f64, f64)>> = idx
        .par_iter()
        .map(|&f| {
            let p = grid.node(grid.unflat(f));
            let dens = ma_density_smooth(&sol.u, &problem.frame, &problem.metric, &p)?;
            let scale = det2(&problem.metric.at(&p)).re / 2.0;
            let res = (dens - problem.density.value(&p)).abs() * scale;
            let h = crate::hessian::i_ddbar(&sol.u, &problem.frame, &p)?;
            Ok((res, crate::hessian::min_eigenvalue(&h)))
        })
        .collect();
    Ok(out?
        .into_iter()
        .fold((0.0, f64::INFINITY), |a, b| (a.0.max(b.0), a.1.min(b.1))))
}

/// `v` solving `(i ddbar v)^2 = (eps/2)^2 (i ddbar rho)^2` on `U` with
/// `v = u - (eps/8)|sup_K rho|` on the boundary.
pub fn dirichlet_candidate(
    smooth_u: &FieldRef<f64>,
    piece: &CoverPiece,
    eps: f64,
    sup_k_rho: f64,
    frame: &Frame<f64>,
    resolution: usize,
) -> Result<FieldRef<f64>> {
    let shift = eps / 8.0 * sup_k_rho.abs();
    let phi: FieldRef<f64> = Arc::new(Shifted { u: smooth_u.clone(), shift: -shift });
    let rho = piece.rho.clone();
    let fr = frame.clone();
    let density: FieldRef<f64> = Arc::new(crate::field::JetFn::new(move |x: &[Jet<f64>; 4]| {
        let p = Point(std::array::from_fn(|k| x[k].value()));
        let d = ma_density_smooth(rho.as_ref(), &fr, &HermitianMetric::Standard, &p).unwrap_or(f64::NAN);
        Jet::constant(0.25 * eps * eps * d)
    }));
    let problem = DirichletProblem {
        domain: piece.u,
        rho: piece.rho.clone(),
        boundary: phi,
        density,
        frame: frame.clone(),
        metric: HermitianMetric::Standard,
        initial: None,
    };
    let sol = solve_dirichlet(&problem, &SolveOptions { resolution, ..Default::default() })?;
    if !sol.report.converged {
        return Err(AcxError::CandidateRejected {
            inequality: "Dirichlet solve converged".into(),
            point: sol.report.lambda_argmin,
            detail: format!("residual {:e}, lambda_min {:e}", sol.report.residual, sol.report.lambda_min),
        });
    }
    Ok(Arc::new(sol.u))
}

/// `u + shift`.
pub struct Shifted {
    pub u: FieldRef<f64>,
    pub shift: f64,
}

impl ScalarField<f64> for Shifted {
    fn jet(&self, p: &Point<f64>, order: u8) -> Jet<f64> {
        self.u.jet(p, order) + Jet::constant(self.shift).truncate(order)
    }
    fn value(&self, p: &Point<f64>) -> f64 {
        self.u.value(p) + self.shift
    }
    fn regularity(&self) -> Regularity {
        self.u.regularity()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    /// Both functions `C^2`, densities compared pointwise.
    C2,
    /// Locally Lipschitz psh functions.
    Lipschitz,
    /// Moduli `|u(z) - u(z')| <= c / (log dist)^4`.
    LogModulus,
}

/// Does `(i ddbar u)^2 <= (i ddbar v)^2` in `Omega` and `u >= v` near the
/// boundary force `v <= u`?
#[derive(Clone)]
pub struct ComparisonCase {
    pub name: String,
    pub u: FieldRef<f64>,
    pub v: FieldRef<f64>,
    pub domain: Ball,
    pub frame: Frame<f64>,
    pub metric: HermitianMetric<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonOptions {
    pub resolution: usize,
    pub density_tol: f64,
    pub boundary_tol: f64,
    pub conclusion_tol: f64,
    pub psh_tol: f64,
    /// Width of the regularization for non-`C^2` inputs.
    pub regularization: f64,
    pub boundary_directions: usize,
    pub modulus_pairs: usize,
    pub seed: u64,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        ComparisonOptions {
            resolution: 17,
            density_tol: 1e-9,
            boundary_tol: 1e-9,
            conclusion_tol: 1e-9,
            psh_tol: 1e-9,
            regularization: 1e-3,
            boundary_directions: 512,
            modulus_pairs: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModulusEstimate {
    /// Estimated constant (Lipschitz constant, or `c` of the log modulus).
    pub constant: f64,
    /// Distances covered, as `(smallest, largest)`.
    pub band: (f64, f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    pub name: String,
    pub flavor: Flavor,
    pub hypotheses_hold: bool,
    /// `None` when the hypotheses fail: no conclusion is claimed.
    pub conclusion_holds: Option<bool>,
    /// `min (density(v) - density(u))` over the grid nodes in the domain.
    pub density_margin: f64,
    /// `min (u - v)` over the boundary band.
    pub boundary_margin: f64,
    pub psh_u: f64,
    pub psh_v: f64,
    pub modulus_u: Option<ModulusEstimate>,
    pub modulus_v: Option<ModulusEstimate>,
    /// `max (v - u)` and where it is attained.
    pub worst_gap: f64,
    pub worst_cell: [f64; 4],
}

fn regularized(u: &FieldRef<f64>, flavor: Flavor, delta: f64) -> FieldRef<f64> {
    match (flavor, u.regularity()) {
        (Flavor::C2, _) | (_, Regularity::C2) => u.clone(),
        _ => smoothed(u, delta),
    }
}

/// Lipschitz constant from differences along random short segments, or the
/// log-modulus constant on dyadic distance bands `r 2^-k`, `k = 3..=10`.
fn modulus(u: &FieldRef<f64>, domain: &Ball, flavor: Flavor, pairs: usize, seed: u64) -> Option<ModulusEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = sphere_directions(2 * pairs, seed ^ 0x5eed);
    let (kmin, kmax) = (3, 10);
    let mut constant: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..pairs {
        let t: f64 = rng.gen_range(0.0..0.9f64).powf(0.25);
        let z = domain.at(&dirs[2 * i], t);
        let k = rng.gen_range(kmin..=kmax);
        let d = domain.radius * 0.5f64.powi(k);
        let w = Point(std::array::from_fn(|m| z[m] + d * dirs[2 * i + 1][m]));
        if !domain.contains(&w) {
            continue;
        }
        let diff = (u.value(&z) - u.value(&w)).abs();
        let c = match flavor {
            Flavor::LogModulus => diff * d.ln().abs().powi(4),
            _ => diff / d,
        };
        constant = constant.max(c);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    match flavor {
        Flavor::C2 => None,
        _ => Some(ModulusEstimate { constant, band: (lo, hi) }),
    }
}

pub fn comparison_check(case: &ComparisonCase, flavor: Flavor, opts: &ComparisonOptions) -> Result<ComparisonVerdict> {
    let grid = GridBox::centered_cube(&case.domain.center, case.domain.radius, opts.resolution)?;
    let inside: Vec<Point<f64>> = grid.nodes().into_iter().filter(|p| case.domain.contains(p)).collect();
    let (ru, rv) = (
        regularized(&case.u, flavor, opts.regularization),
        regularized(&case.v, flavor, opts.regularization),
    );
    let margins: Result<Vec<f64>> = inside
        .par_iter()
        .map(|p| {
            Ok(ma_density_smooth(rv.as_ref(), &case.frame, &case.metric, p)?
                - ma_density_smooth(ru.as_ref(), &case.frame, &case.metric, p)?)
        })
        .collect();
    let density_margin = margins?.into_iter().fold(f64::INFINITY, f64::min);
    let dirs = sphere_directions(opts.boundary_directions, opts.seed);
    let boundary_margin = dirs
        .iter()
        .flat_map(|d| [1.0, 0.999, 0.99].map(|t| case.domain.at(d, t)))
        .map(|p| case.u.value(&p) - case.v.value(&p))
        .fold(f64::INFINITY, f64::min);
    let psh_u = psh_check(ru.as_ref(), &case.frame, &inside, opts.psh_tol, 0.0)?.lambda_min;
    let psh_v = psh_check(rv.as_ref(), &case.frame, &inside, opts.psh_tol, 0.0)?.lambda_min;
    let modulus_u = modulus(&case.u, &case.domain, flavor, opts.modulus_pairs, opts.seed);
    let modulus_v = modulus(&case.v, &case.domain, flavor, opts.modulus_pairs, opts.seed + 1);
    let finite = |m: &Option<ModulusEstimate>| m.as_ref().map_or(true, |m| m.constant.is_finite());
    let hypotheses_hold = density_margin >= -opts.density_tol
        && boundary_margin >= -opts.boundary_tol
        && psh_u >= -opts.psh_tol
        && psh_v >= -opts.psh_tol
        && finite(&modulus_u)
        && finite(&modulus_v);
    let (worst_gap, worst_cell) = inside
        .iter()
        .map(|p| (case.v.value(p) - case.u.value(p), p.to_f64()))
        .fold((f64::NEG_INFINITY, [f64::NAN; 4]), |a, b| if b.0 > a.0 { b } else { a });
    Ok(ComparisonVerdict {
        name: case.name.clone(),
        flavor,
        hypotheses_hold,
        conclusion_holds: hypotheses_hold.then_some(worst_gap <= opts.conclusion_tol),
        density_margin,
        boundary_margin,
        psh_u,
        psh_v,
        modulus_u,
        modulus_v,
        worst_gap,
        worst_cell,
    })
}

/// A Dirichlet problem with known solution.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub exact: FieldRef<f64>,
    pub density: FieldRef<f64>,
}

/// `|z|^2` with `f = 8`, `x1` with `f = 0`, and `|z|^2 + |z1|^4 / 4` with
/// its own density.
pub fn manufactured_cases(frame: &Frame<f64>) -> Result<Vec<ManufacturedCase>> {
    use crate::field::{common, JetFn};
    let quartic = common::expr::<f64>("x1^2+y1^2+x2^2+y2^2+0.25*(x1^2+y1^2)^2")?;
    let (e, fr) = (quartic.clone(), frame.clone());
    let density: FieldRef<f64> = Arc::new(JetFn::new(move |x: &[Jet<f64>; 4]| {
        let p = Point(std::array::from_fn(|k| x[k].value()));
        Jet::constant(ma_density_smooth(e.as_ref(), &fr, &HermitianMetric::Standard, &p).unwrap_or(f64::NAN))
    }));
    Ok(vec![
        ManufacturedCase { name: "norm2", exact: common::norm2(), density: common::constant(8.0) },
        ManufacturedCase { name: "x1", exact: common::coordinate(0), density: common::constant(0.0) },
        ManufacturedCase { name: "quartic", exact: quartic, density },
    ])
}

/// Sup error at the unknown nodes.
pub fn solution_error(sol: &DirichletSolution, exact: &dyn ScalarField<f64>) -> f64 {
    let g = &sol.u.grid;
    (0..g.len())
        .filter(|&f| sol.unknown[f])
        .map(|f| (sol.u.samples[f] - exact.value(&g.node(g.unflat(f)))).abs())
        .fold(0.0, f64::max)
}

/// Manufactured comparison cases whose hypotheses hold by construction.
///
/// Densities dominate because each `v` is `u` with its Hessian scaled up by a
/// factor at least 1 (plus pluriharmonic or constant terms), and `u = v` or
/// `u > v` on the sphere.
pub fn comparison_suite() -> Result<Vec<(ComparisonCase, Flavor)>> {
    use crate::field::{common, ExprField, MaxField};
    use crate::structure::{Ja, Jst, StructureSpec};
    let jst = Frame::new(Arc::new(Jst));
    let unit = Ball::new(Point::origin(), 1.0);
    let e = |s: &str| common::expr::<f64>(s);
    let kinked = |a: &str, b: &str| -> Result<FieldRef<f64>> { Ok(Arc::new(MaxField(vec![e(a)?, e(b)?]))) };
    let case = |name: &str, u: FieldRef<f64>, v: FieldRef<f64>, domain: Ball, frame: &Frame<f64>| ComparisonCase {
        name: name.into(),
        u,
        v,
        domain,
        frame: frame.clone(),
        metric: HermitianMetric::Standard,
    };
    let ja = Frame::new(Arc::new(Ja::<f64>::parse("0.1*x1*x2")?));
    let sim_box = GridBox::cube(0.6, 5)?;
    let sim = Frame::new(StructureSpec::Similarity(42).build(&sim_box)?);
    let small = Ball::new(Point::origin(), 0.5);
    // psh with modulus ~ |log|z1||^-4
    let w = "0.01*(-1/(0.5*log(x1^2+y1^2)-log(2))^4)";
    let log_field = |src: String| -> Result<FieldRef<f64>> {
        Ok(Arc::new(ExprField::parse(&src)?.with_regularity(Regularity::Continuous)))
    };
    let two_slopes = "1.2*(x1^2+y1^2+x2^2+y2^2)-0.2";
    Ok(vec![
        (case("scaled", common::norm2(), e("1.1*(x1^2+y1^2+x2^2+y2^2)-0.1")?, unit, &jst), Flavor::C2),
        (case("equal", common::norm2(), common::norm2(), unit, &jst), Flavor::C2),
        (
            case("pluriharmonic shift", e("x1^2+y1^2+x2^2+y2^2+x1")?, e("x1^2+y1^2+x2^2+y2^2+x1-0.2")?, unit, &jst),
            Flavor::C2,
        ),
        (case("anisotropic", common::norm2(), e("2*(x1^2+y1^2)+x2^2+y2^2-1")?, unit, &jst), Flavor::C2),
        (case("ja scaled", common::norm2(), e(two_slopes)?, unit, &ja), Flavor::C2),
        (case("similarity scaled", common::norm2(), e("1.1*(x1^2+y1^2+x2^2+y2^2)-0.025")?, small, &sim), Flavor::C2),
        (
            case(
                "kinked pair",
                kinked("x1^2+y1^2+x2^2+y2^2", "x1^2+y1^2+x2^2+y2^2+0.3*x1")?,
                kinked("1.1*(x1^2+y1^2+x2^2+y2^2)-0.13", "1.1*(x1^2+y1^2+x2^2+y2^2)+0.3*x1-0.13")?,
                unit,
                &jst,
            ),
            Flavor::Lipschitz,
        ),
        (
            case("kinked v", common::norm2(), kinked("x1^2+y1^2+x2^2+y2^2-0.1", two_slopes)?, unit, &jst),
            Flavor::Lipschitz,
        ),
        (
            case("kinked v under ja", common::norm2(), kinked("x1^2+y1^2+x2^2+y2^2-0.1", two_slopes)?, unit, &ja),
            Flavor::Lipschitz,
        ),
        (
            case(
                "log modulus",
                log_field(format!("x1^2+y1^2+x2^2+y2^2+{w}"))?,
                log_field(format!("1.05*(x1^2+y1^2+x2^2+y2^2)-0.05+{w}"))?,
                unit,
                &jst,
            ),
            Flavor::LogModulus,
        ),
    ])
}

/// Negative controls, built to break the density order, the boundary order
/// and plurisubharmonicity of `v` respectively.
pub fn comparison_controls() -> Result<Vec<(ComparisonCase, Flavor)>> {
    use crate::field::common;
    use crate::structure::Jst;
    let jst = Frame::new(Arc::new(Jst));
    let unit = Ball::new(Point::origin(), 1.0);
    let case = |name: &str, v: &str| -> Result<ComparisonCase> {
        Ok(ComparisonCase {
            name: name.into(),
            u: common::norm2(),
            v: common::expr(v)?,
            domain: unit,
            frame: jst.clone(),
            metric: HermitianMetric::Standard,
        })
    };
    Ok(vec![
        (case("smaller density", "x1^2+y1^2+x2^2+y2^2+0.05*(1-x1^2-y1^2-x2^2-y2^2)")?, Flavor::C2),
        (case("boundary above", "x1^2+y1^2+x2^2+y2^2+0.01")?, Flavor::C2),
        (case("not psh", "2-x1^2-y1^2-x2^2-y2^2")?, Flavor::C2),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{common, MaxField};
    use crate::structure::{Ja, Jst};

    fn jst() -> Frame<f64> {
        Frame::new(Arc::new(Jst))
    }

    use super::solution_error as max_error;

    #[test]
    fn defining_functions() {
        let working = GridBox::cube(1.0, 5).unwrap();
        let ball = Ball::new(Point::origin(), 0.5);
        let d = defining_function(&ball, &working, &jst(), 32, 0).unwrap();
        assert!((d.lambda_min - 4.0).abs() < 1e-12);
        assert!((d.rho.value(&Point::origin()) + 0.25).abs() < 1e-15);
        assert!((d.min_gradient - 1.0).abs() < 1e-12);
        let ja = Frame::new(Arc::new(Ja::<f64>::parse("0.1*x1").unwrap()));
        assert!(defining_function(&ball, &working, &ja, 32, 0).unwrap().lambda_min > 0.0);
        let touching = Ball::new(Point([0.6, 0.0, 0.0, 0.0]), 0.5);
        assert!(matches!(
            defining_function(&touching, &working, &jst(), 8, 0),
            Err(AcxError::InvalidProblem(_))
        ));
    }

    #[test]
    fn recovers_norm_squared_from_a_different_start() {
        let exact = common::norm2::<f64>();
        let mut prob = DirichletProblem::on_ball(
            Ball::new(Point::origin(), 0.8),
            exact.clone(),
            common::constant(8.0),
            jst(),
        );
        prob.initial = Some(common::expr("1.5*(x1^2+y1^2+x2^2+y2^2)-0.32").unwrap());
        let sol = solve_dirichlet(&prob, &SolveOptions { resolution: 13, ..Default::default() }).unwrap();
        assert!(sol.report.converged, "{:?}", sol.report);
        assert!(sol.report.newton_steps > 0);
        assert!(max_error(&sol, exact.as_ref()) < 1e-9);
    }

    #[test]
    fn homogeneous_problem_keeps_pluriharmonic_data() {
        let x1 = common::coordinate::<f64>(0);
        let prob = DirichletProblem::on_ball(Ball::new(Point::origin(), 0.8), x1.clone(), common::constant(0.0), jst());
        let sol = solve_dirichlet(&prob, &SolveOptions { resolution: 11, ..Default::default() }).unwrap();
        assert!(sol.report.converged);
        assert!(max_error(&sol, x1.as_ref()) < 1e-14);
    }

    #[test]
    fn reported_certificates_match_recomputation() {
        let case = manufactured_cases(&jst()).unwrap().pop().unwrap();
        let exact = case.exact.clone();
        let prob = DirichletProblem::on_ball(Ball::new(Point::origin(), 0.8), exact.clone(), case.density, jst());
        let sol = solve_dirichlet(&prob, &SolveOptions { resolution: 13, ..Default::default() }).unwrap();
        assert!(sol.report.converged);
        let (res, lmin) = recompute_certificates(&prob, &sol).unwrap();
        assert!((res - sol.report.residual).abs() <= 1e-12, "{res} {}", sol.report.residual);
        assert!((lmin - sol.report.lambda_min).abs() <= 1e-12);
        let err = max_error(&sol, exact.as_ref());
        assert!(err > 0.0 && err < 5e-3, "{err}");
    }

    #[test]
    fn negative_density_is_refused() {
        let prob = DirichletProblem::on_ball(
            Ball::new(Point::origin(), 0.5),
            common::norm2(),
            common::constant(-1.0),
            jst(),
        );
        assert!(matches!(
            solve_dirichlet(&prob, &SolveOptions { resolution: 9, ..Default::default() }),
            Err(AcxError::InvalidProblem(_))
        ));
        let prob = DirichletProblem::on_ball(Ball::new(Point::origin(), 0.5), common::norm2(), common::constant(8.0), jst());
        assert!(solve_dirichlet(&prob, &SolveOptions { resolution: 7, ..Default::default() }).is_err());
    }

    fn case(name: &str, u: FieldRef<f64>, v: FieldRef<f64>) -> ComparisonCase {
        ComparisonCase {
            name: name.into(),
            u,
            v,
            domain: Ball::new(Point::origin(), 1.0),
            frame: jst(),
            metric: HermitianMetric::Standard,
        }
    }

    fn quick() -> ComparisonOptions {
        ComparisonOptions { resolution: 9, boundary_directions: 64, modulus_pairs: 200, ..Default::default() }
    }

    #[test]
    fn comparison_examples() {
        let c = case("scaled", common::norm2(), common::expr("1.1*(x1^2+y1^2+x2^2+y2^2)-0.1").unwrap());
        let v = comparison_check(&c, Flavor::C2, &quick()).unwrap();
        assert!(v.hypotheses_hold && v.conclusion_holds == Some(true), "{v:?}");
        assert!((v.density_margin - (1.21 - 1.0) * 8.0).abs() < 1e-9);

        let c = case("equal", common::norm2(), common::norm2());
        let v = comparison_check(&c, Flavor::C2, &quick()).unwrap();
        assert!(v.hypotheses_hold && v.conclusion_holds == Some(true));
        assert!(v.worst_gap.abs() < 1e-15 && v.density_margin.abs() < 1e-12);

        let c = case("control", common::norm2(), common::expr("x1^2+y1^2+x2^2+y2^2+0.05*(1-x1^2-y1^2-x2^2-y2^2)").unwrap());
        let v = comparison_check(&c, Flavor::C2, &quick()).unwrap();
        assert!(!v.hypotheses_hold && v.conclusion_holds.is_none());
    }

    #[test]
    fn lipschitz_and_log_flavors_estimate_moduli() {
        let u: FieldRef<f64> = Arc::new(MaxField(vec![
            common::norm2(),
            common::expr("x1^2+y1^2+x2^2+y2^2+0.2*x1").unwrap(),
        ]));
        let c = case("kink", u.clone(), common::expr("x1^2+y1^2+x2^2+y2^2-0.3*(1-x1^2-y1^2-x2^2-y2^2)").unwrap());
        for flavor in [Flavor::Lipschitz, Flavor::LogModulus] {
            let v = comparison_check(&c, flavor, &quick()).unwrap();
            let m = v.modulus_u.as_ref().unwrap();
            assert!(m.constant.is_finite() && m.constant > 0.0);
            assert!(m.band.0 <= m.band.1);
            assert_eq!(v.conclusion_holds, v.hypotheses_hold.then_some(true), "{v:?}");
        }
    }
}
