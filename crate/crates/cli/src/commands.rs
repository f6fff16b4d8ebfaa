use std::f64::consts::PI;
use std::sync::Arc;

use acx::calculus::{
    grid_integrability_tol, identity_residuals, integrability_check, FormRef, INTEGRABILITY_TOL,
};
use acx::config::{Cell, Config, ResultTable};
use acx::dirichlet::{
    comparison_check, comparison_controls, comparison_suite, manufactured_cases, recompute_certificates,
    solution_error, solve_dirichlet, ComparisonCase, ComparisonOptions, DirichletProblem, Flavor, ManufacturedCase,
    SolveOptions,
};
use acx::field::{common, FieldRef, MaxField};
use acx::forms::RandomForm;
use acx::frame::Frame;
use acx::geometry::{GridBox, Point};
use acx::hessian::HermitianMetric;
use acx::ma::{
    cross_pairing, ma_measure, point_mass, scaling_probe, truncation_norms, wedge_pairing, BallRule, Bump, LineRule, LogPole,
    MaOptions, Monotonicity, Region, RegularizationSchedule, SingularModel,
};
use acx::quad::sphere_directions;
use acx::smoothing::{richberg, smoothed, Backend, Ball, RichbergOptions};
use acx::structure::{FdStructure, StructureSpec};
use acx::tj::{ja_closed_form, tj_field};
use acx::{AcxError, Result};

use crate::Command;

const DEFAULT_BRANCHES: &str = "x1^2+y1^2+x2^2+y2^2; x1^2+y1^2+x2^2+y2^2+0.3*x1";

pub fn name(cmd: Command) -> &'static str {
    match cmd {
        Command::Identities => "identities",
        Command::Integrability => "integrability",
        Command::Tj => "tj",
        Command::Pointmass => "pointmass",
        Command::Wedge => "wedge",
        Command::Mameasure => "mameasure",
        Command::Smooth => "smooth",
        Command::Dirichlet => "dirichlet",
        Command::Compare => "compare",
        Command::Sobolev => "sobolev",
    }
}

/// Keys accepted besides the shared ones.
pub fn keys(cmd: Command) -> &'static [&'static str] {
    match cmd {
        Command::Identities => &["forms", "points", "fd_step"],
        Command::Integrability => &["expect"],
        Command::Tj => &["points"],
        Command::Pointmass => &["A", "k_list", "directions"],
        Command::Wedge => &["pairs", "cells", "radius"],
        Command::Mameasure => &["branches", "center", "radius", "s0", "steps", "region", "nodes", "directions"],
        Command::Smooth => &["branches", "h", "center", "half_width", "width_factor", "backend"],
        Command::Dirichlet => &["case", "exact", "density", "radius", "grid_list"],
        Command::Compare => &["suite", "u", "v", "flavor", "radius"],
        Command::Sobolev => &["probe", "A", "levels", "u", "center", "radii", "directions"],
    }
}

pub fn run(cmd: Command, cfg: &mut Config) -> Result<ResultTable> {
    cfg.default("seed", 0)?;
    match cmd {
        Command::Identities => identities(cfg),
        Command::Integrability => integrability(cfg),
        Command::Tj => tj(cfg),
        Command::Pointmass => pointmass(cfg),
        Command::Wedge => wedge(cfg),
        Command::Mameasure => mameasure(cfg),
        Command::Smooth => smooth(cfg),
        Command::Dirichlet => dirichlet(cfg),
        Command::Compare => compare(cfg),
        Command::Sobolev => sobolev(cfg),
    }
}

/// Every boolean certificate is true.
pub fn passed(t: &ResultTable) -> bool {
    t.certificates.iter().all(|(_, c)| !matches!(c, Cell::Bool(false)))
}

fn grid_jets(cfg: &mut Config) -> Result<bool> {
    cfg.default("jets", "analytic")?;
    match cfg.raw("jets") {
        Some("analytic") => Ok(false),
        Some("grid") => Ok(true),
        Some(other) => Err(AcxError::Config(format!("jets must be analytic or grid, got `{other}`"))),
        None => unreachable!(),
    }
}

fn working_box(cfg: &mut Config, resolution: usize) -> Result<GridBox<f64>> {
    cfg.default("lower", "-1,-1,-1,-1")?;
    cfg.default("upper", "1,1,1,1")?;
    cfg.default("resolution", resolution)?;
    cfg.default("structure", "jst")?;
    cfg.grid_box()
}

fn frame_on(cfg: &Config, grid: &GridBox<f64>, fd: Option<f64>) -> Result<Frame<f64>> {
    let j = cfg.structure()?.build(grid)?;
    let j = match fd {
        Some(h) => Arc::new(FdStructure { inner: j, h }) as acx::structure::StructureRef<f64>,
        None => j,
    };
    let frame = Frame::new(j);
    frame.validate(grid)?;
    Ok(frame)
}

/// Seeded points in the inner half of the box.
fn sample_points(grid: &GridBox<f64>, count: usize, seed: u64) -> Vec<Point<f64>> {
    let c: [f64; 4] = std::array::from_fn(|m| 0.5 * (grid.lower[m] + grid.upper[m]));
    let half: f64 = (0..4).map(|m| 0.5 * (grid.upper[m] - grid.lower[m])).fold(f64::INFINITY, f64::min);
    sphere_directions(count, seed)
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let t = 0.5 * half * (i + 1) as f64 / (count + 1) as f64;
            Point(std::array::from_fn(|m| c[m] + t * d[m]))
        })
        .collect()
}

fn point_cells(p: &Point<f64>) -> Vec<Cell> {
    p.0.iter().map(|&x| Cell::Num(x)).collect()
}

fn branches(cfg: &mut Config) -> Result<FieldRef<f64>> {
    cfg.default("branches", DEFAULT_BRANCHES)?;
    let src = cfg.raw("branches").unwrap().to_string();
    let parts: Result<Vec<FieldRef<f64>>> = src.split(';').map(|s| common::expr(s.trim())).collect();
    let parts = parts?;
    Ok(match parts.len() {
        0 => return Err(AcxError::Config("`branches` is empty".into())),
        1 => parts[0].clone(),
        _ => Arc::new(MaxField(parts)),
    })
}

fn point_key(cfg: &mut Config, key: &str, default: &str) -> Result<Point<f64>> {
    cfg.default(key, default)?;
    Ok(cfg.point(key)?.unwrap())
}

fn identities(cfg: &mut Config) -> Result<ResultTable> {
    let grid = grid_jets(cfg)?;
    let bx = working_box(cfg, 5)?;
    cfg.default("forms", 10)?;
    cfg.default("points", 4)?;
    cfg.default("fd_step", 0.05)?;
    cfg.default("tol", 1e-8)?;
    let seed = cfg.seed()?;
    let (nf, np): (usize, usize) = (cfg.get_or("forms", 0)?, cfg.get_or("points", 0)?);
    let step: f64 = cfg.get_or("fd_step", 0.0)?;
    let tol: f64 = cfg.get_or("tol", 0.0)?;
    let frame = frame_on(cfg, &bx, None)?;
    let bidegrees = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2)];
    let forms: Vec<FormRef<f64>> = (0..nf)
        .map(|i| {
            let (p, q) = bidegrees[i % bidegrees.len()];
            Arc::new(RandomForm::new(p, q, seed.wrapping_add(i as u64))) as FormRef<f64>
        })
        .collect();
    let points = sample_points(&bx, np, seed);
    let mut t = ResultTable::new(&["identity", "h", "sup_residual", "ratio_vs_prev_h"]);
    if grid {
        let coarse = identity_residuals(&frame, &forms, &points, Some(step))?;
        let fine = identity_residuals(&frame, &forms, &points, Some(0.5 * step))?;
        let mut ok = true;
        for (c, f) in coarse.iter().zip(&fine) {
            let ratio = c.sup_residual / f.sup_residual;
            ok &= (3.5..=4.5).contains(&ratio) || c.sup_residual.max(f.sup_residual) <= tol;
            t.push(vec![c.identity.clone().into(), step.into(), c.sup_residual.into(), Cell::Text(String::new())]);
            t.push(vec![f.identity.clone().into(), (0.5 * step).into(), f.sup_residual.into(), ratio.into()]);
        }
        t.certify("halving_ratio_in_3.5_4.5", ok);
    } else {
        let recs = identity_residuals(&frame, &forms, &points, None)?;
        let worst = recs.iter().map(|r| r.sup_residual).fold(0.0, f64::max);
        for r in &recs {
            t.push(vec![r.identity.clone().into(), "analytic".into(), r.sup_residual.into(), Cell::Text(String::new())]);
        }
        t.certify("sup_residual", worst);
        t.certify("residual_below_tol", worst <= tol);
    }
    Ok(t)
}

fn integrability(cfg: &mut Config) -> Result<ResultTable> {
    let grid = grid_jets(cfg)?;
    let bx = working_box(cfg, 5)?;
    let fd = grid.then(|| bx.h());
    let frame = frame_on(cfg, &bx, fd)?;
    let tol = if grid { grid_integrability_tol(&frame, &bx) } else { INTEGRABILITY_TOL };
    cfg.default("tol", tol)?;
    let tol = cfg.get_or("tol", tol)?;
    let r = integrability_check(&frame, &bx, tol)?;
    let mut t = ResultTable::new(&["structure", "integrable", "sup_norm", "x1", "y1", "x2", "y2", "tolerance"]);
    let mut row = vec![cfg.structure()?.to_string().into(), r.integrable.into(), r.sup_norm.into()];
    row.extend(point_cells(&Point(r.witness)));
    row.push(r.tolerance.into());
    t.push(row);
    match cfg.raw("expect") {
        None => {}
        Some("integrable") => t.certify("matches_expectation", r.integrable),
        Some("nonintegrable") => t.certify("matches_expectation", !r.integrable),
        Some(other) => {
            return Err(AcxError::Config(format!("expect must be integrable or nonintegrable, got `{other}`")))
        }
    }
    Ok(t)
}

fn tj(cfg: &mut Config) -> Result<ResultTable> {
    let grid = grid_jets(cfg)?;
    let bx = working_box(cfg, 5)?;
    cfg.default("points", 5)?;
    cfg.default("tol", 1e-6)?;
    let tol: f64 = cfg.get_or("tol", 0.0)?;
    let fd = grid.then(|| 0.5 * bx.h());
    let frame = frame_on(cfg, &bx, None)?;
    let a = match cfg.structure()? {
        StructureSpec::Ja(e) => Some(common::expr::<f64>(&e)?),
        _ => None,
    };
    let mut cols = vec!["x1", "y1", "x2", "y2", "t1", "t2", "t3", "t4"];
    cols.extend(["closed1", "closed2", "closed3", "closed4", "bracket1", "bracket2", "bracket3", "bracket4"]);
    cols.extend(["diff_closed", "diff_bracket", "imag_residue"]);
    let mut t = ResultTable::new(&cols);
    let (mut worst_bracket, mut worst_closed, mut worst_imag) = (0.0f64, 0.0f64, 0.0f64);
    for p in sample_points(&bx, cfg.get_or("points", 5)?, cfg.seed()?) {
        let v = tj_field(&frame, &p, fd)?;
        let (closed, bracket) = match &a {
            Some(a) => {
                let c = ja_closed_form(a.as_ref(), &p);
                (c.tj, c.tj_bracket)
            }
            None => ([f64::NAN; 4], [f64::NAN; 4]),
        };
        let diff = |c: &[f64; 4]| (0..4).map(|m| (v.components[m] - c[m]).abs()).fold(0.0, f64::max);
        let (dp, db) = (diff(&closed), diff(&bracket));
        if a.is_some() {
            worst_closed = worst_closed.max(dp);
            worst_bracket = worst_bracket.max(db);
        }
        worst_imag = worst_imag.max(v.imag_residue);
        let mut row = point_cells(&p);
        row.extend(v.components.iter().chain(&closed).chain(&bracket).map(|&x| Cell::Num(x)));
        row.extend([dp.into(), db.into(), v.imag_residue.into()]);
        t.push(row);
    }
    t.certify("imag_residue_below_1e-8", worst_imag <= 1e-8);
    if a.is_some() {
        t.certify("max_diff_closed", worst_closed);
        t.certify("max_diff_bracket", worst_bracket);
        t.certify("bracket_form_within_tol", worst_bracket <= tol);
    }
    Ok(t)
}

fn pointmass(cfg: &mut Config) -> Result<ResultTable> {
    let bx = working_box(cfg, 5)?;
    cfg.default("A", 0.0)?;
    cfg.default("k_list", "4,8,16,32,64")?;
    cfg.default("directions", 2000)?;
    let a: f64 = cfg.get_or("A", 0.0)?;
    let ks: Vec<f64> = cfg.list("k_list")?.unwrap();
    let dirs: usize = cfg.get_or("directions", 2000)?;
    let frame = frame_on(cfg, &bx, None)?;
    let metric = HermitianMetric::Standard;
    let mut t = ResultTable::new(&[
        "row", "k", "A", "mass", "closed_form", "rel_err", "bracket_lo", "bracket_hi", "in_bracket",
    ]);
    let (mut worst, mut inside, mut last) = (0.0f64, true, None);
    for &k in &ks {
        let model = SingularModel::new(a, k);
        let r = point_mass(&model, &frame, &metric, dirs, cfg.seed()?)?;
        let ok = r.inside_bracket(1e-9);
        worst = worst.max(r.rel_err);
        inside &= ok;
        t.push(vec![
            "k".into(),
            k.into(),
            a.into(),
            r.mass.into(),
            r.closed_form.into(),
            r.rel_err.into(),
            r.bracket.0.into(),
            r.bracket.1.into(),
            ok.into(),
        ]);
        last = Some(r);
    }
    let last = last.ok_or_else(|| AcxError::Config("k_list is empty".into()))?;
    let pi2 = PI * PI;
    let limit_err = (last.mass - pi2).abs() / pi2;
    let nan = Cell::Num(f64::NAN);
    t.push(vec![
        "limit".into(),
        last.k.into(),
        a.into(),
        last.mass.into(),
        pi2.into(),
        limit_err.into(),
        nan.clone(),
        nan,
        Cell::Text(String::new()),
    ]);
    t.certify("closed_form_within_2pct", worst <= 0.02);
    t.certify("inside_bracket", inside);
    if a == 0.0 {
        t.certify("limit_within_1pct", limit_err <= 0.01);
    }
    Ok(t)
}

fn wedge(cfg: &mut Config) -> Result<ResultTable> {
    let bx = working_box(cfg, 5)?;
    cfg.default("pairs", 3)?;
    cfg.default("cells", 8)?;
    cfg.default("radius", 0.5)?;
    let (pairs, cells): (usize, usize) = (cfg.get_or("pairs", 3)?, cfg.get_or("cells", 8)?);
    let radius: f64 = cfg.get_or("radius", 0.5)?;
    let seed = cfg.seed()?;
    let frame = frame_on(cfg, &bx, None)?;
    let center: [f64; 4] = std::array::from_fn(|m| 0.5 * (bx.lower[m] + bx.upper[m]));
    let phi = Bump::new(Point(center), radius);
    let mut t = ResultTable::new(&["pair", "cells", "h", "weak", "strong", "abs_diff", "ratio", "symmetry_gap"]);
    let (mut rate_ok, mut sym_ok) = (true, true);
    for i in 0..pairs {
        let (u, _) = common::random_smooth::<f64>(seed.wrapping_add(2 * i as u64), 0.1);
        let (v, _) = common::random_smooth::<f64>(seed.wrapping_add(2 * i as u64 + 1), 0.1);
        let mut prev: Option<f64> = None;
        for n in [cells, 2 * cells] {
            let w = wedge_pairing(u.as_ref(), v.as_ref(), &phi, &frame, &bx, n)?;
            let s = cross_pairing(u.as_ref(), v.as_ref(), &phi, &frame, &bx, n)?;
            let swapped = wedge_pairing(v.as_ref(), u.as_ref(), &phi, &frame, &bx, n)?;
            let diff = (w.value - s).abs();
            let sym = (w.value - swapped.value).abs();
            let ratio = prev.map_or(f64::NAN, |p| p / diff);
            if prev.is_some() {
                rate_ok &= ratio >= 3.5 || diff <= 1e-12 * s.abs();
            }
            sym_ok &= sym <= 2.0 * diff.max(1e-12 * s.abs());
            t.push(vec![
                i.into(),
                n.into(),
                w.h.into(),
                w.value.into(),
                s.into(),
                diff.into(),
                ratio.into(),
                sym.into(),
            ]);
            prev = Some(diff);
        }
    }
    t.certify("second_order", rate_ok);
    t.certify("symmetric", sym_ok);
    Ok(t)
}

fn mameasure(cfg: &mut Config) -> Result<ResultTable> {
    let bx = working_box(cfg, 5)?;
    let u = branches(cfg)?;
    let center = point_key(cfg, "center", "0,0,0,0")?;
    cfg.default("radius", 0.5)?;
    cfg.default("s0", 0.2)?;
    cfg.default("steps", 12)?;
    cfg.default("region", "lines")?;
    let radius: f64 = cfg.get_or("radius", 0.5)?;
    let s0: f64 = cfg.get_or("s0", 0.2)?;
    let steps: usize = cfg.get_or("steps", 12)?;
    let seed = cfg.seed()?;
    let frame = frame_on(cfg, &bx, None)?;
    let widths: Vec<f64> = (0..steps).map(|j| s0 * 0.5f64.powi(j as i32)).collect();
    let members = widths.iter().map(|&s| smoothed(&u, s)).collect();
    let schedule = RegularizationSchedule::new(members, Monotonicity::Decreasing);
    let region = match cfg.raw("region") {
        Some("lines") => {
            cfg.default("nodes", 4)?;
            let mut rule = LineRule::cube(&center, radius);
            rule.transverse = cfg.get_or("nodes", 4)?;
            rule.tol = 1e-10;
            Region::Lines(rule)
        }
        Some("ball") => {
            cfg.default("directions", 400)?;
            let mut rule = BallRule::new(center, radius);
            rule.directions = cfg.get_or("directions", 400)?;
            rule.seed = seed;
            rule.tol = 1e-10;
            Region::Ball(rule)
        }
        other => return Err(AcxError::Config(format!("region must be lines or ball, got {other:?}"))),
    };
    let ball = Ball::new(center, radius);
    let mut samples = ball.sphere(&sphere_directions(256, seed));
    samples.extend(sphere_directions(256, seed + 1).iter().map(|d| ball.at(d, 0.5)));
    let report = ma_measure(&schedule, &frame, &region, &samples, MaOptions::default())?;
    let mut t = ResultTable::new(&["step", "s", "total_mass", "delta", "sup_gap"]);
    for r in &report.log {
        t.push(vec![
            r.step.into(),
            widths[r.step].into(),
            r.total_mass.into(),
            r.delta.unwrap_or(f64::NAN).into(),
            r.sup_gap.into(),
        ]);
    }
    t.certify("converged", report.converged);
    Ok(t)
}

fn smooth(cfg: &mut Config) -> Result<ResultTable> {
    cfg.default("structure", "jst")?;
    let u = branches(cfg)?;
    let center = point_key(cfg, "center", "0,0,0,0")?;
    cfg.default("half_width", 0.05)?;
    cfg.default("resolution", 17)?;
    cfg.default("h", 0.2)?;
    cfg.default("width_factor", 0.3)?;
    cfg.default("backend", "patch")?;
    let half: f64 = cfg.get_or("half_width", 0.05)?;
    let k = GridBox::centered_cube(&center, half, cfg.get_or("resolution", 17)?)?;
    let frame = frame_on(cfg, &k, None)?;
    let h = common::constant(cfg.get_or("h", 0.2)?);
    let mut opts = RichbergOptions::default();
    opts.candidate.smoothing_width = 3.0 * k.h() * cfg.get_or("width_factor", 0.3)?;
    opts.cover.seed = cfg.seed()?;
    opts.candidate.seed = cfg.seed()?;
    opts.backend = match cfg.raw("backend") {
        Some("patch") => Backend::Patch,
        Some("dirichlet") => Backend::Dirichlet,
        other => return Err(AcxError::Config(format!("backend must be patch or dirichlet, got {other:?}"))),
    };
    let out = richberg(&u, &h, &k, &frame, &opts)?;
    let mut t = ResultTable::new(&[
        "piece",
        "s",
        "binding",
        "band_limit",
        "boundary_limit",
        "bookkeeping_limit",
        "band_min",
        "band_max",
        "lambda_min",
    ]);
    for s in &out.steps {
        t.push(vec![
            s.piece.into(),
            s.s.into(),
            s.binding.clone().into(),
            s.band_limit.into(),
            s.boundary_limit.into(),
            s.bookkeeping_limit.into(),
            s.band_min.into(),
            s.band_max.into(),
            s.lambda_min.into(),
        ]);
    }
    let c = &out.certificates;
    t.certify("pieces", out.cover.len());
    t.certify("band_min", c.band_min);
    t.certify("band_max", c.band_max);
    t.certify("band_ok", c.band_ok);
    t.certify("lambda_min", c.lambda_min);
    t.certify("psh_ok", c.psh_ok);
    t.certify("fd_ratio", c.fd_ratio);
    t.certify("fd_ok", c.fd_ok);
    Ok(t)
}

fn dirichlet_case(cfg: &mut Config, frame: &Frame<f64>) -> Result<ManufacturedCase> {
    cfg.default("case", "norm2")?;
    let name = cfg.raw("case").unwrap().to_string();
    if name == "custom" {
        let (exact, density) = match (cfg.raw("exact"), cfg.raw("density")) {
            (Some(e), Some(d)) => (common::expr(e)?, common::expr(d)?),
            _ => return Err(AcxError::Config("case = custom needs `exact` and `density`".into())),
        };
        return Ok(ManufacturedCase { name: "custom", exact, density });
    }
    manufactured_cases(frame)?
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| AcxError::Config(format!("unknown case `{name}` (norm2, x1, quartic or custom)")))
}

fn dirichlet(cfg: &mut Config) -> Result<ResultTable> {
    cfg.default("structure", "jst")?;
    cfg.default("radius", 0.8)?;
    cfg.default("grid_list", "9,17")?;
    cfg.default("tol", 1e-9)?;
    let radius: f64 = cfg.get_or("radius", 0.8)?;
    let ball = Ball::new(Point::origin(), radius);
    let outer = GridBox::cube(1.0, 5)?;
    let frame = frame_on(cfg, &outer, None)?;
    let case = dirichlet_case(cfg, &frame)?;
    let levels: Vec<usize> = cfg.list("grid_list")?.unwrap();
    let tol: f64 = cfg.get_or("tol", 1e-9)?;
    let mut t = ResultTable::new(&[
        "case",
        "n",
        "h",
        "unknowns",
        "newton_steps",
        "linear_iterations",
        "residual",
        "lambda_min",
        "boundary_error",
        "sup_error",
        "ratio",
        "converged",
    ]);
    let (mut converged, mut recomputed, mut rate) = (true, true, true);
    let mut prev: Option<f64> = None;
    for n in levels {
        let prob = DirichletProblem::on_ball(ball, case.exact.clone(), case.density.clone(), frame.clone());
        let sol = solve_dirichlet(&prob, &SolveOptions { resolution: n, tol, ..Default::default() })?;
        let r = &sol.report;
        let (res, lmin) = recompute_certificates(&prob, &sol)?;
        recomputed &= (res - r.residual).abs() <= 1e-12 * res.abs().max(1.0)
            && (lmin - r.lambda_min).abs() <= 1e-12 * lmin.abs().max(1.0);
        converged &= r.converged;
        let err = solution_error(&sol, case.exact.as_ref());
        let ratio = prev.map_or(f64::NAN, |p| p / err);
        if let Some(p) = prev {
            rate &= (3.0..=5.0).contains(&ratio) || p.max(err) < 1e-10;
        }
        prev = Some(err);
        t.push(vec![
            case.name.into(),
            n.into(),
            r.h.into(),
            r.unknowns.into(),
            r.newton_steps.into(),
            r.linear_iterations.into(),
            r.residual.into(),
            r.lambda_min.into(),
            r.boundary_error.into(),
            err.into(),
            ratio.into(),
            r.converged.into(),
        ]);
    }
    t.certify("converged", converged);
    t.certify("certificates_recomputed", recomputed);
    t.certify("second_order", rate);
    Ok(t)
}

fn flavor(s: &str) -> Result<Flavor> {
    match s {
        "c2" => Ok(Flavor::C2),
        "lipschitz" => Ok(Flavor::Lipschitz),
        "log" => Ok(Flavor::LogModulus),
        _ => Err(AcxError::Config(format!("flavor must be c2, lipschitz or log, got `{s}`"))),
    }
}

fn compare(cfg: &mut Config) -> Result<ResultTable> {
    cfg.default("structure", "jst")?;
    cfg.default("suite", "builtin")?;
    cfg.default("resolution", 17)?;
    let opts = ComparisonOptions { resolution: cfg.get_or("resolution", 17)?, seed: cfg.seed()?, ..Default::default() };
    let mut cases: Vec<(ComparisonCase, Flavor, bool)> = Vec::new();
    match cfg.raw("suite") {
        Some("builtin") => {
            cases.extend(comparison_suite()?.into_iter().map(|(c, f)| (c, f, false)));
            cases.extend(comparison_controls()?.into_iter().map(|(c, f)| (c, f, true)));
        }
        Some("custom") => {
            cfg.default("flavor", "c2")?;
            cfg.default("radius", 1.0)?;
            let radius: f64 = cfg.get_or("radius", 1.0)?;
            let (u, v) = match (cfg.raw("u"), cfg.raw("v")) {
                (Some(u), Some(v)) => (common::expr(u)?, common::expr(v)?),
                _ => return Err(AcxError::Config("suite = custom needs `u` and `v`".into())),
            };
            let outer = GridBox::cube(radius * 1.25, 5)?;
            let case = ComparisonCase {
                name: "custom".into(),
                u,
                v,
                domain: Ball::new(Point::origin(), radius),
                frame: frame_on(cfg, &outer, None)?,
                metric: HermitianMetric::Standard,
            };
            cases.push((case, flavor(cfg.raw("flavor").unwrap())?, false));
        }
        other => return Err(AcxError::Config(format!("suite must be builtin or custom, got {other:?}"))),
    }
    let mut t = ResultTable::new(&[
        "name",
        "flavor",
        "control",
        "hypotheses_hold",
        "conclusion",
        "density_margin",
        "boundary_margin",
        "psh_u",
        "psh_v",
        "worst_gap",
    ]);
    let (mut spurious, mut controls_ok) = (false, true);
    for (case, fl, control) in &cases {
        let v = comparison_check(case, *fl, &opts)?;
        spurious |= v.conclusion_holds == Some(false);
        if *control {
            controls_ok &= !v.hypotheses_hold && v.conclusion_holds.is_none();
        }
        let conclusion = match v.conclusion_holds {
            Some(true) => "holds",
            Some(false) => "violated",
            None => "not claimed",
        };
        t.push(vec![
            v.name.into(),
            format!("{fl:?}").into(),
            (*control).into(),
            v.hypotheses_hold.into(),
            conclusion.into(),
            v.density_margin.into(),
            v.boundary_margin.into(),
            v.psh_u.into(),
            v.psh_v.into(),
            v.worst_gap.into(),
        ]);
    }
    t.certify("no_violated_conclusion", !spurious);
    t.certify("controls_rejected", controls_ok);
    Ok(t)
}

fn sobolev(cfg: &mut Config) -> Result<ResultTable> {
    let bx = working_box(cfg, 5)?;
    let frame = frame_on(cfg, &bx, None)?;
    let metric = HermitianMetric::Standard;
    cfg.default("probe", "truncation")?;
    let seed = cfg.seed()?;
    match cfg.raw("probe") {
        Some("truncation") => {
            cfg.default("A", 0.0)?;
            cfg.default("levels", "1,2,3,4,5,6,7,8")?;
            cfg.default("directions", 64)?;
            let pole = LogPole::new(cfg.get_or("A", 0.0)?);
            let levels: Vec<f64> = cfg.list("levels")?.unwrap();
            let norms = truncation_norms(&pole, &levels, &frame, &metric, cfg.get_or("directions", 64)?, seed)?;
            let mut t = ResultTable::new(&["j", "value_part", "gradient_part", "norm", "ratio_to_first"]);
            let first = norms.first().map_or(f64::NAN, |n| n.norm);
            for (j, n) in levels.iter().zip(&norms) {
                t.push(vec![(*j).into(), n.value_part.into(), n.gradient_part.into(), n.norm.into(), (n.norm / first).into()]);
            }
            let last = norms.last().map_or(f64::NAN, |n| n.norm / first);
            let decreasing = norms.windows(2).all(|w| w[1].norm < w[0].norm);
            t.certify("decreasing", decreasing);
            t.certify("final_ratio_below_1e-2", last < 1e-2);
            Ok(t)
        }
        Some("scaling") => {
            cfg.default("u", "max(x1^2+y1^2+x2^2+y2^2, 0.1+x1)")?;
            cfg.default("radii", "0.025,0.05,0.1,0.2")?;
            cfg.default("directions", 64)?;
            let z0 = point_key(cfg, "center", "0.3,0.1,0,0")?;
            let u = common::expr::<f64>(cfg.raw("u").unwrap())?;
            let radii: Vec<f64> = cfg.list("radii")?.unwrap();
            let fit = scaling_probe(u.as_ref(), &z0, &radii, &frame, &metric, cfg.get_or("directions", 64)?, seed)?;
            let mut t = ResultTable::new(&["radius", "norm"]);
            for (r, n) in fit.radii.iter().zip(&fit.norms) {
                t.push(vec![(*r).into(), (*n).into()]);
            }
            t.certify("exponent", fit.exponent);
            t.certify("fit_residual", fit.residual);
            t.certify("exponent_at_least_1.7", fit.exponent >= 1.7);
            Ok(t)
        }
        other => Err(AcxError::Config(format!("probe must be truncation or scaling, got {other:?}"))),
    }
}
