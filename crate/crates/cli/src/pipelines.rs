//! The pipelines behind each subcommand. Every pipeline writes its artifacts through
//! [`Artifacts`] and records residuals and fitted constants for the manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use mfg_core::diagnostics::{
    boundary_rate_and_convexity, displacement_convexity_profile, energy_and_modulus, extremum_principle_check,
    harnack_ratio, holder_exponent_of_field, log_coupling_suite, rectangle_principle, Gated,
};
use mfg_core::eulerian::{
    default_epsilons, epsilon_sweep, grid_mass, regularize_marginals, regularize_single, velocity_field,
};
use mfg_core::lagrangian::{
    divergence_residual, eulerian_density, eulerian_value, flow_cost, pushed_mass, solve_and_recover, FlowProblem,
    TerminalCondition,
};
use mfg_core::model::linear_at;
use mfg_core::variational::{cell_mass, solve_bb};
use mfg_core::{
    CongestionProgram64, CouplingLaw64, EulerTerminal, EulerianProblem64, MarginalProfile64, ScalarField64,
    SelfSimilarModel64, SpaceTimeGrid64, Topology,
};

use crate::acceptance;
use crate::artifacts::{num, output_root, sha256_hex, Artifacts, ManifestMeta};
use crate::config::{Config, Data, Mode, Pipeline, TopologyName, CHECKS};
use crate::error::{solver, CliError};

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Value,
}

/// Extra room around a support for the tail bumps of the regularized marginals.
const TAIL_MARGIN: f64 = 2.5;

/// Directory a config writes into: `out` when given, else `outputs.dir` or
/// `<pipeline>-<hash prefix>` under the output root.
pub fn run_dir(cfg: &Config, out: Option<&Path>) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    let name = cfg.outputs.dir.clone().unwrap_or_else(|| {
        let hash = sha256_hex(cfg.canonical().as_bytes());
        format!("{}-{}", cfg.problem.pipeline.name(), &hash[..12])
    });
    output_root().join(name)
}

/// Validates `cfg`, runs its pipeline and writes the manifest. A failed diagnostic check
/// still leaves a complete run directory behind and is reported as [`CliError::Diagnostic`].
pub fn run(cfg: &Config, out: Option<&Path>) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = run_dir(cfg, out);
    let mut art = Artifacts::create(&dir)?;
    let outcome = match cfg.problem.pipeline {
        Pipeline::Selfsim => selfsim(cfg, &mut art),
        Pipeline::SolveFlow => solve_flow(cfg, &mut art),
        Pipeline::SolveElliptic => solve_elliptic(cfg, &mut art),
        Pipeline::Variational => variational(cfg, &mut art),
        Pipeline::Diagnose => diagnose(cfg, &mut art),
        Pipeline::Acceptance => run_acceptance(&mut art),
    };
    let failed_checks = match outcome {
        Ok(()) => None,
        Err(CliError::Diagnostic(m)) => Some(m),
        Err(e) => return Err(e),
    };
    let meta = ManifestMeta {
        pipeline: cfg.problem.pipeline.name(),
        status: if failed_checks.is_some() { "checks-failed" } else { "ok" },
        config_sha256: sha256_hex(cfg.canonical().as_bytes()),
        config: serde_json::to_value(cfg).unwrap_or(Value::Null),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let manifest = art.finish(meta)?;
    match failed_checks {
        Some(m) => Err(CliError::Diagnostic(format!("{m} (artifacts in {})", dir.display()))),
        None => Ok(RunOutcome { dir, manifest }),
    }
}

fn grid_err(e: mfg_core::MfgError) -> CliError {
    CliError::from_core("grid", e)
}

/// Reads a profile file with header `x,m` and strictly increasing x.
pub fn read_profile(bytes: &[u8], name: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let bad = |m: String| CliError::Validation {
        field: name.into(),
        message: m,
    };
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() != 2 || &header[0] != "x" || &header[1] != "m" {
        return Err(bad("profile files need the header `x,m`".into()));
    }
    let (mut xs, mut ms) = (Vec::new(), Vec::new());
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: `{s}` is not a number", k + 1)))
        };
        let (x, m) = (parse(&rec[0])?, parse(&rec[1])?);
        if !x.is_finite() || !(m >= 0.0) || !m.is_finite() {
            return Err(bad(format!("row {}: need finite x and m >= 0", k + 1)));
        }
        if xs.last().is_some_and(|&p| x <= p) {
            return Err(bad(format!("row {}: x must be strictly increasing", k + 1)));
        }
        xs.push(x);
        ms.push(m);
    }
    if xs.len() < 3 {
        return Err(bad("a profile needs at least three rows".into()));
    }
    Ok((xs, ms))
}

fn load_profile(art: &mut Artifacts, path: &Path, field: &str, alpha0: f64) -> Result<MarginalProfile64, CliError> {
    let bytes = art.input_file(path)?;
    let (x, m) = read_profile(&bytes, field)?;
    let (a, b) = (x[0], x[x.len() - 1]);
    MarginalProfile64::fit(x, m, a, b, alpha0).map_err(|e| CliError::from_core(field, e))
}

fn edge_exponent(cfg: &Config) -> Result<f64, CliError> {
    Ok(match cfg.problem.edge_exponent {
        Some(a) => a,
        None => cfg.coupling()?.theta().map_or(1.0, |t| 1.0 / t),
    })
}

/// Self-similar oracle on a slab `[x_min, x_max] x [t_start, t_start + horizon]`.
fn selfsim(cfg: &Config, art: &mut Artifacts) -> Result<(), CliError> {
    let p = &cfg.problem;
    let s = SelfSimilarModel64::new(cfg.theta()?).map_err(|e| CliError::from_core("problem.coupling", e))?;
    let t1 = p.t_start + p.horizon;
    let w = 1.2 * s.support_radius(t1);
    let (a, b) = (cfg.grid.x_min.unwrap_or(-w), cfg.grid.x_max.unwrap_or(w));
    let g = SpaceTimeGrid64::with_start(a, b, p.t_start, p.horizon, cfg.nx(), cfg.nt(), Topology::NeumannInterval)
        .map_err(grid_err)?;
    let mut rows = Vec::with_capacity(g.len());
    for j in 0..g.nt {
        let t = g.t(j);
        for i in 0..g.nx {
            let x = g.x(i);
            let delta = s.delta(x, t);
            let big_s = if delta > 0.0 { s.interface_time(x, t).map_err(solver)? } else { t };
            rows.push(vec![
                x,
                t,
                s.density(x, t).map_err(solver)?,
                s.value(x, t).map_err(solver)?,
                s.velocity(x, t).map_err(solver)?,
                big_s,
                delta,
            ]);
        }
    }
    art.numeric_csv("selfsim.csv", &["x", "t", "m", "u", "ux", "S", "Delta"], rows)?;
    let r = s.residuals(&g).map_err(solver)?;
    art.residual("hj", r.hj);
    art.residual("continuity", r.continuity);
    let mass_defect = [p.t_start, t1]
        .iter()
        .map(|&t| s.mass(t).map(|m| (m - 1.0).abs()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(solver)?;
    art.residual("mass", mass_defect.into_iter().fold(0.0, f64::max));
    art.constant("theta", s.theta);
    art.constant("alpha", s.alpha);
    art.constant("R", s.r);
    art.constant("C_R", s.c_r);
    art.constant("c", s.c);
    Ok(())
}

/// Lagrangian flow solve for the power coupling.
fn solve_flow(cfg: &Config, art: &mut Artifacts) -> Result<(), CliError> {
    let p = &cfg.problem;
    let law = cfg.coupling()?;
    let theta = cfg.theta()?;
    let (nx, nt) = (cfg.nx(), cfg.nt());
    let (m0, mt) = match p.data {
        Data::Selfsimilar => {
            let s = SelfSimilarModel64::new(theta).map_err(|e| CliError::from_core("problem.coupling", e))?;
            let t1 = p.t_start + p.horizon;
            let w = s.support_radius(p.t_start);
            let nodes: Vec<f64> = (0..nx).map(|k| -w + 2.0 * w * k as f64 / (nx - 1) as f64).collect();
            let scale = (t1 / p.t_start).powf(s.alpha);
            let m0 = s.profile(nodes.clone(), p.t_start).map_err(solver)?;
            let mt = s.profile(nodes.iter().map(|x| x * scale).collect(), t1).map_err(solver)?;
            (m0, Some(mt))
        }
        _ => {
            let alpha0 = edge_exponent(cfg)?;
            let m0 = load_profile(art, p.m0_file.as_ref().expect("validated"), "problem.m0_file", alpha0)?;
            let mt = match &p.mt_file {
                Some(f) if p.mode == Mode::Planning => Some(load_profile(art, f, "problem.mt_file", alpha0)?),
                _ => None,
            };
            (m0, mt)
        }
    };
    let terminal = match (p.mode, mt) {
        (Mode::Terminal, _) => TerminalCondition::TerminalCost { c1: p.c1 },
        (Mode::Planning, Some(mt)) => TerminalCondition::Planning(mt),
        (Mode::Planning, None) => return Err(CliError::from_core("problem.mt_file", mfg_core::MfgError::invalid("missing terminal marginal"))),
    };
    let mut problem =
        FlowProblem::new(m0, law, p.horizon, terminal, nx, nt).map_err(|e| CliError::from_core("problem", e))?;
    if let Some(t) = cfg.solver.tol {
        problem.options.tol = t;
    }
    if let Some(n) = cfg.solver.max_iter {
        problem.options.max_iter = n;
    }
    if p.time_reverse {
        problem = problem.reversed().map_err(|e| CliError::from_core("problem.time_reverse", e))?;
    }
    let sol = solve_and_recover(&problem).map_err(solver)?;
    let lg = sol.flow.grid;
    let rev = p.time_reverse;
    // level j of the reported (forward) problem
    let level = |j: usize| if rev { lg.nt - 1 - j } else { j };
    let sign = if rev { -1.0 } else { 1.0 };

    let mut rows = Vec::with_capacity(lg.len());
    for j in 0..lg.nt {
        for i in 0..lg.nx {
            let k = i + level(j) * lg.nx;
            rows.push(vec![lg.x(i), lg.t(j), sol.flow.gamma[k], sol.flow.gamma_x[k], sign * sol.flow.gamma_t[k]]);
        }
    }
    art.numeric_csv("gamma.csv", &["x", "t", "gamma", "gamma_x", "gamma_t"], rows)?;

    let c = &sol.curves;
    let rows = (0..lg.nt).map(|j| {
        let k = level(j);
        vec![lg.t(j), c.gamma_l[k], c.gamma_r[k], c.ddot_l[k], c.ddot_r[k]]
    });
    art.numeric_csv("boundary.csv", &["t", "gammaL", "gammaR", "ddotL", "ddotR"], rows)?;

    let lo = c.gamma_l.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = c.gamma_r.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let pad = 0.05 * (hi - lo);
    let (a, b) = (cfg.grid.x_min.unwrap_or(lo - pad), cfg.grid.x_max.unwrap_or(hi + pad));
    let eg = SpaceTimeGrid64::with_start(a, b, lg.t_start, lg.horizon, nx, nt, Topology::NeumannInterval).map_err(grid_err)?;
    let m = eulerian_density(&sol.flow, &sol.density, eg).map_err(solver)?;
    let (u, ux) = eulerian_value(&sol.flow, &sol.value, eg).map_err(solver)?;
    let mut rows = Vec::with_capacity(eg.len());
    for j in 0..eg.nt {
        let jj = if rev { eg.nt - 1 - j } else { j };
        for i in 0..eg.nx {
            rows.push(vec![eg.x(i), eg.t(j), m.at(i, jj), sign * u.at(i, jj), sign * ux.at(i, jj)]);
        }
    }
    art.numeric_csv("fields.csv", &["x", "t", "m", "u", "ux"], rows)?;

    art.residual("newton", sol.report.residual);
    art.residual("euler", sol.euler_residual);
    art.residual("divergence", divergence_residual(&sol.flow, &sol.density.v, theta));
    let mass = (0..lg.nt)
        .map(|j| (pushed_mass(&sol.flow, &sol.density, j) - problem.m0.mass).abs())
        .fold(0.0, f64::max);
    art.residual("mass", mass);
    art.constant("newton_iterations", sol.report.iterations);
    let age = if p.data == Data::Selfsimilar { p.t_start } else { 1.0 };
    let boundary = boundary_rate_and_convexity(&sol.curves, age).map_err(solver)?;
    art.constant("boundary", &boundary);
    let v = ScalarField64::new(lg, sol.density.v.clone()).map_err(solver)?;
    let harnack = harnack_ratio(&v, 5).map_err(solver)?;
    art.constant("harnack_constant", harnack.constant);
    if p.mode == Mode::Planning {
        art.constant("cost", flow_cost(&sol.flow, &sol.density, &problem).map_err(solver)?);
    }
    Ok(())
}

fn is_torus(cfg: &Config) -> bool {
    match cfg.grid.topology {
        Some(t) => t == TopologyName::Torus,
        None => matches!(cfg.problem.data, Data::Cosine | Data::Compact),
    }
}

/// Cosine data `1 + a cos(2 pi (x - x_min) / L)`, shifted so that the default window
/// [-L/2, L/2] gives `1 + a cos(2 pi x / L)`.
fn cosine(g: &SpaceTimeGrid64, a: f64) -> Vec<f64> {
    let len = g.x_max - g.x_min;
    let pi = std::f64::consts::PI;
    g.xs()
        .iter()
        .map(|&x| 1.0 - a * (2.0 * pi * (x - g.x_min) / len).cos())
        .collect()
}

fn compact(g: &SpaceTimeGrid64, w: f64) -> Vec<f64> {
    g.xs().iter().map(|&x| (w * w - x * x).max(0.0)).collect()
}

fn bump(g: &SpaceTimeGrid64, center: f64, w: f64) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    g.xs()
        .iter()
        .map(|&x| {
            let s = (x - center) / w;
            if s.abs() < 1.0 {
                (pi * s / 2.0).cos().powi(4)
            } else {
                0.0
            }
        })
        .collect()
}

fn normalize(m: Vec<f64>, mass: f64) -> Result<Vec<f64>, CliError> {
    if !(mass > 0.0) {
        return Err(CliError::Validation {
            field: "problem.data".into(),
            message: "the marginal has no mass on the grid".into(),
        });
    }
    Ok(m.into_iter().map(|v| v / mass).collect())
}

/// Makes the last node equal the first on the torus.
fn close_period(g: &SpaceTimeGrid64, mut m: Vec<f64>) -> Vec<f64> {
    if g.topology == Topology::Torus {
        let n = m.len();
        m[n - 1] = m[0];
    }
    m
}

/// Values of a profile on nodes (zero outside its support).
fn on_nodes(p: &MarginalProfile64, xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| if x <= p.a || x >= p.b { 0.0 } else { linear_at(&p.x, &p.m, x).max(0.0) })
        .collect()
}

fn epsilon_schedule(cfg: &Config) -> Vec<f64> {
    if let Some(list) = &cfg.solver.epsilons {
        return list.clone();
    }
    let eps = cfg.solver.epsilon;
    if !cfg.solver.sweep {
        return vec![eps];
    }
    let mut list: Vec<f64> = default_epsilons::<f64>().into_iter().filter(|&e| e > eps).collect();
    list.push(eps);
    list
}

/// Eulerian solve (optionally along an epsilon sweep).
fn solve_elliptic(cfg: &Config, art: &mut Artifacts) -> Result<(), CliError> {
    let p = &cfg.problem;
    let law = cfg.coupling()?;
    let torus = is_torus(cfg);
    let selfsim_model = match p.data {
        Data::Selfsimilar => Some(SelfSimilarModel64::new(cfg.theta()?).map_err(|e| CliError::from_core("problem.coupling", e))?),
        _ => None,
    };
    let t1 = p.t_start + p.horizon;
    let alpha0 = edge_exponent(cfg)?;
    let profiles = match p.data {
        Data::Selfsimilar => {
            let s = selfsim_model.as_ref().expect("set above");
            let (w0, w1) = (s.support_radius(p.t_start), s.support_radius(t1));
            Some((w0.max(w1), None))
        }
        Data::Profile => {
            let m0 = load_profile(art, p.m0_file.as_ref().expect("validated"), "problem.m0_file", alpha0)?;
            let mt = match &p.mt_file {
                Some(f) if p.mode == Mode::Planning => Some(load_profile(art, f, "problem.mt_file", alpha0)?),
                _ => None,
            };
            let reach = [m0.a, m0.b]
                .iter()
                .chain(mt.iter().flat_map(|m| [&m.a, &m.b]))
                .fold(0.0f64, |r, v| r.max(v.abs()));
            Some((reach, Some((m0, mt))))
        }
        _ => None,
    };
    let (a, b) = match (cfg.grid.x_min, cfg.grid.x_max, &profiles) {
        (Some(a), Some(b), _) => (a, b),
        (_, _, Some((reach, _))) => (-(reach + TAIL_MARGIN), reach + TAIL_MARGIN),
        _ => (-1.0, 1.0),
    };
    let topology = if torus { Topology::Torus } else { Topology::NeumannInterval };
    let g = SpaceTimeGrid64::with_start(a, b, 0.0, p.horizon, cfg.nx(), cfg.nt(), topology).map_err(grid_err)?;
    let xs = g.xs();
    let r = (-a).min(b);

    // unregularized marginals (the profile pair for the power-law planning regularization)
    let pair: Option<(MarginalProfile64, Option<MarginalProfile64>)> = match (&p.data, profiles) {
        (Data::Selfsimilar, _) => {
            let s = selfsim_model.as_ref().expect("set above");
            let (w0, w1) = (s.support_radius(p.t_start), s.support_radius(t1));
            let sample = |w: f64, t: f64| {
                MarginalProfile64::sample(xs.clone(), -w, w, 1.0 / s.theta, |x| s.density(x, t).unwrap_or(0.0))
            };
            Some((sample(w0, p.t_start).map_err(solver)?, Some(sample(w1, t1).map_err(solver)?)))
        }
        (Data::Profile, Some((_, Some(pr)))) => Some(pr),
        _ => None,
    };
    let raw0: Vec<f64> = match (&p.data, &pair) {
        (Data::Cosine, _) => cosine(&g, p.amplitudes[0]),
        (Data::Compact, _) => compact(&g, p.width.unwrap_or(0.5)),
        (_, Some((m0, _))) => on_nodes(m0, &xs),
        _ => unreachable!("validated data kinds"),
    };
    let rawt: Vec<f64> = match (&p.data, &pair) {
        (Data::Cosine, _) => cosine(&g, p.amplitudes[1]),
        (Data::Compact, _) => raw0.clone(),
        (_, Some((_, Some(mt)))) => on_nodes(mt, &xs),
        _ => raw0.clone(),
    };
    let raw0 = close_period(&g, normalize(raw0.clone(), grid_mass(&g, &raw0))?);
    let rawt = close_period(&g, normalize(rawt.clone(), grid_mass(&g, &rawt))?);
    let planning = p.mode == Mode::Planning;
    let positive = |m: &[f64]| m.iter().all(|&v| v > 0.0);

    let build = |e: f64| -> mfg_core::Result<EulerianProblem64> {
        let (m0, terminal) = if !planning {
            let m0 = if positive(&raw0) { raw0.clone() } else { regularize_single(&raw0, &law, e)? };
            (close_period(&g, m0), EulerTerminal::TerminalCost { c1: p.c1 })
        } else if positive(&raw0) && positive(&rawt) {
            (raw0.clone(), EulerTerminal::Planning(rawt.clone()))
        } else if let Some((p0, Some(pt))) = &pair {
            let reg = regularize_marginals(p0, pt, &law, e, r, &xs)?;
            (reg.m0, EulerTerminal::Planning(reg.mt))
        } else {
            let m0 = close_period(&g, regularize_single(&raw0, &law, e)?);
            let mt = close_period(&g, regularize_single(&rawt, &law, e)?);
            // keep the masses equal after lifting
            let scale = grid_mass(&g, &m0) / grid_mass(&g, &mt);
            (m0, EulerTerminal::Planning(mt.into_iter().map(|v| v * scale).collect()))
        };
        let mut problem = EulerianProblem64::new(g, law, m0, terminal, e)?;
        if let Some(t) = cfg.solver.tol {
            problem.options.tol = t;
        }
        if let Some(n) = cfg.solver.max_iter {
            problem.options.max_newton = n;
        }
        Ok(problem)
    };
    let oracle: Option<Box<dyn Fn(f64, f64) -> f64>> = match (&selfsim_model, planning) {
        (Some(s), true) => {
            let s = *s;
            let t0 = p.t_start;
            Some(Box::new(move |x: f64, t: f64| s.density(x, t0 + t).unwrap_or(f64::NAN)))
        }
        _ => None,
    };
    let epsilons = epsilon_schedule(cfg);
    let (report, sols) = epsilon_sweep(&epsilons, build, oracle).map_err(solver)?;
    let sol = sols.last().expect("at least one epsilon");
    let ux = sol.ux.clone().unwrap_or_else(|| velocity_field(&sol.u));
    let mut rows = Vec::with_capacity(g.len());
    for j in 0..g.nt {
        for i in 0..g.nx {
            rows.push(vec![g.x(i), g.t(j), sol.m.at(i, j), sol.u.at(i, j), ux.at(i, j)]);
        }
    }
    art.numeric_csv("fields.csv", &["x", "t", "m", "u", "ux"], rows)?;
    art.json("sweep.json", &report)?;
    let last = report.entries.last().expect("at least one epsilon");
    art.residual("newton", last.residual);
    let mass0 = grid_mass(&g, sol.m.row(0));
    let drift = (0..g.nt)
        .map(|j| (grid_mass(&g, sol.m.row(j)) - mass0).abs())
        .fold(0.0, f64::max);
    art.residual("mass_drift", drift);
    if let Some(e) = last.oracle_error {
        art.residual("oracle_sup_error", e);
    }
    art.constant("epsilon", last.epsilon);
    art.constant("lambda", last.lambda);
    art.constant("support_halfwidth", last.support_halfwidth);
    art.constant("min_mid_density", last.min_mid_density);
    art.constant("cauchy_monotone", report.cauchy_monotone);
    Ok(())
}

/// Convex program on a Neumann interval.
fn variational(cfg: &Config, art: &mut Artifacts) -> Result<(), CliError> {
    let p = &cfg.problem;
    let law = cfg.coupling()?;
    let t1 = p.t_start + p.horizon;
    let model = match p.data {
        Data::Selfsimilar => Some(SelfSimilarModel64::new(cfg.theta()?).map_err(|e| CliError::from_core("problem.coupling", e))?),
        _ => None,
    };
    let alpha0 = edge_exponent(cfg)?;
    let files = match p.data {
        Data::Profile => {
            let m0 = load_profile(art, p.m0_file.as_ref().expect("validated"), "problem.m0_file", alpha0)?;
            let mt = load_profile(art, p.mt_file.as_ref().expect("validated"), "problem.mt_file", alpha0)?;
            Some((m0, mt))
        }
        _ => None,
    };
    let (a, b) = match (cfg.grid.x_min, cfg.grid.x_max) {
        (Some(a), Some(b)) => (a, b),
        _ => match (&p.data, &model, &files) {
            (Data::Selfsimilar, Some(s), _) => {
                let w = s.support_radius(t1) + TAIL_MARGIN;
                (-w, w)
            }
            (Data::Profile, _, Some((m0, mt))) => {
                let w = [m0.a, m0.b, mt.a, mt.b].iter().fold(0.0f64, |r, v| r.max(v.abs())) + 1.0;
                (-w, w)
            }
            (Data::Bump, _, _) => (-3.0, 3.0),
            _ => (-1.0, 1.0),
        },
    };
    let g = SpaceTimeGrid64::with_start(a, b, 0.0, p.horizon, cfg.nx(), cfg.nt(), Topology::NeumannInterval)
        .map_err(grid_err)?;
    let xs = g.xs();
    // translations are snapped to whole cells so both ends sample the same profile
    let shift = (p.shift / g.hx()).round() * g.hx();
    let (m0, mt) = match (&p.data, &model, &files) {
        (Data::Selfsimilar, Some(s), _) => {
            let d = |t: f64| xs.iter().map(|&x| s.density(x, t).unwrap_or(0.0)).collect::<Vec<_>>();
            (d(p.t_start), d(t1))
        }
        (Data::Cosine, _, _) => (cosine(&g, p.amplitudes[0]), cosine(&g, p.amplitudes[1])),
        (Data::Compact, _, _) => {
            let m = compact(&g, p.width.unwrap_or(0.5));
            (m.clone(), m)
        }
        (Data::Bump, _, _) => {
            let w = p.width.unwrap_or(1.5);
            (bump(&g, -shift / 2.0, w), bump(&g, shift / 2.0, w))
        }
        (Data::Profile, _, Some((f0, ft))) => (on_nodes(f0, &xs), on_nodes(ft, &xs)),
        _ => unreachable!("validated data kinds"),
    };
    let m0 = normalize(m0.clone(), cell_mass(&g, &m0))?;
    let mt = normalize(mt.clone(), cell_mass(&g, &mt))?;
    let mut program =
        CongestionProgram64::new(g, m0, mt, p.lambda, law).map_err(|e| CliError::from_core("problem", e))?;
    if let Some(t) = cfg.solver.tol {
        program.options.tol = t;
    }
    if let Some(n) = cfg.solver.max_iter {
        program.options.max_iter = n;
    }
    let sol = solve_bb(&program).map_err(solver)?;
    let nf = g.nx - 1;
    let mut rows: Vec<[String; 4]> = Vec::with_capacity(g.len() + nf * (g.nt - 1));
    for j in 0..g.nt {
        for i in 0..g.nx {
            rows.push(["m".into(), num(g.x(i)), num(g.t(j)), num(sol.m.at(i, j))]);
        }
    }
    for k in 0..g.nt - 1 {
        let t = 0.5 * (g.t(k) + g.t(k + 1));
        for f in 0..nf {
            let x = 0.5 * (g.x(f) + g.x(f + 1));
            rows.push(["w".into(), num(x), num(t), num(sol.w[f + k * nf])]);
        }
    }
    art.csv("mw.csv", &["field", "x", "t", "value"], rows)?;
    let summary = json!({
        "objective": sol.objective,
        "dual": sol.dual,
        "gap": sol.gap,
        "feasibility": sol.feasibility,
        "iterations": sol.iterations,
        "lambda": p.lambda,
        "grid": {"nx": g.nx, "nt": g.nt, "x_min": g.x_min, "x_max": g.x_max, "horizon": g.horizon},
    });
    art.json("variational.json", &summary)?;
    art.residual("gap", sol.gap);
    art.residual("feasibility", sol.feasibility);
    art.constant("objective", sol.objective);
    art.constant("iterations", sol.iterations);
    if p.data == Data::Bump && p.lambda == 0.0 {
        art.constant("translation_reference", shift * shift / (2.0 * p.horizon));
    }
    Ok(())
}

/// Reads `x,t,m[,u,ux]` rows on a full tensor grid.
pub fn read_fields(bytes: &[u8], topology: Topology) -> Result<ScalarField64, CliError> {
    let bad = |m: String| CliError::Validation {
        field: "problem.input".into(),
        message: m,
    };
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let (cx, ct, cm) = (col("x")?, col("t")?, col("m")?);
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let get = |c: usize| {
            rec.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("row {}: bad number in column {}", k + 1, c + 1)))
        };
        rows.push((get(cx)?, get(ct)?, get(cm)?));
    }
    let distinct = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = distinct(rows.iter().map(|r| r.0).collect());
    let ts = distinct(rows.iter().map(|r| r.1).collect());
    let (nx, nt) = (xs.len(), ts.len());
    if nx * nt != rows.len() {
        return Err(bad(format!("{} rows do not fill a {nx} x {nt} grid", rows.len())));
    }
    let g = SpaceTimeGrid64::with_start(xs[0], xs[nx - 1], ts[0], ts[nt - 1] - ts[0], nx, nt, topology)
        .map_err(|e| bad(e.to_string()))?;
    let uniform = |v: &[f64], h: f64| v.windows(2).all(|w| ((w[1] - w[0]) / h - 1.0).abs() < 1e-6);
    if !uniform(&xs, g.hx()) || !uniform(&ts, g.ht()) {
        return Err(bad("the grid must be uniform in x and t".into()));
    }
    let mut field = ScalarField64::zeros(g);
    let mut seen = vec![false; nx * nt];
    for (x, t, m) in rows {
        let i = ((x - g.x_min) / g.hx()).round() as usize;
        let j = ((t - g.t_start) / g.ht()).round() as usize;
        if seen[i + j * nx] {
            return Err(bad(format!("duplicate node ({x}, {t})")));
        }
        seen[i + j * nx] = true;
        field.set(i, j, m);
    }
    Ok(field)
}

fn diagnose(cfg: &Config, art: &mut Artifacts) -> Result<(), CliError> {
    let law: CouplingLaw64 = cfg.coupling()?;
    let topology = match cfg.grid.topology {
        Some(TopologyName::Torus) => Topology::Torus,
        _ => Topology::NeumannInterval,
    };
    let bytes = art.input_file(cfg.problem.input.as_ref().expect("validated"))?;
    let m = read_fields(&bytes, topology)?;
    let g = m.grid;
    let mut vals = Vec::with_capacity(m.values.len());
    for &x in &m.values {
        vals.push(law.f(x).map_err(|e| CliError::from_core("problem.input", e))?);
    }
    let v = ScalarField64::new(g, vals).map_err(solver)?;
    let wanted = &cfg.solver.checks;
    let all = wanted.iter().any(|c| c == "all");
    let selected: Vec<&str> = CHECKS
        .iter()
        .copied()
        .filter(|c| if all { *c != "log" || law.is_log() } else { wanted.iter().any(|w| w == c) })
        .collect();
    let tol = cfg.solver.tolerance;
    let mut checks = serde_json::Map::new();
    let mut failed = Vec::new();
    for name in selected {
        let (pass, report) = match name {
            "extremum" => {
                let r = extremum_principle_check(&m, tol).map_err(solver)?;
                (r.pass, serde_json::to_value(&r))
            }
            "rectangles" => {
                let r = rectangle_principle(&v, cfg.solver.rectangles, cfg.solver.seed, tol).map_err(solver)?;
                let summary = json!({"count": r.rectangles.len(), "seed": r.seed, "worst_margin": r.worst_margin, "tolerance": r.tolerance, "pass": r.pass});
                (r.pass, Ok(summary))
            }
            "convexity" => {
                let r = displacement_convexity_profile(&m, 2.0, 1e-4).map_err(solver)?;
                (r.pass, serde_json::to_value(&r))
            }
            "energy" => {
                let r = energy_and_modulus(&v, 0.05).map_err(solver)?;
                let summary = json!({"energy": r.energy, "worst_ratio": r.worst_ratio, "samples": r.samples.len(), "tolerance": r.tolerance, "pass": r.pass});
                (r.pass, Ok(summary))
            }
            "holder" => {
                let t = g.t((g.nt - 1) / 2);
                let center = 0.5 * (g.x_min + g.x_max);
                let radii: Vec<f64> = [1.0, 2.0, 4.0, 8.0].iter().map(|k| k * g.hx()).collect();
                match holder_exponent_of_field(&v, t, &[center], &radii) {
                    Ok(r) => (r.exponent.is_finite(), serde_json::to_value(&r)),
                    // a locally constant field has no oscillation to fit
                    Err(e) => (true, Ok(json!({"skipped": e.to_string()}))),
                }
            }
            "log" => {
                let r = log_coupling_suite(&m, 0.1 * g.horizon).map_err(solver)?;
                let sym = match &r.symmetry {
                    Gated::Applicable(s) => s.pass,
                    Gated::NotApplicable(_) => true,
                };
                (r.positive && r.log_bound_finite && r.w2_pass && sym, serde_json::to_value(&r))
            }
            _ => unreachable!("validated check names"),
        };
        if !pass {
            failed.push(name);
        }
        let mut entry = json!({"pass": pass});
        entry["report"] = report.unwrap_or(Value::Null);
        checks.insert(name.into(), entry);
    }
    let report = json!({
        "grid": {"nx": g.nx, "nt": g.nt, "x_min": g.x_min, "x_max": g.x_max, "t_start": g.t_start, "horizon": g.horizon},
        "coupling": cfg.problem.coupling,
        "pass": failed.is_empty(),
        "checks": checks,
    });
    art.json("diagnostics.json", &report)?;
    art.constant("failed_checks", &failed);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Diagnostic(format!("failed checks: {}", failed.join(", "))))
    }
}

fn run_acceptance(art: &mut Artifacts) -> Result<(), CliError> {
    let results = acceptance::run_suite(&mut |_| {});
    let rows = results.iter().map(|c| {
        vec![
            c.id.to_string(),
            c.name.to_string(),
            if c.pass { "PASS".into() } else { "FAIL".into() },
            c.summary.clone(),
        ]
    });
    art.csv("acceptance.csv", &["criterion", "name", "status", "summary"], rows)?;
    art.json("acceptance.json", &results)?;
    let failed: Vec<String> = results.iter().filter(|c| !c.pass).map(|c| c.id.to_string()).collect();
    art.constant("passed", results.len() - failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Diagnostic(format!("failed criteria: {}", failed.join(", "))))
    }
}
