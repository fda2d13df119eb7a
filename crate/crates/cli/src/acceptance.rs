//! The acceptance suite: ten numbered criteria, each computed from scratch and reported as
//! pass or fail with the measured numbers. Thresholds live here and nowhere else.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use mfg_core::diagnostics::{
    boundary_rate_and_convexity, extremum_principle_check, holder_exponent_fit, log_coupling_suite,
    rectangle_principle, relative_spread, Gated,
};
use mfg_core::eulerian::{epsilon_sweep, grid_mass, regularize_marginals, regularize_single, solve_u};
use mfg_core::lagrangian::{eulerian_density, flow_cost, pushed_mass, solve_and_recover, FlowProblem, FlowSolution, TerminalCondition};
use mfg_core::variational::{cell_mass, solve_bb};
use mfg_core::{
    CongestionProgram64, CouplingLaw64, EulerTerminal, EulerianProblem64, MarginalProfile64, MfgError,
    ScalarField64, SelfSimilarModel64, SolutionBundle, SpaceTimeGrid64, Topology,
};

use crate::oracle::dense_barrier_value;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub summary: String,
    pub details: Value,
    /// Wall time; kept out of the serialized report so reports are reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

type Outcome = Result<(bool, String, Value), MfgError>;
type Criterion = (u8, &'static str, fn() -> Outcome);

pub const CRITERIA: [Criterion; 10] = [
    (1, "oracle-integrity", oracle_integrity),
    (2, "interface-time", interface_time),
    (3, "lagrangian-convergence", lagrangian_convergence),
    (4, "free-boundary", free_boundary),
    (5, "cross-solver-uniqueness", cross_solver),
    (6, "variational-oracle", variational_oracle),
    (7, "elliptic-principles", elliptic_principles),
    (8, "propagation-dichotomy", propagation_dichotomy),
    (9, "log-symmetry", log_symmetry),
    (10, "interface-singularity", interface_singularity),
];

/// Runs one criterion; errors and panics count as failures.
pub fn run_criterion(id: u8) -> Option<CriterionResult> {
    let &(id, name, f) = CRITERIA.iter().find(|c| c.0 == id)?;
    let start = Instant::now();
    let (pass, summary, details) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => (false, format!("error: {e}"), Value::Null),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panic: {msg}"), Value::Null)
        }
    };
    Some(CriterionResult {
        id,
        name,
        pass,
        summary,
        details,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every criterion in order, calling `progress` after each one.
pub fn run_suite(progress: &mut dyn FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .filter_map(|c| {
            let r = run_criterion(c.0)?;
            progress(&r);
            Some(r)
        })
        .collect()
}

/// One line per criterion: `PASS  3 lagrangian-convergence  <summary>`.
pub fn format_line(r: &CriterionResult) -> String {
    format!(
        "{} {:>2} {:<24} {} ({:.1} s)",
        if r.pass { "PASS" } else { "FAIL" },
        r.id,
        r.name,
        r.summary,
        r.seconds
    )
}

const THETAS: [f64; 4] = [0.5, 1.0, 2.0, 3.0];

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

/// Planning between the self-similar profiles at t = 1 and t = 2 on n Lagrangian nodes.
fn selfsimilar_flow(n: usize, theta: f64) -> Result<(SelfSimilarModel64, FlowProblem<f64>, FlowSolution<f64>), MfgError> {
    let s = SelfSimilarModel64::new(theta)?;
    let w = s.support_radius(1.0);
    let nodes: Vec<f64> = (0..n).map(|k| -w + 2.0 * w * k as f64 / (n - 1) as f64).collect();
    let scale = 2f64.powf(s.alpha);
    let m0 = s.profile(nodes.clone(), 1.0)?;
    let mt = s.profile(nodes.iter().map(|x| x * scale).collect(), 2.0)?;
    let p = FlowProblem::new(m0, CouplingLaw64::power(theta)?, 1.0, TerminalCondition::Planning(mt), n, n)?;
    let sol = solve_and_recover(&p)?;
    Ok((s, p, sol))
}

fn oracle_integrity() -> Outcome {
    let mut pass = true;
    let mut rows = Vec::new();
    for theta in THETAS {
        let s = SelfSimilarModel64::new(theta)?;
        let mass = max_of(
            [0.1, 1.0, 2.0, 7.0]
                .iter()
                .map(|&t| s.mass(t).map(|m| (m - 1.0).abs()))
                .collect::<Result<Vec<_>, _>>()?,
        );
        let w = 1.2 * s.support_radius(2.0);
        let mut hj = Vec::new();
        let mut cont = Vec::new();
        for n in [200usize, 400, 800] {
            let g = SpaceTimeGrid64::with_start(-w, w, 1.0, 1.0, n + 1, n + 1, Topology::NeumannInterval)?;
            let r = s.residuals(&g)?;
            hj.push(r.hj);
            cont.push(r.continuity);
        }
        let halves = |v: &[f64]| v.windows(2).all(|p| p[1] <= 0.5 * p[0]);
        let ok = mass <= 1e-10 && hj[0] <= 1e-3 && cont[0] <= 1e-3 && halves(&hj) && halves(&cont);
        pass &= ok;
        let order = |v: &[f64]| (v[0] / v[2]).log2() / 2.0;
        rows.push(json!({
            "theta": theta, "mass_error": mass, "hj": hj, "continuity": cont,
            "hj_order": order(&hj), "pass": ok,
        }));
    }
    let worst_hj = rows.iter().map(|r| r["hj"][0].as_f64().unwrap_or(f64::NAN)).fold(0.0, f64::max);
    let orders: Vec<String> = rows.iter().map(|r| format!("{:.2}", r["hj_order"].as_f64().unwrap_or(f64::NAN))).collect();
    let summary = format!("worst 200x200 HJ residual {worst_hj:.2e}; HJ orders {}", orders.join("/"));
    Ok((pass, summary, json!(rows)))
}

fn interface_time() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_f = 0.0f64;
    let mut violations = 0usize;
    let mut points = 0usize;
    for theta in THETAS {
        let s = SelfSimilarModel64::new(theta)?;
        for _ in 0..2500 {
            let t: f64 = rng.gen_range(0.05..5.0);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let x = sign * s.support_radius(t) * (1.0 + 4.0 * rng.gen::<f64>());
            let root = s.interface_time(x, t)?;
            let f = s.interface_function(x, t, root).abs();
            worst_f = worst_f.max(f / (s.c_r * t));
            let d = s.delta(x, t).max(0.0);
            let lower = s.lower_bound_constant() * (t / (x.abs() + d)).powf(1.0 / (1.0 - s.alpha));
            let gap = s.gap_bound_constant() * t.powf(1.0 - s.alpha / 2.0) * d.sqrt();
            let ok = f <= 1e-12 * s.c_r * t
                && root > 0.0
                && root <= t
                && root >= lower * (1.0 - 1e-12)
                && t - root <= gap * (1.0 + 1e-12) + 1e-15 * t;
            if !ok {
                violations += 1;
            }
            points += 1;
        }
    }
    // theta = 2: x sqrt(S) = C_R (t + S) / 2 is a quadratic in sqrt(S)
    let s2 = SelfSimilarModel64::new(2.0)?;
    let mut closed = 0.0f64;
    for _ in 0..1000 {
        let t: f64 = rng.gen_range(0.05..5.0);
        let x = s2.support_radius(t) * (1.0 + 4.0 * rng.gen::<f64>());
        let root = (x - (x * x - s2.c_r * s2.c_r * t).max(0.0).sqrt()) / s2.c_r;
        closed = closed.max((s2.interface_time(x, t)? - root * root).abs());
    }
    let pass = violations == 0 && closed <= 1e-10;
    let summary = format!(
        "{points} points, {violations} violations, max |F|/(C_R t) {worst_f:.1e}; theta=2 closed form {closed:.1e}"
    );
    Ok((pass, summary, json!({"points": points, "violations": violations, "max_scaled_residual": worst_f, "closed_form_error": closed})))
}

fn lagrangian_convergence() -> Outcome {
    let mut errors = Vec::new();
    let mut euler = Vec::new();
    let mut mass = Vec::new();
    for n in [33, 65, 129] {
        let (s, p, sol) = selfsimilar_flow(n, 1.0)?;
        let g = sol.flow.grid;
        let mut err = 0.0f64;
        for j in 0..g.nt {
            for i in 0..g.nx {
                let exact = g.x(i) * (1.0 + g.t(j)).powf(s.alpha);
                err = err.max((sol.flow.at(i, j) - exact).abs());
            }
        }
        errors.push(err);
        euler.push(sol.euler_residual);
        mass.push(max_of((0..g.nt).map(|j| (pushed_mass(&sol.flow, &sol.density, j) - p.m0.mass).abs())));
    }
    let ratios = |v: &[f64]| vec![v[0] / v[1], v[1] / v[2]];
    let (er, rr) = (ratios(&errors), ratios(&euler));
    let pass = errors[2] <= 0.02 && er.iter().all(|&r| r >= 1.8) && rr.iter().all(|&r| r >= 1.8);
    let summary = format!(
        "gamma error {:.2e} at 129, ratios {:.2}/{:.2}; Euler residual ratios {:.2}/{:.2}",
        errors[2], er[0], er[1], rr[0], rr[1]
    );
    Ok((pass, summary, json!({"nodes": [33, 65, 129], "gamma_error": errors, "euler_residual": euler, "mass_defect": mass})))
}

fn free_boundary() -> Outcome {
    let (s, _, sol) = selfsimilar_flow(129, 1.0)?;
    let b = boundary_rate_and_convexity(&sol.curves, 1.0)?;
    let growth_ok = (b.growth_exponent - s.alpha).abs() <= 0.05;
    let convex_ok = sol.curves.ddot_l.iter().all(|&v| v > 0.0) && b.convexity_constant.is_finite();
    let mut expanding = Vec::new();
    for theta in [0.5, 1.0, 2.0] {
        let st = SelfSimilarModel64::new(theta)?;
        let w = st.support_radius(1.0);
        let n = 65;
        let nodes: Vec<f64> = (0..n).map(|k| -w + 2.0 * w * k as f64 / (n - 1) as f64).collect();
        let m0 = st.profile(nodes, 1.0)?;
        let p = FlowProblem::new(m0, CouplingLaw64::power(theta)?, 1.0, TerminalCondition::TerminalCost { c1: 1.0 }, n, n)?;
        let sol = solve_and_recover(&p)?;
        let widths = sol.curves.support_width();
        let strict = widths.windows(2).all(|w| w[1] > w[0]);
        expanding.push(json!({"theta": theta, "strictly_expanding": strict, "min_step": widths.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)}));
    }
    let expand_ok = expanding.iter().all(|e| e["strictly_expanding"].as_bool() == Some(true));
    let pass = growth_ok && convex_ok && expand_ok;
    let summary = format!(
        "growth exponent {:.4} (target {:.4}); ddot gamma_L in [{:.3e}, {:.3e}], K = {:.3}; terminal-cost support expanding: {}",
        b.growth_exponent, s.alpha, b.ddot_l_min, b.ddot_l_max, b.convexity_constant, expand_ok
    );
    Ok((pass, summary, json!({"boundary": b, "terminal_cost": expanding})))
}

fn sup_abs_diff(a: &ScalarField64, b: &ScalarField64) -> f64 {
    a.values.iter().zip(&b.values).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn cross_solver() -> Outcome {
    let s = SelfSimilarModel64::new(1.0)?;
    let law = CouplingLaw64::power(1.0)?;
    let (r, n) = (5.5, 32);
    let g = SpaceTimeGrid64::with_start(-r, r, 1.0, 1.0, n, n, Topology::NeumannInterval)?;
    let xs = g.xs();
    let (w0, w1) = (s.support_radius(1.0), s.support_radius(2.0));
    let p0 = MarginalProfile64::sample(xs.clone(), -w0, w0, 1.0, |x| s.density(x, 1.0).unwrap_or(0.0))?;
    let p1 = MarginalProfile64::sample(xs.clone(), -w1, w1, 1.0, |x| s.density(x, 2.0).unwrap_or(0.0))?;
    let (_, eul) = epsilon_sweep(
        &[1e-1, 1e-2, 1e-3, 1e-4],
        |e| {
            let reg = regularize_marginals(&p0, &p1, &law, e, r, &xs)?;
            EulerianProblem64::new(g, law, reg.m0, EulerTerminal::Planning(reg.mt), e)
        },
        None::<fn(f64, f64) -> f64>,
    )?;
    let m_eul = &eul.last().expect("four solves").m;

    let (_, fp, lag) = selfsimilar_flow(129, 1.0)?;
    // the flow runs on [0, 1]; the common grid carries the same nodes on that clock
    let g0 = SpaceTimeGrid64::with_start(-r, r, 0.0, 1.0, n, n, Topology::NeumannInterval)?;
    let m_lag = eulerian_density(&lag.flow, &lag.density, g0)?;

    let normalized = |t: f64| {
        let m: Vec<f64> = xs.iter().map(|&x| s.density(x, t).unwrap_or(0.0)).collect();
        let c = cell_mass(&g, &m);
        m.into_iter().map(|v| v / c).collect::<Vec<_>>()
    };
    let var = solve_bb(&CongestionProgram64::new(g, normalized(1.0), normalized(2.0), 1.0, law)?)?;

    let d_eul = sup_abs_diff(&m_lag, m_eul);
    let d_var = sup_abs_diff(&m_lag, &var.m);
    let cost = flow_cost(&lag.flow, &lag.density, &fp)?;
    let pass = d_eul <= 5e-2 && d_var <= 5e-2;
    let summary = format!(
        "sup|m_lag - m_eul| {d_eul:.3e}, sup|m_lag - m_var| {d_var:.3e}; flow cost {cost:.4} vs program optimum {:.4}",
        var.objective
    );
    Ok((pass, summary, json!({"lag_vs_eulerian": d_eul, "lag_vs_variational": d_var, "flow_cost": cost, "variational_objective": var.objective, "variational_iterations": var.iterations})))
}

fn variational_oracle() -> Outcome {
    let pi = std::f64::consts::PI;
    let law = CouplingLaw64::power(1.0)?;
    let g = SpaceTimeGrid64::new(0.0, 1.0, 1.0, 8, 8, Topology::NeumannInterval)?;
    let normalized = |g: &SpaceTimeGrid64, f: &dyn Fn(f64) -> f64| {
        let m: Vec<f64> = g.xs().iter().map(|&x| f(x)).collect();
        let c = cell_mass(g, &m);
        m.into_iter().map(|v| v / c).collect::<Vec<_>>()
    };
    let m0 = normalized(&g, &|x| 1.0 + 0.6 * (pi * x).cos());
    let mt = normalized(&g, &|x| 1.0 - 0.4 * (pi * x).cos());
    let p = CongestionProgram64::new(g, m0, mt, 1.0, law)?;
    let sol = solve_bb(&p)?;
    let exact = dense_barrier_value(&p);
    let rel_small = (sol.objective - exact).abs() / exact;

    let gt = SpaceTimeGrid64::new(-3.0, 3.0, 1.0, 64, 64, Topology::NeumannInterval)?;
    let shift = (1.0 / gt.hx()).round() * gt.hx();
    let bump = |c: f64| {
        move |x: f64| {
            let s = (x - c) / 1.5;
            if s.abs() < 1.0 {
                (pi * s / 2.0).cos().powi(4)
            } else {
                0.0
            }
        }
    };
    let a = normalized(&gt, &bump(-shift / 2.0));
    let b = normalized(&gt, &bump(shift / 2.0));
    let tr = solve_bb(&CongestionProgram64::new(gt, a, b, 0.0, law)?)?;
    let reference = shift * shift / 2.0;
    let rel_tr = (tr.objective / reference - 1.0).abs();
    let pass = rel_small <= 1e-5 && rel_tr <= 1e-3;
    let summary = format!("8x8 relative error {rel_small:.2e}; translation {:.6} vs d^2/2T = {reference:.6} (rel {rel_tr:.2e})", tr.objective);
    Ok((pass, summary, json!({"small": {"objective": sol.objective, "reference": exact, "relative_error": rel_small, "gap": sol.gap}, "translation": {"objective": tr.objective, "reference": reference, "relative_error": rel_tr, "iterations": tr.iterations}})))
}

/// Planning on the torus of length 2 between `1 + a0 cos(pi x)` and `1 + a1 cos(pi x)`.
fn smooth_run(law: CouplingLaw64, nx: usize, a0: f64, a1: f64) -> Result<SolutionBundle<f64>, MfgError> {
    let pi = std::f64::consts::PI;
    let g = SpaceTimeGrid64::torus(2.0, 1.0, nx, 33)?;
    let sample = |a: f64| {
        let m: Vec<f64> = g.xs().iter().map(|&x| 1.0 + a * (pi * x).cos()).collect();
        let c = grid_mass(&g, &m);
        m.into_iter().map(|v| v / c).collect::<Vec<_>>()
    };
    let p = EulerianProblem64::new(g, law, sample(a0), EulerTerminal::Planning(sample(a1)), 1e-4)?;
    Ok(solve_u(&p, None)?.0)
}

fn elliptic_principles() -> Outcome {
    let mut pass = true;
    let mut rows = Vec::new();
    let mut parts = Vec::new();
    for (label, law) in [("power:1", CouplingLaw64::power(1.0)?), ("log", CouplingLaw64::log())] {
        let sol = smooth_run(law, 33, 0.5, 0.8)?;
        let e = extremum_principle_check(&sol.m, 1e-6)?;
        let r = rectangle_principle(&sol.v, 50, 7, 1e-6)?;
        let margin = e.lower_margin.min(e.upper_margin);
        pass &= e.pass && r.pass && margin >= -1e-6 && r.worst_margin >= -1e-6;
        parts.push(format!("{label}: extremum margin {margin:.2e}, worst rectangle margin {:.2e}", r.worst_margin));
        rows.push(json!({"coupling": label, "extremum": e, "rectangles": {"count": r.rectangles.len(), "worst_margin": r.worst_margin, "pass": r.pass}}));
    }
    Ok((pass, parts.join("; "), json!(rows)))
}

fn propagation_dichotomy() -> Outcome {
    // power: self-similar planning data, epsilon sweep on a Neumann window
    let s = SelfSimilarModel64::new(1.0)?;
    let law = CouplingLaw64::power(1.0)?;
    let r = 5.5;
    let g = SpaceTimeGrid64::with_start(-r, r, 1.0, 1.0, 65, 65, Topology::NeumannInterval)?;
    let xs = g.xs();
    let (w0, w1) = (s.support_radius(1.0), s.support_radius(2.0));
    let p0 = MarginalProfile64::sample(xs.clone(), -w0, w0, 1.0, |x| s.density(x, 1.0).unwrap_or(0.0))?;
    let p1 = MarginalProfile64::sample(xs.clone(), -w1, w1, 1.0, |x| s.density(x, 2.0).unwrap_or(0.0))?;
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let (power, _) = epsilon_sweep(
        &eps,
        |e| {
            let reg = regularize_marginals(&p0, &p1, &law, e, r, &xs)?;
            EulerianProblem64::new(g, law, reg.m0, EulerTerminal::Planning(reg.mt), e)
        },
        None::<fn(f64, f64) -> f64>,
    )?;
    // the tail bumps of the regularization reach at most two units past the supports
    let window = w0.max(w1) + 2.0;
    let widths: Vec<f64> = power.entries.iter().map(|e| e.support_halfwidth).collect();
    let finite = widths.iter().all(|&w| w <= window);

    // log: compactly supported symmetric data on a torus
    let gl = SpaceTimeGrid64::torus(2.0, 2.0, 33, 33)?;
    let m: Vec<f64> = gl.xs().iter().map(|&x| (0.25 - x * x).max(0.0)).collect();
    let c = grid_mass(&gl, &m);
    let m0: Vec<f64> = m.into_iter().map(|v| v / c).collect();
    let (logr, sols) = epsilon_sweep(
        &eps,
        |e| {
            let a = regularize_single(&m0, &CouplingLaw64::log(), e)?;
            EulerianProblem64::new(gl, CouplingLaw64::log(), a.clone(), EulerTerminal::Planning(a), e)
        },
        None::<fn(f64, f64) -> f64>,
    )?;
    let mids: Vec<f64> = logr.entries.iter().map(|e| e.min_mid_density).collect();
    let k = mids.len();
    let positive = mids.iter().all(|&v| v > 0.0);
    let stable = (mids[k - 1] - mids[k - 2]).abs() <= 0.02 * mids[k - 1];
    let suite = log_coupling_suite(&sols[k - 1].m, 0.25)?;
    let pass = finite && positive && stable && suite.log_bound_finite;
    let summary = format!(
        "power {{m > 2 eps}} half-widths {} within {window:.3}; log min m(., T/2) {}, C = {:.3}",
        widths.iter().map(|w| format!("{w:.2}")).collect::<Vec<_>>().join("/"),
        mids.iter().map(|w| format!("{w:.4}")).collect::<Vec<_>>().join("/"),
        suite.log_bound_constant
    );
    Ok((pass, summary, json!({"power_halfwidths": widths, "window": window, "log_min_mid": mids, "log_bound_constant": suite.log_bound_constant, "log_bound_finite": suite.log_bound_finite})))
}

fn log_symmetry() -> Outcome {
    let mut pass = true;
    let mut rows = Vec::new();
    let mut worst = (0.0f64, 0.0f64);
    for (nx, a0, a1) in [(33, 0.5, 0.8), (65, 0.9, 0.2)] {
        let sol = smooth_run(CouplingLaw64::log(), nx, a0, a1)?;
        let suite = log_coupling_suite(&sol.m, 0.1)?;
        match &suite.symmetry {
            Gated::Applicable(d) => {
                pass &= d.evenness <= 1e-8 && d.monotonicity <= 1e-8;
                worst = (worst.0.max(d.evenness), worst.1.max(d.monotonicity));
                rows.push(json!({"nx": nx, "amplitudes": [a0, a1], "evenness": d.evenness, "monotonicity": d.monotonicity}));
            }
            Gated::NotApplicable(why) => {
                pass = false;
                rows.push(json!({"nx": nx, "amplitudes": [a0, a1], "not_applicable": why}));
            }
        }
    }
    let summary = format!("evenness {:.1e}, monotonicity {:.1e}", worst.0, worst.1);
    Ok((pass, summary, json!(rows)))
}

fn interface_singularity() -> Outcome {
    let t = 1.0;
    let s = SelfSimilarModel64::new(2.0)?;
    let d2: Vec<f64> = (0..7).map(|k| 1e-6 * 10f64.powf(k as f64 * 0.5)).collect();
    let uxx = s.uxx_near_interface(t, &d2)?;
    let scaled: Vec<f64> = uxx.iter().zip(&d2).map(|(u, d)| u.abs() * d.sqrt()).collect();
    let spread = relative_spread(&scaled);
    // the same second derivative through the general outside formula and the root finder
    let mut consistency = 0.0f64;
    for (&d, &u) in d2.iter().zip(&uxx) {
        let x = (8.0 * s.r * t + d).sqrt();
        consistency = consistency.max((s.hessian(x, t)? / u - 1.0).abs());
    }
    let radii = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
    let fit = holder_exponent_fit(|x| s.velocity(x, t), &[s.support_radius(t)], &radii, 201)?;
    let pass = spread <= 0.05 && scaled.iter().all(|&v| v > 0.0) && fit.exponent > 0.0 && fit.exponent < 1.0;
    let summary = format!(
        "|u_xx| sqrt(Delta) = {:.4} with spread {:.2}%, hessian mismatch {:.1e}; u_x Hölder exponent {:.3} (r^2 {:.3})",
        scaled[0],
        100.0 * spread,
        consistency,
        fit.exponent,
        fit.r_squared
    );
    Ok((pass, summary, json!({"delta": d2, "scaled": scaled, "spread": spread, "hessian_consistency": consistency, "holder": fit})))
}
