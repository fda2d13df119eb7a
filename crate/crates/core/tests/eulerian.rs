use mfg_core::eulerian::*;
use mfg_core::*;

fn normalized(g: &SpaceTimeGrid<f64>, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let m: Vec<f64> = g.xs().iter().map(|&x| f(x)).collect();
    let mass = grid_mass(g, &m);
    m.iter().map(|v| v / mass).collect()
}

/// Worst evenness defect and worst increase of m on the right half, over all times.
fn symmetry_defects(m: &ScalarField<f64>) -> (f64, f64) {
    let g = m.grid;
    let nx = g.nx;
    let (mut even, mut mono) = (0.0f64, 0.0f64);
    for j in 0..g.nt {
        for i in 0..nx {
            even = even.max((m.at(i, j) - m.at(nx - 1 - i, j)).abs());
            if g.x(i) >= -1e-12 && i + 1 < nx {
                mono = mono.max(m.at(i + 1, j) - m.at(i, j));
            }
        }
    }
    (even, mono)
}

#[test]
fn selfsimilar_sweep_approaches_oracle() {
    let s = SelfSimilarModel::new(1.0).unwrap();
    let law = CouplingLaw::power(1.0).unwrap();
    let r = 5.5;
    let g = SpaceTimeGrid::with_start(-r, r, 1.0, 1.0, 65, 65, Topology::NeumannInterval).unwrap();
    let xs = g.xs();
    let w0 = s.support_radius(1.0);
    let w1 = s.support_radius(2.0);
    let p0 = MarginalProfile::sample(xs.clone(), -w0, w0, 1.0, |x| s.density(x, 1.0).unwrap()).unwrap();
    let p1 = MarginalProfile::sample(xs.clone(), -w1, w1, 1.0, |x| s.density(x, 2.0).unwrap()).unwrap();
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let (rep, sols) = epsilon_sweep(
        &eps,
        |e| {
            let reg = regularize_marginals(&p0, &p1, &law, e, r, &xs)?;
            EulerianProblem::new(g, law, reg.m0, EulerTerminal::Planning(reg.mt), e)
        },
        Some(|x: f64, t: f64| s.density(x, t).unwrap()),
    )
    .unwrap();
    let errors: Vec<f64> = rep.entries.iter().map(|e| e.oracle_error.unwrap()).collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    assert!(*errors.last().unwrap() < 2e-2, "{errors:?}");
    // finite propagation: {m > 2 eps} never leaves the window of the tail bumps
    let window = w0.max(w1) + 2.0;
    let widths: Vec<f64> = rep.entries.iter().map(|e| e.support_halfwidth).collect();
    assert!(widths.iter().all(|&w| w <= window), "{widths:?}");
    assert!(widths.windows(2).all(|w| w[1] <= w[0]), "{widths:?}");
    let last = sols.last().unwrap();
    let mass_drift = (0..g.nt)
        .map(|j| (grid_mass(&g, last.m.row(j)) - grid_mass(&g, last.m.row(0))).abs())
        .fold(0.0, f64::max);
    assert!(mass_drift < 1e-10, "{mass_drift}");
}

#[test]
fn log_coupling_spreads_compact_data_everywhere() {
    let g = SpaceTimeGrid::torus(2.0, 2.0, 33, 33).unwrap();
    let m0 = normalized(&g, |x| (0.25 - x * x).max(0.0));
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let (rep, sols) = epsilon_sweep(
        &eps,
        |e| {
            let a = regularize_single(&m0, &CouplingLaw::log(), e)?;
            EulerianProblem::new(g, CouplingLaw::log(), a.clone(), EulerTerminal::Planning(a), e)
        },
        None::<fn(f64, f64) -> f64>,
    )
    .unwrap();
    let mids: Vec<f64> = rep.entries.iter().map(|e| e.min_mid_density).collect();
    let n = mids.len();
    assert!(mids[n - 1] > 0.3, "{mids:?}");
    assert!((mids[n - 1] - mids[n - 2]).abs() < 0.02 * mids[n - 1], "{mids:?}");
    let (even, _) = symmetry_defects(&sols[n - 1].m);
    assert!(even < 1e-12);
}

#[test]
fn log_coupling_keeps_smooth_data_even_and_monotone() {
    let pi = std::f64::consts::PI;
    for (nx, a0, a1) in [(33, 0.5, 0.8), (65, 0.9, 0.2)] {
        let g = SpaceTimeGrid::torus(2.0, 1.0, nx, 33).unwrap();
        let m0 = normalized(&g, |x| 1.0 + a0 * (pi * x).cos());
        let mt = normalized(&g, |x| 1.0 + a1 * (pi * x).cos());
        let p = EulerianProblem::new(g, CouplingLaw::log(), m0, EulerTerminal::Planning(mt), 1e-4).unwrap();
        let (sol, rep) = solve_u(&p, None).unwrap();
        assert!(rep.residual < 1e-8);
        let (even, mono) = symmetry_defects(&sol.m);
        assert!(even < 1e-8 && mono < 1e-8, "{even} {mono}");
        // interior values stay between the marginal extremes
        let lo = sol.m.row(0).iter().chain(sol.m.row(g.nt - 1)).fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = sol.m.row(0).iter().chain(sol.m.row(g.nt - 1)).fold(0.0f64, |a, &b| a.max(b));
        assert!(sol.m.values.iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }
}

#[test]
fn terminal_cost_problem_converges() {
    let pi = std::f64::consts::PI;
    let g = SpaceTimeGrid::torus(2.0, 1.0, 33, 33).unwrap();
    let m0 = normalized(&g, |x| 1.0 + 0.5 * (pi * x).cos());
    let law = CouplingLaw::power(1.0).unwrap();
    let p = EulerianProblem::new(g, law, m0, EulerTerminal::TerminalCost { c1: 1.0 }, 1e-4).unwrap();
    let (sol, rep) = solve_u(&p, None).unwrap();
    assert!(rep.residual < 1e-8);
    let mass0 = grid_mass(&g, sol.m.row(0));
    let mass1 = grid_mass(&g, sol.m.row(g.nt - 1));
    assert!((mass0 - mass1).abs() < 1e-10);
    // the terminal cost pushes mass out of the peak
    assert!(sol.m.at(16, g.nt - 1) < sol.m.at(16, 0));
}

#[test]
fn single_precision_constant_state() {
    let g = SpaceTimeGrid::<f32>::torus(1.0, 1.0, 9, 9).unwrap();
    let m0 = vec![1.0f32; 9];
    let law = CouplingLaw::power(2.0f32).unwrap();
    let p = EulerianProblem::new(g, law, m0.clone(), EulerTerminal::Planning(m0), 1e-3).unwrap();
    let (sol, _) = solve_u(&p, None).unwrap();
    assert!(sol.m.values.iter().all(|&v| (v - 1.0).abs() < 1e-5));
}
