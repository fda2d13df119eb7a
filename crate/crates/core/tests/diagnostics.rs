use mfg_core::diagnostics::*;
use mfg_core::eulerian::*;
use mfg_core::lagrangian::*;
use mfg_core::*;

fn selfsimilar_planning(n: usize) -> (SelfSimilarModel<f64>, FlowSolution<f64>) {
    let s = SelfSimilarModel::new(1.0).unwrap();
    let w = s.support_radius(1.0);
    let nodes: Vec<f64> = (0..n).map(|k| -w + 2.0 * w * k as f64 / (n - 1) as f64).collect();
    let scale = 2f64.powf(s.alpha);
    let m0 = s.profile(nodes.clone(), 1.0).unwrap();
    let mt = s.profile(nodes.iter().map(|x| x * scale).collect(), 2.0).unwrap();
    let p = FlowProblem::new(m0, CouplingLaw::power(1.0).unwrap(), 1.0, TerminalCondition::Planning(mt), n, n).unwrap();
    let sol = solve_and_recover(&p).unwrap();
    (s, sol)
}

fn smooth_run(law: CouplingLaw<f64>) -> SolutionBundle<f64> {
    let pi = std::f64::consts::PI;
    let g = SpaceTimeGrid::torus(2.0, 1.0, 33, 33).unwrap();
    let sample = |a: f64| {
        let m: Vec<f64> = g.xs().iter().map(|&x| 1.0 + a * (pi * x).cos()).collect();
        let c = grid_mass(&g, &m);
        m.iter().map(|v| v / c).collect::<Vec<_>>()
    };
    let p = EulerianProblem::new(g, law, sample(0.5), EulerTerminal::Planning(sample(0.8)), 1e-4).unwrap();
    solve_u(&p, None).unwrap().0
}

#[test]
fn selfsimilar_support_grows_at_the_optimal_rate() {
    let mut constants = Vec::new();
    for n in [33, 65] {
        let (s, sol) = selfsimilar_planning(n);
        let b = boundary_rate_and_convexity(&sol.curves, 1.0).unwrap();
        assert!((b.growth_exponent - s.alpha).abs() < 0.05, "{}", b.growth_exponent);
        assert!(b.strictly_convex && b.expanding);
        constants.push(b.convexity_constant);
    }
    assert!(constants.iter().all(|k| k.is_finite()));
    assert!((constants[0] / constants[1] - 1.0).abs() < 0.05, "{constants:?}");
}

#[test]
fn harnack_constant_is_stable_under_refinement() {
    let mut c = Vec::new();
    for n in [33, 65] {
        let (_, sol) = selfsimilar_planning(n);
        let v = ScalarField::new(sol.flow.grid, sol.density.v.clone()).unwrap();
        let h = harnack_ratio(&v, 5).unwrap();
        assert!(h.finite);
        c.push(h.constant);
    }
    assert!((c[0] / c[1] - 1.0).abs() < 0.1, "{c:?}");
}

#[test]
fn interface_regularity_of_selfsimilar_solutions() {
    let t = 1.0;
    let radii = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
    // theta = 2: u_x is only Hölder at the interface, with |u_xx| ~ dist^(-1/2)
    let s2 = SelfSimilarModel::new(2.0).unwrap();
    let fit = holder_exponent_fit(|x| s2.velocity(x, t), &[s2.support_radius(t)], &radii, 201).unwrap();
    assert!(fit.reliable && fit.exponent > 0.0 && fit.exponent < 1.0, "{fit:?}");
    let d2: Vec<f64> = (0..7).map(|k| 1e-6 * 10f64.powf(k as f64 * 0.5)).collect();
    let scaled: Vec<f64> = s2.uxx_near_interface(t, &d2).unwrap().iter().zip(&d2).map(|(u, d)| u.abs() * d.sqrt()).collect();
    assert!(relative_spread(&scaled) <= 0.05 && scaled[0] > 0.0);
    // theta = 1: f(m) is Lipschitz up to the free boundary and smooth inside
    let s1 = SelfSimilarModel::new(1.0).unwrap();
    let edge = holder_exponent_fit(|x| s1.density(x, t), &[s1.support_radius(t)], &radii, 201).unwrap();
    assert!((edge.exponent - 1.0).abs() < 0.1);
    let inside = holder_exponent_fit(|x| s1.density(x, t), &[0.3], &radii, 201).unwrap();
    assert!(inside.exponent >= 0.95);
}

#[test]
fn elliptic_principles_on_smooth_runs() {
    for law in [CouplingLaw::power(1.0).unwrap(), CouplingLaw::log()] {
        let sol = smooth_run(law);
        let e = extremum_principle_check(&sol.m, 1e-6).unwrap();
        assert!(e.pass, "{e:?}");
        let r = rectangle_principle(&sol.v, 50, 7, 1e-6).unwrap();
        assert!(r.pass, "{}", r.worst_margin);
        let c = displacement_convexity_profile(&sol.m, 2.0, 1e-4).unwrap();
        assert!(c.pass, "{c:?}");
        let en = energy_and_modulus(&sol.v, 0.05).unwrap();
        assert!(en.pass && en.energy > 0.0);
    }
}

#[test]
fn log_suite_on_smooth_even_data() {
    let sol = smooth_run(CouplingLaw::log());
    let r = log_coupling_suite(&sol.m, 0.1).unwrap();
    assert!(r.positive && r.log_bound_finite && r.w2_pass, "{r:?}");
    match r.symmetry {
        Gated::Applicable(s) => assert!(s.pass),
        Gated::NotApplicable(why) => panic!("{why}"),
    }
}

#[test]
fn selfsimilar_density_is_displacement_convex() {
    let s = SelfSimilarModel::new(1.0).unwrap();
    let g = SpaceTimeGrid::with_start(-4.0, 4.0, 1.0, 1.0, 401, 41, Topology::NeumannInterval).unwrap();
    let m = s.density_field(g).unwrap();
    let c = displacement_convexity_profile(&m, 2.0, 1e-4).unwrap();
    assert!(c.pass, "{c:?}");
    assert!(extremum_principle_check(&m, 1e-6).unwrap().pass);
}
