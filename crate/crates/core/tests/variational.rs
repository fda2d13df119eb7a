use mfg_core::variational::*;
use mfg_core::*;
use nalgebra::{DMatrix, DVector};

fn normalized(g: &SpaceTimeGrid<f64>, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let m: Vec<f64> = g.xs().iter().map(|&x| f(x)).collect();
    let mass = cell_mass(g, &m);
    m.iter().map(|v| v / mass).collect()
}

fn bump(x: f64, center: f64) -> f64 {
    let s = (x - center) / 1.5;
    if s.abs() < 1.0 {
        (std::f64::consts::PI * s / 2.0).cos().powi(4)
    } else {
        0.0
    }
}

/// Dense log-barrier method for the same discrete program with F(s) = s^2 / 2: unknowns are
/// all node densities and face fluxes, the marginals and continuity rows are equality
/// constraints, and each barrier subproblem is solved by Newton on the full KKT matrix.
fn barrier_oracle(p: &CongestionProgram<f64>) -> f64 {
    let g = p.grid;
    let (nx, nt) = (g.nx, g.nt);
    let nk = nt - 1;
    let nf = nx - 1;
    let nm = nx * nt;
    let n = nm + nf * nk;
    let kappa = g.hx() * g.ht();
    let ratio = g.ht() / g.hx();
    let m_at = |i: usize, j: usize| i + j * nx;
    let w_at = |f: usize, k: usize| nm + f + k * nf;

    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for i in 0..nx {
        rows.push((vec![(m_at(i, 0), 1.0)], p.m0[i]));
        rows.push((vec![(m_at(i, nt - 1), 1.0)], p.mt[i]));
    }
    for k in 0..nk {
        for i in 0..nx {
            if k == nk - 1 && i == nx - 1 {
                continue;
            }
            let mut r = vec![(m_at(i, k + 1), 1.0), (m_at(i, k), -1.0)];
            if i < nf {
                r.push((w_at(i, k), ratio));
            }
            if i > 0 {
                r.push((w_at(i - 1, k), -ratio));
            }
            rows.push((r, 0.0));
        }
    }
    let nc = rows.len();

    // feasible start: linear interpolation in time, fluxes from a left-to-right sweep
    let mut x: DVector<f64> = DVector::zeros(n);
    for j in 0..nt {
        let s = j as f64 / nk as f64;
        for i in 0..nx {
            x[m_at(i, j)] = (1.0 - s) * p.m0[i] + s * p.mt[i];
        }
    }
    for k in 0..nk {
        let mut flux = 0.0;
        for f in 0..nf {
            flux -= (x[m_at(f, k + 1)] - x[m_at(f, k)]) / ratio;
            x[w_at(f, k)] = flux;
        }
    }

    let faces: Vec<([usize; 4], usize)> = (0..nk)
        .flat_map(|k| (0..nf).map(move |f| ([m_at(f, k), m_at(f + 1, k), m_at(f, k + 1), m_at(f + 1, k + 1)], w_at(f, k))))
        .collect();
    let s_of = |x: &DVector<f64>, nodes: &[usize; 4]| nodes.iter().map(|&c| x[c]).sum::<f64>() / 4.0;
    let value = |x: &DVector<f64>, mu: f64| -> f64 {
        let mut v = 0.0;
        for (nodes, wc) in &faces {
            let s = s_of(x, nodes);
            if s <= 0.0 {
                return f64::INFINITY;
            }
            let w = x[*wc];
            v += kappa * (w * w / (2.0 * s) + p.lambda * s * s / 2.0) - mu * s.ln();
        }
        v
    };

    let mut mu = 1e-2;
    while mu > 1e-14 {
        for _ in 0..100 {
            let mut grad: DVector<f64> = DVector::zeros(n);
            let mut hess: DMatrix<f64> = DMatrix::zeros(n, n);
            for (nodes, wc) in &faces {
                let s = s_of(&x, nodes);
                let w = x[*wc];
                let gs = kappa * (-w * w / (2.0 * s * s) + p.lambda * s) - mu / s;
                let gw = kappa * w / s;
                let hss = kappa * (w * w / (s * s * s) + p.lambda) + mu / (s * s);
                let hsw = -kappa * w / (s * s);
                let hww = kappa / s;
                for &a in nodes {
                    grad[a] += gs / 4.0;
                    hess[(a, *wc)] += hsw / 4.0;
                    hess[(*wc, a)] += hsw / 4.0;
                    for &b in nodes {
                        hess[(a, b)] += hss / 16.0;
                    }
                }
                grad[*wc] += gw;
                hess[(*wc, *wc)] += hww;
            }
            let mut kkt: DMatrix<f64> = DMatrix::zeros(n + nc, n + nc);
            kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
            let mut rhs: DVector<f64> = DVector::zeros(n + nc);
            for i in 0..n {
                rhs[i] = -grad[i];
            }
            for (r, (terms, b)) in rows.iter().enumerate() {
                let mut ax = 0.0;
                for &(c, v) in terms {
                    kkt[(n + r, c)] = v;
                    kkt[(c, n + r)] = v;
                    ax += v * x[c];
                }
                rhs[n + r] = b - ax;
            }
            let step = kkt.lu().solve(&rhs).expect("singular KKT matrix");
            let dx = step.rows(0, n).into_owned();
            let decrement = -grad.dot(&dx);
            let base = value(&x, mu);
            let mut t = 1.0;
            while value(&(&x + &dx * t), mu) > base - 0.25 * t * decrement.max(0.0) && t > 1e-12 {
                t *= 0.5;
            }
            x += dx * t;
            if decrement.abs() < 1e-22 {
                break;
            }
        }
        mu *= 0.1;
    }
    value(&x, 0.0)
}

#[test]
fn small_instance_matches_dense_barrier_solve() {
    let pi = std::f64::consts::PI;
    let g = SpaceTimeGrid::new(0.0, 1.0, 1.0, 8, 8, Topology::NeumannInterval).unwrap();
    let m0 = normalized(&g, |x| 1.0 + 0.6 * (pi * x).cos());
    let mt = normalized(&g, |x| 1.0 - 0.4 * (pi * x).cos());
    let p = CongestionProgram::new(g, m0, mt, 1.0, CouplingLaw::power(1.0).unwrap()).unwrap();
    let sol = solve_bb(&p).unwrap();
    let exact = barrier_oracle(&p);
    let rel = (sol.objective - exact).abs() / exact;
    assert!(rel < 1e-5, "{} vs {exact}: {rel:e}", sol.objective);
    assert!(sol.gap.abs() <= 1e-7 * (1.0 + sol.objective.abs()));
    assert!(sol.dual <= exact + 1e-12);
}

#[test]
fn translation_costs_half_squared_distance() {
    let d: f64 = 1.0;
    let g = SpaceTimeGrid::new(-3.0, 3.0, 1.0, 48, 48, Topology::NeumannInterval).unwrap();
    // shift by a whole number of cells so both marginals sample the same profile
    let shift = (d / g.hx()).round() * g.hx();
    let m0 = normalized(&g, |x| bump(x, -shift / 2.0));
    let mt = normalized(&g, |x| bump(x, shift / 2.0));
    let p = CongestionProgram::new(g, m0, mt, 0.0, CouplingLaw::power(1.0).unwrap()).unwrap();
    let sol = solve_bb(&p).unwrap();
    let exact = shift * shift / 2.0;
    assert!((sol.objective / exact - 1.0).abs() < 1e-3, "{} vs {exact}", sol.objective);
    // the recomputed objective agrees with the one reported
    let o = objective(&sol.m, &sol.w, 0.0, &p.coupling);
    assert!(o.is_err() || (o.unwrap().value - sol.objective).abs() < 1e-3 * exact);
}

#[test]
fn equal_marginals_need_no_flux() {
    let g = SpaceTimeGrid::new(-3.0, 3.0, 1.0, 24, 12, Topology::NeumannInterval).unwrap();
    let m0 = normalized(&g, |x| bump(x, 0.3));
    let p = CongestionProgram::new(g, m0.clone(), m0, 0.0, CouplingLaw::power(1.0).unwrap()).unwrap();
    let sol = solve_bb(&p).unwrap();
    assert!(sol.objective.abs() < 1e-7, "{}", sol.objective);
    assert!(sol.w.iter().all(|w| w.abs() < 1e-5));
}

#[test]
fn any_feasible_pair_costs_at_least_the_optimum() {
    let pi = std::f64::consts::PI;
    let g = SpaceTimeGrid::new(0.0, 1.0, 1.0, 12, 10, Topology::NeumannInterval).unwrap();
    let m0 = normalized(&g, |x| 1.0 + 0.5 * (pi * x).cos());
    let mt = normalized(&g, |x| 1.0 + 0.5 * (2.0 * pi * x).cos());
    let law = CouplingLaw::power(1.0).unwrap();
    let p = CongestionProgram::new(g, m0.clone(), mt.clone(), 1.0, law).unwrap();
    let sol = solve_bb(&p).unwrap();
    let tol = 1e-7 * (1.0 + sol.objective.abs());
    for bend in [0.0, 0.3, -0.2] {
        let m = ScalarField::from_fn(g, |x, t| {
            let i = ((x / g.hx()).round() as usize).min(g.nx - 1);
            let lin = (1.0 - t) * m0[i] + t * mt[i];
            lin + bend * t * (1.0 - t) * (pi * x).cos()
        });
        let (w, defect) = momentum_from_density(&m);
        assert!(defect < 1e-12);
        let o = objective(&m, &w, 1.0, &law).unwrap();
        assert!(o.value >= sol.objective - tol);
    }
}

#[test]
fn selfsimilar_flow_cost_matches_program_optimum() {
    use mfg_core::lagrangian::*;
    let s = SelfSimilarModel::new(1.0).unwrap();
    let law = CouplingLaw::power(1.0).unwrap();
    let g = SpaceTimeGrid::with_start(-5.5, 5.5, 1.0, 1.0, 32, 32, Topology::NeumannInterval).unwrap();
    let m0 = normalized(&g, |x| s.density(x, 1.0).unwrap());
    let mt = normalized(&g, |x| s.density(x, 2.0).unwrap());
    let sol = solve_bb(&CongestionProgram::new(g, m0, mt, 1.0, law).unwrap()).unwrap();

    let n = 129;
    let w = s.support_radius(1.0);
    let nodes: Vec<f64> = (0..n).map(|k| -w + 2.0 * w * k as f64 / (n - 1) as f64).collect();
    let scale = 2f64.powf(s.alpha);
    let p0 = s.profile(nodes.clone(), 1.0).unwrap();
    let p1 = s.profile(nodes.iter().map(|x| x * scale).collect(), 2.0).unwrap();
    let fp = FlowProblem::new(p0, law, 1.0, TerminalCondition::Planning(p1), n, n).unwrap();
    let flow = solve_and_recover(&fp).unwrap();
    let cost = flow_cost(&flow.flow, &flow.density, &fp).unwrap();
    assert!((sol.objective / cost - 1.0).abs() < 0.02, "{} vs {cost}", sol.objective);
}
