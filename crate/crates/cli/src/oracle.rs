//! Independent reference solve for small congestion programs with F(s) = s^2 / 2: a dense
//! log-barrier method over all node densities and face fluxes, with the marginals and the
//! continuity rows as equality constraints and Newton on the full KKT matrix for each
//! barrier parameter.

use mfg_core::CongestionProgram64;
use nalgebra::{DMatrix, DVector};

/// Optimal value of `p` (which must use the quadratic congestion cost).
pub fn dense_barrier_value(p: &CongestionProgram64) -> f64 {
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
            let Some(step) = kkt.lu().solve(&rhs) else { return f64::NAN };
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
