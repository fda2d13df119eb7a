//! Lagrangian flow solver: the optimal-trajectory map gamma(x, t) solves
//!
//!   gamma_tt + theta f(m0) gamma_xx / gamma_x^(2+theta) = f(m0)_x / gamma_x^(1+theta)
//!
//! on [a0, b0] x [0, T] with gamma(x, 0) = x and either gamma(x, T) = G(x) (planning) or
//! the Robin condition gamma_t = -c1 T gamma_tt at t = T (terminal cost). Density, value
//! function and free boundary are recovered from gamma.

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::interp::Pchip;
use crate::linalg::BandMatrix;
use crate::model::{
    linear_at, trapezoid, Cdf, CouplingLaw, FlowField, FreeBoundaryCurves, MarginalProfile,
    ProblemKind, ScalarField, SpaceTimeGrid, Topology,
};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TerminalCondition<T> {
    Planning(MarginalProfile<T>),
    /// u(., T) = c1 T m(., T)^theta
    TerminalCost { c1: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    pub gamma_x_floor: T,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        NewtonOptions {
            tol: T::lit(1e-9),
            max_iter: 200,
            gamma_x_floor: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowProblem<T> {
    pub m0: MarginalProfile<T>,
    pub coupling: CouplingLaw<T>,
    pub horizon: T,
    pub terminal: TerminalCondition<T>,
    pub nx: usize,
    pub nt: usize,
    pub options: NewtonOptions<T>,
}

impl<T: Real> FlowProblem<T> {
    pub fn new(
        m0: MarginalProfile<T>,
        coupling: CouplingLaw<T>,
        horizon: T,
        terminal: TerminalCondition<T>,
        nx: usize,
        nt: usize,
    ) -> Result<Self> {
        if coupling.theta().is_none() {
            return Err(MfgError::invalid(
                "the Lagrangian solver handles the power coupling only",
            ));
        }
        if let TerminalCondition::Planning(mt) = &terminal {
            if (mt.mass - m0.mass).abs() > T::lit(1e-8) {
                return Err(MfgError::invalid(format!(
                    "planning marginals have different masses {} and {}",
                    m0.mass, mt.mass
                )));
            }
        }
        if let TerminalCondition::TerminalCost { c1 } = terminal {
            if !(c1 >= T::zero()) {
                return Err(MfgError::invalid("terminal cost weight must be nonnegative"));
            }
        }
        let grid = SpaceTimeGrid::new(m0.a, m0.b, horizon, nx, nt, Topology::LagrangianInterval)?;
        let _ = grid;
        Ok(FlowProblem {
            m0,
            coupling,
            horizon,
            terminal,
            nx,
            nt,
            options: NewtonOptions::default(),
        })
    }

    pub fn grid(&self) -> SpaceTimeGrid<T> {
        SpaceTimeGrid::new(
            self.m0.a,
            self.m0.b,
            self.horizon,
            self.nx,
            self.nt,
            Topology::LagrangianInterval,
        )
        .expect("validated at construction")
    }

    pub fn theta(&self) -> T {
        self.coupling.theta().expect("power coupling")
    }

    pub fn kind(&self) -> ProblemKind {
        match self.terminal {
            TerminalCondition::Planning(_) => ProblemKind::Planning,
            TerminalCondition::TerminalCost { .. } => ProblemKind::TerminalCost,
        }
    }

    /// m0 on the Lagrangian nodes (exact copy when the profile already lives on them).
    pub fn m0_on_grid(&self) -> Vec<T> {
        let xs = self.grid().xs();
        if xs.len() == self.m0.x.len() && xs.iter().zip(&self.m0.x).all(|(a, b)| a == b) {
            return self.m0.m.clone();
        }
        xs.iter()
            .map(|&x| {
                if x <= self.m0.a || x >= self.m0.b {
                    T::zero()
                } else {
                    linear_at(&self.m0.x, &self.m0.m, x).max(T::zero())
                }
            })
            .collect()
    }

    /// Planning problem with the roles of the marginals exchanged.
    pub fn reversed(&self) -> Result<Self> {
        match &self.terminal {
            TerminalCondition::Planning(mt) => {
                let mut p = FlowProblem::new(
                    mt.clone(),
                    self.coupling,
                    self.horizon,
                    TerminalCondition::Planning(self.m0.clone()),
                    self.nx,
                    self.nt,
                )?;
                p.options = self.options;
                Ok(p)
            }
            TerminalCondition::TerminalCost { .. } => Err(MfgError::invalid(
                "time reversal applies to the planning problem only",
            )),
        }
    }
}

/// G = cdf(mT)^-1 o cdf(m0).
#[derive(Debug, Clone)]
pub struct TransportMap<T> {
    cdf0: Cdf<T>,
    cdf_t: Cdf<T>,
}

impl<T: Real> TransportMap<T> {
    pub fn eval(&self, x: T) -> T {
        self.cdf_t.inverse(self.cdf0.eval(x))
    }
}

pub fn transport_boundary_map<T: Real>(
    m0: &MarginalProfile<T>,
    mt: &MarginalProfile<T>,
) -> Result<TransportMap<T>> {
    let cdf0 = m0.cdf();
    let cdf_t = mt.cdf();
    if (cdf0.mass() - cdf_t.mass()).abs() > T::lit(1e-8) {
        return Err(MfgError::invalid(format!(
            "marginal masses differ: {} vs {}",
            cdf0.mass(),
            cdf_t.mass()
        )));
    }
    Ok(TransportMap { cdf0, cdf_t })
}

/// One-sided second-order x-derivative at the ends, centered inside.
fn diff_x2<T: Real>(y: &[T], h: T) -> Vec<T> {
    let n = y.len();
    let two = T::lit(2.0);
    let mut d = vec![T::zero(); n];
    for k in 1..n - 1 {
        d[k] = (y[k + 1] - y[k - 1]) / (two * h);
    }
    d[0] = (-T::lit(3.0) * y[0] + T::lit(4.0) * y[1] - y[2]) / (two * h);
    d[n - 1] = (T::lit(3.0) * y[n - 1] - T::lit(4.0) * y[n - 2] + y[n - 3]) / (two * h);
    d
}

struct Discretization<T> {
    nx: usize,
    nt: usize,
    hx: T,
    ht: T,
    theta: T,
    f: Vec<T>,
    fx: Vec<T>,
    x: Vec<T>,
    target: Option<Vec<T>>,
    robin: T,
    floor: T,
}

/// Spatial operator A(gamma) = theta f gamma_xx / gamma_x^(2+theta) - f_x / gamma_x^(1+theta)
/// at one node, with its derivatives with respect to the stencil nodes.
struct SpatialTerm<T> {
    value: T,
    cols: [usize; 3],
    dvals: [T; 3],
}

impl<T: Real> Discretization<T> {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i + j * self.nx
    }

    fn spatial(&self, g: &[T], i: usize, j: usize) -> std::result::Result<SpatialTerm<T>, ()> {
        let two = T::lit(2.0);
        let th = self.theta;
        let q = T::one() + th;
        let p = two + th;
        let n = self.nx;
        let hx = self.hx;
        if i == 0 || i == n - 1 {
            let (cols, c) = if i == 0 {
                ([self.idx(0, j), self.idx(1, j), self.idx(2, j)], [-3.0, 4.0, -1.0])
            } else {
                ([self.idx(n - 1, j), self.idx(n - 2, j), self.idx(n - 3, j)], [3.0, -4.0, 1.0])
            };
            let gx = (T::lit(c[0]) * g[cols[0]] + T::lit(c[1]) * g[cols[1]] + T::lit(c[2]) * g[cols[2]])
                / (two * hx);
            if !(gx > self.floor) {
                return Err(());
            }
            let fx = self.fx[i];
            let value = -fx / gx.powf(q);
            let dgx = q * fx / gx.powf(q + T::one());
            let dvals = [
                dgx * T::lit(c[0]) / (two * hx),
                dgx * T::lit(c[1]) / (two * hx),
                dgx * T::lit(c[2]) / (two * hx),
            ];
            return Ok(SpatialTerm { value, cols, dvals });
        }
        let (gm, g0, gp) = (g[self.idx(i - 1, j)], g[self.idx(i, j)], g[self.idx(i + 1, j)]);
        let gx = (gp - gm) / (two * hx);
        if !(gx > self.floor) {
            return Err(());
        }
        let gxx = (gp - two * g0 + gm) / (hx * hx);
        let f = self.f[i];
        let fx = self.fx[i];
        let gxp = gx.powf(p);
        let gxq = gx.powf(q);
        let value = th * f * gxx / gxp - fx / gxq;
        let diag = th * f / (hx * hx * gxp);
        let first = (-p * th * f * gxx / (gxp * gx) + q * fx / (gxq * gx)) / (two * hx);
        Ok(SpatialTerm {
            value,
            cols: [self.idx(i - 1, j), self.idx(i, j), self.idx(i + 1, j)],
            dvals: [diag - first, -two * diag, diag + first],
        })
    }

    /// Residual and (optionally) Jacobian. Returns Err(()) when gamma_x drops below the floor.
    fn assemble(&self, g: &[T], jac: Option<&mut BandMatrix<T>>) -> std::result::Result<Vec<T>, ()> {
        let (nx, nt) = (self.nx, self.nt);
        let ht2 = self.ht * self.ht;
        let mut r = vec![T::zero(); nx * nt];
        let mut jac = jac;
        if let Some(a) = jac.as_deref_mut() {
            a.clear();
        }
        for i in 0..nx {
            let k = self.idx(i, 0);
            r[k] = g[k] - self.x[i];
            if let Some(a) = jac.as_deref_mut() {
                a.add(k, k, T::one());
            }
        }
        for j in 1..nt - 1 {
            for i in 0..nx {
                let k = self.idx(i, j);
                let s = self.spatial(g, i, j)?;
                let (km, kp) = (self.idx(i, j - 1), self.idx(i, j + 1));
                r[k] = (g[kp] - T::lit(2.0) * g[k] + g[km]) / ht2 + s.value;
                if let Some(a) = jac.as_deref_mut() {
                    a.add(k, kp, ht2.recip());
                    a.add(k, km, ht2.recip());
                    a.add(k, k, -T::lit(2.0) / ht2);
                    for (c, d) in s.cols.iter().zip(s.dvals) {
                        a.add(k, *c, d);
                    }
                }
            }
        }
        let j = nt - 1;
        match &self.target {
            Some(target) => {
                for i in 0..nx {
                    let k = self.idx(i, j);
                    r[k] = g[k] - target[i];
                    if let Some(a) = jac.as_deref_mut() {
                        a.add(k, k, T::one());
                    }
                }
            }
            None => {
                // (gamma_N - gamma_{N-1}) / ht - (ht / 2 + c1 T) A = 0 after eliminating the ghost node
                let w = self.ht / T::lit(2.0) + self.robin;
                for i in 0..nx {
                    let k = self.idx(i, j);
                    let km = self.idx(i, j - 1);
                    let s = self.spatial(g, i, j)?;
                    r[k] = (g[k] - g[km]) / self.ht - w * s.value;
                    if let Some(a) = jac.as_deref_mut() {
                        a.add(k, k, self.ht.recip());
                        a.add(k, km, -self.ht.recip());
                        for (c, d) in s.cols.iter().zip(s.dvals) {
                            a.add(k, *c, -w * d);
                        }
                    }
                }
            }
        }
        Ok(r)
    }
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

/// Convergence record of a Newton solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Solves the flow equation by damped Newton on the full space-time unknown.
pub fn solve_flow<T: Real>(problem: &FlowProblem<T>) -> Result<(FlowField<T>, SolveReport)> {
    let grid = problem.grid();
    let (nx, nt) = (grid.nx, grid.nt);
    let theta = problem.theta();
    let x = grid.xs();
    let m0 = problem.m0_on_grid();
    let f: Vec<T> = m0.iter().map(|&m| m.powf(theta)).collect();
    let fx = diff_x2(&f, grid.hx());
    let target = match &problem.terminal {
        TerminalCondition::Planning(mt) => {
            let g = transport_boundary_map(&problem.m0, mt)?;
            Some(x.iter().map(|&xi| g.eval(xi)).collect::<Vec<T>>())
        }
        TerminalCondition::TerminalCost { .. } => None,
    };
    let robin = match problem.terminal {
        TerminalCondition::TerminalCost { c1 } => c1 * problem.horizon,
        TerminalCondition::Planning(_) => T::zero(),
    };
    let disc = Discretization {
        nx,
        nt,
        hx: grid.hx(),
        ht: grid.ht(),
        theta,
        f,
        fx,
        x: x.clone(),
        target: target.clone(),
        robin,
        floor: problem.options.gamma_x_floor,
    };
    let mut g = vec![T::zero(); nx * nt];
    for j in 0..nt {
        let s = T::from_usize_lossy(j) / T::from_usize_lossy(nt - 1);
        for i in 0..nx {
            g[i + j * nx] = match &target {
                Some(tg) => x[i] + s * (tg[i] - x[i]),
                None => x[i],
            };
        }
    }
    let opts = problem.options;
    let mut res = disc
        .assemble(&g, None)
        .map_err(|_| MfgError::Degenerate("initial guess violates the gamma_x floor".into()))?;
    let mut norm = max_abs(&res);
    let mut history = vec![norm.to_f64_lossy()];
    let mut iterations = 0;
    let mut jac = BandMatrix::zeros(nx * nt, nx, nx);
    while norm > opts.tol {
        if iterations >= opts.max_iter {
            return Err(MfgError::Solver {
                message: "Newton iteration for the flow did not converge".into(),
                residual: norm.to_f64_lossy(),
                iterations,
            });
        }
        iterations += 1;
        disc.assemble(&g, Some(&mut jac)).expect("current iterate is admissible");
        let lu = std::mem::replace(&mut jac, BandMatrix::zeros(0, 0, 0)).factor()?;
        let mut step: Vec<T> = res.iter().map(|&v| -v).collect();
        lu.solve_in_place(&mut step);
        jac = BandMatrix::zeros(nx * nt, nx, nx);
        let mut lambda = T::one();
        let mut accepted = false;
        let mut floor_hit = false;
        for _ in 0..40 {
            let trial: Vec<T> = g.iter().zip(&step).map(|(&a, &d)| a + lambda * d).collect();
            match disc.assemble(&trial, None) {
                Ok(r) => {
                    let n = max_abs(&r);
                    if n < norm || n <= opts.tol {
                        g = trial;
                        res = r;
                        norm = n;
                        accepted = true;
                        break;
                    }
                }
                Err(()) => floor_hit = true,
            }
            lambda /= T::lit(2.0);
        }
        if !accepted {
            if floor_hit {
                return Err(MfgError::Degenerate(format!(
                    "backtracking could not keep gamma_x above {}",
                    opts.gamma_x_floor
                )));
            }
            return Err(MfgError::Solver {
                message: "line search stalled".into(),
                residual: norm.to_f64_lossy(),
                iterations,
            });
        }
        history.push(norm.to_f64_lossy());
    }
    for (i, xi) in x.iter().enumerate() {
        g[i] = *xi;
    }
    let flow = FlowField::new(grid, g)?;
    Ok((
        flow,
        SolveReport {
            iterations,
            residual: norm.to_f64_lossy(),
            history,
        },
    ))
}

/// Density along trajectories m(gamma(x, t), t) = m0(x) / gamma_x and v = f of it, stored
/// x-fastest on the Lagrangian grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagrangianDensity<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

pub fn density_along_flow<T: Real>(
    flow: &FlowField<T>,
    m0: &[T],
    coupling: &CouplingLaw<T>,
) -> Result<LagrangianDensity<T>> {
    let nx = flow.grid.nx;
    if m0.len() != nx {
        return Err(MfgError::invalid("m0 must be sampled on the Lagrangian nodes"));
    }
    let mut m = Vec::with_capacity(flow.gamma.len());
    let mut v = Vec::with_capacity(flow.gamma.len());
    for (k, &gx) in flow.gamma_x.iter().enumerate() {
        if !(gx > T::zero()) {
            return Err(MfgError::Degenerate(format!("gamma_x = {gx} at node {k}")));
        }
        let mk = m0[k % nx] / gx;
        m.push(mk);
        v.push(coupling.f(mk)?);
    }
    Ok(LagrangianDensity { m, v })
}

/// Mass of m(., t) computed in Eulerian variables by the trapezoid rule on the moving
/// nodes gamma(., t).
pub fn pushed_mass<T: Real>(flow: &FlowField<T>, dens: &LagrangianDensity<T>, j: usize) -> T {
    let nx = flow.grid.nx;
    trapezoid(flow.level(j), &dens.m[j * nx..(j + 1) * nx])
}

/// Pushes m o gamma to an Eulerian grid: monotone cubic interpolation of gamma(., t) -> m at
/// every Lagrangian level, linear in time between levels, zero outside [gamma_L, gamma_R].
pub fn eulerian_density<T: Real>(
    flow: &FlowField<T>,
    dens: &LagrangianDensity<T>,
    grid: SpaceTimeGrid<T>,
) -> Result<ScalarField<T>> {
    push_to_eulerian(flow, &dens.m, grid, Extension::Zero)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Extension {
    Zero,
    /// Continue linearly with the given per-level slopes at the ends.
    Linear,
}

fn push_to_eulerian<T: Real>(
    flow: &FlowField<T>,
    values: &[T],
    grid: SpaceTimeGrid<T>,
    ext: Extension,
) -> Result<ScalarField<T>> {
    let lg = flow.grid;
    let (nx, nt) = (lg.nx, lg.nt);
    for j in 0..nt {
        if flow.level(j).windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MfgError::Degenerate(format!("gamma(., t) not monotone at level {j}")));
        }
    }
    let levels: Vec<Pchip<T>> = (0..nt)
        .map(|j| Pchip::new(flow.level(j), &values[j * nx..(j + 1) * nx]))
        .collect();
    let eval_level = |j: usize, y: T| -> T {
        let gl = flow.at(0, j);
        let gr = flow.at(nx - 1, j);
        if y >= gl && y <= gr {
            return levels[j].eval(y);
        }
        match ext {
            Extension::Zero => T::zero(),
            Extension::Linear => {
                let (k0, k1, edge) = if y < gl { (0, 1, gl) } else { (nx - 1, nx - 2, gr) };
                let slope = (values[k0 + j * nx] - values[k1 + j * nx]) / (flow.at(k0, j) - flow.at(k1, j));
                values[k0 + j * nx] + slope * (y - edge)
            }
        }
    };
    let mut out = ScalarField::zeros(grid);
    for jj in 0..grid.nt {
        let s = ((grid.t(jj) - lg.t_start) / lg.ht())
            .max(T::zero())
            .min(T::from_usize_lossy(nt - 1));
        let j0 = s.floor().to_usize().unwrap_or(0).min(nt - 2);
        let w = s - T::from_usize_lossy(j0);
        for ii in 0..grid.nx {
            let y = grid.x(ii);
            let a = eval_level(j0, y);
            let b = eval_level(j0 + 1, y);
            out.set(ii, jj, (T::one() - w) * a + w * b);
        }
    }
    Ok(out)
}

/// u_x along the flow and the value u(gamma(x, t), t), both on the Lagrangian grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagrangianValue<T> {
    pub ux: Vec<T>,
    pub u: Vec<T>,
}

/// u_x(gamma, t) = -gamma_t and u(gamma(x, t), t) = int_t^T (gamma_s^2 / 2 + v) ds + u_T.
/// For planning u_T is rebuilt from u_T,x(gamma(x, T)) gamma_x = -gamma_t gamma_x and
/// normalized by int u_T mT = 0.
pub fn velocity_and_value<T: Real>(
    flow: &FlowField<T>,
    dens: &LagrangianDensity<T>,
    problem: &FlowProblem<T>,
) -> Result<LagrangianValue<T>> {
    let g = flow.grid;
    let (nx, nt) = (g.nx, g.nt);
    let (hx, ht) = (g.hx(), g.ht());
    let two = T::lit(2.0);
    let ux: Vec<T> = flow.gamma_t.iter().map(|&v| -v).collect();
    let last = nt - 1;
    let mut u_t = vec![T::zero(); nx];
    match problem.terminal {
        TerminalCondition::TerminalCost { c1 } => {
            for (i, ui) in u_t.iter_mut().enumerate() {
                *ui = c1 * problem.horizon * dens.v[i + last * nx];
            }
        }
        TerminalCondition::Planning(_) => {
            let m0 = problem.m0_on_grid();
            let slope: Vec<T> = (0..nx)
                .map(|i| -flow.gamma_t[i + last * nx] * flow.gamma_x[i + last * nx])
                .collect();
            for i in 1..nx {
                u_t[i] = u_t[i - 1] + hx * (slope[i] + slope[i - 1]) / two;
            }
            let xs = g.xs();
            let mass = trapezoid(&xs, &m0);
            let weighted: Vec<T> = u_t.iter().zip(&m0).map(|(&a, &b)| a * b).collect();
            let mean = trapezoid(&xs, &weighted) / mass;
            u_t.iter_mut().for_each(|v| *v -= mean);
        }
    }
    let mut u = vec![T::zero(); nx * nt];
    u[last * nx..].copy_from_slice(&u_t);
    for j in (0..last).rev() {
        for i in 0..nx {
            let k1 = i + (j + 1) * nx;
            let k0 = i + j * nx;
            let l1 = flow.gamma_t[k1] * flow.gamma_t[k1] / two + dens.v[k1];
            let l0 = flow.gamma_t[k0] * flow.gamma_t[k0] / two + dens.v[k0];
            u[k0] = u[k1] + ht * (l0 + l1) / two;
        }
    }
    Ok(LagrangianValue { ux, u })
}

/// Eulerian u and u_x fields. Outside the support both are continued linearly from the edge.
pub fn eulerian_value<T: Real>(
    flow: &FlowField<T>,
    value: &LagrangianValue<T>,
    grid: SpaceTimeGrid<T>,
) -> Result<(ScalarField<T>, ScalarField<T>)> {
    let u = push_to_eulerian(flow, &value.u, grid, Extension::Linear)?;
    let ux = push_to_eulerian(flow, &value.ux, grid, Extension::Linear)?;
    Ok((u, ux))
}

pub fn extract_free_boundary<T: Real>(flow: &FlowField<T>, kind: ProblemKind) -> Result<FreeBoundaryCurves<T>> {
    let g = flow.grid;
    let nx = g.nx;
    let t = g.ts();
    let l = (0..g.nt).map(|j| flow.at(0, j)).collect();
    let r = (0..g.nt).map(|j| flow.at(nx - 1, j)).collect();
    FreeBoundaryCurves::new(t, l, r, kind)
}

/// max over interior nodes of |gamma_tt - v_x / gamma_x|. Derivatives use fourth-order
/// central stencils (nodes at least two cells from the boundary), so the value measures how
/// well the discrete flow satisfies the continuous equation rather than the solver's own
/// second-order stencil.
pub fn euler_residual<T: Real>(flow: &FlowField<T>, v: &[T]) -> T {
    let g = flow.grid;
    let (nx, nt) = (g.nx, g.nt);
    if nx < 5 || nt < 5 {
        return T::zero();
    }
    let (hx, ht) = (g.hx(), g.ht());
    let c8 = T::lit(8.0);
    let c12 = T::lit(12.0);
    let c16 = T::lit(16.0);
    let c30 = T::lit(30.0);
    let gam = |i: usize, j: usize| flow.gamma[i + j * nx];
    let mut worst = T::zero();
    for j in 2..nt - 2 {
        for i in 2..nx - 2 {
            let gtt = (-gam(i, j + 2) + c16 * gam(i, j + 1) - c30 * gam(i, j) + c16 * gam(i, j - 1)
                - gam(i, j - 2))
                / (c12 * ht * ht);
            let d1 = |w: &dyn Fn(usize) -> T| (-w(i + 2) + c8 * w(i + 1) - c8 * w(i - 1) + w(i - 2)) / (c12 * hx);
            let vx = d1(&|a| v[a + j * nx]);
            let gx = d1(&|a| gam(a, j));
            worst = worst.max((gtt - vx / gx).abs());
        }
    }
    worst
}

/// Residual of -(v_x / gamma_x)_x - (gamma_x v_t / (theta v))_t = 0 in flux form, over
/// nodes at least two cells away from the edges.
pub fn divergence_residual<T: Real>(flow: &FlowField<T>, v: &[T], theta: T) -> T {
    let g = flow.grid;
    let (nx, nt) = (g.nx, g.nt);
    let (hx, ht) = (g.hx(), g.ht());
    let two = T::lit(2.0);
    let gam = |i: usize, j: usize| flow.gamma[i + j * nx];
    let val = |i: usize, j: usize| v[i + j * nx];
    let mut worst = T::zero();
    if nx < 6 {
        return worst;
    }
    for j in 1..nt - 1 {
        for i in 2..nx - 2 {
            let flux_x = |a: usize| {
                let gx = (gam(a + 1, j) - gam(a, j)) / hx;
                (val(a + 1, j) - val(a, j)) / hx / gx
            };
            let flux_t = |b: usize| {
                let gx = (gam(i + 1, b) + gam(i + 1, b + 1) - gam(i - 1, b) - gam(i - 1, b + 1)) / (T::lit(4.0) * hx);
                let vm = (val(i, b) + val(i, b + 1)) / two;
                gx * (val(i, b + 1) - val(i, b)) / ht / (theta * vm)
            };
            let r = -(flux_x(i) - flux_x(i - 1)) / hx - (flux_t(j) - flux_t(j - 1)) / ht;
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Everything recovered from one flow solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSolution<T> {
    pub flow: FlowField<T>,
    pub report: SolveReport,
    pub density: LagrangianDensity<T>,
    pub value: LagrangianValue<T>,
    pub curves: FreeBoundaryCurves<T>,
    pub euler_residual: T,
}

pub fn solve_and_recover<T: Real>(problem: &FlowProblem<T>) -> Result<FlowSolution<T>> {
    let (flow, report) = solve_flow(problem)?;
    let density = density_along_flow(&flow, &problem.m0_on_grid(), &problem.coupling)?;
    let value = velocity_and_value(&flow, &density, problem)?;
    let curves = extract_free_boundary(&flow, problem.kind())?;
    let euler_residual = euler_residual(&flow, &density.v);
    Ok(FlowSolution {
        flow,
        report,
        density,
        value,
        curves,
        euler_residual,
    })
}

/// Cost of the flow, int int (m u_x^2 / 2 + F(m)) dx dt, written in Lagrangian variables as
/// int int m0 (gamma_t^2 / 2 + F(m) / m) dx dt with m evaluated along the flow.
pub fn flow_cost<T: Real>(flow: &FlowField<T>, dens: &LagrangianDensity<T>, problem: &FlowProblem<T>) -> Result<T> {
    let g = flow.grid;
    let nx = g.nx;
    let m0 = problem.m0_on_grid();
    let xs = g.xs();
    let mut levels = Vec::with_capacity(g.nt);
    for j in 0..g.nt {
        let mut y = Vec::with_capacity(nx);
        for (i, &w) in m0.iter().enumerate() {
            let k = i + j * nx;
            let m = dens.m[k];
            let per_mass = if m > T::zero() { problem.coupling.antiderivative(m)? / m } else { T::zero() };
            y.push(w * (flow.gamma_t[k] * flow.gamma_t[k] / T::lit(2.0) + per_mass));
        }
        levels.push(trapezoid(&xs, &y));
    }
    Ok(trapezoid(&g.ts(), &levels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selfsim::SelfSimilarModel;

    /// Self-similar planning data on [-C_R, C_R] at t = 1 and its image at t = 1 + T.
    fn selfsim_problem(n: usize, horizon: f64) -> (SelfSimilarModel<f64>, FlowProblem<f64>) {
        let s = SelfSimilarModel::new(1.0).unwrap();
        let w = s.support_radius(1.0);
        let nodes: Vec<f64> = (0..n).map(|k| -w + 2.0 * w * k as f64 / (n - 1) as f64).collect();
        let scale = (1.0 + horizon).powf(s.alpha);
        let m0 = s.profile(nodes.clone(), 1.0).unwrap();
        let mt = s.profile(nodes.iter().map(|x| x * scale).collect(), 1.0 + horizon).unwrap();
        let p = FlowProblem::new(
            m0,
            CouplingLaw::power(1.0).unwrap(),
            horizon,
            TerminalCondition::Planning(mt),
            n,
            n,
        )
        .unwrap();
        (s, p)
    }

    #[test]
    fn transport_map_examples() {
        let (s, p) = selfsim_problem(65, 1.0);
        let TerminalCondition::Planning(mt) = &p.terminal else { unreachable!() };
        let g = transport_boundary_map(&p.m0, mt).unwrap();
        let h = p.grid().hx();
        for &x in &p.m0.x {
            assert!((g.eval(x) - 2f64.powf(2.0 / 3.0) * x).abs() <= h);
        }
        assert_eq!(g.eval(p.m0.a), mt.a);
        assert_eq!(g.eval(p.m0.b), mt.b);
        let id = transport_boundary_map(&p.m0, &p.m0).unwrap();
        for &x in &p.m0.x {
            assert!((id.eval(x) - x).abs() <= h);
        }
        let shifted = p.m0.translated(0.7);
        let tr = transport_boundary_map(&p.m0, &shifted).unwrap();
        for &x in &p.m0.x {
            assert!((tr.eval(x) - x - 0.7).abs() <= 1e-12);
        }
        let _ = s;
        let mut heavy = mt.clone();
        heavy.m.iter_mut().for_each(|v| *v *= 1.1);
        heavy.mass *= 1.1;
        assert!(transport_boundary_map(&p.m0, &heavy).is_err());
    }

    #[test]
    fn selfsimilar_planning_flow() {
        let (s, p) = selfsim_problem(33, 1.0);
        let sol = solve_and_recover(&p).unwrap();
        assert!(sol.report.residual <= 1e-9);
        let g = sol.flow.grid;
        let mut err: f64 = 0.0;
        for j in 0..g.nt {
            for i in 0..g.nx {
                let exact = g.x(i) * (1.0 + g.t(j)).powf(s.alpha);
                err = err.max((sol.flow.at(i, j) - exact).abs());
            }
        }
        assert!(err < 0.05, "err {err}");
        for i in 0..g.nx {
            assert_eq!(sol.flow.at(i, 0), g.x(i));
            assert!((sol.flow.at(i, 0) + sol.flow.at(g.nx - 1 - i, 0)).abs() < 1e-12);
            for j in 0..g.nt {
                let a = sol.flow.at(i, j);
                let b = sol.flow.at(g.nx - 1 - i, j);
                assert!((a + b).abs() < 1e-10, "asymmetry at ({i},{j})");
            }
        }
        assert!(sol.curves.gamma_l.iter().zip(&sol.curves.gamma_r).all(|(l, r)| l < r));
        assert_eq!(sol.curves.gamma_l[0], p.m0.a);
        assert_eq!(sol.curves.gamma_r[0], p.m0.b);
        for i in 0..g.nx {
            assert!((sol.density.m[i] - p.m0.m[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_cost_without_cost_has_zero_final_velocity() {
        let (_, p) = selfsim_problem(33, 1.0);
        let q = FlowProblem::new(
            p.m0.clone(),
            p.coupling,
            1.0,
            TerminalCondition::TerminalCost { c1: 0.0 },
            33,
            33,
        )
        .unwrap();
        let sol = solve_and_recover(&q).unwrap();
        let g = sol.flow.grid;
        let last = g.nt - 1;
        for i in 0..g.nx {
            assert_eq!(sol.value.u[i + last * g.nx], 0.0);
            // discrete Robin row: first-order one-sided gamma_t equals -(ht/2) gamma_tt
            assert!(sol.value.ux[i + last * g.nx].abs() < 2.0 * g.ht());
        }
    }

    #[test]
    fn euler_residual_of_constant_v_is_acceleration() {
        let g = SpaceTimeGrid::<f64>::new(0.0, 1.0, 1.0, 5, 5, Topology::LagrangianInterval).unwrap();
        let gamma: Vec<f64> = (0..25).map(|k| g.x(k % 5) + g.t(k / 5) * g.t(k / 5)).collect();
        let flow = FlowField::new(g, gamma).unwrap();
        let r = euler_residual(&flow, &[0.3; 25]);
        // gamma_tt = 2 everywhere
        assert!((r - 2.0).abs() < 1e-12);
    }
}
