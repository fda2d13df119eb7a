//! Eulerian solver for the value function. With v = -u_t + u_x^2 / 2 = f(m), the system
//! reduces to the quasilinear equation
//!
//!   -u_tt + 2 u_x u_xt - (u_x^2 + m f'(m)) u_xx = 0,
//!
//! with the oblique rows -u_t + u_x^2 / 2 = f(m0) at t = 0 and either = f(mT) (planning) or
//! u = c1 T f(m) (terminal cost) at t = T. For f(m) = m^theta, m f'(m) = theta v, so the
//! discrete system is polynomial in u. Space is periodic or reflected (zero Neumann).

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::linalg::{BandLu, BandMatrix};
use crate::model::{
    trapezoid, CouplingKind, CouplingLaw, MarginalProfile, ScalarField, SolutionBundle,
    SpaceTimeGrid, Topology,
};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EulerTerminal<T> {
    /// Terminal density on the grid nodes.
    Planning(Vec<T>),
    /// u(., T) = c1 T f(m(., T))
    TerminalCost { c1: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticOptions<T> {
    pub tol: T,
    pub max_newton: usize,
    pub max_ptc: usize,
    pub tau0: T,
}

impl<T: Real> Default for EllipticOptions<T> {
    fn default() -> Self {
        EllipticOptions {
            tol: T::lit(1e-8),
            max_newton: 60,
            max_ptc: 400,
            tau0: T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EulerianProblem<T> {
    pub grid: SpaceTimeGrid<T>,
    pub coupling: CouplingLaw<T>,
    pub m0: Vec<T>,
    pub terminal: EulerTerminal<T>,
    pub epsilon: T,
    pub options: EllipticOptions<T>,
}

/// Mass on the grid: periodic sum for the torus, trapezoid otherwise.
pub fn grid_mass<T: Real>(grid: &SpaceTimeGrid<T>, m: &[T]) -> T {
    match grid.topology {
        Topology::Torus => m[..grid.nx - 1].iter().copied().sum::<T>() * grid.hx(),
        _ => trapezoid(&grid.xs(), m),
    }
}

impl<T: Real> EulerianProblem<T> {
    pub fn new(
        grid: SpaceTimeGrid<T>,
        coupling: CouplingLaw<T>,
        m0: Vec<T>,
        terminal: EulerTerminal<T>,
        epsilon: T,
    ) -> Result<Self> {
        if grid.topology == Topology::LagrangianInterval {
            return Err(MfgError::invalid("the Eulerian solver needs a torus or a Neumann interval"));
        }
        let check = |name: &str, m: &[T]| -> Result<()> {
            if m.len() != grid.nx {
                return Err(MfgError::invalid(format!("{name} must have one value per grid node")));
            }
            if m.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
                return Err(MfgError::invalid(format!("{name} must be strictly positive")));
            }
            if grid.topology == Topology::Torus && m[0] != m[grid.nx - 1] {
                return Err(MfgError::invalid(format!("{name} must be periodic on the torus")));
            }
            Ok(())
        };
        check("m0", &m0)?;
        match &terminal {
            EulerTerminal::Planning(mt) => {
                check("mT", mt)?;
                let (a, b) = (grid_mass(&grid, &m0), grid_mass(&grid, mt));
                if (a - b).abs() > T::lit(1e-8) * (T::one() + a.abs()) {
                    return Err(MfgError::invalid(format!("marginal masses differ: {a} vs {b}")));
                }
            }
            EulerTerminal::TerminalCost { c1 } => {
                if !(*c1 >= T::zero()) {
                    return Err(MfgError::invalid("terminal cost weight must be nonnegative"));
                }
            }
        }
        Ok(EulerianProblem {
            grid,
            coupling,
            m0,
            terminal,
            epsilon,
            options: EllipticOptions::default(),
        })
    }

    fn is_planning(&self) -> bool {
        matches!(self.terminal, EulerTerminal::Planning(_))
    }
}

/// Regularized marginals and the bump coefficients used for them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizedMarginals<T> {
    pub m0: Vec<T>,
    pub mt: Vec<T>,
    pub c0: [T; 3],
    pub ct: [T; 3],
}

/// sin^4 bump on [lo, hi].
fn bump<T: Real>(x: T, lo: T, hi: T) -> T {
    if x <= lo || x >= hi {
        return T::zero();
    }
    let s = (T::PI() * (x - lo) / (hi - lo)).sin();
    s * s * s * s
}

/// Integral over [lo, hi] of the piecewise-linear interpolant of (xs, ys).
pub fn integrate_between<T: Real>(xs: &[T], ys: &[T], lo: T, hi: T) -> T {
    let n = xs.len();
    let lo = lo.max(xs[0]);
    let hi = hi.min(xs[n - 1]);
    if hi <= lo {
        return T::zero();
    }
    let interp = |x: T| crate::model::linear_at(xs, ys, x);
    let mut acc = T::zero();
    let mut prev_x = lo;
    let mut prev_y = interp(lo);
    for k in 0..n {
        if xs[k] <= lo {
            continue;
        }
        if xs[k] >= hi {
            break;
        }
        acc += (xs[k] - prev_x) * (ys[k] + prev_y);
        prev_x = xs[k];
        prev_y = ys[k];
    }
    acc += (hi - prev_x) * (interp(hi) + prev_y);
    acc / T::lit(2.0)
}

/// Scalar root of an increasing function g on [0, inf) with g(0) <= 0, by bracketing and
/// bisection.
fn increasing_root<T: Real, G: Fn(T) -> T>(g: G) -> T {
    if g(T::zero()) >= T::zero() {
        return T::zero();
    }
    let mut hi = T::lit(1e-3);
    let mut guard = 0;
    while g(hi) < T::zero() && guard < 200 {
        hi *= T::lit(2.0);
        guard += 1;
    }
    let mut lo = T::zero();
    for _ in 0..300 {
        let mid = (lo + hi) / T::lit(2.0);
        if g(mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::epsilon() * hi {
            break;
        }
    }
    (lo + hi) / T::lit(2.0)
}

/// Strictly positive approximations of (m0, mT) on `nodes` with matching left tails,
/// right tails and central masses. Power law: m_eps = f^-1(sqrt(f(m)^2 + f(eps)^2) + c . eta)
/// with bumps on [a - 2, a - 1], the middle third of [a, b] and [b + 1, b + 2]. Log law:
/// m_eps = m + eps.
pub fn regularize_marginals<T: Real>(
    m0: &MarginalProfile<T>,
    mt: &MarginalProfile<T>,
    coupling: &CouplingLaw<T>,
    epsilon: T,
    r: T,
    nodes: &[T],
) -> Result<RegularizedMarginals<T>> {
    if !(epsilon > T::zero() && epsilon < T::one()) {
        return Err(MfgError::invalid("epsilon must lie in (0, 1)"));
    }
    let two = T::lit(2.0);
    for p in [m0, mt] {
        if p.a - two < -r || p.b + two > r {
            return Err(MfgError::invalid(format!(
                "support [{}, {}] violates the margin condition for r = {r}",
                p.a, p.b
            )));
        }
    }
    if nodes[0] > -r || nodes[nodes.len() - 1] < r {
        return Err(MfgError::invalid("nodes must cover [-r, r]"));
    }
    let on0 = m0.values_on(nodes);
    let ont = mt.values_on(nodes);
    if coupling.is_log() {
        return Ok(RegularizedMarginals {
            m0: on0.iter().map(|&v| v + epsilon).collect(),
            mt: ont.iter().map(|&v| v + epsilon).collect(),
            c0: [T::zero(); 3],
            ct: [T::zero(); 3],
        });
    }
    let fe = coupling.f(epsilon)?;
    let base = |m: &[T]| -> Result<Vec<T>> {
        m.iter()
            .map(|&v| {
                let fv = coupling.f(v.max(T::zero()))?;
                Ok((fv * fv + fe * fe).sqrt())
            })
            .collect()
    };
    let b0 = base(&on0)?;
    let bt = base(&ont)?;
    let third = T::lit(3.0);
    let bumps = |p: &MarginalProfile<T>| -> [Vec<T>; 3] {
        let lo2 = (two * p.a + p.b) / third;
        let hi2 = (p.a + two * p.b) / third;
        [
            nodes.iter().map(|&x| bump(x, p.a - two, p.a - T::one())).collect(),
            nodes.iter().map(|&x| bump(x, lo2, hi2)).collect(),
            nodes.iter().map(|&x| bump(x, p.b + T::one(), p.b + two)).collect(),
        ]
    };
    let e0 = bumps(m0);
    let et = bumps(mt);
    let build = |base: &[T], eta: &[Vec<T>; 3], c: [T; 3]| -> Vec<T> {
        base.iter()
            .enumerate()
            .map(|(k, &b)| {
                let y = b + c[0] * eta[0][k] + c[1] * eta[1][k] + c[2] * eta[2][k];
                coupling.inv(y).unwrap_or(T::zero())
            })
            .collect()
    };
    // the three pieces: (-r, a), (a, b), (b, r) for each marginal
    let pieces = |m: &[T], p: &MarginalProfile<T>| -> [T; 3] {
        [
            integrate_between(nodes, m, -r, p.a),
            integrate_between(nodes, m, p.a, p.b),
            integrate_between(nodes, m, p.b, r),
        ]
    };
    let mut c0 = [T::zero(); 3];
    let mut ct = [T::zero(); 3];
    for k in 0..3 {
        let with = |c: &[T; 3], which: usize, val: T| {
            let mut c = *c;
            c[which] = val;
            c
        };
        let i0 = pieces(&build(&b0, &e0, c0), m0)[k];
        let it = pieces(&build(&bt, &et, ct), mt)[k];
        if i0 <= it {
            let cc = c0;
            let root = increasing_root(|c| pieces(&build(&b0, &e0, with(&cc, k, c)), m0)[k] - it);
            c0[k] = root;
        } else {
            let cc = ct;
            let root = increasing_root(|c| pieces(&build(&bt, &et, with(&cc, k, c)), mt)[k] - i0);
            ct[k] = root;
        }
    }
    Ok(RegularizedMarginals {
        m0: build(&b0, &e0, c0),
        mt: build(&bt, &et, ct),
        c0,
        ct,
    })
}

/// Lifted initial density for terminal-cost runs (no mass matching needed).
pub fn regularize_single<T: Real>(m: &[T], coupling: &CouplingLaw<T>, epsilon: T) -> Result<Vec<T>> {
    match coupling.kind {
        CouplingKind::Log => Ok(m.iter().map(|&v| v + epsilon).collect()),
        CouplingKind::Power { .. } => {
            let fe = coupling.f(epsilon)?;
            m.iter()
                .map(|&v| {
                    let fv = coupling.f(v.max(T::zero()))?;
                    coupling.inv((fv * fv + fe * fe).sqrt())
                })
                .collect()
        }
    }
}

/// Unknown layout: per time level the pairs (u_i, m_i), with periodic wrap or even reflection
/// for indices outside the level. On the torus the nodes of a level are interleaved
/// (0, n-1, 1, n-2, ...) so that the seam does not widen the band.
struct Layout {
    nu: usize,
    nt: usize,
    periodic: bool,
}

impl Layout {
    #[inline]
    fn pos(&self, i: usize) -> usize {
        if !self.periodic {
            i
        } else if 2 * i < self.nu {
            2 * i
        } else {
            2 * (self.nu - 1 - i) + 1
        }
    }

    #[inline]
    fn col_u(&self, i: usize, n: usize) -> usize {
        2 * (self.pos(i) + n * self.nu)
    }

    #[inline]
    fn col_m(&self, i: usize, n: usize) -> usize {
        self.col_u(i, n) + 1
    }

    #[inline]
    fn phys(&self, k: isize) -> usize {
        let n = self.nu as isize;
        if self.periodic {
            k.rem_euclid(n) as usize
        } else if k < 0 {
            (-k) as usize
        } else if k >= n {
            (2 * (n - 1) - k) as usize
        } else {
            k as usize
        }
    }

    fn len(&self) -> usize {
        2 * self.nu * self.nt
    }

    /// Rows reach one level up or down and one node sideways.
    fn band(&self) -> usize {
        2 * self.nu + 6
    }
}

/// A value with its sparse gradient with respect to the unknowns.
#[derive(Clone)]
struct Lin<T> {
    v: T,
    d: Vec<(usize, T)>,
}

impl<T: Real> Lin<T> {
    fn constant(v: T) -> Self {
        Lin { v, d: Vec::new() }
    }
    fn var(col: usize, v: T) -> Self {
        Lin { v, d: vec![(col, T::one())] }
    }
    fn axpy(&self, s: T, o: &Lin<T>) -> Self {
        let mut d = self.d.clone();
        d.extend(o.d.iter().map(|&(c, g)| (c, s * g)));
        Lin { v: self.v + s * o.v, d }
    }
    fn scale(&self, s: T) -> Self {
        Lin {
            v: self.v * s,
            d: self.d.iter().map(|&(c, g)| (c, g * s)).collect(),
        }
    }
    fn mul(&self, o: &Lin<T>) -> Self {
        let mut d: Vec<(usize, T)> = self.d.iter().map(|&(c, g)| (c, g * o.v)).collect();
        d.extend(o.d.iter().map(|&(c, g)| (c, g * self.v)));
        Lin { v: self.v * o.v, d }
    }
    fn chain(&self, value: T, slope: T) -> Self {
        Lin {
            v: value,
            d: self.d.iter().map(|&(c, g)| (c, g * slope)).collect(),
        }
    }
}

/// Discrete system in the unknowns (u, m) on every level:
///
///   v^n = -(u^n - u^{n-1}) / ht + g(D+ u^{n-1}, D- u^{n-1}) = f(m^n),  n >= 1,
///   (m^{n+1} - m^n) / ht - T(u^n, m^{n+1}) = 0,                       n < N,
///
/// where g(p, q) = (min(p,0)^2 + max(q,0)^2) / 2 is the monotone form of u_x^2 / 2 and T the
/// adjoint upwind flux of g, so that the transport step is an M-matrix solve and keeps m
/// positive. Eliminating m gives a conservative discretization of the quasilinear elliptic
/// equation; Newton runs on the pair (u, log m) because m = f^-1(v(u)) is far more nonlinear
/// where m is of order epsilon. m^0 is the initial marginal and level N carries the terminal
/// rows.
struct System<'a, T> {
    p: &'a EulerianProblem<T>,
    lay: Layout,
    hx: T,
    ht: T,
    robin: T,
}

impl<'a, T: Real> System<'a, T> {
    fn new(p: &'a EulerianProblem<T>) -> Self {
        let g = &p.grid;
        let periodic = g.topology == Topology::Torus;
        let nu = if periodic { g.nx - 1 } else { g.nx };
        let robin = match p.terminal {
            EulerTerminal::TerminalCost { c1 } => c1 * g.horizon,
            EulerTerminal::Planning(_) => T::zero(),
        };
        System {
            p,
            lay: Layout { nu, nt: g.nt, periodic },
            hx: g.hx(),
            ht: g.ht(),
            robin,
        }
    }

    fn u(&self, x: &[T], n: usize, k: isize) -> Lin<T> {
        let c = self.lay.col_u(self.lay.phys(k), n);
        Lin::var(c, x[c])
    }

    /// The density slot holds log m.
    fn m(&self, x: &[T], n: usize, k: isize) -> Lin<T> {
        let c = self.lay.col_m(self.lay.phys(k), n);
        let e = x[c].exp();
        Lin { v: e, d: vec![(c, e)] }
    }

    fn log_m(&self, x: &[T], n: usize, k: isize) -> Lin<T> {
        let c = self.lay.col_m(self.lay.phys(k), n);
        Lin::var(c, x[c])
    }

    /// (min(D+ u, 0), max(D- u, 0)) at extended index k of level n.
    fn slopes(&self, x: &[T], n: usize, k: isize) -> (Lin<T>, Lin<T>) {
        let c = self.u(x, n, k);
        let inv_h = T::one() / self.hx;
        let dp = self.u(x, n, k + 1).axpy(-T::one(), &c).scale(inv_h);
        let dm = c.axpy(-T::one(), &self.u(x, n, k - 1)).scale(inv_h);
        // at an exact tie each branch takes half of the slope's derivative
        let half = T::lit(0.5);
        let pick = |d: Lin<T>, active: bool| {
            if active {
                d
            } else if d.v == T::zero() {
                d.scale(half)
            } else {
                Lin::constant(T::zero())
            }
        };
        let a = pick(dp.clone(), dp.v < T::zero());
        let b = pick(dm.clone(), dm.v > T::zero());
        (a, b)
    }

    /// v^n at extended index k, n >= 1.
    fn v(&self, x: &[T], n: usize, k: isize) -> Lin<T> {
        let (a, b) = self.slopes(x, n - 1, k);
        let g = a.mul(&a).axpy(T::one(), &b.mul(&b)).scale(T::lit(0.5));
        let dt = self
            .u(x, n, k)
            .axpy(-T::one(), &self.u(x, n - 1, k))
            .scale(T::one() / self.ht);
        g.axpy(-T::one(), &dt)
    }

    /// f(m) as a function of log m.
    fn fm(&self, lm: &Lin<T>) -> Lin<T> {
        match self.p.coupling.kind {
            CouplingKind::Power { theta } => {
                let p = (theta * lm.v).exp();
                lm.chain(p, theta * p)
            }
            CouplingKind::Log => lm.clone(),
        }
    }

    fn transport(&self, x: &[T], n: usize, k: isize) -> Lin<T> {
        let inv_h = T::one() / self.hx;
        let mc = self.m(x, n + 1, k);
        let (ac, bc) = self.slopes(x, n, k);
        let (aw, _) = self.slopes(x, n, k - 1);
        let (_, be) = self.slopes(x, n, k + 1);
        let mw = self.m(x, n + 1, k - 1);
        let me = self.m(x, n + 1, k + 1);
        let flux = mc
            .mul(&ac.axpy(-T::one(), &bc))
            .axpy(-T::one(), &mw.mul(&aw))
            .axpy(T::one(), &me.mul(&be));
        mc.axpy(-T::one(), &self.m(x, n, k))
            .scale(T::one() / self.ht)
            .axpy(-inv_h, &flux)
    }

    /// Rows in the u slot (transport or terminal) and in the m slot (Hamilton-Jacobi or the
    /// initial marginal) of node i on level n.
    fn rows(&self, x: &[T], i: usize, n: usize) -> (Lin<T>, Lin<T>) {
        let k = i as isize;
        let last = self.lay.nt - 1;
        let urow = if n < last {
            // relative form: dividing by m^{n+1} keeps the slope terms of order one where the
            // density is of order epsilon
            let c = self.lay.col_m(self.lay.phys(k), n + 1);
            let r = (-x[c]).exp();
            self.transport(x, n, k).mul(&Lin { v: r, d: vec![(c, -r)] })
        } else {
            match &self.p.terminal {
                EulerTerminal::Planning(mt) => self.log_m(x, n, k).axpy(T::one(), &Lin::constant(-mt[i].ln())),
                EulerTerminal::TerminalCost { .. } => {
                    let fm = self.fm(&self.log_m(x, n, k));
                    self.u(x, n, k).axpy(-self.robin, &fm)
                }
            }
        };
        let mrow = if n == 0 {
            self.log_m(x, 0, k).axpy(T::one(), &Lin::constant(-self.p.m0[i].ln()))
        } else {
            self.v(x, n, k).axpy(-T::one(), &self.fm(&self.log_m(x, n, k)))
        };
        (urow, mrow)
    }

    fn planning(&self) -> bool {
        self.p.is_planning()
    }

    /// Residual with the scalar lambda added to the terminal rows of the planning problem.
    fn residual(&self, x: &[T], lambda: T) -> Vec<T> {
        let mut r = vec![T::zero(); self.lay.len()];
        let last = self.lay.nt - 1;
        for n in 0..self.lay.nt {
            for i in 0..self.lay.nu {
                let (ur, mr) = self.rows(x, i, n);
                let mut v = ur.v;
                if n == last && self.planning() {
                    v += lambda;
                }
                r[self.lay.col_u(i, n)] = v;
                r[self.lay.col_m(i, n)] = mr.v;
            }
        }
        r
    }

    fn jacobian(&self, x: &[T]) -> BandMatrix<T> {
        let b = self.lay.band();
        let mut a = BandMatrix::zeros(self.lay.len(), b, b);
        for n in 0..self.lay.nt {
            for i in 0..self.lay.nu {
                let (ur, mr) = self.rows(x, i, n);
                let (ku, km) = (self.lay.col_u(i, n), self.lay.col_m(i, n));
                for (c, d) in ur.d {
                    a.add(ku, c, d);
                }
                for (c, d) in mr.d {
                    a.add(km, c, d);
                }
            }
        }
        a
    }

    /// Rewrites u on levels 1.. so that every Hamilton-Jacobi row holds exactly, marching the
    /// explicit form u^n = u^{n-1} + ht (g(u^{n-1}) - f(m^n)) from the current u^0. The
    /// terminal-cost level keeps its u. In the planning problem the result is shifted back so
    /// that the pinned unknown is unchanged.
    fn march(&self, x: &mut [T]) {
        let l = &self.lay;
        let planning = self.planning();
        let top = if planning { l.nt } else { l.nt - 1 };
        let pin = l.col_u(0, l.nt - 1);
        let before = x[pin];
        let half = T::lit(0.5);
        let mut next = vec![T::zero(); l.nu];
        for n in 1..top {
            for (i, slot) in next.iter_mut().enumerate() {
                let (a, b) = self.slopes(x, n - 1, i as isize);
                let g = half * (a.v * a.v + b.v * b.v);
                let f = self.fm(&self.log_m(x, n, i as isize)).v;
                *slot = x[l.col_u(i, n - 1)] + self.ht * (g - f);
            }
            for (i, &v) in next.iter().enumerate() {
                x[l.col_u(i, n)] = v;
            }
        }
        if planning {
            let shift = before - x[pin];
            for n in 0..l.nt {
                for i in 0..l.nu {
                    x[l.col_u(i, n)] += shift;
                }
            }
        }
    }

    /// Terminal rows, which carry lambda.
    fn terminal_rows(&self) -> Vec<usize> {
        let last = self.lay.nt - 1;
        (0..self.lay.nu).map(|i| self.lay.col_u(i, last)).collect()
    }
}

fn norm_inf<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

fn norm_2<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Convergence record of an elliptic solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticReport {
    pub newton_iterations: usize,
    pub ptc_iterations: usize,
    pub residual: f64,
    /// Scalar absorbing the discrete mass defect in the planning problem.
    pub lambda: f64,
    /// Largest gap between the density unknowns and the density recovered from u.
    pub recovery_gap: f64,
}

/// Newton direction for J d + b dl = -F with the pinned unknown held fixed.
struct Bordered<T> {
    lu: BandLu<T>,
    z: Option<Vec<T>>,
    pin: usize,
}

impl<T: Real> Bordered<T> {
    fn new(mut jac: BandMatrix<T>, border: Option<(&[usize], usize)>) -> Result<Self> {
        let Some((rows, pin)) = border else {
            return Ok(Bordered { lu: jac.factor()?, z: None, pin: 0 });
        };
        for &k in rows {
            jac.add(k, pin, T::one());
        }
        let lu = jac.factor()?;
        let mut b = vec![T::zero(); lu.dim()];
        for &k in rows {
            b[k] = T::one();
        }
        lu.solve_in_place(&mut b);
        Ok(Bordered { lu, z: Some(b), pin })
    }

    fn solve(&self, rhs: &[T]) -> (Vec<T>, T) {
        let mut y = rhs.to_vec();
        self.lu.solve_in_place(&mut y);
        match &self.z {
            None => (y, T::zero()),
            Some(z) => {
                let dl = y[self.pin] / z[self.pin];
                let d = y.iter().zip(z).map(|(&a, &b)| a - dl * b).collect();
                (d, dl)
            }
        }
    }
}

/// Initial guess: m interpolated linearly in time between the marginals and
/// u = -int_0^t f(m(s)) ds.
fn initial_guess<T: Real>(sys: &System<T>) -> Result<Vec<T>> {
    let l = &sys.lay;
    let p = sys.p;
    let horizon = p.grid.horizon;
    let two = T::lit(2.0);
    let mut x = vec![T::zero(); l.len()];
    for i in 0..l.nu {
        let m0 = p.m0[i];
        let mt = match &p.terminal {
            EulerTerminal::Planning(mt) => mt[i],
            EulerTerminal::TerminalCost { .. } => m0,
        };
        let (f0, ft) = (p.coupling.f(m0)?, p.coupling.f(mt)?);
        for n in 0..l.nt {
            let t = sys.ht * T::from_usize_lossy(n);
            let s = t / horizon;
            x[l.col_u(i, n)] = -(t - t * s / two) * f0 - t * s / two * ft;
            x[l.col_m(i, n)] = ((T::one() - s) * m0 + s * mt).ln();
        }
    }
    Ok(x)
}

/// Consecutive heavily damped Newton steps before switching to continuation.
const STALL_LIMIT: usize = 5;

/// Solves the elliptic problem. A previous solution on the same grid warm-starts Newton.
pub fn solve_u<T: Real>(
    problem: &EulerianProblem<T>,
    guess: Option<&SolutionBundle<T>>,
) -> Result<(SolutionBundle<T>, EllipticReport)> {
    let sys = System::new(problem);
    let l = &sys.lay;
    let g = problem.grid;
    let nx = g.nx;
    let mut x = match guess {
        Some(s) if s.u.grid.nx == nx && s.u.grid.nt == l.nt => {
            let mut x = vec![T::zero(); l.len()];
            for n in 0..l.nt {
                for i in 0..l.nu {
                    x[l.col_u(i, n)] = s.u.at(i, n);
                    x[l.col_m(i, n)] = s.m.at(i, n).max(problem.epsilon * T::lit(1e-3)).ln();
                }
            }
            for i in 0..l.nu {
                x[l.col_m(i, 0)] = problem.m0[i].ln();
                if let EulerTerminal::Planning(mt) = &problem.terminal {
                    x[l.col_m(i, l.nt - 1)] = mt[i].ln();
                }
            }
            x
        }
        _ => initial_guess(&sys)?,
    };
    let planning = sys.planning();
    let term_rows = sys.terminal_rows();
    let pin = l.col_u(0, l.nt - 1);
    let border = if planning { Some((term_rows.as_slice(), pin)) } else { None };
    let opts = problem.options;
    let mut lambda = T::zero();
    let mut res = sys.residual(&x, lambda);
    let mut newton_it = 0;
    let mut ptc_it = 0;
    let mut use_ptc = false;
    let mut short_steps = 0;
    while norm_inf(&res) > opts.tol {
        if newton_it >= opts.max_newton {
            use_ptc = true;
            break;
        }
        newton_it += 1;
        let dir = Bordered::new(sys.jacobian(&x), border)?;
        let rhs: Vec<T> = res.iter().map(|&v| -v).collect();
        let (d, dl) = dir.solve(&rhs);
        let merit = norm_2(&res);
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial: Vec<T> = x.iter().zip(&d).map(|(&a, &b)| a + step * b).collect();
            let tl = lambda + step * dl;
            let mut r = sys.residual(&trial, tl);
            let mut m = norm_2(&r);
            // second-order correction: restore the explicit rows exactly
            let mut marched = trial.clone();
            sys.march(&mut marched);
            let rm = sys.residual(&marched, tl);
            let mm = norm_2(&rm);
            if mm.is_finite() && !(m <= mm) {
                trial = marched;
                r = rm;
                m = mm;
            }
            if m.is_finite() && m <= (T::one() - T::lit(1e-4) * step) * merit {
                x = trial;
                lambda = tl;
                res = r;
                accepted = true;
                break;
            }
            step /= T::lit(2.0);
        }
        if !accepted {
            use_ptc = true;
            break;
        }
        // persistent heavy damping means the full step is far outside the Newton region
        short_steps = if step <= T::lit(1.0 / 16.0) { short_steps + 1 } else { 0 };
        if short_steps >= STALL_LIMIT {
            use_ptc = true;
            break;
        }
    }
    if use_ptc {
        // pseudo-transient continuation with switched evolution relaxation
        let mut tau = opts.tau0;
        let mut prev = norm_2(&res);
        while norm_inf(&res) > opts.tol {
            if ptc_it >= opts.max_ptc {
                return Err(MfgError::Solver {
                    message: "pseudo-transient continuation did not converge".into(),
                    residual: norm_inf(&res).to_f64_lossy(),
                    iterations: newton_it + ptc_it,
                });
            }
            ptc_it += 1;
            let mut jac = sys.jacobian(&x);
            for k in 0..l.len() {
                let dkk = jac.get(k, k).abs().max(T::lit(1e-12));
                jac.add(k, k, dkk / tau);
            }
            let dir = Bordered::new(jac, border)?;
            let rhs: Vec<T> = res.iter().map(|&v| -v).collect();
            let (d, dl) = dir.solve(&rhs);
            let step = T::one();
            let trial: Vec<T> = x.iter().zip(&d).map(|(&a, &b)| a + step * b).collect();
            let tl = lambda + step * dl;
            let r = sys.residual(&trial, tl);
            let now = norm_2(&r);
            if now.is_finite() && now < prev {
                x = trial;
                lambda = tl;
                res = r;
                tau = (tau * prev / now.max(T::min_positive_value())).min(T::lit(1e12));
                prev = now;
            } else {
                tau /= T::lit(4.0);
                if tau < T::lit(1e-8) {
                    return Err(MfgError::Solver {
                        message: "pseudo-transient continuation stalled".into(),
                        residual: norm_inf(&res).to_f64_lossy(),
                        iterations: newton_it + ptc_it,
                    });
                }
            }
        }
    }
    let residual = norm_inf(&res);
    // expand to the full grid (duplicate seam column on the torus)
    let mut uf = ScalarField::zeros(g);
    let mut mf = ScalarField::zeros(g);
    let mut vf = ScalarField::zeros(g);
    for n in 0..l.nt {
        for i in 0..nx {
            let ii = if i < l.nu { i } else { 0 };
            let m = x[l.col_m(ii, n)].exp();
            uf.set(i, n, x[l.col_u(ii, n)]);
            mf.set(i, n, m);
            vf.set(i, n, problem.coupling.f(m)?);
        }
    }
    let rec = recover_m(&uf, &problem.coupling, Some(&problem.m0))?;
    if rec.clamped > 0 {
        return Err(MfgError::Positivity(format!(
            "recovered density is nonpositive at {} nodes",
            rec.clamped
        )));
    }
    let report = EllipticReport {
        newton_iterations: newton_it,
        ptc_iterations: ptc_it,
        residual: residual.to_f64_lossy(),
        lambda: lambda.to_f64_lossy(),
        recovery_gap: sup_diff(&rec.m, &mf).to_f64_lossy(),
    };
    let ux = velocity_field(&uf);
    Ok((
        SolutionBundle {
            u: uf,
            m: mf,
            v: vf,
            ux: Some(ux),
            curves: None,
        },
        report,
    ))
}

/// Centered u_x (periodic or reflected at the ends).
pub fn velocity_field<T: Real>(u: &ScalarField<T>) -> ScalarField<T> {
    let g = u.grid;
    let nx = g.nx;
    let two = T::lit(2.0);
    let mut out = ScalarField::zeros(g);
    for j in 0..g.nt {
        for i in 0..nx {
            let v = match g.topology {
                Topology::Torus => {
                    let nu = nx - 1;
                    let ii = i % nu;
                    (u.at((ii + 1) % nu, j) - u.at((ii + nu - 1) % nu, j)) / (two * g.hx())
                }
                _ => {
                    if i == 0 || i + 1 == nx {
                        T::zero()
                    } else {
                        (u.at(i + 1, j) - u.at(i - 1, j)) / (two * g.hx())
                    }
                }
            };
            out.set(i, j, v);
        }
    }
    out
}

/// Density recovered from u, with the count of nodes where the argument of f^-1 was negative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveredDensity<T> {
    pub m: ScalarField<T>,
    pub v: ScalarField<T>,
    pub clamped: usize,
}

/// m = f^-1(v) with v = -u_t + u_x^2 / 2 in the discrete form used by [`solve_u`]: backward
/// time difference and the monotone Hamiltonian on the previous level. The first level takes
/// `m0` when given and the first computed level otherwise.
pub fn recover_m<T: Real>(
    u: &ScalarField<T>,
    coupling: &CouplingLaw<T>,
    m0: Option<&[T]>,
) -> Result<RecoveredDensity<T>> {
    let g = u.grid;
    let (nx, nt) = (g.nx, g.nt);
    if nt < 2 {
        return Err(MfgError::invalid("need at least two time levels"));
    }
    let periodic = g.topology == Topology::Torus;
    let nu = if periodic { nx - 1 } else { nx };
    let lay = Layout { nu, nt, periodic };
    let (hx, ht) = (g.hx(), g.ht());
    let half = T::lit(0.5);
    let vat = |n: usize, i: usize| -> T {
        let k = i as isize;
        let at = |kk: isize| u.at(lay.phys(kk), n - 1);
        let dp = (at(k + 1) - at(k)) / hx;
        let dm = (at(k) - at(k - 1)) / hx;
        let a = dp.min(T::zero());
        let b = dm.max(T::zero());
        -(u.at(i, n) - u.at(i, n - 1)) / ht + half * (a * a + b * b)
    };
    let mut m = ScalarField::zeros(g);
    let mut v = ScalarField::zeros(g);
    let mut clamped = 0;
    for n in 0..nt {
        for i in 0..nx {
            let ii = if i < nu { i } else { 0 };
            let y = match (n, m0) {
                (0, Some(m0)) => coupling.f(m0[i])?,
                (0, None) => vat(1, ii),
                _ => vat(n, ii),
            };
            let (mij, y) = match coupling.kind {
                CouplingKind::Power { .. } if y <= T::zero() => {
                    clamped += 1;
                    (T::zero(), T::zero())
                }
                _ => (coupling.inv(y)?, y),
            };
            m.set(i, n, mij);
            v.set(i, n, y);
        }
    }
    Ok(RecoveredDensity { m, v, clamped })
}

/// One row of the epsilon sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    /// sup |m_eps - m_prev| against the previous epsilon (NaN for the first).
    pub delta_prev: f64,
    /// sup |m_eps - m_exact| when an oracle is available.
    pub oracle_error: Option<f64>,
    pub newton_iterations: usize,
    pub ptc_iterations: usize,
    pub residual: f64,
    pub lambda: f64,
    /// Smallest interval [-C, C] containing {m > 2 eps} over all times.
    pub support_halfwidth: f64,
    pub min_mid_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Deltas between consecutive solutions decrease monotonically.
    pub cauchy_monotone: bool,
}

/// Solves a family of problems for decreasing epsilon, warm-starting each solve from the
/// previous one. `build` returns the problem for one epsilon; `oracle` the exact density.
pub fn epsilon_sweep<T: Real, B, O>(
    epsilons: &[T],
    build: B,
    oracle: Option<O>,
) -> Result<(SweepReport, Vec<SolutionBundle<T>>)>
where
    B: Fn(T) -> Result<EulerianProblem<T>>,
    O: Fn(T, T) -> T,
{
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(MfgError::invalid("epsilon list must be strictly decreasing"));
    }
    let mut entries = Vec::new();
    let mut sols: Vec<SolutionBundle<T>> = Vec::new();
    let mut last_eps: Option<T> = None;
    for &eps in epsilons {
        let (sol, rep) = continue_to(&build, eps, last_eps, sols.last(), MAX_SUBSTEP_DEPTH).map_err(|e| match e {
            MfgError::Solver { message, residual, iterations } => MfgError::Solver {
                message: format!("{message} at epsilon = {eps}"),
                residual,
                iterations,
            },
            other => MfgError::invalid(format!("epsilon = {eps}: {other}")),
        })?;
        let delta_prev = match sols.last() {
            Some(prev) => sup_diff(&prev.m, &sol.m).to_f64_lossy(),
            None => f64::NAN,
        };
        let oracle_error = oracle.as_ref().map(|f| {
            let g = sol.m.grid;
            let mut e = T::zero();
            for j in 0..g.nt {
                for i in 0..g.nx {
                    e = e.max((sol.m.at(i, j) - f(g.x(i), g.t(j))).abs());
                }
            }
            e.to_f64_lossy()
        });
        let g = sol.m.grid;
        let mut half = T::zero();
        for j in 0..g.nt {
            for i in 0..g.nx {
                if sol.m.at(i, j) > T::lit(2.0) * eps {
                    half = half.max(g.x(i).abs());
                }
            }
        }
        let mid = (g.nt - 1) / 2;
        let min_mid = sol.m.row(mid).iter().fold(T::infinity(), |a, &b| a.min(b));
        entries.push(SweepEntry {
            epsilon: eps.to_f64_lossy(),
            delta_prev,
            oracle_error,
            newton_iterations: rep.newton_iterations,
            ptc_iterations: rep.ptc_iterations,
            residual: rep.residual,
            lambda: rep.lambda,
            support_halfwidth: half.to_f64_lossy(),
            min_mid_density: min_mid.to_f64_lossy(),
        });
        sols.push(sol);
        last_eps = Some(eps);
    }
    let deltas: Vec<f64> = entries.iter().skip(1).map(|e| e.delta_prev).collect();
    let cauchy_monotone = deltas.windows(2).all(|w| w[1] <= w[0]);
    Ok((SweepReport { entries, cauchy_monotone }, sols))
}

const MAX_SUBSTEP_DEPTH: usize = 4;

/// Solves at `eps` from `guess` (computed at `from`). When the solve fails, an intermediate
/// epsilon at the geometric mean is solved first and used as the new starting point.
fn continue_to<T: Real, B>(
    build: &B,
    eps: T,
    from: Option<T>,
    guess: Option<&SolutionBundle<T>>,
    depth: usize,
) -> Result<(SolutionBundle<T>, EllipticReport)>
where
    B: Fn(T) -> Result<EulerianProblem<T>>,
{
    let problem = build(eps)?;
    match solve_u(&problem, guess) {
        Err(MfgError::Solver { .. }) if depth > 0 && from.is_some() => {
            let mid = (from.unwrap() * eps).sqrt();
            let (inter, _) = continue_to(build, mid, from, guess, depth - 1)?;
            continue_to(build, eps, Some(mid), Some(&inter), depth - 1)
        }
        other => other,
    }
}

pub fn sup_diff<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>) -> T {
    a.values
        .iter()
        .zip(&b.values)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Default epsilon schedule.
pub fn default_epsilons<T: Real>() -> Vec<T> {
    [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
        .iter()
        .map(|&e| T::lit(e))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_state_on_torus() {
        for law in [CouplingLaw::power(1.0).unwrap(), CouplingLaw::log()] {
            let g = SpaceTimeGrid::<f64>::torus(4.0, 1.0, 17, 9).unwrap();
            let c = 0.7;
            let p = EulerianProblem::new(g, law, vec![c; 17], EulerTerminal::Planning(vec![c; 17]), 0.1).unwrap();
            let (sol, rep) = solve_u(&p, None).unwrap();
            assert!(rep.residual < 1e-10);
            let fc = law.f(c).unwrap();
            for j in 0..g.nt {
                for i in 0..g.nx {
                    assert!((sol.m.at(i, j) - c).abs() < 1e-10);
                    assert!(sol.ux.as_ref().unwrap().at(i, j).abs() < 1e-10);
                    let slope = (sol.u.at(i, j) - sol.u.at(i, 0)) / g.t(j).max(1e-300);
                    if j > 0 {
                        assert!((slope + fc).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn recovery_round_trip() {
        let g = SpaceTimeGrid::<f64>::new(-1.0, 1.0, 1.0, 21, 11, Topology::NeumannInterval).unwrap();
        let u = ScalarField::from_fn(g, |x, t| -0.5 * t + 0.1 * (x * 3.0).cos() * t);
        let law = CouplingLaw::log();
        let rec = recover_m(&u, &law, None).unwrap();
        for j in 1..g.nt {
            for i in 1..g.nx - 1 {
                let ut = (u.at(i, j) - u.at(i, j - 1)) / g.ht();
                let p = (u.at(i + 1, j - 1) - u.at(i, j - 1)) / g.hx();
                let q = (u.at(i, j - 1) - u.at(i - 1, j - 1)) / g.hx();
                let h = 0.5 * (p.min(0.0).powi(2) + q.max(0.0).powi(2));
                assert!((rec.m.at(i, j).ln() + ut - h).abs() < 1e-14);
            }
        }
        let neg = ScalarField::from_fn(g, |_, t| t);
        let rec = recover_m(&neg, &CouplingLaw::power(1.0).unwrap(), None).unwrap();
        assert_eq!(rec.clamped, g.len());
    }

    #[test]
    fn regularized_marginals_have_equal_mass() {
        let nodes: Vec<f64> = (0..801).map(|k| -8.0 + 16.0 * k as f64 / 800.0).collect();
        let m0 = MarginalProfile::sample(nodes.clone(), -1.0, 1.0, 1.0, |x| 1.0 - x.abs()).unwrap();
        let mt = MarginalProfile::sample(nodes.clone(), -0.5, 2.5, 1.0, |x| {
            (1.0 - (x - 1.0).abs() / 1.5) * 2.0 / 3.0
        })
        .unwrap();
        let law = CouplingLaw::power(1.0).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [0.1, 0.05, 0.025, 0.0125] {
            let r = regularize_marginals(&m0, &mt, &law, eps, 6.0, &nodes).unwrap();
            let a = trapezoid(&nodes, &r.m0);
            let b = trapezoid(&nodes, &r.mt);
            assert!((a - b).abs() < 1e-10, "{a} {b}");
            for k in 0..3 {
                assert!(r.c0[k] * r.ct[k] == 0.0);
            }
            assert!(r.m0.iter().all(|&v| v > 0.0));
            let sup = r.m0.iter().zip(&m0.m).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(sup < prev);
            prev = sup;
            for (k, &x) in nodes.iter().enumerate() {
                if x.abs() > 6.0 {
                    assert!((r.m0[k] - eps).abs() < 1e-15);
                }
                if m0.m[k] == 0.0 && r.c0.iter().all(|&c| c == 0.0) {
                    assert!((r.m0[k] - eps).abs() < 1e-15);
                }
            }
            let left0 = integrate_between(&nodes, &r.m0, -6.0, m0.a);
            let left_t = integrate_between(&nodes, &r.mt, -6.0, mt.a);
            assert!((left0 - left_t).abs() < 1e-10);
        }
        assert!(regularize_marginals(&m0, &mt, &law, 0.1, 3.0, &nodes).is_err());
    }
}
