//! Dynamic optimal transport with congestion: minimize
//!
//!   int int |w|^2 / (2 m) + lambda F(m) dx dt   subject to   m_t + w_x = 0,
//!
//! with m(0) = m0, m(T) = mT and no flux through the ends, where w = -m u_x. The planning
//! problem is the optimality system of this program, so its minimizer is an independent
//! check on the PDE solvers.
//!
//! Discretization: m lives on the grid nodes (one cell of width hx around each node) at every
//! time level, w on the interior faces between nodes at half levels. Each face and interval
//! carries the copy z = (S, W), where S averages m over the two adjacent nodes and the two
//! levels and W is the flux; its cost is W^2 / (2 S) + lambda F(S). Evaluating the kinetic
//! term at the face keeps a translated profile cheap even near the edge of its support.
//! The program min Psi(z) over the affine set of copies of feasible (m, w) is solved by
//! Douglas-Rachford splitting: a closed-form-plus-scalar-Newton proximal step per face and a
//! projection onto the affine set through a banded KKT system factored once.

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::linalg::{BandLu, BandMatrix};
use crate::model::{CouplingKind, CouplingLaw, ScalarField, SpaceTimeGrid, Topology};
use crate::scalar::Real;

/// Largest supported grid in each direction.
pub const MAX_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BbOptions<T> {
    /// Relative duality gap (or objective change when lambda = 0) at which to stop.
    pub tol: T,
    pub max_iter: usize,
    /// Step of the proximal map, in units of the per-face cost.
    pub gamma: T,
    /// Over-relaxation of the splitting, in (0, 2).
    pub relaxation: T,
    /// Iterations between two evaluations of the stopping rule.
    pub check_every: usize,
}

impl<T: Real> Default for BbOptions<T> {
    fn default() -> Self {
        BbOptions {
            tol: T::lit(1e-7),
            max_iter: 100_000,
            gamma: T::lit(0.3),
            relaxation: T::lit(1.8),
            check_every: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CongestionProgram<T> {
    pub grid: SpaceTimeGrid<T>,
    pub m0: Vec<T>,
    pub mt: Vec<T>,
    pub lambda: T,
    pub coupling: CouplingLaw<T>,
    pub options: BbOptions<T>,
}

/// Mass of a level: hx times the sum of the node values.
pub fn cell_mass<T: Real>(grid: &SpaceTimeGrid<T>, m: &[T]) -> T {
    m.iter().copied().sum::<T>() * grid.hx()
}

impl<T: Real> CongestionProgram<T> {
    pub fn new(
        grid: SpaceTimeGrid<T>,
        m0: Vec<T>,
        mt: Vec<T>,
        lambda: T,
        coupling: CouplingLaw<T>,
    ) -> Result<Self> {
        if grid.topology != Topology::NeumannInterval {
            return Err(MfgError::invalid("the congestion program lives on a Neumann interval"));
        }
        if grid.nx > MAX_NODES || grid.nt > MAX_NODES {
            return Err(MfgError::invalid(format!(
                "grid {}x{} exceeds the {MAX_NODES}x{MAX_NODES} limit",
                grid.nx, grid.nt
            )));
        }
        if m0.len() != grid.nx || mt.len() != grid.nx {
            return Err(MfgError::invalid("marginals must have one value per node"));
        }
        if m0.iter().chain(&mt).any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(MfgError::invalid("marginals must be nonnegative and finite"));
        }
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(MfgError::invalid("congestion weight must be nonnegative"));
        }
        let (a, b) = (cell_mass(&grid, &m0), cell_mass(&grid, &mt));
        if !(a > T::zero()) || (a - b).abs() > T::lit(1e-10) * a {
            return Err(MfgError::invalid(format!("marginal masses differ: {a} and {b}")));
        }
        Ok(CongestionProgram {
            grid,
            m0,
            mt,
            lambda,
            coupling,
            options: BbOptions::default(),
        })
    }

    fn intervals(&self) -> usize {
        self.grid.nt - 1
    }

    fn volume(&self) -> T {
        self.grid.hx() * self.grid.ht()
    }
}

/// Result of [`solve_bb`]. `w` holds the interior face fluxes: entry `f + k * (nx - 1)` is the
/// flux between nodes f and f + 1 on the interval (t_k, t_k+1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BbSolution<T> {
    pub m: ScalarField<T>,
    pub w: Vec<T>,
    pub objective: T,
    pub dual: T,
    pub gap: T,
    pub feasibility: T,
    pub iterations: usize,
}

/// Value of the discrete functional with the convention 0^2 / 0 = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Objective<T> {
    pub value: T,
    /// A face with zero (or negative) density carries a nonzero flux.
    pub infinite: bool,
}

/// Per-face cost W^2 / (2 S) + lambda F(S), or None where it is infinite.
fn face_cost<T: Real>(s: T, w: T, lambda: T, coupling: &CouplingLaw<T>) -> Option<T> {
    if s < T::zero() {
        return None;
    }
    let kinetic = if s == T::zero() {
        if w != T::zero() {
            return None;
        }
        T::zero()
    } else {
        w * w / (T::lit(2.0) * s)
    };
    let congestion = if lambda == T::zero() {
        T::zero()
    } else {
        lambda * coupling.antiderivative(s).ok()?
    };
    Some(kinetic + congestion)
}

/// Objective of a density field on the program grid and its face fluxes.
pub fn objective<T: Real>(
    m: &ScalarField<T>,
    w: &[T],
    lambda: T,
    coupling: &CouplingLaw<T>,
) -> Result<Objective<T>> {
    let g = m.grid;
    let nx = g.nx;
    if w.len() != (nx - 1) * (g.nt - 1) {
        return Err(MfgError::invalid("flux vector has the wrong length"));
    }
    if m.values.iter().any(|&v| v < T::zero()) {
        return Err(MfgError::domain("density must be nonnegative"));
    }
    let quarter = T::lit(0.25);
    let mut total = T::zero();
    let mut infinite = false;
    for k in 0..g.nt - 1 {
        for f in 0..nx - 1 {
            let s = quarter * (m.at(f, k) + m.at(f + 1, k) + m.at(f, k + 1) + m.at(f + 1, k + 1));
            match face_cost(s, w[f + k * (nx - 1)], lambda, coupling) {
                Some(c) => total += c,
                None => infinite = true,
            }
        }
    }
    Ok(Objective {
        value: if infinite { T::infinity() } else { total * g.hx() * g.ht() },
        infinite,
    })
}

/// Face fluxes that make `m` satisfy the discrete continuity equation, sweeping from the left
/// end, together with the largest flux left over at the right end (zero when every level has
/// the same mass).
pub fn momentum_from_density<T: Real>(m: &ScalarField<T>) -> (Vec<T>, T) {
    let g = m.grid;
    let nx = g.nx;
    let ratio = g.hx() / g.ht();
    let mut w = vec![T::zero(); (nx - 1) * (g.nt - 1)];
    let mut defect = T::zero();
    for k in 0..g.nt - 1 {
        let mut flux = T::zero();
        for i in 0..nx {
            flux -= (m.at(i, k + 1) - m.at(i, k)) * ratio;
            if i + 1 < nx {
                w[i + k * (nx - 1)] = flux;
            }
        }
        defect = defect.max(flux.abs());
    }
    (w, defect)
}

/// Convex conjugate of F on [0, inf).
fn f_conjugate<T: Real>(coupling: &CouplingLaw<T>, y: T) -> T {
    match coupling.kind {
        CouplingKind::Power { theta } => {
            let p = y.max(T::zero());
            theta / (theta + T::one()) * p.powf((theta + T::one()) / theta)
        }
        CouplingKind::Log => y.exp(),
    }
}

/// argmin over S >= 0 of W0^2 / (2 (S + tau)) + lambda F(S) + (S - S0)^2 / (2 tau), the
/// proximal problem of one face with the flux eliminated.
fn prox_density<T: Real>(s0: T, w0sq: T, tau: T, lambda: T, coupling: &CouplingLaw<T>) -> T {
    let two = T::lit(2.0);
    let df = |s: T| -> T {
        let d = s + tau;
        let f = if lambda == T::zero() { T::zero() } else { lambda * coupling.f(s).unwrap_or(T::neg_infinity()) };
        -w0sq / (two * d * d) + f + (s - s0) / tau
    };
    let d2f = |s: T| -> T {
        let d = s + tau;
        let fp = if lambda == T::zero() { T::zero() } else { lambda * coupling.df(s).unwrap_or(T::infinity()) };
        w0sq / (d * d * d) + fp + T::one() / tau
    };
    // bracket [lo, hi] with df(lo) < 0 <= df(hi); for the log law f(0) = -inf and the root
    // is positive
    let mut lo = T::zero();
    if coupling.is_log() && lambda > T::zero() {
        lo = T::one();
        while df(lo) >= T::zero() {
            lo /= T::lit(16.0);
        }
    } else if df(T::zero()) >= T::zero() {
        return T::zero();
    }
    let mut hi = lo.max(s0) + (w0sq / tau).sqrt() + tau + T::one();
    while df(hi) < T::zero() {
        lo = hi;
        hi *= two;
    }
    let mut s = (lo + hi) / two;
    for _ in 0..200 {
        let g = df(s);
        if g < T::zero() {
            lo = s;
        } else {
            hi = s;
        }
        let step = g / d2f(s);
        let mut next = s - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = (lo + hi) / two;
        }
        if (next - s).abs() <= T::lit(4.0) * T::epsilon() * s.max(T::min_positive_value()) || hi - lo <= T::epsilon() * hi {
            return next;
        }
        s = next;
    }
    s
}

/// Proximal map of tau psi at (S0, W0) for one face.
fn prox_face<T: Real>(z: [T; 2], tau: T, lambda: T, coupling: &CouplingLaw<T>) -> [T; 2] {
    let s = prox_density(z[0], z[1] * z[1], tau, lambda, coupling);
    [s, z[1] * s / (s + tau)]
}

/// Linear map y -> z = L y + c from the free unknowns (interior levels of m, interior face
/// fluxes) to the face copies, and the continuity constraints C y = d.
struct Structure {
    nx: usize,
    nk: usize,
    /// column of m_i at level k (interior levels only)
    m_col: Vec<Option<usize>>,
    w_col: Vec<usize>,
    /// column of the multiplier of continuity row (k, i); the last row is dropped
    mu_col: Vec<Option<usize>>,
    dim: usize,
    band: usize,
}

impl Structure {
    fn new(nx: usize, nt: usize) -> Self {
        let nk = nt - 1;
        let mut m_col = vec![None; nx * nt];
        let mut w_col = vec![0; (nx - 1) * nk];
        let mut mu_col = vec![None; nx * nk];
        let mut next = 0;
        // block k: fluxes of interval k, multipliers of interval k, then m at level k + 1
        for k in 0..nk {
            for f in 0..nx - 1 {
                w_col[f + k * (nx - 1)] = next;
                next += 1;
            }
            for i in 0..nx {
                if !(k == nk - 1 && i == nx - 1) {
                    mu_col[i + k * nx] = Some(next);
                    next += 1;
                }
            }
            if k + 1 < nk {
                for i in 0..nx {
                    m_col[i + (k + 1) * nx] = Some(next);
                    next += 1;
                }
            }
        }
        let mut s = Structure { nx, nk, m_col, w_col, mu_col, dim: next, band: 0 };
        let mut band = 0;
        s.for_each_entry(1.0, |r, c, _| band = band.max(r.abs_diff(c)));
        s.band = band;
        s
    }

    /// Components of z = (S, W) of face (f, k) as (column, coefficient) lists; fixed levels
    /// contribute through `Term::Fixed` with their node and level.
    fn face_terms(&self, f: usize, k: usize) -> [Vec<(Term, f64)>; 2] {
        let nx = self.nx;
        let mut sterm = Vec::with_capacity(4);
        for level in [k, k + 1] {
            for i in [f, f + 1] {
                match self.m_col[i + level * nx] {
                    Some(c) => sterm.push((Term::Col(c), 0.25)),
                    None => sterm.push((Term::Fixed(i, level), 0.25)),
                }
            }
        }
        [sterm, vec![(Term::Col(self.w_col[f + k * (nx - 1)]), 1.0)]]
    }

    /// Continuity row (k, i), scaled by ht: m^{k+1} - m^k + (ht / hx)(w_{i+1/2} - w_{i-1/2}).
    fn continuity_terms(&self, i: usize, k: usize, ratio: f64) -> Vec<(Term, f64)> {
        let nx = self.nx;
        let mut out = Vec::new();
        for (level, s) in [(k + 1, 1.0), (k, -1.0)] {
            match self.m_col[i + level * nx] {
                Some(c) => out.push((Term::Col(c), s)),
                None => out.push((Term::Fixed(i, level), s)),
            }
        }
        if i + 1 < nx {
            out.push((Term::Col(self.w_col[i + k * (nx - 1)]), ratio));
        }
        if i > 0 {
            out.push((Term::Col(self.w_col[i - 1 + k * (nx - 1)]), -ratio));
        }
        out
    }

    /// Visits the entries of the KKT matrix [[L^T L, C^T], [C, 0]].
    fn for_each_entry<F: FnMut(usize, usize, f64)>(&self, ratio: f64, mut f: F) {
        for k in 0..self.nk {
            for face in 0..self.nx - 1 {
                for comp in self.face_terms(face, k) {
                    for &(a, ca) in &comp {
                        for &(b, cb) in &comp {
                            if let (Term::Col(r), Term::Col(c)) = (a, b) {
                                f(r, c, ca * cb);
                            }
                        }
                    }
                }
            }
            for i in 0..self.nx {
                if let Some(row) = self.mu_col[i + k * self.nx] {
                    for (t, c) in self.continuity_terms(i, k, ratio) {
                        if let Term::Col(col) = t {
                            f(row, col, c);
                            f(col, row, c);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Term {
    Col(usize),
    Fixed(usize, usize),
}

/// Projection onto the copies of feasible (m, w), and onto their tangent space.
struct Projector<T> {
    st: Structure,
    lu: BandLu<T>,
    /// terms of every copy component, in the order of z
    comps: Vec<Vec<(Term, f64)>>,
    /// multiplier column and terms of every kept continuity row
    rows: Vec<(usize, Vec<(Term, f64)>)>,
}

impl<T: Real> Projector<T> {
    fn new(st: Structure, ratio: T) -> Result<Self> {
        let mut a = BandMatrix::zeros(st.dim, st.band, st.band);
        st.for_each_entry(ratio.to_f64_lossy(), |r, c, v| a.add(r, c, T::lit(v)));
        let lu = a.factor()?;
        let nx = st.nx;
        let mut comps = Vec::with_capacity(2 * (nx - 1) * st.nk);
        let mut rows = Vec::new();
        for k in 0..st.nk {
            for f in 0..nx - 1 {
                comps.extend(st.face_terms(f, k));
            }
            for i in 0..nx {
                if let Some(row) = st.mu_col[i + k * nx] {
                    // only the fixed levels matter here, which enter with coefficient +-1
                    rows.push((row, st.continuity_terms(i, k, 1.0)));
                }
            }
        }
        Ok(Projector { st, lu, comps, rows })
    }

    fn fixed(p: &CongestionProgram<T>, i: usize, level: usize) -> T {
        if level == 0 {
            p.m0[i]
        } else {
            p.mt[i]
        }
    }

    /// Solves the KKT system for target zeta. With `affine` the fixed marginals enter;
    /// otherwise the projection is onto the tangent space. Returns (y, L y (+ c)).
    fn project(&self, p: &CongestionProgram<T>, zeta: &[T], affine: bool) -> (Vec<T>, Vec<T>) {
        let mut rhs = vec![T::zero(); self.st.dim];
        for (terms, &target) in self.comps.iter().zip(zeta) {
            let mut target = target;
            if affine {
                for &(t, c) in terms {
                    if let Term::Fixed(i, lev) = t {
                        target -= T::lit(c) * Self::fixed(p, i, lev);
                    }
                }
            }
            for &(t, c) in terms {
                if let Term::Col(col) = t {
                    rhs[col] += T::lit(c) * target;
                }
            }
        }
        if affine {
            for (row, terms) in &self.rows {
                let mut d = T::zero();
                for &(t, c) in terms {
                    if let Term::Fixed(i, lev) = t {
                        d -= T::lit(c) * Self::fixed(p, i, lev);
                    }
                }
                rhs[*row] = d;
            }
        }
        self.lu.solve_in_place(&mut rhs);
        let z = self.apply(p, &rhs, affine);
        (rhs, z)
    }

    fn apply(&self, p: &CongestionProgram<T>, y: &[T], affine: bool) -> Vec<T> {
        self.comps
            .iter()
            .map(|terms| {
                let mut v = T::zero();
                for &(t, c) in terms {
                    match t {
                        Term::Col(col) => v += T::lit(c) * y[col],
                        Term::Fixed(i, lev) if affine => v += T::lit(c) * Self::fixed(p, i, lev),
                        Term::Fixed(..) => {}
                    }
                }
                v
            })
            .collect()
    }
}

fn total_cost<T: Real>(p: &CongestionProgram<T>, z: &[T]) -> T {
    let mut acc = T::zero();
    for c in z.chunks(2) {
        match face_cost(c[0], c[1], p.lambda, &p.coupling) {
            Some(v) => acc += v,
            None => return T::infinity(),
        }
    }
    acc * p.volume()
}

/// Dual value <q, z_feasible> - Psi*(q) for q orthogonal to the tangent space of S.
fn dual_value<T: Real>(p: &CongestionProgram<T>, q: &[T], zf: &[T]) -> T {
    let kappa = p.volume();
    let mut conj = T::zero();
    for c in q.chunks(2) {
        let (a, b) = (c[0] / kappa, c[1] / kappa);
        let s = a + b * b / T::lit(2.0);
        conj += if p.lambda == T::zero() {
            if s > T::zero() {
                return T::neg_infinity();
            }
            T::zero()
        } else {
            p.lambda * f_conjugate(&p.coupling, s / p.lambda)
        };
    }
    let pair: T = q.iter().zip(zf).map(|(&a, &b)| a * b).sum();
    pair - kappa * conj
}

fn norm_inf<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

/// Minimizes the discrete congestion functional. With lambda > 0 the run stops on the relative
/// duality gap. With lambda = 0 the dual is only finite at exact optimality, so the run stops
/// once the objective moves by less than the tolerance between two checks.
pub fn solve_bb<T: Real>(p: &CongestionProgram<T>) -> Result<BbSolution<T>> {
    let g = p.grid;
    let nx = g.nx;
    let nk = p.intervals();
    let ratio = g.ht() / g.hx();
    let proj = Projector::new(Structure::new(nx, g.nt), ratio)?;
    let opts = p.options;
    let tau = opts.gamma;
    let kappa = p.volume();
    // face prox of tau psi; the volume factor only rescales the dual certificate
    let nface = (nx - 1) * nk;
    let mut s = vec![T::zero(); 2 * nface];
    for k in 0..nk {
        for f in 0..nx - 1 {
            s[2 * (f + k * (nx - 1))] = (p.m0[f] + p.m0[f + 1] + p.mt[f] + p.mt[f + 1]) / T::lit(4.0);
        }
    }
    let mut zp = vec![T::zero(); 2 * nface];
    let mut last = (T::infinity(), T::neg_infinity(), T::infinity(), T::infinity());
    let mut previous = T::infinity();
    for it in 1..=opts.max_iter {
        for c in 0..nface {
            let z = prox_face([s[2 * c], s[2 * c + 1]], tau, p.lambda, &p.coupling);
            zp[2 * c..2 * c + 2].copy_from_slice(&z);
        }
        let reflected: Vec<T> = zp.iter().zip(&s).map(|(&a, &b)| T::lit(2.0) * a - b).collect();
        let (y, zs) = proj.project(p, &reflected, true);
        if it % opts.check_every == 0 || it == opts.max_iter {
            let diff: Vec<T> = zp.iter().zip(&zs).map(|(&a, &b)| a - b).collect();
            let feas = norm_inf(&diff);
            let scale = T::one() + norm_inf(&zs);
            let primal_s = total_cost(p, &zs);
            let primal = if primal_s.is_finite() { primal_s } else { total_cost(p, &zp) };
            let (dual, gap) = if p.lambda > T::zero() {
                // subgradient of the scaled cost at zp
                let q0: Vec<T> = s.iter().zip(&zp).map(|(&a, &b)| (a - b) / tau * kappa).collect();
                let (_, tq) = proj.project(p, &q0, false);
                let q: Vec<T> = q0.iter().zip(&tq).map(|(&a, &b)| a - b).collect();
                let d = dual_value(p, &q, &zs);
                (d, primal - d)
            } else {
                (T::neg_infinity(), T::infinity())
            };
            last = (primal, dual, gap, feas);
            let settled = feas <= opts.tol.sqrt() * scale;
            let done = if p.lambda > T::zero() {
                settled && gap.abs() <= opts.tol * (T::one() + primal.abs())
            } else {
                settled && (primal - previous).abs() <= opts.tol * (T::one() + primal.abs())
            };
            previous = primal;
            if done {
                return Ok(finish(p, &y, &proj, primal, dual, gap, feas, it));
            }
        }
        let rho = opts.relaxation;
        for k in 0..s.len() {
            s[k] += rho * (zs[k] - zp[k]);
        }
    }
    Err(MfgError::Solver {
        message: format!(
            "splitting did not converge (objective {:e}, dual {:e}, gap {:e}, feasibility {:e})",
            last.0.to_f64_lossy(),
            last.1.to_f64_lossy(),
            last.2.to_f64_lossy(),
            last.3.to_f64_lossy()
        ),
        residual: last.2.to_f64_lossy(),
        iterations: opts.max_iter,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    p: &CongestionProgram<T>,
    y: &[T],
    proj: &Projector<T>,
    objective: T,
    dual: T,
    gap: T,
    feasibility: T,
    iterations: usize,
) -> BbSolution<T> {
    let g = p.grid;
    let nx = g.nx;
    let st = &proj.st;
    let mut m = ScalarField::zeros(g);
    for level in 0..g.nt {
        for i in 0..nx {
            let v = match st.m_col[i + level * nx] {
                Some(c) => y[c],
                None => Projector::fixed(p, i, level),
            };
            m.set(i, level, v);
        }
    }
    let w = st.w_col.iter().map(|&c| y[c]).collect();
    BbSolution {
        m,
        w,
        objective,
        dual,
        gap,
        feasibility,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn golden<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        while b - a > 1e-12 * (1.0 + b.abs()) {
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - r * (b - a);
            d = a + r * (b - a);
        }
        (a + b) / 2.0
    }

    #[test]
    fn prox_matches_golden_section() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for law in [CouplingLaw::power(1.0).unwrap(), CouplingLaw::power(2.5).unwrap(), CouplingLaw::log()] {
            for _ in 0..100 {
                let z = [rng.gen_range(-1.0..2.0), rng.gen_range(-2.0..2.0)];
                let tau = rng.gen_range(0.05..3.0);
                let lambda = rng.gen_range(0.0..2.0);
                let got = prox_face(z, tau, lambda, &law);
                let reduced = |m: f64| {
                    let f = if lambda == 0.0 { 0.0 } else { lambda * law.antiderivative(m).unwrap() };
                    z[1] * z[1] / (2.0 * (m + tau)) + f + (m - z[0]).powi(2) / (2.0 * tau)
                };
                let m = golden(reduced, 0.0, 10.0);
                assert!((got[0] - m).abs() < 1e-6 * (1.0 + m), "{z:?} {tau} {lambda}: {} vs {m}", got[0]);
                // full objective is no larger than at nearby points
                let full = |c: [f64; 2]| {
                    face_cost(c[0], c[1], lambda, &law).unwrap_or(f64::INFINITY)
                        + ((c[0] - z[0]).powi(2) + (c[1] - z[1]).powi(2)) / (2.0 * tau)
                };
                let best = full(got);
                for _ in 0..20 {
                    let e = [rng.gen_range(-1e-3..1e-3), rng.gen_range(-1e-3..1e-3)];
                    let q = [got[0] + e[0], got[1] + e[1]];
                    assert!(full(q) >= best - 1e-12);
                }
            }
        }
    }

    #[test]
    fn conjugate_is_fenchel_dual() {
        for law in [CouplingLaw::power(1.0).unwrap(), CouplingLaw::power(0.5).unwrap(), CouplingLaw::log()] {
            for y in [-1.0, 0.0, 0.3, 1.7] {
                let best = (1..20000)
                    .map(|k| {
                        let m = k as f64 * 1e-3;
                        y * m - law.antiderivative(m).unwrap()
                    })
                    .fold(0.0f64, f64::max);
                assert!((f_conjugate(&law, y) - best).abs() < 1e-5, "{y}");
            }
        }
    }

    #[test]
    fn objective_conventions() {
        let g = SpaceTimeGrid::<f64>::new(0.0, 1.0, 1.0, 5, 4, Topology::NeumannInterval).unwrap();
        let law = CouplingLaw::power(1.0).unwrap();
        let m = ScalarField::from_fn(g, |_, _| 0.5);
        let w = vec![0.0; 4 * 3];
        // w = 0, m = c: lambda F(c) times the space-time volume between the end nodes
        let o = objective(&m, &w, 2.0, &law).unwrap();
        assert!((o.value - 2.0 * 0.125 * 1.0 * 1.0).abs() < 1e-14);
        let zero = ScalarField::zeros(g);
        assert_eq!(objective(&zero, &w, 1.0, &law).unwrap().value, 0.0);
        let mut wbad = w.clone();
        wbad[0] = 1.0;
        assert!(objective(&zero, &wbad, 1.0, &law).unwrap().infinite);
    }

    #[test]
    fn momentum_reconstruction_is_feasible() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 1.0, 9, 6, Topology::NeumannInterval).unwrap();
        let m = ScalarField::from_fn(g, |x, t| 1.0 + 0.3 * (std::f64::consts::PI * (x - 0.2 * t)).sin());
        let (_, defect) = momentum_from_density(&m);
        // a shifted sine keeps the cell mass only up to the sampling error
        assert!(defect < 0.1);
        let flat = ScalarField::from_fn(g, |_, _| 1.0);
        let (w, d) = momentum_from_density(&flat);
        assert_eq!(d, 0.0);
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_marginals_without_congestion_cost_nothing() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 1.0, 12, 10, Topology::NeumannInterval).unwrap();
        let m0: Vec<f64> = g.xs().iter().map(|x| 1.0 + 0.5 * x).collect();
        let p = CongestionProgram::new(g, m0.clone(), m0, 0.0, CouplingLaw::power(1.0).unwrap()).unwrap();
        let sol = solve_bb(&p).unwrap();
        assert!(sol.objective.abs() < 1e-8, "{}", sol.objective);
        assert!(sol.w.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn rejects_bad_input() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 1.0, 5, 5, Topology::NeumannInterval).unwrap();
        let law = CouplingLaw::power(1.0).unwrap();
        assert!(CongestionProgram::new(g, vec![1.0; 5], vec![2.0; 5], 1.0, law).is_err());
        assert!(CongestionProgram::new(g, vec![1.0; 4], vec![1.0; 5], 1.0, law).is_err());
        let big = SpaceTimeGrid::new(0.0, 1.0, 1.0, 65, 5, Topology::NeumannInterval).unwrap();
        assert!(CongestionProgram::new(big, vec![1.0; 65], vec![1.0; 65], 1.0, law).is_err());
    }
}
