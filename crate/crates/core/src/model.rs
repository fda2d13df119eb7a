//! Coupling laws, grids, marginal profiles and field containers.

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CouplingKind<T> {
    /// f(s) = s^theta
    Power { theta: T },
    /// f(s) = log s
    Log,
}

/// Congestion law f together with derivative, inverse and antiderivative F(s) = int_0^s f.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingLaw<T> {
    pub kind: CouplingKind<T>,
    /// Bound on s f'(s) and s |f''(s)| / f'(s) over the density range the law was built for.
    pub kappa0: T,
}

impl<T: Real> CouplingLaw<T> {
    /// Power law with `kappa0` valid on densities in [0, 1].
    pub fn power(theta: T) -> Result<Self> {
        Self::power_with_bound(theta, T::one())
    }

    /// Power law with `kappa0` valid on densities in [0, s_max].
    pub fn power_with_bound(theta: T, s_max: T) -> Result<Self> {
        if !(theta > T::zero()) || !theta.is_finite() {
            return Err(MfgError::invalid(format!(
                "theta must be a positive finite number, got {theta}"
            )));
        }
        if !(s_max > T::zero()) || !s_max.is_finite() {
            return Err(MfgError::invalid("density bound must be positive"));
        }
        let kappa0 = (theta * s_max.powf(theta))
            .max((theta - T::one()).abs())
            .max(T::epsilon());
        Ok(CouplingLaw {
            kind: CouplingKind::Power { theta },
            kappa0,
        })
    }

    pub fn log() -> Self {
        CouplingLaw {
            kind: CouplingKind::Log,
            kappa0: T::one(),
        }
    }

    pub fn theta(&self) -> Option<T> {
        match self.kind {
            CouplingKind::Power { theta } => Some(theta),
            CouplingKind::Log => None,
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self.kind, CouplingKind::Log)
    }

    fn check_arg(&self, s: T) -> Result<()> {
        match self.kind {
            CouplingKind::Power { .. } if s < T::zero() || s.is_nan() => {
                Err(MfgError::domain(format!("power law needs s >= 0, got {s}")))
            }
            CouplingKind::Log if !(s > T::zero()) => {
                Err(MfgError::domain(format!("log law needs s > 0, got {s}")))
            }
            _ => Ok(()),
        }
    }

    pub fn f(&self, s: T) -> Result<T> {
        self.check_arg(s)?;
        Ok(match self.kind {
            CouplingKind::Power { theta } => s.powf(theta),
            CouplingKind::Log => s.ln(),
        })
    }

    pub fn df(&self, s: T) -> Result<T> {
        self.check_arg(s)?;
        Ok(match self.kind {
            CouplingKind::Power { theta } => {
                if s == T::zero() {
                    if theta > T::one() {
                        T::zero()
                    } else if theta == T::one() {
                        T::one()
                    } else {
                        T::infinity()
                    }
                } else {
                    theta * s.powf(theta - T::one())
                }
            }
            CouplingKind::Log => s.recip(),
        })
    }

    pub fn d2f(&self, s: T) -> Result<T> {
        self.check_arg(s)?;
        Ok(match self.kind {
            CouplingKind::Power { theta } => {
                let two = T::lit(2.0);
                if s == T::zero() {
                    if theta > two || theta == T::one() {
                        T::zero()
                    } else if theta == two {
                        two
                    } else if theta > T::one() {
                        T::infinity()
                    } else {
                        T::neg_infinity()
                    }
                } else {
                    theta * (theta - T::one()) * s.powf(theta - two)
                }
            }
            CouplingKind::Log => -(s * s).recip(),
        })
    }

    /// s f'(s): theta s^theta for the power law, 1 for the log law.
    pub fn s_df(&self, s: T) -> Result<T> {
        self.check_arg(s)?;
        Ok(match self.kind {
            CouplingKind::Power { theta } => theta * s.powf(theta),
            CouplingKind::Log => T::one(),
        })
    }

    pub fn inv(&self, y: T) -> Result<T> {
        match self.kind {
            CouplingKind::Power { theta } => {
                if y < T::zero() || y.is_nan() {
                    return Err(MfgError::domain(format!(
                        "power law inverse needs y >= 0, got {y}"
                    )));
                }
                Ok(y.powf(theta.recip()))
            }
            CouplingKind::Log => {
                if y.is_nan() {
                    return Err(MfgError::domain("log law inverse of NaN"));
                }
                Ok(y.exp())
            }
        }
    }

    /// F(s) = int_0^s f. For the log law F(s) = s log s - s with F(0) = 0.
    pub fn antiderivative(&self, s: T) -> Result<T> {
        match self.kind {
            CouplingKind::Power { theta } => {
                self.check_arg(s)?;
                Ok(s.powf(theta + T::one()) / (theta + T::one()))
            }
            CouplingKind::Log => {
                if s < T::zero() || s.is_nan() {
                    return Err(MfgError::domain(format!("F needs s >= 0, got {s}")));
                }
                if s == T::zero() {
                    Ok(T::zero())
                } else {
                    Ok(s * s.ln() - s)
                }
            }
        }
    }

    /// Checks s f'(s) <= kappa0 and s |f''(s)| / f'(s) <= kappa0 at `s`.
    pub fn growth_bounds_hold(&self, s: T) -> Result<bool> {
        let sdf = self.s_df(s)?;
        let df = self.df(s)?;
        let d2f = self.d2f(s)?;
        let tol = T::one() + T::lit(1e3) * T::epsilon();
        Ok(sdf <= self.kappa0 * tol && s * d2f.abs() <= self.kappa0 * df * tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Topology {
    /// Periodic in x; the last node duplicates the first.
    Torus,
    NeumannInterval,
    LagrangianInterval,
}

/// Uniform space-time grid. Times are `t_start + j * h_t`, `j = 0..nt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceTimeGrid<T> {
    pub x_min: T,
    pub x_max: T,
    pub t_start: T,
    pub horizon: T,
    pub nx: usize,
    pub nt: usize,
    pub topology: Topology,
}

impl<T: Real> SpaceTimeGrid<T> {
    pub fn new(x_min: T, x_max: T, horizon: T, nx: usize, nt: usize, topology: Topology) -> Result<Self> {
        Self::with_start(x_min, x_max, T::zero(), horizon, nx, nt, topology)
    }

    pub fn with_start(
        x_min: T,
        x_max: T,
        t_start: T,
        horizon: T,
        nx: usize,
        nt: usize,
        topology: Topology,
    ) -> Result<Self> {
        if nx < 3 || nt < 3 {
            return Err(MfgError::invalid(format!(
                "grid needs at least 3 nodes per direction, got {nx}x{nt}"
            )));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(MfgError::invalid("grid needs x_min < x_max"));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() || !t_start.is_finite() {
            return Err(MfgError::invalid("grid needs a positive finite horizon"));
        }
        Ok(SpaceTimeGrid {
            x_min,
            x_max,
            t_start,
            horizon,
            nx,
            nt,
            topology,
        })
    }

    /// Torus of length `length` centred at the origin.
    pub fn torus(length: T, horizon: T, nx: usize, nt: usize) -> Result<Self> {
        let half = length / T::lit(2.0);
        Self::new(-half, half, horizon, nx, nt, Topology::Torus)
    }

    pub fn hx(&self) -> T {
        (self.x_max - self.x_min) / T::from_usize_lossy(self.nx - 1)
    }

    pub fn ht(&self) -> T {
        self.horizon / T::from_usize_lossy(self.nt - 1)
    }

    pub fn x(&self, i: usize) -> T {
        if i + 1 == self.nx {
            self.x_max
        } else {
            self.x_min + self.hx() * T::from_usize_lossy(i)
        }
    }

    pub fn t(&self, j: usize) -> T {
        if j + 1 == self.nt {
            self.t_end()
        } else {
            self.t_start + self.ht() * T::from_usize_lossy(j)
        }
    }

    pub fn t_end(&self) -> T {
        self.t_start + self.horizon
    }

    pub fn xs(&self) -> Vec<T> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn ts(&self) -> Vec<T> {
        (0..self.nt).map(|j| self.t(j)).collect()
    }

    pub fn len(&self) -> usize {
        self.nx * self.nt
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same domain, `factor` times as many intervals per direction.
    pub fn refined(&self, factor: usize) -> Self {
        SpaceTimeGrid {
            nx: (self.nx - 1) * factor + 1,
            nt: (self.nt - 1) * factor + 1,
            ..*self
        }
    }
}

/// Trapezoid integral of samples over (possibly nonuniform) nodes.
pub fn trapezoid<T: Real>(x: &[T], y: &[T]) -> T {
    let mut s = T::zero();
    for k in 1..x.len() {
        s += (x[k] - x[k - 1]) * (y[k] + y[k - 1]);
    }
    s / T::lit(2.0)
}

/// Compactly supported sampled density on strictly increasing nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalProfile<T> {
    pub x: Vec<T>,
    pub m: Vec<T>,
    pub a: T,
    pub b: T,
    pub alpha0: T,
    pub c0: T,
    pub mass: T,
}

impl<T: Real> MarginalProfile<T> {
    /// Validating constructor: nonnegative samples, zero outside [a, b], trapezoid mass within
    /// 1e-8 of `mass`, and (1/C0) d^alpha0 <= m <= C0 d^alpha0 at samples inside (a, b).
    pub fn new(x: Vec<T>, m: Vec<T>, a: T, b: T, alpha0: T, c0: T, mass: T) -> Result<Self> {
        if x.len() != m.len() || x.len() < 3 {
            return Err(MfgError::invalid("profile needs matching x and m with at least 3 samples"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MfgError::invalid("profile nodes must be strictly increasing"));
        }
        if !(b > a) {
            return Err(MfgError::invalid("profile support needs a < b"));
        }
        if !(alpha0 > T::zero()) || !(c0 > T::zero()) {
            return Err(MfgError::invalid("edge exponent and edge constant must be positive"));
        }
        for (k, (&xk, &mk)) in x.iter().zip(&m).enumerate() {
            if !(mk >= T::zero()) || !mk.is_finite() {
                return Err(MfgError::invalid(format!("negative or non-finite density at sample {k}")));
            }
            if (xk < a || xk > b) && mk != T::zero() {
                return Err(MfgError::invalid(format!(
                    "density nonzero outside the support at x = {xk}"
                )));
            }
        }
        let total = trapezoid(&x, &m);
        if (total - mass).abs() > T::lit(1e-8) {
            return Err(MfgError::invalid(format!(
                "trapezoid mass {total} differs from declared mass {mass}"
            )));
        }
        let slack = T::one() + T::lit(1e-9);
        for (&xk, &mk) in x.iter().zip(&m) {
            if xk > a && xk < b {
                let d = (xk - a).min(b - xk).powf(alpha0);
                if mk * c0 * slack < d || mk > c0 * d * slack {
                    return Err(MfgError::invalid(format!(
                        "edge bound with C0 = {c0} fails at x = {xk}"
                    )));
                }
            }
        }
        Ok(MarginalProfile {
            x,
            m,
            a,
            b,
            alpha0,
            c0,
            mass,
        })
    }

    /// Builds a profile whose mass and edge constant are inferred from the samples.
    pub fn fit(x: Vec<T>, m: Vec<T>, a: T, b: T, alpha0: T) -> Result<Self> {
        if x.len() != m.len() {
            return Err(MfgError::invalid("profile needs matching x and m"));
        }
        let mut c0 = T::one();
        for (&xk, &mk) in x.iter().zip(&m) {
            if xk > a && xk < b {
                let d = (xk - a).min(b - xk).powf(alpha0);
                if !(mk > T::zero()) {
                    return Err(MfgError::invalid(format!(
                        "density vanishes inside the support at x = {xk}"
                    )));
                }
                c0 = c0.max(mk / d).max(d / mk);
            }
        }
        let mass = trapezoid(&x, &m);
        Self::new(x, m, a, b, alpha0, c0 * (T::one() + T::lit(1e-9)), mass)
    }

    /// Samples `density` on `nodes` and fits the metadata; values outside [a, b] are zeroed.
    pub fn sample<F: Fn(T) -> T>(nodes: Vec<T>, a: T, b: T, alpha0: T, density: F) -> Result<Self> {
        let m = nodes
            .iter()
            .map(|&x| if x <= a || x >= b { T::zero() } else { density(x).max(T::zero()) })
            .collect();
        Self::fit(nodes, m, a, b, alpha0)
    }

    pub fn cdf(&self) -> Cdf<T> {
        Cdf::new(&self.x, &self.m)
    }

    /// Linear interpolant of the samples, zero outside the support.
    pub fn eval(&self, x: T) -> T {
        if x <= self.a || x >= self.b {
            return T::zero();
        }
        linear_at(&self.x, &self.m, x)
    }

    /// Same density translated by `d`.
    pub fn translated(&self, d: T) -> Self {
        MarginalProfile {
            x: self.x.iter().map(|&x| x + d).collect(),
            a: self.a + d,
            b: self.b + d,
            ..self.clone()
        }
    }

    /// Linear interpolation of the samples onto new nodes, without revalidation.
    pub fn values_on(&self, nodes: &[T]) -> Vec<T> {
        nodes.iter().map(|&x| linear_at(&self.x, &self.m, x)).collect()
    }
}

/// Piecewise-linear interpolation, zero outside the node range.
pub fn linear_at<T: Real>(xs: &[T], ys: &[T], x: T) -> T {
    let n = xs.len();
    if x < xs[0] || x > xs[n - 1] {
        return T::zero();
    }
    let k = upper_index(xs, x).clamp(1, n - 1);
    let w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] + w * (ys[k] - ys[k - 1])
}

/// First index k with xs[k] >= x (xs nondecreasing), or xs.len().
fn upper_index<T: Real>(xs: &[T], x: T) -> usize {
    xs.partition_point(|&v| v < x)
}

/// Trapezoid cumulative distribution with a leftmost-preimage inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdf<T> {
    x: Vec<T>,
    c: Vec<T>,
}

impl<T: Real> Cdf<T> {
    pub fn new(x: &[T], m: &[T]) -> Self {
        let mut c = Vec::with_capacity(x.len());
        let mut acc = T::zero();
        c.push(acc);
        for k in 1..x.len() {
            acc += (x[k] - x[k - 1]) * (m[k] + m[k - 1]) / T::lit(2.0);
            c.push(acc);
        }
        Cdf { x: x.to_vec(), c }
    }

    pub fn mass(&self) -> T {
        self.c[self.c.len() - 1]
    }

    pub fn nodes(&self) -> &[T] {
        &self.x
    }

    pub fn values(&self) -> &[T] {
        &self.c
    }

    pub fn eval(&self, x: T) -> T {
        let n = self.x.len();
        if x <= self.x[0] {
            return T::zero();
        }
        if x >= self.x[n - 1] {
            return self.mass();
        }
        linear_at(&self.x, &self.c, x)
    }

    /// Smallest x with cdf(x) = q for q in (0, mass). For q <= 0 returns the left end of the
    /// support (last node where the cdf is still zero); for q >= mass the first node where the
    /// cdf reaches the mass.
    pub fn inverse(&self, q: T) -> T {
        let n = self.x.len();
        if q <= T::zero() {
            let k = self.c.partition_point(|&v| v <= T::zero());
            return self.x[k.saturating_sub(1).min(n - 1)];
        }
        let mass = self.mass();
        if q >= mass {
            let k = self.c.partition_point(|&v| v < mass);
            return self.x[k.min(n - 1)];
        }
        let k = upper_index(&self.c, q).clamp(1, n - 1);
        let (c0, c1) = (self.c[k - 1], self.c[k]);
        let w = (q - c0) / (c1 - c0);
        self.x[k - 1] + w * (self.x[k] - self.x[k - 1])
    }
}

/// Values on a space-time grid, stored x-fastest: `values[i + j * nx]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarField<T> {
    pub grid: SpaceTimeGrid<T>,
    pub values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(grid: SpaceTimeGrid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::invalid(format!(
                "field has {} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.nt
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: SpaceTimeGrid<T>) -> Self {
        ScalarField {
            values: vec![T::zero(); grid.len()],
            grid,
        }
    }

    pub fn from_fn<F: FnMut(T, T) -> T>(grid: SpaceTimeGrid<T>, mut f: F) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.nt {
            let t = grid.t(j);
            for i in 0..grid.nx {
                values.push(f(grid.x(i), t));
            }
        }
        ScalarField { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[i + j * self.grid.nx]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let nx = self.grid.nx;
        self.values[i + j * nx] = v;
    }

    pub fn row(&self, j: usize) -> &[T] {
        let nx = self.grid.nx;
        &self.values[j * nx..(j + 1) * nx]
    }

    pub fn map<F: Fn(T) -> T>(&self, f: F) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear interpolation; points outside the grid are clamped to it.
    pub fn sample(&self, x: T, t: T) -> T {
        let g = &self.grid;
        let sx = ((x - g.x_min) / g.hx())
            .max(T::zero())
            .min(T::from_usize_lossy(g.nx - 1));
        let st = ((t - g.t_start) / g.ht())
            .max(T::zero())
            .min(T::from_usize_lossy(g.nt - 1));
        let i = sx.floor().to_usize().unwrap_or(0).min(g.nx - 2);
        let j = st.floor().to_usize().unwrap_or(0).min(g.nt - 2);
        let wx = sx - T::from_usize_lossy(i);
        let wt = st - T::from_usize_lossy(j);
        let one = T::one();
        (one - wt) * ((one - wx) * self.at(i, j) + wx * self.at(i + 1, j))
            + wt * ((one - wx) * self.at(i, j + 1) + wx * self.at(i + 1, j + 1))
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &v| a.max(v.abs()))
    }

    /// Trapezoid integral in x at time level j.
    pub fn mass_at(&self, j: usize) -> T {
        trapezoid(&self.grid.xs(), self.row(j))
    }
}

/// Centered first difference with first-order one-sided ends.
pub fn diff1<T: Real>(y: &[T], h: T) -> Vec<T> {
    let n = y.len();
    let mut d = vec![T::zero(); n];
    for k in 1..n - 1 {
        d[k] = (y[k + 1] - y[k - 1]) / (T::lit(2.0) * h);
    }
    d[0] = (y[1] - y[0]) / h;
    d[n - 1] = (y[n - 1] - y[n - 2]) / h;
    d
}

/// Centered second difference; end values copy their neighbours.
pub fn diff2<T: Real>(y: &[T], h: T) -> Vec<T> {
    let n = y.len();
    let mut d = vec![T::zero(); n];
    for k in 1..n - 1 {
        d[k] = (y[k + 1] - T::lit(2.0) * y[k] + y[k - 1]) / (h * h);
    }
    d[0] = d[1];
    d[n - 1] = d[n - 2];
    d
}

/// Discrete optimal-trajectory flow gamma on a Lagrangian grid over [a0, b0] x [t_start, t_end].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowField<T> {
    pub grid: SpaceTimeGrid<T>,
    pub gamma: Vec<T>,
    pub gamma_x: Vec<T>,
    pub gamma_t: Vec<T>,
    pub gamma_tt: Vec<T>,
}

impl<T: Real> FlowField<T> {
    /// Validates gamma(x, 0) = x at nodes and strict monotonicity in x, then derives
    /// gamma_x, gamma_t, gamma_tt.
    pub fn new(grid: SpaceTimeGrid<T>, gamma: Vec<T>) -> Result<Self> {
        if gamma.len() != grid.len() {
            return Err(MfgError::invalid("flow values do not match the grid"));
        }
        let (nx, nt) = (grid.nx, grid.nt);
        for i in 0..nx {
            if gamma[i] != grid.x(i) {
                return Err(MfgError::invalid(format!(
                    "gamma(x, 0) differs from x at node {i}"
                )));
            }
        }
        for j in 0..nt {
            for i in 1..nx {
                if !(gamma[i + j * nx] > gamma[i - 1 + j * nx]) {
                    return Err(MfgError::Degenerate(format!(
                        "gamma(., t) not strictly increasing at node ({i}, {j})"
                    )));
                }
            }
        }
        let (hx, ht) = (grid.hx(), grid.ht());
        let mut gamma_x = vec![T::zero(); grid.len()];
        let mut gamma_t = vec![T::zero(); grid.len()];
        let mut gamma_tt = vec![T::zero(); grid.len()];
        for j in 0..nt {
            let d = diff1(&gamma[j * nx..(j + 1) * nx], hx);
            gamma_x[j * nx..(j + 1) * nx].copy_from_slice(&d);
        }
        let mut col = vec![T::zero(); nt];
        for i in 0..nx {
            for j in 0..nt {
                col[j] = gamma[i + j * nx];
            }
            let d1 = diff1(&col, ht);
            let d2 = diff2(&col, ht);
            for j in 0..nt {
                gamma_t[i + j * nx] = d1[j];
                gamma_tt[i + j * nx] = d2[j];
            }
        }
        Ok(FlowField {
            grid,
            gamma,
            gamma_x,
            gamma_t,
            gamma_tt,
        })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.gamma[i + j * self.grid.nx]
    }

    pub fn level(&self, j: usize) -> &[T] {
        let nx = self.grid.nx;
        &self.gamma[j * nx..(j + 1) * nx]
    }

    pub fn min_gamma_x(&self) -> T {
        self.gamma_x.iter().fold(T::infinity(), |a, &v| a.min(v))
    }

    pub fn max_gamma_x(&self) -> T {
        self.gamma_x.iter().fold(T::zero(), |a, &v| a.max(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProblemKind {
    Planning,
    TerminalCost,
}

/// d(t): distance to {0, T} for planning, t for terminal cost, measured from the grid start.
pub fn distance_weight<T: Real>(kind: ProblemKind, t: T, horizon: T) -> T {
    match kind {
        ProblemKind::Planning => t.min(horizon - t).max(T::zero()),
        ProblemKind::TerminalCost => t,
    }
}

/// Edge trajectories of the support with finite-difference time derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeBoundaryCurves<T> {
    pub t: Vec<T>,
    pub gamma_l: Vec<T>,
    pub gamma_r: Vec<T>,
    pub dot_l: Vec<T>,
    pub dot_r: Vec<T>,
    pub ddot_l: Vec<T>,
    pub ddot_r: Vec<T>,
    pub d: Vec<T>,
    pub kind: ProblemKind,
}

impl<T: Real> FreeBoundaryCurves<T> {
    pub fn new(t: Vec<T>, gamma_l: Vec<T>, gamma_r: Vec<T>, kind: ProblemKind) -> Result<Self> {
        let n = t.len();
        if n < 3 || gamma_l.len() != n || gamma_r.len() != n {
            return Err(MfgError::invalid("free boundary needs at least 3 matching samples"));
        }
        if gamma_l.iter().zip(&gamma_r).any(|(l, r)| !(l < r)) {
            return Err(MfgError::invalid("free boundary curves cross"));
        }
        let h = (t[n - 1] - t[0]) / T::from_usize_lossy(n - 1);
        let horizon = t[n - 1] - t[0];
        let d = t
            .iter()
            .map(|&s| distance_weight(kind, s - t[0], horizon))
            .collect();
        Ok(FreeBoundaryCurves {
            dot_l: diff1(&gamma_l, h),
            dot_r: diff1(&gamma_r, h),
            ddot_l: diff2_one_sided(&gamma_l, h),
            ddot_r: diff2_one_sided(&gamma_r, h),
            t,
            gamma_l,
            gamma_r,
            d,
            kind,
        })
    }

    pub fn support_width(&self) -> Vec<T> {
        self.gamma_r
            .iter()
            .zip(&self.gamma_l)
            .map(|(&r, &l)| r - l)
            .collect()
    }
}

/// Centered second difference with second-order one-sided ends (needs at least 4 samples
/// for the ends; with 3 the centered value is copied).
pub fn diff2_one_sided<T: Real>(y: &[T], h: T) -> Vec<T> {
    let n = y.len();
    let mut d = diff2(y, h);
    if n >= 4 {
        let h2 = h * h;
        let two = T::lit(2.0);
        let four = T::lit(4.0);
        let five = T::lit(5.0);
        d[0] = (two * y[0] - five * y[1] + four * y[2] - y[3]) / h2;
        d[n - 1] = (two * y[n - 1] - five * y[n - 2] + four * y[n - 3] - y[n - 4]) / h2;
    }
    d
}

/// Eulerian fields u, m, v = f(m) on one grid, with optional velocity and free boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionBundle<T> {
    pub u: ScalarField<T>,
    pub m: ScalarField<T>,
    pub v: ScalarField<T>,
    pub ux: Option<ScalarField<T>>,
    pub curves: Option<FreeBoundaryCurves<T>>,
}

impl<T: Real> SolutionBundle<T> {
    pub fn grid(&self) -> SpaceTimeGrid<T> {
        self.m.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_and_log_values() {
        let p1 = CouplingLaw::power(1.0).unwrap();
        let p2 = CouplingLaw::<f64>::power(2.0).unwrap();
        let lg = CouplingLaw::<f64>::log();
        assert_eq!(p1.f(0.5).unwrap(), 0.5);
        assert_eq!(lg.f(1.0).unwrap(), 0.0);
        assert_eq!(p2.f(3.0).unwrap(), 9.0);
        assert!((p2.inv(9.0).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(lg.inv(0.0).unwrap(), 1.0);
        assert_eq!(p1.inv(0.25).unwrap(), 0.25);
        assert_eq!(p2.f(0.0).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        assert!(CouplingLaw::power(-1.0).is_err());
        assert!(CouplingLaw::power(0.0).is_err());
        assert!(CouplingLaw::<f64>::log().f(0.0).is_err());
        assert!(CouplingLaw::<f64>::log().f(-1.0).is_err());
        assert!(CouplingLaw::power(2.0).unwrap().inv(-1.0).is_err());
        assert!(CouplingLaw::power(2.0).unwrap().f(-1.0).is_err());
    }

    #[test]
    fn antiderivatives_match_quadrature() {
        for law in [
            CouplingLaw::power(0.5).unwrap(),
            CouplingLaw::power(2.0).unwrap(),
            CouplingLaw::log(),
        ] {
            let s = 1.7_f64;
            let n = 20000;
            let mut acc = 0.0;
            let lo = 0.1;
            let h = (s - lo) / n as f64;
            for k in 0..n {
                let x = lo + (k as f64 + 0.5) * h;
                acc += law.f(x).unwrap() * h;
            }
            let exact = law.antiderivative(s).unwrap() - law.antiderivative(lo).unwrap();
            assert!((exact - acc).abs() < 1e-8, "{law:?}");
        }
    }

    #[test]
    fn growth_bounds() {
        let p = CouplingLaw::power_with_bound(2.0, 3.0).unwrap();
        for s in [1e-6, 0.1, 1.0, 3.0] {
            assert!(p.growth_bounds_hold(s).unwrap());
        }
        assert!(CouplingLaw::<f64>::log().growth_bounds_hold(1e4).unwrap());
    }

    #[test]
    fn grid_spacing_is_exact() {
        let g = SpaceTimeGrid::new(-1.0, 3.0, 2.0, 5, 9, Topology::NeumannInterval).unwrap();
        assert_eq!(g.hx(), 1.0);
        assert_eq!(g.ht(), 0.25);
        assert_eq!(g.x(4), 3.0);
        assert_eq!(g.t(8), 2.0);
        assert!(SpaceTimeGrid::new(0.0, 1.0, 1.0, 2, 9, Topology::Torus).is_err());
        assert!(SpaceTimeGrid::new(0.0, 1.0, -1.0, 5, 9, Topology::Torus).is_err());
    }

    fn tent(n: usize) -> MarginalProfile<f64> {
        let x: Vec<f64> = (0..n).map(|k| -2.0 + 4.0 * k as f64 / (n - 1) as f64).collect();
        MarginalProfile::sample(x, -1.0, 1.0, 1.0, |x| 1.0 - x.abs()).unwrap()
    }

    #[test]
    fn cdf_examples() {
        let p = tent(401);
        let cdf = p.cdf();
        assert_eq!(cdf.eval(-1.0), 0.0);
        assert!((cdf.eval(1.0) - 1.0).abs() < 1e-12);
        assert!((cdf.eval(0.0) - 0.5).abs() < 1e-12);
        assert_eq!(cdf.inverse(0.0), -1.0);
        assert_eq!(cdf.inverse(1.0), 1.0);
        let h = 4.0 / 400.0;
        for k in 1..100 {
            let x = -0.99 + 1.98 * k as f64 / 100.0;
            assert!((cdf.inverse(cdf.eval(x)) - x).abs() <= h);
        }
    }

    #[test]
    fn profile_validation() {
        let x = vec![-1.0, 0.0, 1.0];
        assert!(MarginalProfile::new(x.clone(), vec![0.0, -1.0, 0.0], -1.0, 1.0, 1.0, 2.0, -1.0).is_err());
        assert!(MarginalProfile::new(x.clone(), vec![0.5, 1.0, 0.0], -0.5, 1.0, 1.0, 2.0, 1.0).is_err());
        assert!(MarginalProfile::new(x, vec![0.0, 1.0, 0.0], -1.0, 1.0, 1.0, 2.0, 1.0).is_ok());
    }

    #[test]
    fn bilinear_sampling_reproduces_bilinear_functions() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 1.0, 5, 7, Topology::NeumannInterval).unwrap();
        let f = ScalarField::from_fn(g, |x: f64, t: f64| 1.0 + 2.0 * x - t + 3.0 * x * t);
        let v = f.sample(0.37, 0.61);
        assert!((v - (1.0 + 0.74 - 0.61 + 3.0 * 0.37 * 0.61)).abs() < 1e-12);
    }

    #[test]
    fn flow_field_validation() {
        let g = SpaceTimeGrid::new(0.0, 1.0, 1.0, 5, 5, Topology::LagrangianInterval).unwrap();
        let ok: Vec<f64> = (0..25).map(|k| g.x(k % 5) * (1.0 + g.t(k / 5))).collect();
        let flow = FlowField::new(g, ok).unwrap();
        assert!((flow.gamma_x[12] - 1.5).abs() < 1e-12);
        let mut bad: Vec<f64> = (0..25).map(|k| g.x(k % 5)).collect();
        bad[0] = 0.1;
        assert!(FlowField::new(g, bad).is_err());
    }
}
