//! Numerical checks of the qualitative properties of solutions: displacement convexity,
//! extremum principles, Harnack and Hölder bounds, free-boundary rates, the log-coupling
//! estimates and the interior energy modulus. Constants that are only known to exist are
//! fitted and reported together with the samples they were fitted on.
//!
//! Inputs may be `f32` or `f64`; all reports are in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::model::{Cdf, FreeBoundaryCurves, ProblemKind, ScalarField, Topology};
use crate::scalar::Real;

/// Row-major f64 copy of a field, with the grid data needed by the checks.
struct Plain {
    nx: usize,
    nt: usize,
    hx: f64,
    ht: f64,
    x0: f64,
    t0: f64,
    torus: bool,
    v: Vec<f64>,
}

impl Plain {
    fn new<T: Real>(f: &ScalarField<T>) -> Self {
        let g = f.grid;
        Plain {
            nx: g.nx,
            nt: g.nt,
            hx: g.hx().to_f64_lossy(),
            ht: g.ht().to_f64_lossy(),
            x0: g.x_min.to_f64_lossy(),
            t0: g.t_start.to_f64_lossy(),
            torus: g.topology == Topology::Torus,
            v: f.values.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.v[i + j * self.nx]
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.v[j * self.nx..(j + 1) * self.nx]
    }

    fn x(&self, i: usize) -> f64 {
        self.x0 + self.hx * i as f64
    }

    fn t(&self, j: usize) -> f64 {
        self.t0 + self.ht * j as f64
    }

    /// Integral over x of `g` applied to level j: periodic sum on the torus, trapezoid else.
    fn integrate(&self, j: usize, g: impl Fn(f64) -> f64) -> f64 {
        let r = self.row(j);
        if self.torus {
            r[..self.nx - 1].iter().map(|&v| g(v)).sum::<f64>() * self.hx
        } else {
            let inner: f64 = r[1..self.nx - 1].iter().map(|&v| g(v)).sum();
            (inner + 0.5 * (g(r[0]) + g(r[self.nx - 1]))) * self.hx
        }
    }
}

/// Least-squares line through (x, y): (slope, intercept, R^2).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Fit of log y against log x.
fn log_log_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (s, _, r2) = linear_fit(&lx, &ly);
    (s, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub exponent: f64,
    pub times: Vec<f64>,
    /// e(t) = int m^p dx at every level.
    pub energy: Vec<f64>,
    /// Smallest centered second difference of e over the interior levels.
    pub min_second_difference: f64,
    pub max_abs_energy: f64,
    /// min_second_difference >= -tolerance * max_abs_energy.
    pub pass: bool,
}

/// Second differences of t -> int m^p, which convex displacement makes nonnegative.
pub fn displacement_convexity_profile<T: Real>(m: &ScalarField<T>, p: f64, tolerance: f64) -> Result<ConvexityReport> {
    if !(p >= 1.0) {
        return Err(MfgError::invalid(format!("exponent must be at least 1, got {p}")));
    }
    let f = Plain::new(m);
    if f.nt < 3 {
        return Err(MfgError::invalid("need at least three time levels"));
    }
    let energy: Vec<f64> = (0..f.nt).map(|j| f.integrate(j, |v| v.max(0.0).powf(p))).collect();
    let min2 = (1..f.nt - 1)
        .map(|j| (energy[j + 1] + energy[j - 1] - 2.0 * energy[j]) / (f.ht * f.ht))
        .fold(f64::INFINITY, f64::min);
    let max_abs = energy.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    Ok(ConvexityReport {
        exponent: p,
        times: (0..f.nt).map(|j| f.t(j)).collect(),
        energy,
        min_second_difference: min2,
        max_abs_energy: max_abs,
        pass: min2 >= -tolerance * max_abs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremumReport {
    pub min_interior: f64,
    pub max_interior: f64,
    pub min_marginals: f64,
    pub max_marginals: f64,
    /// min_interior - min_marginals.
    pub lower_margin: f64,
    /// max_marginals - max_interior.
    pub upper_margin: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the extremes of m over the interior levels with those of the two marginals.
pub fn extremum_principle_check<T: Real>(m: &ScalarField<T>, tolerance: f64) -> Result<ExtremumReport> {
    let f = Plain::new(m);
    if f.nt < 3 {
        return Err(MfgError::invalid("need at least three time levels"));
    }
    let extremes = |rows: &mut dyn Iterator<Item = usize>| {
        rows.flat_map(|j| f.row(j).iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (lo_i, hi_i) = extremes(&mut (1..f.nt - 1));
    let (lo_b, hi_b) = extremes(&mut [0, f.nt - 1].into_iter());
    let lower = lo_i - lo_b;
    let upper = hi_b - hi_i;
    Ok(ExtremumReport {
        min_interior: lo_i,
        max_interior: hi_i,
        min_marginals: lo_b,
        max_marginals: hi_b,
        lower_margin: lower,
        upper_margin: upper,
        tolerance,
        pass: lower >= -tolerance && upper >= -tolerance,
    })
}

/// Node index box [i0, i1] x [j0, j1] and its margins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RectangleCheck {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
    /// max over the boundary minus max over the inside.
    pub max_margin: f64,
    /// min over the inside minus min over the boundary.
    pub min_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RectangleReport {
    pub seed: u64,
    pub rectangles: Vec<RectangleCheck>,
    pub worst_margin: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Interior maximum and minimum principle for v on `count` random node rectangles: the
/// extremes over each rectangle are attained on its boundary.
pub fn rectangle_principle<T: Real>(v: &ScalarField<T>, count: usize, seed: u64, tolerance: f64) -> Result<RectangleReport> {
    let f = Plain::new(v);
    if f.nx < 3 || f.nt < 3 {
        return Err(MfgError::invalid("need at least three nodes in each direction"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rectangles = Vec::with_capacity(count);
    let mut worst = f64::INFINITY;
    for _ in 0..count {
        let (i0, i1) = random_span(&mut rng, f.nx);
        let (j0, j1) = random_span(&mut rng, f.nt);
        let (mut bmax, mut bmin) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut imax, mut imin) = (f64::NEG_INFINITY, f64::INFINITY);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let val = f.at(i, j);
                if i == i0 || i == i1 || j == j0 || j == j1 {
                    bmax = bmax.max(val);
                    bmin = bmin.min(val);
                } else {
                    imax = imax.max(val);
                    imin = imin.min(val);
                }
            }
        }
        let c = RectangleCheck {
            i0,
            i1,
            j0,
            j1,
            max_margin: bmax - imax,
            min_margin: imin - bmin,
        };
        worst = worst.min(c.max_margin).min(c.min_margin);
        rectangles.push(c);
    }
    Ok(RectangleReport {
        seed,
        rectangles,
        worst_margin: worst,
        tolerance,
        pass: worst >= -tolerance,
    })
}

/// Two node indices in 0..n at least two apart.
fn random_span(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let a = rng.gen_range(0..n - 2);
    let b = rng.gen_range(a + 2..n);
    (a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnackSample {
    pub center: f64,
    pub radius: f64,
    pub sup: f64,
    pub inf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnackReport {
    /// Balls with radius below half the distance of the center to the support edges.
    pub interior: Vec<HarnackSample>,
    /// max sup / inf over the interior balls.
    pub constant: f64,
    /// max sup / radius over the balls that reach within twice their radius of an edge.
    pub edge_constant: f64,
    pub finite: bool,
}

/// Harnack constants of v on the Lagrangian grid over [a0, b0] x [0, T]: for each center on
/// a dyadic lattice and each dyadic radius, the ratio of sup to inf of v over
/// (x0 - rho, x0 + rho) x [0, T].
pub fn harnack_ratio<T: Real>(v: &ScalarField<T>, levels: usize) -> Result<HarnackReport> {
    let f = Plain::new(v);
    let (a, b) = (f.x(0), f.x(f.nx - 1));
    let width = b - a;
    let column_extremes: Vec<(f64, f64)> = (0..f.nx)
        .map(|i| {
            (0..f.nt).fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), j| (hi.max(f.at(i, j)), lo.min(f.at(i, j))))
        })
        .collect();
    let mut interior = Vec::new();
    let mut constant: f64 = 0.0;
    let mut edge: f64 = 0.0;
    for level in 1..=levels {
        let rho = width / 2f64.powi(level as i32 + 1);
        let cells = 1usize << level;
        for c in 1..cells {
            let x0 = a + width * c as f64 / cells as f64;
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            for (i, &(chi, clo)) in column_extremes.iter().enumerate() {
                if (f.x(i) - x0).abs() < rho {
                    hi = hi.max(chi);
                    lo = lo.min(clo);
                }
            }
            if !hi.is_finite() {
                continue;
            }
            let dist = (x0 - a).min(b - x0);
            if rho < dist / 2.0 {
                constant = constant.max(hi / lo);
                interior.push(HarnackSample { center: x0, radius: rho, sup: hi, inf: lo });
            } else {
                edge = edge.max(hi / rho);
            }
        }
    }
    Ok(HarnackReport {
        finite: constant.is_finite() && edge.is_finite() && !interior.is_empty(),
        interior,
        constant,
        edge_constant: edge,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderFit {
    pub radii: Vec<f64>,
    /// Largest oscillation over the balls of each radius.
    pub oscillations: Vec<f64>,
    pub exponent: f64,
    pub r_squared: f64,
    /// R^2 of at least 0.9.
    pub reliable: bool,
}

/// Hölder exponent of a function of one variable near the given centers: the slope of
/// log(osc over [c - r, c + r]) against log r, with each oscillation taken from `samples`
/// equally spaced evaluations.
pub fn holder_exponent_fit<F: Fn(f64) -> Result<f64>>(
    f: F,
    centers: &[f64],
    radii: &[f64],
    samples: usize,
) -> Result<HolderFit> {
    if radii.len() < 2 || centers.is_empty() || samples < 2 {
        return Err(MfgError::invalid("need two radii, one center and two samples per ball"));
    }
    let mut osc = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut worst: f64 = 0.0;
        for &c in centers {
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            for k in 0..samples {
                let y = f(c - r + 2.0 * r * k as f64 / (samples - 1) as f64)?;
                hi = hi.max(y);
                lo = lo.min(y);
            }
            worst = worst.max(hi - lo);
        }
        if !(worst > 0.0) {
            return Err(MfgError::domain(format!("zero oscillation at radius {r}")));
        }
        osc.push(worst);
    }
    let (s, r2) = log_log_fit(radii, &osc);
    Ok(HolderFit {
        radii: radii.to_vec(),
        oscillations: osc,
        exponent: s,
        r_squared: r2,
        reliable: r2 >= 0.9,
    })
}

/// [`holder_exponent_fit`] in x at time t for a sampled field (bilinear interpolation).
pub fn holder_exponent_of_field<T: Real>(
    field: &ScalarField<T>,
    t: f64,
    centers: &[f64],
    radii: &[f64],
) -> Result<HolderFit> {
    let samples = 64;
    holder_exponent_fit(|x| Ok(field.sample(T::lit(x), T::lit(t)).to_f64_lossy()), centers, radii, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryReport {
    pub kind: ProblemKind,
    /// Age of the initial profile added to t in the growth fit.
    pub age: f64,
    /// Slope of log |supp(t)| against log(age + t - t0).
    pub growth_exponent: f64,
    pub growth_r_squared: f64,
    /// Slope of log(|supp(t)| - |supp(t0)|) against log d(t), for comparison.
    pub excess_exponent: f64,
    pub ddot_l_min: f64,
    pub ddot_l_max: f64,
    pub ddot_r_min: f64,
    pub ddot_r_max: f64,
    /// Ratio of the largest to the smallest |second difference| over both curves; finite
    /// when both curves are strictly convex (left) and concave (right).
    pub convexity_constant: f64,
    pub strictly_convex: bool,
    /// Support grows at every step (left edge moves left, right edge moves right).
    pub expanding: bool,
    pub dot_r_min: f64,
}

/// Support growth rate and convexity of the free-boundary curves. `age` is the time the
/// initial profile has already spread from a point, which makes the self-similar width an
/// exact power of age + t.
pub fn boundary_rate_and_convexity<T: Real>(curves: &FreeBoundaryCurves<T>, age: f64) -> Result<BoundaryReport> {
    let c = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.to_f64_lossy()).collect() };
    let t = c(&curves.t);
    let (gl, gr) = (c(&curves.gamma_l), c(&curves.gamma_r));
    let (ddl, ddr) = (c(&curves.ddot_l), c(&curves.ddot_r));
    let d = c(&curves.d);
    let n = t.len();
    let width: Vec<f64> = gr.iter().zip(&gl).map(|(r, l)| r - l).collect();
    let tt: Vec<f64> = t.iter().map(|s| age + s - t[0]).collect();
    if tt.iter().any(|&s| !(s > 0.0)) {
        return Err(MfgError::invalid("age plus elapsed time must be positive"));
    }
    let (growth, growth_r2) = log_log_fit(&tt, &width);
    let (mut ex, mut ey) = (Vec::new(), Vec::new());
    for k in 0..n {
        let excess = width[k] - width[0];
        if d[k] > 0.0 && excess > 0.0 {
            ex.push(d[k]);
            ey.push(excess);
        }
    }
    let excess_exponent = if ex.len() >= 2 { log_log_fit(&ex, &ey).0 } else { f64::NAN };
    let mm = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (l_min, l_max) = mm(&ddl);
    let (r_min, r_max) = mm(&ddr);
    let strictly_convex = l_min > 0.0 && r_max < 0.0;
    let convexity_constant = if strictly_convex {
        l_max.max(-r_min) / l_min.min(-r_max)
    } else {
        f64::INFINITY
    };
    let expanding = (1..n).all(|k| gl[k] < gl[k - 1] && gr[k] > gr[k - 1]);
    let dot_r_min = c(&curves.dot_r).into_iter().fold(f64::INFINITY, f64::min);
    Ok(BoundaryReport {
        kind: curves.kind,
        age,
        growth_exponent: growth,
        growth_r_squared: growth_r2,
        excess_exponent,
        ddot_l_min: l_min,
        ddot_l_max: l_max,
        ddot_r_min: r_min,
        ddot_r_max: r_max,
        convexity_constant,
        strictly_convex,
        expanding,
        dot_r_min,
    })
}

/// Outcome of a check that only applies under a precondition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Gated<R> {
    Applicable(R),
    NotApplicable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryDefects {
    pub evenness: f64,
    pub monotonicity: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogSuiteReport {
    pub delta: f64,
    /// min m over x and t in [t0 + delta, T - delta].
    pub min_density: f64,
    pub positive: bool,
    /// max over interior levels of ||log m(t)|| / (1 / t^2 + 1 / (T - t)^2), t from the start.
    pub log_bound_constant: f64,
    pub log_bound_finite: bool,
    pub symmetry: Gated<SymmetryDefects>,
    /// Pairs (|t - s|, W2(m(t), m(s))) used in the fit.
    pub w2_samples: Vec<(f64, f64)>,
    pub w2_exponent: f64,
    pub w2_pass: bool,
}

/// Number of quantile nodes in the W2 quadrature.
pub const W2_QUANTILES: usize = 10_000;

/// W2 distance between two densities on the same nodes, from the quantile functions
/// (midpoint rule on `W2_QUANTILES` nodes). Both are normalized to unit mass first.
pub fn wasserstein2(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (Cdf::new(x, a), Cdf::new(x, b));
    let (ma, mb) = (ca.mass(), cb.mass());
    let n = W2_QUANTILES;
    let mut acc = 0.0;
    for k in 0..n {
        let q = (k as f64 + 0.5) / n as f64;
        let d = ca.inverse(q * ma) - cb.inverse(q * mb);
        acc += d * d;
    }
    (acc / n as f64).sqrt()
}

/// Checks for a log-coupling solution: positivity away from the ends, the blow-up rate of
/// log m, symmetry (when the marginals are even and nonincreasing in |x|) and the time
/// regularity of t -> m(t) in W2. On the torus the period cell is treated as an interval,
/// which is exact as long as no mass crosses the seam.
pub fn log_coupling_suite<T: Real>(m: &ScalarField<T>, delta: f64) -> Result<LogSuiteReport> {
    let f = Plain::new(m);
    if f.nt < 5 {
        return Err(MfgError::invalid("need at least five time levels"));
    }
    let horizon = f.ht * (f.nt - 1) as f64;
    let mut min_density = f64::INFINITY;
    let mut constant: f64 = 0.0;
    for j in 0..f.nt {
        let s = f.ht * j as f64;
        let row = f.row(j);
        if s >= delta - 1e-12 && s <= horizon - delta + 1e-12 {
            min_density = row.iter().fold(min_density, |a, &b| a.min(b));
        }
        if j > 0 && j + 1 < f.nt {
            let sup = row.iter().fold(0.0f64, |a, &b| a.max(b.ln().abs()));
            constant = constant.max(sup / (1.0 / (s * s) + 1.0 / ((horizon - s) * (horizon - s))));
        }
    }
    let symmetry = if is_even_and_unimodal(&f, 0) && is_even_and_unimodal(&f, f.nt - 1) {
        let (even, mono) = symmetry_defects(&f);
        Gated::Applicable(SymmetryDefects {
            evenness: even,
            monotonicity: mono,
            pass: even <= 1e-8 && mono <= 1e-8,
        })
    } else {
        Gated::NotApplicable("marginals are not even and nonincreasing in |x|".into())
    };
    // W2 between the middle level and levels at dyadic time offsets
    let xs: Vec<f64> = (0..f.nx).map(|i| f.x(i)).collect();
    let mid = (f.nt - 1) / 2;
    let mut samples = Vec::new();
    let mut step = 1;
    while mid + step < f.nt && mid >= step {
        let w = wasserstein2(&xs, f.row(mid), f.row(mid + step));
        samples.push((f.ht * step as f64, w));
        step *= 2;
    }
    let usable: Vec<&(f64, f64)> = samples.iter().filter(|s| s.1 > 0.0).collect();
    let (w2_exponent, w2_pass) = if usable.len() >= 2 {
        let dt: Vec<f64> = usable.iter().map(|s| s.0).collect();
        let w: Vec<f64> = usable.iter().map(|s| s.1).collect();
        let e = log_log_fit(&dt, &w).0;
        (e, e >= 0.45)
    } else {
        // a stationary solution is trivially Hölder in time
        (f64::INFINITY, samples.iter().all(|s| s.1 <= 1e-12))
    };
    Ok(LogSuiteReport {
        delta,
        min_density,
        positive: min_density > 0.0,
        log_bound_constant: constant,
        log_bound_finite: constant.is_finite(),
        symmetry,
        w2_samples: samples,
        w2_exponent,
        w2_pass,
    })
}

/// Reflection partner of node i about the center of the grid.
fn mirror(f: &Plain, i: usize) -> usize {
    f.nx - 1 - i
}

fn is_even_and_unimodal(f: &Plain, j: usize) -> bool {
    let scale = f.row(j).iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    let centered = (f.x(0) + f.x(f.nx - 1)).abs() <= 1e-12 * (1.0 + f.x(0).abs());
    centered
        && (0..f.nx).all(|i| (f.at(i, j) - f.at(mirror(f, i), j)).abs() <= tol)
        && (0..f.nx - 1).filter(|&i| f.x(i) >= -1e-12).all(|i| f.at(i + 1, j) <= f.at(i, j) + tol)
}

/// Worst evenness defect and worst increase on the right half, over all levels.
fn symmetry_defects(f: &Plain) -> (f64, f64) {
    let (mut even, mut mono) = (0.0f64, 0.0f64);
    for j in 0..f.nt {
        for i in 0..f.nx {
            even = even.max((f.at(i, j) - f.at(mirror(f, i), j)).abs());
            if f.x(i) >= -1e-12 && i + 1 < f.nx {
                mono = mono.max(f.at(i + 1, j) - f.at(i, j));
            }
        }
    }
    (even, mono)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusSample {
    pub x: f64,
    pub t: f64,
    pub r1: f64,
    pub r2: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    /// int int |Dv|^2 over the whole grid.
    pub energy: f64,
    /// Largest (osc_{B_r1} v)^2 log(r2 / r1) / (pi int_{B_r2} |Dv|^2) over the ball family.
    pub worst_ratio: f64,
    pub samples: Vec<ModulusSample>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Dirichlet energy of v and the logarithmic modulus of continuity on concentric balls
/// B_r1 in B_r2 inside the domain, with r2 = 2 r1 and centers on a lattice.
pub fn energy_and_modulus<T: Real>(v: &ScalarField<T>, tolerance: f64) -> Result<EnergyReport> {
    let f = Plain::new(v);
    if f.nx < 3 || f.nt < 3 {
        return Err(MfgError::invalid("need at least three nodes in each direction"));
    }
    // cell energy densities from the four corner differences
    let (cx, ct) = (f.nx - 1, f.nt - 1);
    let mut cell = vec![0.0; cx * ct];
    for j in 0..ct {
        for i in 0..cx {
            let vx = 0.5 * ((f.at(i + 1, j) - f.at(i, j)) + (f.at(i + 1, j + 1) - f.at(i, j + 1))) / f.hx;
            let vt = 0.5 * ((f.at(i, j + 1) - f.at(i, j)) + (f.at(i + 1, j + 1) - f.at(i + 1, j))) / f.ht;
            cell[i + j * cx] = (vx * vx + vt * vt) * f.hx * f.ht;
        }
    }
    let energy: f64 = cell.iter().sum();
    let (xl, xr) = (f.x(0), f.x(f.nx - 1));
    let (tl, tr) = (f.t(0), f.t(f.nt - 1));
    let rmax = 0.5 * (xr - xl).min(tr - tl);
    let mut samples = Vec::new();
    let mut worst: f64 = 0.0;
    for level in 0..4 {
        let r2 = rmax / 2f64.powi(level);
        let r1 = r2 / 2.0;
        if r1 < f.hx.max(f.ht) {
            break;
        }
        for a in 1..8 {
            for b in 1..8 {
                let x0 = xl + (xr - xl) * a as f64 / 8.0;
                let t0 = tl + (tr - tl) * b as f64 / 8.0;
                if x0 - r2 < xl || x0 + r2 > xr || t0 - r2 < tl || t0 + r2 > tr {
                    continue;
                }
                let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
                for j in 0..f.nt {
                    for i in 0..f.nx {
                        let (dx, dt) = (f.x(i) - x0, f.t(j) - t0);
                        if dx * dx + dt * dt <= r1 * r1 {
                            hi = hi.max(f.at(i, j));
                            lo = lo.min(f.at(i, j));
                        }
                    }
                }
                let mut local = 0.0;
                for j in 0..ct {
                    for i in 0..cx {
                        let dx = f.x(i) + 0.5 * f.hx - x0;
                        let dt = f.t(j) + 0.5 * f.ht - t0;
                        if dx * dx + dt * dt <= r2 * r2 {
                            local += cell[i + j * cx];
                        }
                    }
                }
                let osc = hi - lo;
                let ratio = if osc == 0.0 {
                    0.0
                } else {
                    osc * osc * (r2 / r1).ln() / (std::f64::consts::PI * local)
                };
                worst = worst.max(ratio);
                samples.push(ModulusSample { x: x0, t: t0, r1, r2, ratio });
            }
        }
    }
    Ok(EnergyReport {
        energy,
        worst_ratio: worst,
        samples,
        tolerance,
        pass: worst <= 1.0 + tolerance,
    })
}

/// (max - min) / |mean| of a sample, used to judge whether a sequence has settled.
pub fn relative_spread(values: &[f64]) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (hi - lo) / mean.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SpaceTimeGrid;

    fn grid() -> SpaceTimeGrid<f64> {
        SpaceTimeGrid::new(-1.0, 1.0, 1.0, 41, 21, Topology::NeumannInterval).unwrap()
    }

    #[test]
    fn constant_state_is_neutral() {
        let m = ScalarField::from_fn(grid(), |_, _| 0.5);
        let c = displacement_convexity_profile(&m, 2.0, 1e-4).unwrap();
        assert!(c.min_second_difference.abs() < 1e-10);
        let e = extremum_principle_check(&m, 1e-6).unwrap();
        assert_eq!(e.lower_margin, 0.0);
        assert_eq!(e.upper_margin, 0.0);
        let r = energy_and_modulus(&m, 0.05).unwrap();
        assert_eq!(r.energy, 0.0);
        assert_eq!(r.worst_ratio, 0.0);
        let rect = rectangle_principle(&m, 50, 1, 1e-12).unwrap();
        assert!(rect.pass);
    }

    #[test]
    fn rectangles_catch_an_interior_bump() {
        let m = ScalarField::from_fn(grid(), |x: f64, t: f64| (-(x * x + (t - 0.5).powi(2)) * 20.0).exp());
        let r = rectangle_principle(&m, 200, 3, 1e-9).unwrap();
        assert!(!r.pass);
        // a harmonic function passes
        let h = ScalarField::from_fn(grid(), |x: f64, t: f64| x * x - t * t + 0.3 * x * t);
        assert!(rectangle_principle(&h, 200, 3, 1e-9).unwrap().pass);
        assert_eq!(r.rectangles, rectangle_principle(&m, 200, 3, 1e-9).unwrap().rectangles);
    }

    #[test]
    fn holder_exponent_of_powers() {
        for s in [0.3, 0.5, 1.0] {
            let fit = holder_exponent_fit(|x: f64| Ok(x.abs().powf(s)), &[0.0], &[1e-3, 1e-2, 1e-1], 201).unwrap();
            assert!((fit.exponent - s).abs() < 1e-6, "{s}: {}", fit.exponent);
            assert!(fit.reliable);
        }
    }

    #[test]
    fn w2_of_a_translation_is_the_shift() {
        let x: Vec<f64> = (0..2001).map(|k| -5.0 + 10.0 * k as f64 / 2000.0).collect();
        let g = |c: f64| x.iter().map(|&y| (-(y - c).powi(2)).exp()).collect::<Vec<_>>();
        let w = wasserstein2(&x, &g(0.0), &g(0.7));
        assert!((w - 0.7).abs() < 1e-4, "{w}");
        assert!(wasserstein2(&x, &g(0.3), &g(0.3)) < 1e-12);
    }

    #[test]
    fn linear_function_saturates_the_modulus_bound_only_below_one() {
        let m = ScalarField::from_fn(grid(), |x: f64, t: f64| x + 0.5 * t);
        let r = energy_and_modulus(&m, 0.0).unwrap();
        assert!(r.energy > 0.0);
        assert!(r.pass, "{}", r.worst_ratio);
    }

    #[test]
    fn harnack_on_positive_concave_data() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 1.0, 65, 9, Topology::LagrangianInterval).unwrap();
        let v = ScalarField::from_fn(g, |x: f64, t: f64| (1.0 - x * x) / (1.0 + t));
        let r = harnack_ratio(&v, 5).unwrap();
        assert!(r.finite);
        // sup / inf over a centered ball of radius 1/4 over all times
        assert!(r.constant >= 2.0 && r.constant < 10.0, "{}", r.constant);
        assert!(r.edge_constant.is_finite());
    }

    #[test]
    fn log_suite_on_even_positive_data() {
        let g = SpaceTimeGrid::torus(2.0, 1.0, 41, 21).unwrap();
        let pi = std::f64::consts::PI;
        let m = ScalarField::from_fn(g, |x: f64, t: f64| 1.0 + 0.5 * (1.0 - t * (1.0 - t)) * (pi * x).cos());
        let r = log_coupling_suite(&m, 0.1).unwrap();
        assert!(r.positive && r.log_bound_finite);
        match r.symmetry {
            Gated::Applicable(s) => assert!(s.pass),
            Gated::NotApplicable(_) => panic!("even data"),
        }
        let shifted = ScalarField::from_fn(g, |x: f64, _| 1.0 + 0.5 * (pi * (x - 0.2)).cos());
        assert!(matches!(log_coupling_suite(&shifted, 0.1).unwrap().symmetry, Gated::NotApplicable(_)));
    }
}
