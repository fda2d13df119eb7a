//! Exact self-similar solutions for the power coupling f(m) = m^theta.
//!
//! m(x, t) = t^-a (R - c (x / t^a)^2)_+^(1/theta) with a = 2 / (2 + theta),
//! c = a (1 - a) / 2, supported on |x| <= C_R t^a. Outside the support the value function
//! is continued through the interface time S(x, t), the unique root in (0, t] of
//! F(s) = -|x| s^(1-a) + C_R (a t + (1 - a) s).

use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::model::{trapezoid, MarginalProfile, ScalarField, SpaceTimeGrid};
use crate::quadrature::adaptive_simpson;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfSimilarModel<T> {
    pub theta: T,
    pub alpha: T,
    pub r: T,
    pub c_r: T,
    pub c: T,
}

/// int_{-1}^{1} (1 - s^2)^(1/theta) ds by adaptive Simpson.
fn unit_profile_integral<T: Real>(theta: T) -> T {
    let p = theta.recip();
    let g = move |s: T| (T::one() - s * s).max(T::zero()).powf(p);
    T::lit(2.0) * adaptive_simpson(&g, T::zero(), T::one(), T::lit(1e-13))
}

/// Radius R making the profile (R - c y^2)_+^(1/theta) a unit mass.
pub fn normalization_radius<T: Real>(theta: T) -> Result<T> {
    if !(theta > T::zero()) || !theta.is_finite() {
        return Err(MfgError::domain(format!("theta must be positive, got {theta}")));
    }
    let alpha = T::lit(2.0) / (T::lit(2.0) + theta);
    let c = alpha * (T::one() - alpha) / T::lit(2.0);
    let shape = unit_profile_integral(theta);
    // mass(R) = sqrt(R / c) R^(1/theta) * shape, increasing in R
    let mass = |r: T| (r / c).sqrt() * r.powf(theta.recip()) * shape;
    let (mut lo, mut hi) = (T::zero(), T::one());
    while mass(hi) < T::one() {
        lo = hi;
        hi *= T::lit(2.0);
    }
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if mass(mid) < T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::epsilon() * hi {
            break;
        }
    }
    Ok((lo + hi) / T::lit(2.0))
}

impl<T: Real> SelfSimilarModel<T> {
    pub fn new(theta: T) -> Result<Self> {
        let r = normalization_radius(theta)?;
        let alpha = T::lit(2.0) / (T::lit(2.0) + theta);
        let c = alpha * (T::one() - alpha) / T::lit(2.0);
        let c_r = (T::lit(2.0) * r / (alpha * (T::one() - alpha))).sqrt();
        Ok(SelfSimilarModel {
            theta,
            alpha,
            r,
            c_r,
            c,
        })
    }

    fn is_log_branch(&self) -> bool {
        self.theta == T::lit(2.0)
    }

    fn check_time(t: T) -> Result<()> {
        if !(t > T::zero()) {
            return Err(MfgError::domain(format!("time must be positive, got {t}")));
        }
        Ok(())
    }

    /// Half-width C_R t^a of the support at time t.
    pub fn support_radius(&self, t: T) -> T {
        self.c_r * t.powf(self.alpha)
    }

    /// |x| - C_R t^a.
    pub fn delta(&self, x: T, t: T) -> T {
        x.abs() - self.support_radius(t)
    }

    /// Self-similar profile (R - c y^2)_+^(1/theta).
    pub fn profile_shape(&self, y: T) -> T {
        (self.r - self.c * y * y).max(T::zero()).powf(self.theta.recip())
    }

    pub fn density(&self, x: T, t: T) -> Result<T> {
        Self::check_time(t)?;
        let ta = t.powf(self.alpha);
        if x.abs() >= self.c_r * ta {
            return Ok(T::zero());
        }
        Ok(self.profile_shape(x / ta) / ta)
    }

    /// Mass of the profile at time t by adaptive quadrature.
    pub fn mass(&self, t: T) -> Result<T> {
        Self::check_time(t)?;
        let w = self.support_radius(t);
        let g = |x: T| self.density(x, t).unwrap_or(T::zero());
        Ok(adaptive_simpson(&g, -w, w, T::lit(1e-13)))
    }

    /// F(x, t, s) = -|x| s^(1-a) + C_R (a t + (1 - a) s).
    pub fn interface_function(&self, x: T, t: T, s: T) -> T {
        let a = self.alpha;
        -x.abs() * s.powf(T::one() - a) + self.c_r * (a * t + (T::one() - a) * s)
    }

    fn interface_slope(&self, x: T, s: T) -> T {
        let a = self.alpha;
        (T::one() - a) * (self.c_r - x.abs() * s.powf(-a))
    }

    /// Interface time S(x, t) for |x| >= C_R t^a: bisection on (0, t) followed by two guarded
    /// Newton steps.
    pub fn interface_time(&self, x: T, t: T) -> Result<T> {
        Self::check_time(t)?;
        let delta = self.delta(x, t);
        if delta < T::zero() {
            return Err(MfgError::domain(format!(
                "interface time requested inside the support (x = {x}, t = {t})"
            )));
        }
        if delta == T::zero() {
            return Ok(t);
        }
        let target = T::lit(1e-13) * self.c_r * t;
        let (mut lo, mut hi) = (T::zero(), t);
        let mut s = t / T::lit(2.0);
        for _ in 0..400 {
            s = (lo + hi) / T::lit(2.0);
            let f = self.interface_function(x, t, s);
            if f.abs() <= target || hi - lo <= T::epsilon() * t {
                break;
            }
            if f > T::zero() {
                lo = s;
            } else {
                hi = s;
            }
        }
        for _ in 0..2 {
            let f = self.interface_function(x, t, s);
            let df = self.interface_slope(x, s);
            if df == T::zero() || !df.is_finite() {
                break;
            }
            let cand = s - f / df;
            if cand > lo && cand < hi && self.interface_function(x, t, cand).abs() < f.abs() {
                s = cand;
            }
        }
        Ok(s)
    }

    /// Value function u, with the additive constant of the printed branches.
    pub fn value(&self, x: T, t: T) -> Result<T> {
        Self::check_time(t)?;
        if self.delta(x, t) <= T::zero() {
            Ok(self.value_inside(x, t))
        } else {
            self.value_outside(x, t)
        }
    }

    /// Interior branch -a x^2 / (2t) - R t^(2a-1) / (2a-1) (log t when theta = 2).
    pub fn value_inside(&self, x: T, t: T) -> T {
        let a = self.alpha;
        let two = T::lit(2.0);
        if self.is_log_branch() {
            return -x * x / (T::lit(4.0) * t) - self.r * t.ln();
        }
        let e = two * a - T::one();
        -a * x * x / (two * t) - self.r * t.powf(e) / e
    }

    /// Exterior branch, defined for |x| >= C_R t^a.
    pub fn value_outside(&self, x: T, t: T) -> Result<T> {
        Self::check_time(t)?;
        let a = self.alpha;
        let r = self.r;
        let two = T::lit(2.0);
        if self.is_log_branch() {
            if self.delta(x, t) < T::zero() {
                return Err(MfgError::domain("exterior branch requested inside the support"));
            }
            let d2 = (x * x - T::lit(8.0) * r * t).max(T::zero());
            let ax = x.abs();
            let q = ax - d2.sqrt();
            return Ok(-two * r * ax / q - two * r * (q / (T::lit(8.0) * r).sqrt()).ln());
        }
        let e = two * a - T::one();
        let s = self.interface_time(x, t)?;
        let k = a * r / (T::one() - a);
        Ok(-k / e * s.powf(e) - k * s.powf(e - T::one()) * (t - s))
    }

    /// u_x.
    pub fn velocity(&self, x: T, t: T) -> Result<T> {
        Self::check_time(t)?;
        if self.delta(x, t) <= T::zero() {
            return Ok(-self.alpha * x / t);
        }
        self.velocity_outside(x, t)
    }

    /// Exterior branch of u_x, defined for |x| >= C_R t^a.
    pub fn velocity_outside(&self, x: T, t: T) -> Result<T> {
        let a = self.alpha;
        let s = self.interface_time(x, t)?;
        let k = T::lit(2.0) * self.r / (self.c_r * (T::one() - a));
        Ok(-k * s.powf(a - T::one()) * x.signum())
    }

    /// u_xx: -a / t inside the support and -1 / (t - S) outside.
    pub fn hessian(&self, x: T, t: T) -> Result<T> {
        Self::check_time(t)?;
        if self.delta(x, t) <= T::zero() {
            return Ok(-self.alpha / t);
        }
        let s = self.interface_time(x, t)?;
        Ok(-(t - s).recip())
    }

    /// Position at time t of the characteristic through (x0, t0) inside the support.
    pub fn characteristic(&self, x0: T, t0: T, t: T) -> Result<T> {
        if !(t0 > T::zero()) || t < t0 {
            return Err(MfgError::domain("characteristic needs 0 < t0 <= t"));
        }
        if self.delta(x0, t0) > T::zero() {
            return Err(MfgError::domain(format!(
                "starting point x0 = {x0} lies outside the support at t0 = {t0}"
            )));
        }
        Ok(x0 * (t / t0).powf(self.alpha))
    }

    /// Lower bound constant of S >= c0 (t / (|x| + delta))^(1 / (1 - a)).
    pub fn lower_bound_constant(&self) -> T {
        let a = self.alpha;
        (T::lit(2.0) * self.r * a / (T::one() - a)).powf(T::one() / (T::lit(2.0) * (T::one() - a)))
    }

    /// Constant of |t - S| <= C0 t^(1 - a/2) delta^(1/2).
    pub fn gap_bound_constant(&self) -> T {
        let a = self.alpha;
        (T::lit(2.0) / (self.r * a * (T::one() - a))).powf(T::lit(0.25))
    }

    /// Profile at time t sampled on `nodes`, with the edge exponent 1/theta.
    pub fn profile(&self, nodes: Vec<T>, t: T) -> Result<MarginalProfile<T>> {
        Self::check_time(t)?;
        let w = self.support_radius(t);
        MarginalProfile::sample(nodes, -w, w, self.theta.recip(), |x| {
            self.density(x, t).unwrap_or(T::zero())
        })
    }

    /// Density sampled on a space-time grid.
    pub fn density_field(&self, grid: SpaceTimeGrid<T>) -> Result<ScalarField<T>> {
        Self::check_time(grid.t_start)?;
        Ok(ScalarField::from_fn(grid, |x, t| self.density(x, t).unwrap_or(T::zero())))
    }

    pub fn value_field(&self, grid: SpaceTimeGrid<T>) -> Result<ScalarField<T>> {
        Self::check_time(grid.t_start)?;
        let mut out = ScalarField::zeros(grid);
        for j in 0..grid.nt {
            for i in 0..grid.nx {
                out.set(i, j, self.value(grid.x(i), grid.t(j))?);
            }
        }
        Ok(out)
    }

    pub fn velocity_field(&self, grid: SpaceTimeGrid<T>) -> Result<ScalarField<T>> {
        Self::check_time(grid.t_start)?;
        let mut out = ScalarField::zeros(grid);
        for j in 0..grid.nt {
            for i in 0..grid.nx {
                out.set(i, j, self.velocity(grid.x(i), grid.t(j))?);
            }
        }
        Ok(out)
    }

    /// Residuals of the exact solution sampled on `grid`.
    pub fn residuals(&self, grid: &SpaceTimeGrid<T>) -> Result<Residuals<T>> {
        if !(grid.t_start > T::zero()) {
            return Err(MfgError::domain("residual grid must start at a positive time"));
        }
        let m = self.density_field(*grid)?;
        let u = self.value_field(*grid)?;
        let ux = self.velocity_field(*grid)?;
        Ok(Residuals {
            hj: hj_residual(&u, &m, self.theta),
            continuity: continuity_weak_residual(&m, &ux),
        })
    }

    /// Exact u_xx for theta = 2 at the points where x^2 - 8 R t equals each entry of `d2`
    /// (x > 0), evaluated from -4R / (sqrt(d2) (x - sqrt(d2))).
    pub fn uxx_near_interface(&self, t: T, d2: &[T]) -> Result<Vec<T>> {
        if !self.is_log_branch() {
            return Err(MfgError::domain("the closed-form interface Hessian needs theta = 2"));
        }
        Self::check_time(t)?;
        d2.iter()
            .map(|&d| {
                if !(d > T::zero()) {
                    return Err(MfgError::domain(format!("interface distance must be positive, got {d}")));
                }
                let x = (d + T::lit(8.0) * self.r * t).sqrt();
                let sd = d.sqrt();
                Ok(-T::lit(4.0) * self.r / (sd * (x - sd)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals<T> {
    pub hj: T,
    pub continuity: T,
}

/// max |-u_t + u_x^2 / 2 - m^theta| over nodes whose centered stencil lies in {m > 0}.
pub fn hj_residual<T: Real>(u: &ScalarField<T>, m: &ScalarField<T>, theta: T) -> T {
    let g = u.grid;
    let (hx, ht) = (g.hx(), g.ht());
    let two = T::lit(2.0);
    let mut worst = T::zero();
    for j in 1..g.nt - 1 {
        for i in 1..g.nx - 1 {
            let pos = [
                m.at(i, j),
                m.at(i - 1, j),
                m.at(i + 1, j),
                m.at(i, j - 1),
                m.at(i, j + 1),
            ]
            .iter()
            .all(|&v| v > T::zero());
            if !pos {
                continue;
            }
            let ut = (u.at(i, j + 1) - u.at(i, j - 1)) / (two * ht);
            let ux = (u.at(i + 1, j) - u.at(i - 1, j)) / (two * hx);
            let r = (-ut + ux * ux / two - m.at(i, j).powf(theta)).abs();
            worst = worst.max(r);
        }
    }
    worst
}

/// Smooth compactly supported bump exp(-1 / (1 - s^2)) on (-1, 1) and its derivative.
fn bump<T: Real>(s: T) -> (T, T) {
    let q = T::one() - s * s;
    if q <= T::zero() {
        return (T::zero(), T::zero());
    }
    let v = (-q.recip()).exp();
    (v, v * (-T::lit(2.0) * s / (q * q)))
}

/// Test functions phi(x, t) = b((x - xc) / rx) b((t - tc) / rt) spread over the grid interior.
pub fn test_function_library<T: Real>(grid: &SpaceTimeGrid<T>) -> Vec<[T; 4]> {
    let lx = grid.x_max - grid.x_min;
    let lt = grid.horizon;
    let mut lib = Vec::new();
    for &(fx, wx) in &[(0.5, 0.45), (0.3, 0.25), (0.7, 0.25), (0.15, 0.12), (0.85, 0.12), (0.2, 0.18), (0.8, 0.18)] {
        for &(ft, wt) in &[(0.5, 0.45), (0.3, 0.25), (0.7, 0.25)] {
            lib.push([
                grid.x_min + lx * T::lit(fx),
                lx * T::lit(wx),
                grid.t_start + lt * T::lit(ft),
                lt * T::lit(wt),
            ]);
        }
    }
    lib
}

/// max over the test library of |int int m (phi_t - u_x phi_x)|, trapezoid on the grid.
pub fn continuity_weak_residual<T: Real>(m: &ScalarField<T>, ux: &ScalarField<T>) -> T {
    let g = m.grid;
    let (hx, ht) = (g.hx(), g.ht());
    let mut worst = T::zero();
    for [xc, rx, tc, rt] in test_function_library(&g) {
        let mut acc = T::zero();
        for j in 0..g.nt {
            let (bt, dbt) = bump((g.t(j) - tc) / rt);
            if bt == T::zero() {
                continue;
            }
            for i in 0..g.nx {
                let mij = m.at(i, j);
                if mij == T::zero() {
                    continue;
                }
                let (bx, dbx) = bump((g.x(i) - xc) / rx);
                let phi_t = bx * dbt / rt;
                let phi_x = dbx * bt / rx;
                let w = if i == 0 || i + 1 == g.nx { T::lit(0.5) } else { T::one() }
                    * if j == 0 || j + 1 == g.nt { T::lit(0.5) } else { T::one() };
                acc += w * mij * (phi_t - ux.at(i, j) * phi_x);
            }
        }
        worst = worst.max((acc * hx * ht).abs());
    }
    worst
}

/// Unit mass check of a sampled profile row by the trapezoid rule.
pub fn trapezoid_mass<T: Real>(x: &[T], m: &[T]) -> T {
    trapezoid(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::function::beta::beta;

    #[test]
    fn radius_matches_beta_identity() {
        for theta in [0.5f64, 1.0, 2.0, 3.0, 1.7] {
            let r = normalization_radius::<f64>(theta).unwrap();
            let a = 2.0 / (2.0 + theta);
            let c = a * (1.0 - a) / 2.0;
            // R^(1/theta + 1/2) c^(-1/2) B(1/2, 1 + 1/theta) = 1
            let exact = (c.sqrt() / beta(0.5, 1.0 + 1.0 / theta)).powf(1.0 / (1.0 / theta + 0.5));
            assert!((r - exact).abs() < 1e-12 * exact, "theta {theta}: {r} vs {exact}");
        }
        assert!((normalization_radius::<f64>(1.0).unwrap() - 0.25f64.powf(2.0 / 3.0)).abs() < 1e-13);
        let r2 = normalization_radius::<f64>(2.0).unwrap();
        assert!((r2 - 1.0 / (std::f64::consts::PI * 2f64.sqrt())).abs() < 1e-13);
        assert!((normalization_radius::<f64>(1.0).unwrap() - 0.3969).abs() < 1e-4);
        assert!((r2 - 0.22508).abs() < 1e-5);
    }

    #[test]
    fn unit_mass_for_all_theta() {
        for theta in [0.5f64, 1.0, 2.0, 3.0] {
            let s = SelfSimilarModel::<f64>::new(theta).unwrap();
            for t in [0.3, 1.0, 2.5] {
                assert!((s.mass(t).unwrap() - 1.0).abs() < 1e-10, "theta {theta} t {t}");
            }
        }
    }

    #[test]
    fn domain_errors() {
        assert!(normalization_radius::<f64>(0.0).is_err());
        assert!(normalization_radius::<f64>(-1.0).is_err());
        let s = SelfSimilarModel::<f64>::new(1.0).unwrap();
        assert!(s.density(0.0, 0.0).is_err());
        assert!(s.value(0.0, -1.0).is_err());
        assert!(s.interface_time(0.0, 1.0).is_err());
        assert!(s.characteristic(10.0, 1.0, 2.0).is_err());
        assert!(s.uxx_near_interface(1.0, &[1.0]).is_err());
    }

    #[test]
    fn density_examples() {
        let s = SelfSimilarModel::<f64>::new(1.0).unwrap();
        assert_eq!(s.density(s.c_r * 1.01, 1.0).unwrap(), 0.0);
        assert!((s.density(0.0, 1.0).unwrap() - s.r).abs() < 1e-15);
        assert!((s.r - 0.3969).abs() < 1e-4);
    }

    #[test]
    fn value_examples() {
        let s1 = SelfSimilarModel::<f64>::new(1.0).unwrap();
        let s2 = SelfSimilarModel::<f64>::new(2.0).unwrap();
        assert_eq!(s2.value(0.0, 1.0).unwrap(), 0.0);
        // theta = 1: a = 2/3, 2a - 1 = 1/3, u(0, 1) = -R / (1/3)
        assert!((s1.value(0.0, 1.0).unwrap() + 3.0 * s1.r).abs() < 1e-14);
        assert!((s1.value(0.0, 1.0).unwrap() + 1.1906).abs() < 1e-4);
    }

    #[test]
    fn branches_agree_on_interface() {
        for theta in [0.5f64, 1.0, 2.0, 3.0] {
            let s = SelfSimilarModel::<f64>::new(theta).unwrap();
            for k in 0..100 {
                let t = 0.2 + 0.05 * k as f64;
                let x = s.support_radius(t);
                let inside = s.value_inside(x, t);
                let outside = s.value_outside(x, t).unwrap();
                assert!((inside - outside).abs() < 1e-9, "theta {theta} t {t}");
                let vin = -s.alpha * x / t;
                let vout = s.velocity_outside(x, t).unwrap();
                assert!((vin - vout).abs() < 1e-9, "theta {theta} t {t}: {vin} {vout}");
                // just outside, the gap shrinks like the square root of the distance
                let near = s.value(x + 1e-12, t).unwrap();
                assert!((near - inside).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn velocity_examples() {
        let s = SelfSimilarModel::<f64>::new(1.0).unwrap();
        assert_eq!(s.velocity(0.0, 1.0).unwrap(), 0.0);
        let v = s.velocity(s.c_r / 2.0, 1.0).unwrap();
        assert!((v + s.alpha * s.c_r / 2.0).abs() < 1e-15);
        let k = 2.0 * s.r / (s.c_r * (1.0 - s.alpha));
        assert!((s.alpha * s.c_r - k).abs() < 1e-14);
    }

    #[test]
    fn velocity_and_hessian_match_finite_differences() {
        for theta in [0.5f64, 1.0, 2.0, 3.0] {
            let s = SelfSimilarModel::<f64>::new(theta).unwrap();
            for &(x, t) in &[(3.0, 1.0), (-4.5, 2.0), (0.3, 1.0), (6.0, 0.7)] {
                let h = 1e-5;
                let fd = (s.value(x + h, t).unwrap() - s.value(x - h, t).unwrap()) / (2.0 * h);
                let v = s.velocity(x, t).unwrap();
                assert!((fd - v).abs() < 1e-6 * (1.0 + v.abs()), "theta {theta} ({x},{t})");
                let h = 1e-4;
                let fd2 = (s.velocity(x + h, t).unwrap() - s.velocity(x - h, t).unwrap()) / (2.0 * h);
                let w = s.hessian(x, t).unwrap();
                assert!((fd2 - w).abs() < 1e-5 * (1.0 + w.abs()), "theta {theta} ({x},{t})");
            }
        }
    }

    #[test]
    fn outside_value_solves_hamilton_jacobi_with_zero_density() {
        // outside the support m = 0, so -u_t + u_x^2 / 2 = 0
        for theta in [1.0f64, 2.0, 3.0] {
            let s = SelfSimilarModel::<f64>::new(theta).unwrap();
            let (x, t) = (s.support_radius(1.0) + 1.3, 1.0);
            let h = 1e-5;
            let ut = (s.value(x, t + h).unwrap() - s.value(x, t - h).unwrap()) / (2.0 * h);
            let ux = s.velocity(x, t).unwrap();
            assert!((-ut + ux * ux / 2.0).abs() < 1e-7, "theta {theta}");
        }
    }

    #[test]
    fn interface_time_theta2_closed_form() {
        let s = SelfSimilarModel::<f64>::new(2.0).unwrap();
        let t = 1.0;
        let x = 2.0 * s.c_r;
        // x sqrt(S) = C_R (t/2 + S/2): quadratic in sqrt(S)
        let root = (x - (x * x - s.c_r * s.c_r * t).sqrt()) / s.c_r;
        let exact = root * root;
        let got = s.interface_time(x, t).unwrap();
        assert!((got - exact).abs() < 1e-10);
        assert_eq!(s.interface_time(s.support_radius(t), t).unwrap(), t);
    }

    #[test]
    fn scaling_identity() {
        let s = SelfSimilarModel::<f64>::new(1.5).unwrap();
        for &(x, t, l) in &[(0.3f64, 1.0f64, 2.0f64), (-0.7, 0.5, 3.0), (1.1, 2.0, 0.5)] {
            let lhs = s.density(l.powf(s.alpha) * x, l * t).unwrap();
            let rhs = l.powf(-s.alpha) * s.density(x, t).unwrap();
            assert!((lhs - rhs).abs() < 1e-13);
        }
    }

    #[test]
    fn characteristic_examples() {
        let s = SelfSimilarModel::<f64>::new(1.0).unwrap();
        assert_eq!(s.characteristic(0.4, 1.0, 1.0).unwrap(), 0.4);
        assert_eq!(s.characteristic(0.0, 1.0, 3.0).unwrap(), 0.0);
        let x0 = s.support_radius(1.0);
        let x = s.characteristic(x0, 1.0, 2.0).unwrap();
        assert!((x - s.support_radius(2.0)).abs() < 1e-13);
    }

    #[test]
    fn interface_hessian_blows_up_like_inverse_sqrt() {
        let s = SelfSimilarModel::<f64>::new(2.0).unwrap();
        let ds: Vec<f64> = (0..12).map(|k| 1e-3 / 2f64.powi(k)).collect();
        let w = s.uxx_near_interface(1.0, &ds).unwrap();
        for k in 1..ds.len() {
            assert!(w[k].abs() >= 2f64.sqrt() * (1.0 - 1e-2) * w[k - 1].abs());
        }
        assert!(s.uxx_near_interface(1.0, &[1.0]).unwrap()[0] < 0.0);
        assert!(s.uxx_near_interface(1.0, &[0.0]).is_err());
        // agrees with the general outside formula -1 / (t - S)
        let x = (1.0 + 8.0 * s.r).sqrt();
        assert!((s.hessian(x, 1.0).unwrap() - s.uxx_near_interface(1.0, &[1.0]).unwrap()[0]).abs() < 1e-10);
    }

    fn admissible(s: &SelfSimilarModel<f64>, t: f64, q: f64) -> f64 {
        s.support_radius(t) * (1.0 + 4.0 * q)
    }

    proptest! {
        #[test]
        fn interface_time_bounds(theta in 0.3f64..4.0, t in 0.05f64..5.0, q in 0.0f64..1.0, sign in prop::bool::ANY) {
            let s = SelfSimilarModel::<f64>::new(theta).unwrap();
            let x = admissible(&s, t, q) * if sign { 1.0 } else { -1.0 };
            let sv = s.interface_time(x, t).unwrap();
            let d = s.delta(x, t).max(0.0);
            prop_assert!(sv > 0.0 && sv <= t);
            prop_assert!(s.interface_function(x, t, sv).abs() <= 1e-12 * s.c_r * t);
            let lower = s.lower_bound_constant() * (t / (x.abs() + d)).powf(1.0 / (1.0 - s.alpha));
            prop_assert!(sv >= lower * (1.0 - 1e-12));
            let gap = s.gap_bound_constant() * t.powf(1.0 - s.alpha / 2.0) * d.sqrt();
            prop_assert!(t - sv <= gap * (1.0 + 1e-12) + 1e-15 * t);
        }

        #[test]
        fn interface_time_nonincreasing_in_distance(theta in 0.3f64..4.0, t in 0.1f64..3.0, q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
            let s = SelfSimilarModel::<f64>::new(theta).unwrap();
            let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
            let s1 = s.interface_time(admissible(&s, t, lo), t).unwrap();
            let s2 = s.interface_time(admissible(&s, t, hi), t).unwrap();
            prop_assert!(s2 <= s1 * (1.0 + 1e-12));
        }
    }
}
