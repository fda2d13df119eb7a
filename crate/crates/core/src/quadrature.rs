//! Adaptive Simpson quadrature.

use crate::scalar::Real;

/// Integrates `f` over [a, b] to absolute tolerance `tol` (recursion depth capped at 60).
pub fn adaptive_simpson<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, tol: T) -> T {
    let two = T::lit(2.0);
    let c = (a + b) / two;
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = simpson(a, b, fa, fc, fb);
    recurse(f, a, b, fa, fb, fc, whole, tol, 60)
}

fn simpson<T: Real>(a: T, b: T, fa: T, fc: T, fb: T) -> T {
    (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fc + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<T: Real, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    fa: T,
    fb: T,
    fc: T,
    whole: T,
    tol: T,
    depth: u32,
) -> T {
    let two = T::lit(2.0);
    let c = (a + b) / two;
    let (d, e) = ((a + c) / two, (c + b) / two);
    let (fd, fe) = (f(d), f(e));
    let left = simpson(a, c, fa, fd, fc);
    let right = simpson(c, b, fc, fe, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= T::lit(15.0) * tol || (b - a).abs() < T::epsilon() * T::lit(8.0) {
        return left + right + delta / T::lit(15.0);
    }
    recurse(f, a, c, fa, fc, fd, left, tol / two, depth - 1)
        + recurse(f, c, b, fc, fb, fe, right, tol / two, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_singular_integrands() {
        let v = adaptive_simpson(&|x: f64| x * x * x - x, 0.0, 2.0, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
        let v = adaptive_simpson(&|x: f64| (1.0 - x * x).max(0.0).sqrt(), -1.0, 1.0, 1e-12);
        assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    }
}
