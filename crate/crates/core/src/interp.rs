//! Monotone piecewise cubic Hermite interpolation (Fritsch-Carlson slopes).

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct Pchip<T> {
    x: Vec<T>,
    y: Vec<T>,
    d: Vec<T>,
}

impl<T: Real> Pchip<T> {
    /// `x` strictly increasing, at least two nodes.
    pub fn new(x: &[T], y: &[T]) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n, "pchip needs matching nodes");
        let h: Vec<T> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
        let del: Vec<T> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![T::zero(); n];
        if n == 2 {
            d[0] = del[0];
            d[1] = del[0];
        } else {
            let two = T::lit(2.0);
            for k in 1..n - 1 {
                if del[k - 1] * del[k] > T::zero() {
                    let w1 = two * h[k] + h[k - 1];
                    let w2 = h[k] + two * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], del[0], del[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Pchip {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        }
    }

    /// Evaluates the interpolant; outside the node range the end values are held constant.
    pub fn eval(&self, xq: T) -> T {
        let n = self.x.len();
        if xq <= self.x[0] {
            return self.y[0];
        }
        if xq >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let k = self.x.partition_point(|&v| v <= xq).clamp(1, n - 1) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (xq - self.x[k]) / h;
        let one = T::one();
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = (one + two * s) * (one - s) * (one - s);
        let h10 = s * (one - s) * (one - s);
        let h01 = s * s * (three - two * s);
        let h11 = s * s * (s - one);
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

fn end_slope<T: Real>(h0: T, h1: T, del0: T, del1: T) -> T {
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let d = ((two * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d * del0 <= T::zero() {
        T::zero()
    } else if del0 * del1 <= T::zero() && d.abs() > (three * del0).abs() {
        three * del0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_nodes_and_is_monotone() {
        let x: Vec<f64> = (0..12).map(|k| (k as f64).powf(1.3)).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sqrt() + (v * 0.2).floor()).collect();
        let p = Pchip::new(&x, &y);
        for k in 0..x.len() {
            assert!((p.eval(x[k]) - y[k]).abs() < 1e-14);
        }
        let mut prev = p.eval(0.0);
        for k in 1..2000 {
            let v = p.eval(x[11] * k as f64 / 2000.0);
            assert!(v >= prev - 1e-14);
            prev = v;
        }
    }

    #[test]
    fn reproduces_lines() {
        let x = [0.0, 0.5, 1.5, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let p = Pchip::new(&x, &y);
        assert!((p.eval(2.7) - 7.1).abs() < 1e-12);
    }
}
