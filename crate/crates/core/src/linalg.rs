//! Banded matrices with LU factorization and partial pivoting.

use crate::error::{MfgError, Result};
use crate::scalar::Real;

/// Square matrix with `kl` sub- and `ku` super-diagonals. Storage reserves `kl` extra
/// super-diagonals for the fill produced by row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![T::zero(); n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku + self.kl
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            T::zero()
        }
    }

    /// Adds `v` to entry (i, j). Panics if (i, j) lies outside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    /// Multiplies every entry of row `i` by `s`.
    pub fn scale_row(&mut self, i: usize, s: T) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku + self.kl).min(self.n - 1);
        for j in lo..=hi {
            let k = self.slot(i, j);
            self.data[k] *= s;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut s = T::zero();
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                s += self.data[self.slot(i, j)] * *xj;
            }
            *yi = s;
        }
        y
    }

    /// LU factorization with partial pivoting, consuming the matrix.
    pub fn factor(mut self) -> Result<BandLu<T>> {
        let n = self.n;
        let kl = self.kl;
        let ku_f = self.ku + self.kl;
        let mut piv = vec![0usize; n];
        let mut scale = T::zero();
        for v in &self.data {
            scale = scale.max(v.abs());
        }
        let tiny = scale * T::epsilon() * T::lit(1e-3);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) || !best.is_finite() {
                return Err(MfgError::Singular(k));
            }
            piv[k] = p;
            let jmax = (k + ku_f).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last {
                let sik = self.slot(i, k);
                let l = self.data[sik] / pivot;
                self.data[sik] = l;
                if l != T::zero() {
                    let rk = self.slot(k, k);
                    let ri = self.slot(i, k);
                    for off in 1..=(jmax - k) {
                        let u = self.data[rk + off];
                        self.data[ri + off] -= l * u;
                    }
                }
            }
        }
        // the multipliers of column k, stored contiguously for the forward substitution
        let mut lower = vec![T::zero(); n * kl];
        for k in 0..n {
            for i in k + 1..=(k + kl).min(n - 1) {
                lower[k * kl + (i - k - 1)] = self.data[self.slot(i, k)];
            }
        }
        Ok(BandLu { m: self, piv, lower })
    }
}

/// Factored band matrix; solves can be repeated for many right-hand sides.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    m: BandMatrix<T>,
    piv: Vec<usize>,
    lower: Vec<T>,
}

impl<T: Real> BandLu<T> {
    pub fn dim(&self) -> usize {
        self.m.n
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let a = &self.m;
        let n = a.n;
        let kl = a.kl;
        let ku_f = a.ku + a.kl;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != T::zero() {
                let len = (k + kl).min(n - 1) - k;
                let l = &self.lower[k * kl..k * kl + len];
                for (bi, &li) in b[k + 1..k + 1 + len].iter_mut().zip(l) {
                    *bi -= li * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let len = (k + ku_f).min(n - 1) - k;
            let rk = a.slot(k, k);
            let u = &a.data[rk + 1..rk + 1 + len];
            let s = u.iter().zip(&b[k + 1..k + 1 + len]).fold(b[k], |s, (&uv, &bv)| s - uv * bv);
            b[k] = s / a.data[rk];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_residual(a: &BandMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
        a.mul_vec(x)
            .iter()
            .zip(b)
            .fold(0.0, |m, (p, q)| m.max((p - q).abs()))
    }

    #[test]
    fn tridiagonal_poisson() {
        let n = 50;
        let mut a = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.add(i, i + 1, -1.0);
            }
        }
        let b = vec![1.0; n];
        let lu = a.clone().factor().unwrap();
        let x = lu.solve(&b);
        assert!(dense_residual(&a, &x, &b) < 1e-10);
    }

    #[test]
    fn needs_pivoting() {
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.set(0, 0, 0.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 0.0);
        a.set(1, 2, 2.0);
        a.set(2, 1, 3.0);
        a.set(2, 2, 1.0);
        let b = [1.0, 2.0, 3.0];
        let x = a.clone().factor().unwrap().solve(&b);
        assert!(dense_residual(&a, &x, &b) < 1e-12);
    }

    #[test]
    fn singular_is_reported() {
        let a = BandMatrix::<f64>::zeros(4, 1, 1);
        assert!(matches!(a.factor(), Err(MfgError::Singular(0))));
    }

    proptest! {
        #[test]
        fn random_banded_systems(seed in prop::collection::vec(-1.0f64..1.0, 40 * 9), kl in 0usize..4, ku in 0usize..4) {
            let n = 40;
            let mut a = BandMatrix::zeros(n, kl, ku);
            let mut k = 0;
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    a.set(i, j, seed[k % seed.len()]);
                    k += 1;
                }
                a.add(i, i, 4.0 * (1.0 + seed[i].abs()) * if i % 2 == 0 { 1.0 } else { -1.0 });
            }
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let x = a.clone().factor().unwrap().solve(&b);
            prop_assert!(dense_residual(&a, &x, &b) < 1e-9);
        }
    }
}
