//! Small dense-band linear algebra used by the implicit diffusion, the
//! stationary solver and the shift-invert eigensolver.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored by rows.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "({i}, {j}) outside the band");
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let s = self.slot(i, j);
        self.data[s] += value;
    }

    pub fn shift_diagonal(&mut self, shift: f64) {
        for i in 0..self.n {
            let s = self.slot(i, i);
            self.data[s] += shift;
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let row = &self.data[i * self.width..(i + 1) * self.width];
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += row[j + self.kl - i] * x[j];
            }
            *yi = acc;
        });
    }

    /// Column sums (used to check conservation of assembled operators).
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for (j, sj) in s.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *sj += self.data[i * self.width + (j + self.kl - i)];
            }
        }
        s
    }

    /// In-place LU factorization without pivoting.
    ///
    /// Only valid for matrices where elimination needs no row exchanges, such
    /// as column diagonally dominant ones; all operators assembled in this
    /// crate are of that kind after a nonnegative diagonal shift.
    pub fn factorize(mut self) -> Result<BandLu> {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if !(pivot.abs() > scale * 1e-300) || !pivot.is_finite() {
                return Err(Error::Factorization { row: k });
            }
            let jmax = (k + ku).min(n - 1);
            let imax = (k + kl).min(n - 1);
            let (head, tail) = self.data.split_at_mut((k + 1) * w);
            let pivot_row = &head[k * w + kl..k * w + kl + (jmax - k) + 1];
            for (r, row) in tail[..(imax - k) * w].chunks_exact_mut(w).enumerate() {
                let i = k + 1 + r;
                let lik_slot = k + kl - i;
                let l = row[lik_slot] / pivot;
                row[lik_slot] = l;
                if l != 0.0 {
                    // row[j + kl - i] for j in k+1..=jmax
                    let dst = &mut row[lik_slot + 1..lik_slot + 1 + (jmax - k)];
                    for (d, p) in dst.iter_mut().zip(&pivot_row[1..]) {
                        *d -= l * p;
                    }
                }
            }
        }
        Ok(BandLu { m: self })
    }
}

/// LU factors of a [`BandMatrix`] (unit lower triangle implicit).
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    pub fn n(&self) -> usize {
        self.m.n
    }

    /// Overwrites `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let BandMatrix { n, kl, ku, width: w, ref data } = self.m;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let row = &data[i * w..(i + 1) * w];
            let mut acc = b[i];
            for j in lo..i {
                acc -= row[j + kl - i] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + ku).min(n - 1);
            let row = &data[i * w..(i + 1) * w];
            let mut acc = b[i];
            for j in i + 1..=hi {
                acc -= row[j + kl - i] * b[j];
            }
            b[i] = acc / row[kl];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Pre-factorized constant tridiagonal system (Thomas algorithm).
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    upper_mod: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl Tridiagonal {
    /// `lower[i]` multiplies `x[i-1]` in row `i`, `upper[i]` multiplies `x[i+1]`.
    pub fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Self {
        let n = diag.len();
        assert!(n > 0 && lower.len() == n && upper.len() == n);
        let mut upper_mod = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let denom = diag[i] - if i > 0 { lower[i] * prev } else { 0.0 };
            inv_denom[i] = 1.0 / denom;
            prev = upper[i] * inv_denom[i];
            upper_mod[i] = prev;
        }
        Self {
            lower: lower.to_vec(),
            upper_mod,
            inv_denom,
        }
    }

    pub fn solve_in_place(&self, d: &mut [f64]) {
        let n = self.inv_denom.len();
        assert_eq!(d.len(), n);
        d[0] *= self.inv_denom[0];
        for i in 1..n {
            d[i] = (d[i] - self.lower[i] * d[i - 1]) * self.inv_denom[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.upper_mod[i] * d[i + 1];
        }
    }
}

/// Least-squares line `y ≈ intercept + slope · x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Least-squares quadratic `y ≈ c0 + c1 x + c2 x²`, returned as `[c0, c1, c2]`.
pub fn quadratic_fit(x: &[f64], y: &[f64]) -> [f64; 3] {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let row = nalgebra::Vector3::new(1.0, xi, xi * xi);
        ata += row * row.transpose();
        aty += row * yi;
    }
    let c = ata
        .lu()
        .solve(&aty)
        .unwrap_or_else(|| nalgebra::Vector3::new(f64::NAN, f64::NAN, f64::NAN));
    [c[0], c[1], c[2]]
}
