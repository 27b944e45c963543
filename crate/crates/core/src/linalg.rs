//! Periodic banded linear systems.
//!
//! Jacobians of the conservative schemes couple cell `j` only to cells
//! `j-k..=j+k` modulo `n`. Reordering the unknowns as `0, n-1, 1, n-2, ...`
//! folds the wrap-around entries into an ordinary band, which is then
//! factored by banded LU with partial pivoting.

use crate::error::{Error, Result};

/// Banded LU with partial pivoting (lower bandwidth `kl`, upper `ku`).
#[derive(Debug, Clone)]
struct BandLu {
    n: usize,
    kl: usize,
    // upper bandwidth after fill-in: ku + kl
    width: usize,
    // row i stores columns i - kl ..= i + ku + kl
    rows: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn index(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.width + 1) + (j + self.kl - i)
    }

    fn factor(n: usize, kl: usize, ku: usize, get: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let width = ku + kl;
        let stride = kl + width + 1;
        let mut lu = Self { n, kl, width, rows: vec![0.0; n * stride], pivots: vec![0; n] };
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n - 1);
            for j in lo..=hi {
                let idx = lu.index(i, j);
                lu.rows[idx] = get(i, j);
            }
        }
        for c in 0..n {
            let last_row = (c + kl).min(n - 1);
            let mut p = c;
            let mut best = lu.rows[lu.index(c, c)].abs();
            for r in c + 1..=last_row {
                let v = lu.rows[lu.index(r, c)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular);
            }
            lu.pivots[c] = p;
            let last_col = (c + width).min(n - 1);
            if p != c {
                for j in c..=last_col {
                    let (a, b) = (lu.index(c, j), lu.index(p, j));
                    lu.rows.swap(a, b);
                }
            }
            let diag = lu.rows[lu.index(c, c)];
            for r in c + 1..=last_row {
                let lidx = lu.index(r, c);
                let l = lu.rows[lidx] / diag;
                lu.rows[lidx] = l;
                if l != 0.0 {
                    for j in c + 1..=last_col {
                        let u = lu.rows[lu.index(c, j)];
                        let t = lu.index(r, j);
                        lu.rows[t] -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for c in 0..n {
            let p = self.pivots[c];
            if p != c {
                b.swap(c, p);
            }
            let last_row = (c + self.kl).min(n - 1);
            for r in c + 1..=last_row {
                b[r] -= self.rows[self.index(r, c)] * b[c];
            }
        }
        for i in (0..n).rev() {
            let last_col = (i + self.width).min(n - 1);
            let mut acc = b[i];
            for j in i + 1..=last_col {
                acc -= self.rows[self.index(i, j)] * b[j];
            }
            b[i] = acc / self.rows[self.index(i, i)];
        }
    }
}

/// `n x n` matrix whose entries vanish unless the periodic distance between
/// row and column is at most `k`.
#[derive(Debug, Clone)]
pub struct CyclicBanded {
    n: usize,
    k: usize,
    // row j stores offsets -k..=k
    data: Vec<f64>,
}

impl CyclicBanded {
    pub fn zeros(n: usize, k: usize) -> Self {
        assert!(n > 2 * k + 1, "grid too small for bandwidth");
        Self { n, k, data: vec![0.0; n * (2 * k + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds `v` at row `i`, column `i + offset` (mod n).
    pub fn add(&mut self, i: usize, offset: isize, v: f64) {
        debug_assert!(offset.unsigned_abs() <= self.k);
        let idx = i * (2 * self.k + 1) + (offset + self.k as isize) as usize;
        self.data[idx] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let n = self.n as isize;
        let mut off = j as isize - i as isize;
        if off > n / 2 {
            off -= n;
        } else if off < -(n / 2) {
            off += n;
        }
        if off.unsigned_abs() > self.k {
            return 0.0;
        }
        self.data[i * (2 * self.k + 1) + (off + self.k as isize) as usize]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let (n, k) = (self.n, self.k as isize);
        (0..n)
            .map(|i| {
                (-k..=k)
                    .map(|o| {
                        let j = (i as isize + o).rem_euclid(n as isize) as usize;
                        self.data[i * (2 * self.k + 1) + (o + k) as usize] * x[j]
                    })
                    .sum()
            })
            .collect()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let order = interleaved(n);
        let band = 2 * self.k + 1;
        let lu = BandLu::factor(n, band, band, |i, j| self.get(order[i], order[j]))?;
        let mut y: Vec<f64> = order.iter().map(|&i| b[i]).collect();
        lu.solve_in_place(&mut y);
        let mut x = vec![0.0; n];
        for (pos, &i) in order.iter().enumerate() {
            x[i] = y[pos];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        Ok(x)
    }
}

/// Ordering `0, n-1, 1, n-2, ...` under which periodic bandwidth `k` becomes
/// ordinary bandwidth at most `2k + 1`.
fn interleaved(n: usize) -> Vec<usize> {
    (0..n).map(|t| if t % 2 == 0 { t / 2 } else { n - 1 - t / 2 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn random_system(n: usize, k: usize, seed: &[f64]) -> CyclicBanded {
        let mut a = CyclicBanded::zeros(n, k);
        let mut s = 0;
        for i in 0..n {
            for o in -(k as isize)..=(k as isize) {
                let v = seed[s % seed.len()] * ((i * 7 + s) % 5) as f64 * 0.3;
                s += 1;
                a.add(i, o, if o == 0 { v + 0.1 } else { v });
            }
        }
        a
    }

    fn check_against_dense(a: &CyclicBanded, b: &[f64]) {
        let n = a.n();
        let dense = DMatrix::from_fn(n, n, |i, j| a.get(i, j));
        let x = a.solve(b).unwrap();
        let residual = &dense * DVector::from_column_slice(&x) - DVector::from_column_slice(b);
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(residual.amax() < 1e-9 * scale, "residual {}", residual.amax());
    }

    #[test]
    fn periodic_laplacian_shifted() {
        for (n, k) in [(8, 1), (20, 1), (17, 2), (64, 2)] {
            let mut a = CyclicBanded::zeros(n, k);
            for i in 0..n {
                a.add(i, 0, 3.0);
                a.add(i, -1, -1.0);
                a.add(i, 1, -1.0);
                if k == 2 {
                    a.add(i, 2, 0.25);
                    a.add(i, -2, 0.25);
                }
            }
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            check_against_dense(&a, &b);
        }
    }

    #[test]
    fn needs_pivoting() {
        // zero diagonal forces row exchanges inside the band
        let n = 12;
        let mut a = CyclicBanded::zeros(n, 2);
        for i in 0..n {
            a.add(i, 1, 1.0);
            a.add(i, -1, 2.0);
            a.add(i, 2, 0.5);
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        check_against_dense(&a, &b);
    }

    #[test]
    fn interleaving_bounds_bandwidth() {
        for n in 4..40 {
            let order = interleaved(n);
            let mut pos = vec![0; n];
            for (p, &i) in order.iter().enumerate() {
                pos[i] = p;
            }
            for i in 0..n {
                for d in 1..=(n / 2).min(3) {
                    let j = (i + d) % n;
                    assert!(pos[i].abs_diff(pos[j]) <= 2 * d + 1, "n={n} i={i} d={d}");
                }
            }
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = CyclicBanded::zeros(10, 1);
        assert!(a.solve(&[1.0; 10]).is_err());
    }

    proptest! {
        #[test]
        fn agrees_with_dense_lu(
            seed in proptest::collection::vec(-2.0f64..2.0, 5..40),
            n in 6usize..60,
            k in 1usize..3,
        ) {
            prop_assume!(n > 2 * k + 1);
            let a = random_system(n, k, &seed);
            let dense = DMatrix::from_fn(n, n, |i, j| a.get(i, j));
            prop_assume!(dense.clone().lu().determinant().abs() > 1e-6);
            let cond = dense.clone().svd(false, false).singular_values;
            prop_assume!(cond.max() / cond.min() < 1e8);
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
            let x = a.solve(&b);
            prop_assume!(x.is_ok());
            check_against_dense(&a, &b);
        }
    }
}
