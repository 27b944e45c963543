//! Grid densities on the periodic unit interval and the discrete difference
//! operators shared by the energies and the solvers.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerance on `|sum(values) * h - 1|` for a valid density.
pub const MASS_TOL: f64 = 1e-12;

/// Non-negative cell averages on `n` uniform cells of `[0, 1)` with unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    values: Vec<f64>,
}

impl DensityField {
    /// Wraps `values`, checking non-negativity and unit mass.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        validate_values(&values)?;
        let mass = mass_of(&values);
        if (mass - 1.0).abs() > MASS_TOL {
            return invalid(format!("mass {mass} differs from 1"));
        }
        Ok(Self { values })
    }

    /// Rescales non-negative `values` to unit mass.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        validate_values(&values)?;
        let mass = mass_of(&values);
        if mass <= 0.0 {
            return invalid("zero-mass field");
        }
        for v in &mut values {
            *v /= mass;
        }
        Ok(Self { values })
    }

    pub fn uniform(n: usize) -> Self {
        Self { values: vec![1.0; n.max(1)] }
    }

    /// Samples `f` at cell centres and rescales to unit mass.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n == 0 {
            return invalid("empty grid");
        }
        let h = 1.0 / n as f64;
        Self::normalized((0..n).map(|j| f((j as f64 + 0.5) * h)).collect())
    }

    /// Builds a density from cell masses that already sum to one up to
    /// roundoff; the residual is removed by rescaling.
    pub(crate) fn from_masses(masses: Vec<f64>) -> Self {
        let n = masses.len();
        let total: f64 = masses.iter().sum();
        let values = masses.into_iter().map(|m| m.max(0.0) * n as f64 / total).collect();
        Self { values }
    }

    /// Skips validation; callers guarantee non-negativity and unit mass.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Centre of cell `j`.
    pub fn x(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h()
    }

    pub fn mass(&self) -> f64 {
        mass_of(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cumulative masses `C_0 = 0, C_1, ..., C_n = 1` at the cell boundaries.
    pub fn cumulative(&self) -> Vec<f64> {
        let h = self.h();
        let mut c = Vec::with_capacity(self.n() + 1);
        let mut acc = 0.0;
        c.push(0.0);
        for v in &self.values {
            acc += v * h;
            c.push(acc);
        }
        let total = acc;
        for ci in &mut c {
            *ci /= total;
        }
        c
    }

    /// CDF lifted to the real line: `F(x + 1) = F(x) + 1`.
    pub fn cover_cdf(&self, x: f64) -> f64 {
        let c = self.cumulative();
        cover_cdf_with(&self.values, &c, 1.0 / self.mass(), x)
    }

    /// Exact translation by `s` of the piecewise-constant density.
    pub fn translated(&self, s: f64) -> Self {
        let c = self.cumulative();
        let n = self.n();
        let h = self.h();
        let inv = 1.0 / self.mass();
        let masses = (0..n)
            .map(|j| {
                let a = j as f64 * h - s;
                cover_cdf_with(&self.values, &c, inv, a + h) - cover_cdf_with(&self.values, &c, inv, a)
            })
            .collect();
        Self::from_masses(masses)
    }

    /// L1 distance between two fields on the same grid.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.h()
    }
}

fn validate_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return invalid("empty grid");
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return invalid(format!("non-finite density value {v}"));
    }
    if let Some(v) = values.iter().find(|v| **v < 0.0) {
        return invalid(format!("negative density value {v}"));
    }
    Ok(())
}

fn mass_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn cover_cdf_with(values: &[f64], cumulative: &[f64], inv_total: f64, x: f64) -> f64 {
    let n = values.len();
    let h = 1.0 / n as f64;
    let wraps = x.floor();
    let frac = x - wraps;
    let j = ((frac / h) as usize).min(n - 1);
    let inside = cumulative[j] + values[j] * inv_total * (frac - j as f64 * h);
    wraps + inside.min(1.0)
}

/// Centred first difference `(v[j+1] - v[j-1]) / 2h`.
pub fn centered_diff(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|j| (v[(j + 1) % n] - v[(j + n - 1) % n]) / (2.0 * h))
        .collect()
}

/// Forward difference `(v[j+1] - v[j]) / h`.
pub fn forward_diff(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|j| (v[(j + 1) % n] - v[j]) / h).collect()
}

/// Three-point periodic Laplacian.
pub fn laplacian(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|j| (v[(j + 1) % n] - 2.0 * v[j] + v[(j + n - 1) % n]) / (h * h))
        .collect()
}
