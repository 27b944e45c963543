//! Energies, chemical potential and slope surrogates on grid densities.

use serde::{Deserialize, Serialize};

use crate::field::{centered_diff, laplacian, DensityField};
use crate::potential::{ConvexEnvelope, ScalarProfile};

/// Relative vacuum threshold used by [`slope_eps`] when no floor is given.
pub const DEFAULT_FLOOR_FACTOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_eps: f64,
    pub e_star: f64,
    pub slope_eps: f64,
    pub slope_star: f64,
    pub gap: f64,
}

impl EnergyReport {
    pub fn evaluate(f: &DensityField, eps: f64, spec: &dyn ScalarProfile, env: &ConvexEnvelope) -> Self {
        let e_eps = energy_eps(f, eps, spec);
        let e_star = energy_star(f, env);
        Self {
            e_eps,
            e_star,
            slope_eps: slope_eps(f, eps, spec, default_floor(f)),
            slope_star: slope_star(f, env),
            gap: e_eps - e_star,
        }
    }
}

pub fn default_floor(f: &DensityField) -> f64 {
    DEFAULT_FLOOR_FACTOR * f.max()
}

/// `sum_j [ (eps^2/2) ((f_{j+1} - f_j)/h)^2 + W(f_j) ] h`.
pub fn energy_eps(f: &DensityField, eps: f64, spec: &dyn ScalarProfile) -> f64 {
    let v = f.values();
    let n = v.len();
    let h = f.h();
    let mut dirichlet = 0.0;
    let mut bulk = 0.0;
    for j in 0..n {
        let d = (v[(j + 1) % n] - v[j]) / h;
        dirichlet += d * d;
        bulk += spec.value(v[j]);
    }
    (0.5 * eps * eps * dirichlet + bulk) * h
}

/// Discrete `|f|_{H^1}^2` with forward differences.
pub fn dirichlet_seminorm_sq(f: &DensityField) -> f64 {
    let v = f.values();
    let n = v.len();
    let h = f.h();
    (0..n).map(|j| ((v[(j + 1) % n] - v[j]) / h).powi(2)).sum::<f64>() * h
}

pub fn energy_star(f: &DensityField, env: &ConvexEnvelope) -> f64 {
    f.values().iter().map(|&y| env.eval_wss(y)).sum::<f64>() * f.h()
}

/// `W'(f) - eps^2 f_xx`.
pub fn chemical_potential(f: &DensityField, eps: f64, spec: &dyn ScalarProfile) -> Vec<f64> {
    let lap = laplacian(f.values(), f.h());
    f.values()
        .iter()
        .zip(lap)
        .map(|(&y, l)| spec.slope(y) - eps * eps * l)
        .collect()
}

/// `Q'(f) + (3 eps^2 / 2) f_x^2 - eps^2 (f f_x)_x` with centred differences.
pub fn g_field(f: &DensityField, eps: f64, spec: &dyn ScalarProfile) -> Vec<f64> {
    let h = f.h();
    let v = f.values();
    let fx = centered_diff(v, h);
    let flux: Vec<f64> = v.iter().zip(&fx).map(|(a, b)| a * b).collect();
    let dflux = centered_diff(&flux, h);
    let e2 = eps * eps;
    (0..v.len())
        .map(|j| v[j] * spec.slope(v[j]) - spec.value(v[j]) + 1.5 * e2 * fx[j] * fx[j] - e2 * dflux[j])
        .collect()
}

/// `sqrt( sum_{f_j > floor} f_j (D e)_j^2 h )` with `e` the chemical potential.
pub fn slope_eps(f: &DensityField, eps: f64, spec: &dyn ScalarProfile, floor: f64) -> f64 {
    let de = centered_diff(&chemical_potential(f, eps, spec), f.h());
    weighted_norm(f, &de, floor)
}

/// `sqrt( sum_j f_j (D W**'(f))_j^2 h )`.
pub fn slope_star(f: &DensityField, env: &ConvexEnvelope) -> f64 {
    let w1: Vec<f64> = f.values().iter().map(|&y| env.eval_wss1(y)).collect();
    weighted_norm(f, &centered_diff(&w1, f.h()), f64::NEG_INFINITY)
}

fn weighted_norm(f: &DensityField, g: &[f64], floor: f64) -> f64 {
    f.values()
        .iter()
        .zip(g)
        .filter(|(&y, _)| y > floor)
        .map(|(&y, d)| y * d * d * f.h())
        .sum::<f64>()
        .sqrt()
}
