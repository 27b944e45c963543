//! Oscillation analysis, local `H¹` control, energy audits and related
//! checks on densities and trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{centered_diff, DensityField};
use crate::functionals::{energy_eps, energy_star};
use crate::potential::{distance_to_sigma, ConvexEnvelope, PotentialSpec, UnstableSet};
use crate::trajectory::{FlowKind, TrajectoryRecord};
use crate::wasserstein1d::{default_m, w2_periodic};

/// Pairs kept verbatim in a report; the total count is always exact.
const MAX_LISTED_VIOLATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub x: f64,
    pub y: f64,
    pub osc: f64,
    pub max_dist_to_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrinkleReport {
    pub eta: f64,
    pub delta: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub violations: Vec<Violation>,
    pub violation_count: usize,
    /// Mass of cells whose `delta`-window oscillates by at least `eta`.
    pub oscillating_mass_fraction: f64,
    /// Part of that mass sitting at distance more than `eta` from Σ.
    pub off_sigma_oscillating_mass: f64,
    pub sigma_localized: bool,
}

fn window_cells(delta: f64, h: f64) -> usize {
    ((delta / h) - 1e-9).ceil().max(1.0) as usize - 1
}

/// Pairs `(x, y)` with `0 < y - x < delta`, slopes below `L` at both ends,
/// oscillation at least `eta` and some point of `[x, y]` at distance at
/// least `eta` from Σ.
pub fn wrinkling_report(f: &DensityField, sigma: &UnstableSet, eta: f64, delta: f64, l: f64) -> WrinkleReport {
    let v = f.values();
    let n = v.len();
    let h = f.h();
    let slopes = centered_diff(v, h);
    let dist: Vec<f64> = v.iter().map(|&y| distance_to_sigma(y.max(0.0), sigma)).collect();
    let reach = window_cells(delta, h).min(n - 1);

    let mut violations = Vec::new();
    let mut count = 0;
    for i in 0..n {
        if slopes[i].abs() >= l {
            continue;
        }
        let mut max_dist = dist[i];
        for d in 1..=reach {
            let j = (i + d) % n;
            max_dist = max_dist.max(dist[j]);
            if slopes[j].abs() >= l {
                continue;
            }
            let osc = (v[i] - v[j]).abs();
            if osc >= eta && max_dist >= eta {
                count += 1;
                if violations.len() < MAX_LISTED_VIOLATIONS {
                    violations.push(Violation { x: f.x(i), y: f.x(i) + d as f64 * h, osc, max_dist_to_sigma: max_dist });
                }
            }
        }
    }

    let profile = oscillation_profile(f, delta);
    let half = window_cells(delta, h) / 2;
    let mut oscillating = 0.0;
    let mut off_sigma = 0.0;
    let mut localized = true;
    for j in 0..n {
        if profile[j] < eta {
            continue;
        }
        oscillating += v[j] * h;
        if dist[j] > eta {
            off_sigma += v[j] * h;
        }
        let near = (0..=2 * half).map(|o| dist[(j + n + o - half) % n]).fold(f64::INFINITY, f64::min);
        if near >= eta {
            localized = false;
        }
    }
    WrinkleReport {
        eta,
        delta,
        l,
        violations,
        violation_count: count,
        oscillating_mass_fraction: oscillating,
        off_sigma_oscillating_mass: off_sigma,
        sigma_localized: localized,
    }
}

/// Largest candidate `delta` whose report has no violations on every field,
/// with `L = 4 M / delta` and `M` the largest value in the family.
pub fn calibrate_delta(fields: &[&DensityField], sigma: &UnstableSet, eta: f64, candidates: &[f64]) -> Option<f64> {
    let big_m = fields.iter().map(|f| f.max()).fold(0.0, f64::max);
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .into_iter()
        .find(|&delta| fields.iter().all(|f| wrinkling_report(f, sigma, eta, delta, 4.0 * big_m / delta).violation_count == 0))
}

/// Max minus min of `f` over the centred window of width `window`.
pub fn oscillation_profile(f: &DensityField, window: f64) -> Vec<f64> {
    let v = f.values();
    let n = v.len();
    let half = ((window / f.h()) / 2.0).floor() as usize;
    let half = half.min(n / 2);
    (0..n)
        .map(|j| {
            let (lo, hi) = (0..=2 * half)
                .map(|o| v[(j + n + o - half) % n])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
            hi - lo
        })
        .collect()
}

/// `Σ_{j in region} ((f_{j+1} - f_j)/h)^2 h` over cells whose centre lies in
/// one of the intervals.
pub fn h1_local(f: &DensityField, region: &[(f64, f64)]) -> Result<f64> {
    if region.iter().any(|&(a, b)| !(0.0 <= a && a <= b && b <= 1.0)) {
        return invalid("regions must be sub-intervals of [0, 1]");
    }
    let v = f.values();
    let n = v.len();
    let h = f.h();
    Ok((0..n)
        .filter(|&j| region.iter().any(|&(a, b)| (a..=b).contains(&f.x(j))))
        .map(|j| ((v[(j + 1) % n] - v[j]) / h).powi(2) * h)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub times: Vec<f64>,
    /// `E(0) - E(t) - (1/2)∫ slope^2 - (1/2)∫ speed^2`.
    pub residuals: Vec<f64>,
    pub e0: f64,
    pub min_residual: f64,
    pub max_abs_residual: f64,
}

impl AuditReport {
    /// Inequality holds at every time up to `tol`.
    pub fn satisfied(&self, tol: f64) -> bool {
        self.min_residual >= -tol
    }
}

/// Integrated energy balance along a trajectory. The limit flow is audited
/// with `E**` and `|∇E**|`, every other flow with `E^ε` and its slope.
pub fn energy_dissipation_audit(traj: &TrajectoryRecord) -> Result<AuditReport> {
    let k = traj.len();
    if k < 2 {
        return invalid("audit needs at least two snapshots");
    }
    if traj.reports.len() != k {
        return invalid("trajectory is missing energy reports");
    }
    if traj.speeds.len() != k {
        return invalid("trajectory is missing metric speeds");
    }
    let (energy, slope): (Vec<f64>, Vec<f64>) = match traj.kind {
        FlowKind::Limit => traj.reports.iter().map(|r| (r.e_star, r.slope_star)).unzip(),
        _ => traj.reports.iter().map(|r| (r.e_eps, r.slope_eps)).unzip(),
    };
    let e0 = energy[0];
    let mut residuals = vec![0.0];
    let mut dissipated = 0.0;
    for i in 1..k {
        let dt = traj.times[i] - traj.times[i - 1];
        dissipated += 0.25 * dt * (slope[i - 1].powi(2) + slope[i].powi(2));
        dissipated += 0.5 * dt * traj.speeds[i].powi(2);
        residuals.push(e0 - energy[i] - dissipated);
    }
    let min_residual = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let max_abs_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(AuditReport { times: traj.times.clone(), residuals, e0, min_residual, max_abs_residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreparednessRow {
    pub eps: f64,
    pub d2: f64,
    pub energy_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preparedness {
    pub rows: Vec<PreparednessRow>,
    pub well_prepared: bool,
}

/// Thresholds on the last row of a well-preparedness sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreparednessTol {
    pub d2: f64,
    pub energy_gap: f64,
}

impl Default for PreparednessTol {
    fn default() -> Self {
        Self { d2: 1e-2, energy_gap: 1e-3 }
    }
}

/// Distances and energy gaps `E^ε[f_ε] - E**[f0]` along a family sorted by
/// decreasing `eps`.
pub fn well_preparedness(
    family: &[(f64, DensityField)],
    f0: &DensityField,
    env: &ConvexEnvelope,
    spec: &PotentialSpec,
    tol: PreparednessTol,
) -> Result<Preparedness> {
    if family.windows(2).any(|w| w[1].0 >= w[0].0) {
        return invalid("family must be sorted by decreasing eps");
    }
    let target = energy_star(f0, env);
    let rows: Vec<PreparednessRow> = family
        .iter()
        .map(|(eps, f)| {
            Ok(PreparednessRow {
                eps: *eps,
                d2: w2_periodic(f, f0, default_m(f.n().max(f0.n())))?,
                energy_gap: energy_eps(f, *eps, spec) - target,
            })
        })
        .collect::<Result<_>>()?;
    let slack = 1e-12;
    let monotone = rows
        .windows(2)
        .all(|w| w[1].d2 <= w[0].d2 + slack && w[1].energy_gap.abs() <= w[0].energy_gap.abs() + slack);
    let well_prepared = monotone
        && rows.last().map_or(false, |r| r.d2 < tol.d2 && r.energy_gap.abs() < tol.energy_gap);
    Ok(Preparedness { rows, well_prepared })
}

/// Tangent-line test `W(A) + W'(A)(B - A) + λ >= W(B)`.
pub fn u_lambda_membership(a: f64, b: f64, lambda: f64, spec: &PotentialSpec) -> bool {
    spec.eval_w(a) + spec.eval_w1(a) * (b - a) + lambda >= spec.eval_w(b)
}

/// For each field, the fraction of cells `x` with `d0 = d(f0(x), Σ) > 0` at
/// which `min_{|y - x| < delta} d(f(y), Σ) <= d0 / 2`.
pub fn lsc_probe(fields: &[&DensityField], f0: &DensityField, sigma: &UnstableSet, delta: f64) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            if f.n() != f0.n() {
                return invalid("fields must share the grid of the reference");
            }
            let n = f.n();
            let half = (delta / f.h()).floor() as usize;
            let dist: Vec<f64> = f.values().iter().map(|&y| distance_to_sigma(y.max(0.0), sigma)).collect();
            let mut samples = 0;
            let mut bad = 0;
            for (j, &y0) in f0.values().iter().enumerate() {
                let d0 = distance_to_sigma(y0, sigma);
                if d0 <= 0.0 {
                    continue;
                }
                samples += 1;
                let near = (0..=2 * half.min(n / 2)).map(|o| dist[(j + n + o - half.min(n / 2)) % n]).fold(f64::INFINITY, f64::min);
                if near <= 0.5 * d0 {
                    bad += 1;
                }
            }
            Ok(if samples == 0 { 0.0 } else { bad as f64 / samples as f64 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::EnergyReport;
    use crate::potential::{compute_convex_envelope, compute_unstable_set, default_contact_tol};
    use std::f64::consts::TAU;

    fn sigma_of(name: &str) -> (PotentialSpec, ConvexEnvelope, UnstableSet) {
        let spec = PotentialSpec::builtin(name).unwrap();
        let env = compute_convex_envelope(&spec, 4096).unwrap();
        let tol = default_contact_tol(&spec, 4096);
        let sigma = compute_unstable_set(&spec, &env, tol).unwrap();
        (spec, env, sigma)
    }

    #[test]
    fn constant_field_has_no_wrinkles() {
        let (_, _, sigma) = sigma_of("quartic-wrinkle");
        let r = wrinkling_report(&DensityField::uniform(128), &sigma, 0.05, 0.1, 10.0);
        assert_eq!(r.violation_count, 0);
        assert_eq!(r.oscillating_mass_fraction, 0.0);
        assert!(r.sigma_localized);
    }

    #[test]
    fn oscillation_away_from_sigma_is_a_violation() {
        let (_, _, sigma) = sigma_of("quartic-spinodal");
        // values near 1, far from Σ = {0} ∪ [1.63, 3.37]
        let f = DensityField::from_fn(256, |x| 1.0 + 0.2 * (8.0 * TAU * x).sin()).unwrap();
        let r = wrinkling_report(&f, &sigma, 0.05, 0.1, 1e3);
        assert!(r.violation_count > 0);
        for v in &r.violations {
            assert!(v.y - v.x < 0.1 && v.osc >= 0.05 && v.max_dist_to_sigma >= 0.05);
        }
        assert!(!r.sigma_localized);
        assert!(r.off_sigma_oscillating_mass > 0.9);
        // steep slopes exclude every pair
        let r = wrinkling_report(&f, &sigma, 0.05, 0.1, 1e-3);
        assert_eq!(r.violation_count, 0);
    }

    #[test]
    fn oscillation_inside_sigma_is_localized() {
        let (_, _, sigma) = sigma_of("quartic-wrinkle");
        let f = DensityField::from_fn(256, |x| 1.0 + 0.3 * (8.0 * TAU * x).sin()).unwrap();
        let r = wrinkling_report(&f, &sigma, 0.05, 0.1, 1e3);
        assert_eq!(r.violation_count, 0);
        assert!(r.sigma_localized);
        assert!(r.oscillating_mass_fraction > 0.9);
        assert_eq!(r.off_sigma_oscillating_mass, 0.0);
    }

    #[test]
    fn oscillation_profile_examples() {
        let prof = oscillation_profile(&DensityField::uniform(64), 0.1);
        assert!(prof.iter().all(|v| *v == 0.0));
        let saw = DensityField::normalized((0..200).map(|j| 1.0 + 0.3 * (j % 4) as f64 / 3.0).collect()).unwrap();
        let a = 0.3 / 1.15;
        for v in oscillation_profile(&saw, 0.1) {
            assert!((v - a).abs() < 1e-12);
        }
        let bump = DensityField::from_fn(400, |x| 1.0 + (-(x - 0.5f64).powi(2) / 0.01).exp()).unwrap();
        let lip = centered_diff(bump.values(), bump.h()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for v in oscillation_profile(&bump, 0.02) {
            assert!(v <= lip * 0.02 * 1.1);
        }
    }

    #[test]
    fn h1_local_of_cosine() {
        let f = DensityField::from_fn(512, |x| 1.0 + 0.2 * (TAU * x).cos()).unwrap();
        let full = h1_local(&f, &[(0.0, 1.0)]).unwrap();
        assert!((full - 0.04 * TAU * TAU / 2.0).abs() < 1e-3);
        let half = h1_local(&f, &[(0.0, 0.5)]).unwrap();
        assert!((half - full / 2.0).abs() < 1e-2 * full);
        assert_eq!(h1_local(&DensityField::uniform(32), &[(0.0, 1.0)]).unwrap(), 0.0);
        assert!(h1_local(&f, &[(0.5, 0.2)]).is_err());
    }

    #[test]
    fn u_lambda_examples() {
        let cubic = PotentialSpec::builtin("cubic-motivation").unwrap();
        assert!(u_lambda_membership(0.7, 0.7, 0.0, &cubic));
        assert!(!u_lambda_membership(2.0, 1.0, 0.0, &cubic));
        assert!(u_lambda_membership(2.0, 1.0, 0.4, &cubic));
        // strict convexity leaves only B = A at lambda = 0
        let convex = PotentialSpec::builtin("quartic-convex").unwrap();
        for (a, b) in [(0.1, 3.0), (2.0, 0.0), (1.0, 1.5)] {
            assert!(!u_lambda_membership(a, b, 0.0, &convex));
            assert!(u_lambda_membership(a, a, 0.0, &convex));
        }
        assert!(u_lambda_membership(1.0, 1.1, 0.1, &convex));
        assert!(!u_lambda_membership(1.0, 1.5, 0.1, &convex));
    }

    #[test]
    fn well_preparedness_identity_in_convex_region() {
        let (spec, env, _) = sigma_of("quartic-spinodal");
        let f0 = DensityField::from_fn(128, |x| 1.0 + 0.1 * (TAU * x).cos()).unwrap();
        let family: Vec<(f64, DensityField)> = [0.1, 0.05, 0.025].iter().map(|&e| (e, f0.clone())).collect();
        let r = well_preparedness(&family, &f0, &env, &spec, PreparednessTol::default()).unwrap();
        let h1 = crate::functionals::dirichlet_seminorm_sq(&f0);
        for row in &r.rows {
            assert!((row.energy_gap - 0.5 * row.eps * row.eps * h1).abs() < 1e-12);
            assert!(row.d2 < 1e-9);
        }
        assert!(r.well_prepared);

        let (spec, env, _) = sigma_of("cubic-motivation");
        let inside = DensityField::from_fn(128, |x| 1.0 + 0.1 * (TAU * x).cos()).unwrap();
        let family: Vec<(f64, DensityField)> = [0.1, 0.05].iter().map(|&e| (e, inside.clone())).collect();
        let r = well_preparedness(&family, &inside, &env, &spec, PreparednessTol::default()).unwrap();
        let floor: f64 = inside.values().iter().map(|&y| env.gap(y)).sum::<f64>() * inside.h();
        assert!(floor > 0.01);
        assert!(!r.well_prepared);
        assert!(r.rows.iter().all(|row| row.energy_gap >= floor - 1e-12));
    }

    #[test]
    fn stationary_audit_is_zero() {
        let (spec, env, _) = sigma_of("cubic-motivation");
        let f = DensityField::uniform(32);
        let mut traj = TrajectoryRecord::new(FlowKind::Eps);
        for t in [0.0, 0.1, 0.2] {
            traj.push(t, f.clone(), EnergyReport::evaluate(&f, 0.1, &spec, &env)).unwrap();
        }
        traj.compute_speeds().unwrap();
        let audit = energy_dissipation_audit(&traj).unwrap();
        assert!(audit.max_abs_residual < 1e-14);
        traj.speeds.clear();
        assert!(energy_dissipation_audit(&traj).is_err());
    }
}
