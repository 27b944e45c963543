//! Minimizing movements for `E^ε` in the Wasserstein metric.
//!
//! A candidate measure is a set of `m` equal-mass particles `X_1 <= ... <= X_m`
//! on the universal cover. The transport cost to the previous iterate is the
//! explicit quantile sum `(1/m) Σ (X_i - X_i^n)^2`, and the energy is evaluated
//! on a grid density obtained by spreading each particle over a hat kernel of
//! half-width `b`. Each step minimizes
//!
//! ```text
//! J(X) = (1/m) Σ (X_i - X_i^n)^2 + 2 τ E^ε(ρ(X))
//! ```
//!
//! with a projected L-BFGS iteration.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::DensityField;
use crate::functionals::EnergyReport;
use crate::potential::{compute_convex_envelope, PotentialSpec, ScalarProfile};
use crate::trajectory::{EventKind, FlowKind, TrajectoryRecord};
use crate::wasserstein1d::to_quantiles;

/// Smallest gap kept between neighbouring particles.
pub const MIN_SEPARATION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JkoConfig {
    pub tau: f64,
    pub m: usize,
    /// Bound on `max_i m |∂J/∂X_i|`.
    pub inner_tol: f64,
    pub inner_max: usize,
    /// Hat half-width; `None` selects `max(2/m, 2/n)` on an `n`-cell grid.
    pub reconstruct_bandwidth: Option<f64>,
    pub memory: usize,
}

impl Default for JkoConfig {
    fn default() -> Self {
        Self { tau: 1e-3, m: 256, inner_tol: 1e-8, inner_max: 20_000, reconstruct_bandwidth: None, memory: 12 }
    }
}

impl JkoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return invalid(format!("tau = {} must be positive", self.tau));
        }
        if self.m < 64 {
            return invalid(format!("m = {} is below 64", self.m));
        }
        if !(self.inner_tol > 0.0) || self.inner_max == 0 {
            return invalid("inner_tol and inner_max must be positive");
        }
        if let Some(b) = self.reconstruct_bandwidth {
            if !(b > 0.0 && b < 0.25) {
                return invalid(format!("bandwidth {b} outside (0, 1/4)"));
            }
        }
        Ok(())
    }

    pub fn bandwidth(&self, n: usize) -> f64 {
        self.reconstruct_bandwidth.unwrap_or((2.0 / self.m as f64).max(2.0 / n as f64))
    }
}

/// Hat kernel of unit mass and half-width `b`.
#[derive(Debug, Clone, Copy)]
struct Hat {
    b: f64,
}

impl Hat {
    fn value(&self, y: f64) -> f64 {
        let r = 1.0 - y.abs() / self.b;
        if r > 0.0 {
            r / self.b
        } else {
            0.0
        }
    }

    fn cdf(&self, y: f64) -> f64 {
        let b = self.b;
        if y <= -b {
            0.0
        } else if y <= 0.0 {
            (y + b) * (y + b) / (2.0 * b * b)
        } else if y < b {
            1.0 - (b - y) * (b - y) / (2.0 * b * b)
        } else {
            1.0
        }
    }
}

/// Particle spreading onto `n` periodic cells.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    n: usize,
    hat: Hat,
}

impl Reconstruction {
    pub fn new(n: usize, bandwidth: f64) -> Self {
        Self { n, hat: Hat { b: bandwidth } }
    }

    /// Cell densities of the particle measure; sums to one exactly up to
    /// roundoff for any positions.
    pub fn density(&self, xs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let h = 1.0 / n as f64;
        let w = n as f64 / xs.len() as f64;
        let mut rho = vec![0.0; n];
        for &x in xs {
            let lo = ((x - self.hat.b) / h).floor() as i64;
            let hi = ((x + self.hat.b) / h).floor() as i64;
            for k in lo..=hi {
                let mass = self.hat.cdf((k + 1) as f64 * h - x) - self.hat.cdf(k as f64 * h - x);
                rho[k.rem_euclid(n as i64) as usize] += w * mass;
            }
        }
        rho
    }

    /// `∂E/∂X_i` given the chemical potential `p` on the cells.
    fn pull_back(&self, xs: &[f64], p: &[f64]) -> Vec<f64> {
        let n = self.n;
        let h = 1.0 / n as f64;
        let inv_m = 1.0 / xs.len() as f64;
        xs.iter()
            .map(|&x| {
                let lo = ((x - self.hat.b) / h).ceil() as i64;
                let hi = ((x + self.hat.b) / h).floor() as i64;
                (lo..=hi)
                    .map(|k| {
                        let right = p[k.rem_euclid(n as i64) as usize];
                        let left = p[(k - 1).rem_euclid(n as i64) as usize];
                        self.hat.value(k as f64 * h - x) * (right - left)
                    })
                    .sum::<f64>()
                    * inv_m
            })
            .collect()
    }

    pub fn field(&self, xs: &[f64]) -> DensityField {
        DensityField::from_masses(self.density(xs))
    }
}

/// Energy of raw cell values and its chemical potential.
fn energy_and_potential(rho: &[f64], eps: f64, w: &dyn ScalarProfile) -> (f64, Vec<f64>) {
    let n = rho.len();
    let h = 1.0 / n as f64;
    let e2 = eps * eps;
    let mut energy = 0.0;
    let mut p = vec![0.0; n];
    for j in 0..n {
        let next = rho[(j + 1) % n];
        let prev = rho[(j + n - 1) % n];
        let d = (next - rho[j]) / h;
        energy += (0.5 * e2 * d * d + w.value(rho[j])) * h;
        p[j] = w.slope(rho[j]) - e2 * (next - 2.0 * rho[j] + prev) / (h * h);
    }
    (energy, p)
}

/// Result of one inner minimization.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub particles: Vec<f64>,
    pub objective: f64,
    /// Objective at the previous iterate, `2 τ E(μ^n)`.
    pub objective_start: f64,
    /// `max_i m |∂J/∂X_i|` at return.
    pub gradient: f64,
    pub iterations: usize,
    pub converged: bool,
    pub floor_hits: usize,
}

impl StepOutcome {
    /// `sqrt((1/m) Σ (X_i - X_i^n)^2)`.
    pub fn displacement(&self, previous: &[f64]) -> f64 {
        transport_cost(&self.particles, previous).sqrt()
    }
}

fn transport_cost(xs: &[f64], prev: &[f64]) -> f64 {
    xs.iter().zip(prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / xs.len() as f64
}

struct Objective<'a> {
    prev: &'a [f64],
    step: f64,
    eps: f64,
    w: &'a dyn ScalarProfile,
    rec: &'a Reconstruction,
}

impl Objective<'_> {
    fn eval(&self, xs: &[f64]) -> (f64, Vec<f64>) {
        let m = xs.len() as f64;
        let rho = self.rec.density(xs);
        let (energy, p) = energy_and_potential(&rho, self.eps, self.w);
        let de = self.rec.pull_back(xs, &p);
        let value = transport_cost(xs, self.prev) + 2.0 * self.step * energy;
        let grad = xs
            .iter()
            .zip(self.prev)
            .zip(de)
            .map(|((x, x0), d)| 2.0 * (x - x0) / m + 2.0 * self.step * d)
            .collect();
        (value, grad)
    }
}

/// Sorts and enforces the separation floor; returns the number of gaps raised.
fn project(xs: &mut [f64]) -> usize {
    xs.sort_by(f64::total_cmp);
    let mut hits = 0;
    for i in 1..xs.len() {
        if xs[i] < xs[i - 1] + MIN_SEPARATION {
            xs[i] = xs[i - 1] + MIN_SEPARATION;
            hits += 1;
        }
    }
    let (first, span) = (xs[0], xs[xs.len() - 1] - xs[0]);
    let limit = 1.0 - MIN_SEPARATION;
    if span > limit {
        for x in xs.iter_mut() {
            *x = first + (*x - first) * limit / span;
        }
        hits += 1;
    }
    hits
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn scaled_norm(g: &[f64]) -> f64 {
    g.len() as f64 * g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Minimizes the step objective with effective time step `step` starting
/// from the previous particles.
pub fn minimize_step(
    prev: &[f64],
    step: f64,
    n: usize,
    cfg: &JkoConfig,
    eps: f64,
    w: &dyn ScalarProfile,
) -> StepOutcome {
    let rec = Reconstruction::new(n, cfg.bandwidth(n));
    let obj = Objective { prev, step, eps, w, rec: &rec };
    let m = prev.len();
    let mut x = prev.to_vec();
    let (mut fx, mut g) = obj.eval(&x);
    let start = fx;
    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut floor_hits = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.inner_max {
        if scaled_norm(&g) < cfg.inner_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d = two_loop(&g, &s_hist, &y_hist, m as f64 / 2.0);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v * m as f64 / 2.0).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = 1.0;
        let accepted = loop {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let hits = project(&mut trial);
            let (ft, gt) = obj.eval(&trial);
            let moved: f64 = trial.iter().zip(&x).zip(&g).map(|((t, a), gi)| gi * (t - a)).sum();
            if ft.is_finite() && ft <= fx + 1e-4 * moved.min(alpha * slope).min(0.0) {
                floor_hits += hits;
                break Some((trial, ft, gt));
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                break None;
            }
        };
        let Some((trial, ft, gt)) = accepted else {
            if !s_hist.is_empty() {
                s_hist.clear();
                y_hist.clear();
                continue;
            }
            break;
        };
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if s_hist.len() == cfg.memory {
                s_hist.pop_front();
                y_hist.pop_front();
            }
            s_hist.push_back(s);
            y_hist.push_back(y);
        }
        let stalled = (fx - ft).abs() <= 1e-16 * fx.abs().max(1e-300);
        x = trial;
        fx = ft;
        g = gt;
        if stalled && scaled_norm(&g) < 1e3 * cfg.inner_tol {
            converged = true;
            break;
        }
    }
    if !converged && scaled_norm(&g) < cfg.inner_tol {
        converged = true;
    }
    if fx > start {
        x = prev.to_vec();
        fx = start;
    }
    StepOutcome {
        particles: x,
        objective: fx,
        objective_start: start,
        gradient: scaled_norm(&g),
        iterations,
        converged,
        floor_hits,
    }
}

fn two_loop(g: &[f64], s_hist: &VecDeque<Vec<f64>>, y_hist: &VecDeque<Vec<f64>>, default_scale: f64) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let k = s_hist.len();
    let mut alphas = vec![0.0; k];
    for i in (0..k).rev() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alphas[i] = rho * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alphas[i] * yj;
        }
    }
    let gamma = match k {
        0 => default_scale,
        _ => dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]),
    };
    for v in &mut q {
        *v *= gamma;
    }
    for i in 0..k {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        let beta = rho * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Particles at the mass levels of `f`.
pub fn particles_of(f: &DensityField, m: usize) -> Result<Vec<f64>> {
    Ok(to_quantiles(f, m)?.positions().to_vec())
}

fn check_inputs(cfg: &JkoConfig, eps: f64) -> Result<()> {
    cfg.validate()?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return invalid(format!("eps = {eps} must be non-negative"));
    }
    Ok(())
}

/// One minimizing-movement step from `f`.
pub fn jko_step(f: &DensityField, cfg: &JkoConfig, eps: f64, spec: &PotentialSpec) -> Result<DensityField> {
    de_giorgi_interpolant(f, cfg.tau, cfg, eps, spec)
}

/// Minimizer with the fractional step `s` in `(0, tau]`.
pub fn de_giorgi_interpolant(
    f_prev: &DensityField,
    s: f64,
    cfg: &JkoConfig,
    eps: f64,
    spec: &PotentialSpec,
) -> Result<DensityField> {
    check_inputs(cfg, eps)?;
    if !(s > 0.0 && s <= cfg.tau) {
        return invalid(format!("interpolation step {s} outside (0, tau]"));
    }
    let prev = particles_of(f_prev, cfg.m)?;
    let out = minimize_step(&prev, s, f_prev.n(), cfg, eps, spec);
    if !out.converged {
        return Err(Error::Convergence { iterations: out.iterations, gradient: out.gradient });
    }
    Ok(Reconstruction::new(f_prev.n(), cfg.bandwidth(f_prev.n())).field(&out.particles))
}

/// One row of the discrete energy inequality
/// `E(μ^n) + (1/2τ) Σ_k d_k^2 <= E(μ^0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub step: usize,
    pub t: f64,
    /// Particle transport distance between consecutive iterates.
    pub d2_increment: f64,
    pub energy: f64,
    /// `(1/2τ) Σ_k d_k^2` up to this step.
    pub dissipation: f64,
    /// `E(μ^0) - E(μ^n) - dissipation`; non-negative when the inequality holds.
    pub margin: f64,
    /// Amount by which the inequality fails, `max(0, -margin)`.
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct JkoRun {
    pub trajectory: TrajectoryRecord,
    pub ledger: Vec<LedgerRow>,
    pub particles: Vec<f64>,
}

impl JkoRun {
    pub fn max_slack(&self) -> f64 {
        self.ledger.iter().map(|r| r.slack).fold(0.0, f64::max)
    }

    pub fn write_ledger_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,t,d2_increment,energy,dissipation,margin,slack")?;
        for r in &self.ledger {
            writeln!(
                out,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.step, r.t, r.d2_increment, r.energy, r.dissipation, r.margin, r.slack
            )?;
        }
        Ok(())
    }
}

/// Iterates steps of size `tau` up to `t_end`; a shorter final step absorbs
/// any remainder.
pub fn simulate_jko(
    f0: &DensityField,
    cfg: &JkoConfig,
    eps: f64,
    spec: &PotentialSpec,
    t_end: f64,
) -> Result<JkoRun> {
    check_inputs(cfg, eps)?;
    if !(t_end >= 0.0) {
        return invalid("t_end must be non-negative");
    }
    let env = compute_convex_envelope(spec, 4096)?;
    let n = f0.n();
    let rec = Reconstruction::new(n, cfg.bandwidth(n));
    let mut xs = particles_of(f0, cfg.m)?;
    let mut traj = TrajectoryRecord::new(FlowKind::Jko);
    let field = rec.field(&xs);
    let e0 = crate::functionals::energy_eps(&field, eps, spec);
    traj.push(0.0, field.clone(), EnergyReport::evaluate(&field, eps, spec, &env))?;
    let mut ledger = vec![LedgerRow { step: 0, t: 0.0, d2_increment: 0.0, energy: e0, dissipation: 0.0, margin: 0.0, slack: 0.0 }];
    let mut t = 0.0;
    let mut dissipation = 0.0;
    let mut step = 0;
    while t_end - t > 1e-12 * t_end.max(1.0) {
        let s = cfg.tau.min(t_end - t);
        let out = minimize_step(&xs, s, n, cfg, eps, spec);
        if !out.converged {
            traj.log(
                t + s,
                EventKind::InnerNotConverged,
                format!("gradient {:.3e} after {} iterations", out.gradient, out.iterations),
            );
        }
        if out.floor_hits > 0 {
            traj.log(t + s, EventKind::SeparationFloor, format!("{} separation floor hits", out.floor_hits));
        }
        let d = out.displacement(&xs);
        xs = out.particles;
        step += 1;
        t = if t_end - t <= s { t_end } else { t + s };
        let field = rec.field(&xs);
        let report = EnergyReport::evaluate(&field, eps, spec, &env);
        dissipation += d * d / (2.0 * s);
        let margin = e0 - report.e_eps - dissipation;
        ledger.push(LedgerRow {
            step,
            t,
            d2_increment: d,
            energy: report.e_eps,
            dissipation,
            margin,
            slack: (-margin).max(0.0),
        });
        traj.push(t, field, report)?;
    }
    traj.compute_speeds()?;
    Ok(JkoRun { trajectory: traj, ledger, particles: xs })
}
