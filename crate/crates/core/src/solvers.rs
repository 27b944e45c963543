//! Conservative finite-volume integrators for the regularized equation
//!
//! ```text
//! ∂t ν = ( ν ( W'(ν) - ε² ν_xx )_x )_x
//! ```
//!
//! and for the limit equation `∂t ν = ( Q**'(ν) )_xx`.
//!
//! Both use face fluxes on a uniform periodic grid, so mass changes only by
//! roundoff, and implicit time stepping solved by Newton's method with the
//! exact banded Jacobian.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{laplacian, DensityField};
use crate::functionals::{energy_eps, energy_star, EnergyReport};
use crate::linalg::CyclicBanded;
use crate::potential::{compute_convex_envelope, ConvexEnvelope, PotentialSpec, ScalarProfile};
use crate::trajectory::{EventKind, FlowKind, TrajectoryRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositivityMode {
    #[default]
    ClipRenormalize,
    RejectHalve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n: usize,
    pub dt: f64,
    pub eps: f64,
    pub t_end: f64,
    /// 1 is backward Euler, 1/2 is Crank-Nicolson.
    pub theta_scheme: f64,
    pub max_newton: usize,
    pub newton_tol: f64,
    pub positivity_mode: PositivityMode,
    pub dt_min: f64,
    /// Snapshot times in `(0, t_end]`; `t_end` is always appended.
    pub output_times: Vec<f64>,
    /// Tolerated energy increase per step relative to `|E(0)|`.
    pub energy_slack: f64,
    pub record_speeds: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 128,
            dt: 1e-4,
            eps: 0.1,
            t_end: 0.1,
            theta_scheme: 1.0,
            max_newton: 50,
            newton_tol: 1e-10,
            positivity_mode: PositivityMode::ClipRenormalize,
            dt_min: 1e-12,
            output_times: Vec::new(),
            energy_slack: 1e-8,
            record_speeds: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 16 {
            return invalid(format!("n = {} is below 16", self.n));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt = {} must be positive", self.dt));
        }
        if !(self.newton_tol > 0.0) {
            return invalid("newton_tol must be positive");
        }
        if !(0.5..=1.0).contains(&self.theta_scheme) {
            return invalid(format!("theta_scheme = {} outside [1/2, 1]", self.theta_scheme));
        }
        if !(self.eps >= 0.0 && self.t_end >= 0.0) {
            return invalid("eps and t_end must be non-negative");
        }
        if self.max_newton == 0 {
            return invalid("max_newton must be positive");
        }
        if self.output_times.windows(2).any(|w| w[1] <= w[0])
            || self.output_times.iter().any(|&t| !(t > 0.0 && t <= self.t_end))
        {
            return invalid("output_times must increase strictly inside (0, t_end]");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Vec<f64> {
        let mut times = self.output_times.clone();
        if times.last().map_or(true, |&t| t < self.t_end) && self.t_end > 0.0 {
            times.push(self.t_end);
        }
        times
    }

    /// Output times at every multiple of `every` up to `t_end`.
    pub fn uniform_outputs(mut self, every: f64) -> Self {
        let count = (self.t_end / every).round() as usize;
        self.output_times = (1..=count).map(|k| (k as f64 * every).min(self.t_end)).collect();
        self.output_times.dedup();
        self
    }
}

/// Newton also stops once the update falls below this fraction of the state.
pub(crate) const UPDATE_FLOOR: f64 = 1e-13;

pub(crate) struct Stepped {
    pub(crate) values: Vec<f64>,
    pub(crate) clipped: f64,
}

fn chemical(u: &[f64], h: f64, eps: f64, w: &dyn ScalarProfile) -> Vec<f64> {
    let lap = laplacian(u, h);
    u.iter().zip(lap).map(|(&y, l)| w.slope(y) - eps * eps * l).collect()
}

/// Divergence of the face fluxes `m_{j+1/2} (p_{j+1} - p_j) / h`.
fn ch_rate(u: &[f64], h: f64, eps: f64, w: &dyn ScalarProfile) -> Vec<f64> {
    let n = u.len();
    let p = chemical(u, h, eps, w);
    let flux: Vec<f64> = (0..n)
        .map(|j| {
            let jp = (j + 1) % n;
            (0.5 * (u[j] + u[jp])).max(0.0) * (p[jp] - p[j]) / h
        })
        .collect();
    (0..n).map(|j| (flux[j] - flux[(j + n - 1) % n]) / h).collect()
}

/// Adds `scale * d(ch_rate)/du` to `jac`.
fn add_ch_jacobian(jac: &mut CyclicBanded, u: &[f64], h: f64, eps: f64, w: &dyn ScalarProfile, scale: f64) {
    let n = u.len();
    let e2h = eps * eps / (h * h);
    let p = chemical(u, h, eps, w);
    let diag: Vec<f64> = u.iter().map(|&y| w.curvature(y) + 2.0 * e2h).collect();
    let off = -e2h;
    for j in 0..n {
        let jp = (j + 1) % n;
        let s = u[j] + u[jp];
        let mob = (0.5 * s).max(0.0);
        let dmob = if s > 0.0 { 0.5 } else { 0.0 };
        let g = (p[jp] - p[j]) / h;
        let d_flux = [
            -mob * off / h,
            dmob * g + mob * (off - diag[j]) / h,
            dmob * g + mob * (diag[jp] - off) / h,
            mob * off / h,
        ];
        for (o, df) in (-1isize..=2).zip(d_flux) {
            jac.add(j, o, scale * df / h);
            jac.add(jp, o - 1, -scale * df / h);
        }
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Restores the mass of `target` and applies the positivity policy.
pub(crate) fn finish_step(mut u: Vec<f64>, target_mass: f64, mode: PositivityMode) -> Result<Stepped> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::StepFailure("non-finite state".into()));
    }
    let top = max_abs(&u);
    let roundoff = 1e-14 * top;
    let lowest = u.iter().copied().fold(f64::INFINITY, f64::min);
    let mut clipped = 0.0;
    if lowest < 0.0 {
        if lowest < -roundoff && mode == PositivityMode::RejectHalve {
            return Err(Error::StepFailure(format!("negative density {lowest:.3e}")));
        }
        for v in &mut u {
            if *v < 0.0 {
                clipped += -*v;
                *v = 0.0;
            }
        }
        if lowest >= -roundoff {
            clipped = 0.0;
        }
    }
    let mass: f64 = u.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::StepFailure("state lost all mass".into()));
    }
    let scale = target_mass / mass;
    for v in &mut u {
        *v *= scale;
    }
    Ok(Stepped { values: u, clipped })
}

fn step_ch(f: &[f64], dt: f64, cfg: &SolverConfig, w: &dyn ScalarProfile) -> Result<Stepped> {
    let n = f.len();
    let h = 1.0 / n as f64;
    let theta = cfg.theta_scheme;
    let explicit: Vec<f64> = if theta < 1.0 {
        ch_rate(f, h, cfg.eps, w).into_iter().map(|r| (1.0 - theta) * dt * r).collect()
    } else {
        vec![0.0; n]
    };
    let tol = cfg.newton_tol * (1.0 + max_abs(f));
    let mut u = f.to_vec();
    let mut first = f64::NAN;
    for _ in 0..cfg.max_newton {
        let rate = ch_rate(&u, h, cfg.eps, w);
        let residual: Vec<f64> = (0..n).map(|j| u[j] - f[j] - theta * dt * rate[j] - explicit[j]).collect();
        let norm = max_abs(&residual);
        if !norm.is_finite() {
            return Err(Error::StepFailure("non-finite Newton residual".into()));
        }
        if norm < tol {
            return finish_step(u, f.iter().sum(), cfg.positivity_mode);
        }
        if first.is_nan() {
            first = norm;
        } else if norm > 1e6 * first {
            return Err(Error::StepFailure(format!("Newton diverged (residual {norm:.3e})")));
        }
        let mut jac = CyclicBanded::zeros(n, 2);
        for j in 0..n {
            jac.add(j, 0, 1.0);
        }
        add_ch_jacobian(&mut jac, &u, h, cfg.eps, w, -theta * dt);
        let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
        let delta = jac.solve(&rhs).map_err(|_| Error::StepFailure("singular Jacobian".into()))?;
        let update = max_abs(&delta);
        for (ui, d) in u.iter_mut().zip(delta) {
            *ui += d;
        }
        if update < UPDATE_FLOOR * (1.0 + max_abs(&u)) {
            return finish_step(u, f.iter().sum(), cfg.positivity_mode);
        }
    }
    Err(Error::StepFailure(format!("Newton did not converge in {} iterations", cfg.max_newton)))
}

/// One implicit step of the regularized equation with time step `cfg.dt`.
pub fn step_eps(f: &DensityField, cfg: &SolverConfig, spec: &PotentialSpec) -> Result<DensityField> {
    if !(cfg.eps > 0.0) {
        return invalid("step_eps needs eps > 0");
    }
    cfg.validate()?;
    let s = step_ch(f.values(), cfg.dt, cfg, spec)?;
    Ok(DensityField::from_raw(s.values))
}

fn limit_residual(u: &[f64], f: &[f64], dt: f64, env: &ConvexEnvelope) -> Vec<f64> {
    let n = u.len();
    let h = 1.0 / n as f64;
    let q: Vec<f64> = u.iter().map(|&z| env.eval_qss1(z)).collect();
    let lap = laplacian(&q, h);
    (0..n).map(|j| u[j] - f[j] - dt * lap[j]).collect()
}

/// Backward-Euler step of `∂t u = (Q**'(u))_xx` on raw cell values of any
/// mass; exposed for comparison-principle checks.
pub fn step_limit_values(f: &[f64], dt: f64, cfg: &SolverConfig, env: &ConvexEnvelope) -> Result<Vec<f64>> {
    let n = f.len();
    if n < 4 {
        return invalid("grid too small");
    }
    let h = 1.0 / n as f64;
    let tol = cfg.newton_tol * (1.0 + max_abs(f));
    let mut u = f.to_vec();
    let mut residual = limit_residual(&u, f, dt, env);
    let mut norm = max_abs(&residual);
    for _ in 0..cfg.max_newton {
        if !norm.is_finite() {
            return Err(Error::StepFailure("non-finite Newton residual".into()));
        }
        if norm < tol {
            return Ok(u);
        }
        let mut jac = CyclicBanded::zeros(n, 1);
        let c = dt / (h * h);
        for j in 0..n {
            jac.add(j, 0, 1.0);
        }
        for j in 0..n {
            let d = env.eval_qss2(u[j]);
            // column j of -dt * Lap * diag(Q**'')
            jac.add(j, 0, 2.0 * c * d);
            jac.add((j + n - 1) % n, 1, -c * d);
            jac.add((j + 1) % n, -1, -c * d);
        }
        let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
        let delta = jac.solve(&rhs).map_err(|_| Error::StepFailure("singular Jacobian".into()))?;
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
            let r = limit_residual(&trial, f, dt, env);
            let m = max_abs(&r);
            if m < (1.0 - 1e-4 * alpha) * norm || alpha < 1e-6 {
                u = trial;
                residual = r;
                norm = m;
                break;
            }
            alpha *= 0.5;
        }
        if alpha == 1.0 && max_abs(&delta) < UPDATE_FLOOR * (1.0 + max_abs(&u)) {
            return Ok(u);
        }
    }
    if norm < tol {
        return Ok(u);
    }
    Err(Error::StepFailure(format!("damped Newton did not converge (residual {norm:.3e})")))
}

pub fn step_limit(f: &DensityField, cfg: &SolverConfig, env: &ConvexEnvelope) -> Result<DensityField> {
    if cfg.eps != 0.0 {
        return invalid("step_limit needs eps = 0");
    }
    cfg.validate()?;
    let u = step_limit_values(f.values(), cfg.dt, cfg, env)?;
    let s = finish_step(u, f.values().iter().sum(), cfg.positivity_mode)?;
    Ok(DensityField::from_raw(s.values))
}

/// Steps to each output time, halving `dt` on failure or energy increase
/// and restoring it after a run of accepted steps.
pub(crate) fn integrate(
    f0: &DensityField,
    cfg: &SolverConfig,
    kind: FlowKind,
    step: impl Fn(&[f64], f64) -> Result<Stepped>,
    energy: impl Fn(&DensityField) -> f64,
    report: impl Fn(&DensityField) -> EnergyReport,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    if f0.n() != cfg.n {
        return invalid(format!("initial field has {} cells, config expects {}", f0.n(), cfg.n));
    }
    let mut traj = TrajectoryRecord::new(kind);
    traj.push(0.0, f0.clone(), report(f0))?;
    let e0 = energy(f0);
    let slack = cfg.energy_slack * e0.abs() + 1e-14 * (1.0 + e0.abs());
    let mut current = f0.clone();
    let mut e_cur = e0;
    let mut t = 0.0;
    let mut dt = cfg.dt;
    let mut streak = 0;
    for t_out in cfg.schedule() {
        while t_out - t > 1e-13 * t_out.max(1.0) {
            let h = dt.min(t_out - t);
            let outcome = step(current.values(), h).and_then(|s| {
                let next = DensityField::from_raw(s.values);
                let e_next = energy(&next);
                if e_next > e_cur + slack {
                    Err(Error::StepFailure(format!("energy increased by {:.3e}", e_next - e_cur)))
                } else {
                    Ok((next, e_next, s.clipped))
                }
            });
            match outcome {
                Ok((next, e_next, clipped)) => {
                    t = if t_out - t <= h { t_out } else { t + h };
                    current = next;
                    e_cur = e_next;
                    if clipped > 0.0 {
                        traj.log(t, EventKind::Clipped, format!("clipped mass {clipped:.3e}"));
                    }
                    streak += 1;
                    if streak >= 4 && dt < cfg.dt {
                        dt = (2.0 * dt).min(cfg.dt);
                        streak = 0;
                    }
                }
                Err(err) => {
                    streak = 0;
                    dt = 0.5 * h;
                    traj.log(t, EventKind::DtHalved, format!("{err}; dt -> {dt:.3e}"));
                    if dt < cfg.dt_min {
                        let underflow = Error::DtUnderflow { t, dt };
                        traj.log(t, EventKind::Aborted, underflow.to_string());
                        traj.aborted = Some(underflow.to_string());
                        if cfg.record_speeds {
                            traj.compute_speeds()?;
                        }
                        return Ok(traj);
                    }
                }
            }
        }
        traj.push(t_out, current.clone(), report(&current))?;
    }
    if cfg.record_speeds {
        traj.compute_speeds()?;
    }
    Ok(traj)
}

pub fn simulate_eps(f0: &DensityField, cfg: &SolverConfig, spec: &PotentialSpec) -> Result<TrajectoryRecord> {
    let env = compute_convex_envelope(spec, 4096)?;
    simulate_eps_with(f0, cfg, spec, &env)
}

/// As [`simulate_eps`] with a precomputed envelope for the reports.
pub fn simulate_eps_with(
    f0: &DensityField,
    cfg: &SolverConfig,
    spec: &PotentialSpec,
    env: &ConvexEnvelope,
) -> Result<TrajectoryRecord> {
    if !(cfg.eps > 0.0) {
        return invalid("simulate_eps needs eps > 0");
    }
    let e0 = energy_eps(f0, cfg.eps, spec);
    if !e0.is_finite() {
        return invalid("initial energy is not finite");
    }
    integrate(
        f0,
        cfg,
        FlowKind::Eps,
        |u, dt| step_ch(u, dt, cfg, spec),
        |f| energy_eps(f, cfg.eps, spec),
        |f| EnergyReport::evaluate(f, cfg.eps, spec, env),
    )
}

pub fn simulate_limit(f0: &DensityField, cfg: &SolverConfig, env: &ConvexEnvelope) -> Result<TrajectoryRecord> {
    if cfg.eps != 0.0 {
        return invalid("simulate_limit needs eps = 0");
    }
    if !energy_star(f0, env).is_finite() {
        return invalid("initial energy is not finite");
    }
    let base = env.base().clone();
    integrate(
        f0,
        cfg,
        FlowKind::Limit,
        |u, dt| {
            let v = step_limit_values(u, dt, cfg, env)?;
            finish_step(v, u.iter().sum(), cfg.positivity_mode)
        },
        |f| energy_star(f, env),
        |f| EnergyReport::evaluate(f, 0.0, base.as_ref(), env),
    )
}
