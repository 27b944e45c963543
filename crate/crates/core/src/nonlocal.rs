//! Nonlocal aggregation model
//!
//! ```text
//! ∂t ν + ( ν ( (K^ε * ν)_x - ν ν_x ) )_x = 0,      K^ε(x) = K(x/ε) / ε,
//! ```
//!
//! the Wasserstein gradient flow of
//! `F^ε[ν] = ∫ W(ν) + (1/4) ∫∫ K^ε(x - y) (ν(x) - ν(y))²` with
//! `W(ν) = ν³/6 - ν²/2`. A Taylor expansion of the convolution gives
//! `K^ε * ν - ν = (ε² k0 / 2) ν_xx + O(ε⁴)`, so the local equation with
//! `ε_eff² = ε² k0 / 2` is its formal gradient-expansion counterpart.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{centered_diff, DensityField};
use crate::functionals::{dirichlet_seminorm_sq, energy_star, slope_star, EnergyReport};
use crate::linalg::CyclicBanded;
use crate::potential::{compute_convex_envelope, ConvexEnvelope, PotentialSpec};
use crate::solvers::{finish_step, integrate, max_abs, simulate_eps_with, SolverConfig, Stepped, UPDATE_FLOOR};
use crate::trajectory::{FlowKind, TrajectoryRecord};
use crate::wasserstein1d::{default_m, w2_periodic};

pub type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Even, non-negative kernel supported on `[-1/2, 1/2]`, normalized to unit
/// mass by midpoint quadrature.
#[derive(Clone)]
pub struct KernelSpec {
    name: String,
    raw: Profile,
    scale: f64,
    k0: f64,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec").field("name", &self.name).field("k0", &self.k0).finish()
    }
}

fn midpoints(q: usize) -> impl Iterator<Item = f64> {
    let h = 1.0 / q as f64;
    (0..q).map(move |i| -0.5 + (i as f64 + 0.5) * h)
}

fn bump(x: f64) -> f64 {
    let s = 1.0 - 4.0 * x * x;
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

impl KernelSpec {
    pub const DEFAULT_QUADRATURE: usize = 20_000;

    pub fn new(name: impl Into<String>, raw: Profile, quadrature: usize) -> Result<Self> {
        if quadrature < 16 {
            return invalid("kernel quadrature needs at least 16 nodes");
        }
        let h = 1.0 / quadrature as f64;
        let mut total = 0.0;
        let mut top = 0.0f64;
        for x in midpoints(quadrature) {
            let v = raw(x);
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("kernel profile is {v} at {x}"));
            }
            total += v * h;
            top = top.max(v);
        }
        if !(total > 0.0) {
            return invalid("kernel profile has no mass");
        }
        if midpoints(quadrature).any(|x| (raw(x) - raw(-x)).abs() > 1e-12 * top) {
            return invalid("kernel profile is not even");
        }
        let scale = 1.0 / total;
        let k0 = scale * midpoints(quadrature).map(|x| x * x * raw(x) * h).sum::<f64>();
        Ok(Self { name: name.into(), raw, scale, k0 })
    }

    /// `c exp(-1 / (1 - (2x)²))`.
    pub fn bump() -> Self {
        Self::new("bump", Arc::new(bump), Self::DEFAULT_QUADRATURE).expect("bump kernel is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Second moment `∫ x² K(x) dx`.
    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn profile(&self, x: f64) -> f64 {
        if x.abs() < 0.5 {
            self.scale * (self.raw)(x)
        } else {
            0.0
        }
    }

    pub fn mass(&self, quadrature: usize) -> f64 {
        let h = 1.0 / quadrature as f64;
        midpoints(quadrature).map(|x| self.profile(x) * h).sum()
    }

    pub fn second_moment(&self, quadrature: usize) -> f64 {
        let h = 1.0 / quadrature as f64;
        midpoints(quadrature).map(|x| x * x * self.profile(x) * h).sum()
    }

    /// Periodic samples `K^ε(d h) h`, `d = 0..n`, rescaled to sum to one.
    pub fn weights(&self, n: usize, eps: f64) -> Result<Vec<f64>> {
        if !(eps > 0.0 && eps <= 1.0) {
            return invalid(format!("eps = {eps} outside (0, 1]"));
        }
        let h = 1.0 / n as f64;
        let mut w = vec![0.0; n];
        for d in 0..=n / 2 {
            let v = self.profile(d as f64 * h / eps) / eps * h;
            w[d] = v;
            w[(n - d) % n] = v;
        }
        if w.iter().filter(|&&v| v > 0.0).count() < 3 {
            return invalid(format!("kernel of width {eps} is not resolved on {n} cells"));
        }
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / total).collect())
    }
}

/// `ε_eff = ε sqrt(k0 / 2)`.
pub fn effective_eps(eps: f64, kern: &KernelSpec) -> f64 {
    eps * (0.5 * kern.k0()).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvolutionMethod {
    #[default]
    Spectral,
    Direct,
}

/// Periodic convolution with the sampled kernel `K^ε`.
#[derive(Clone)]
pub struct Convolver {
    taps: Vec<(usize, f64)>,
    symbol: Vec<f64>,
    method: ConvolutionMethod,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Convolver {
    pub fn new(kern: &KernelSpec, n: usize, eps: f64, method: ConvolutionMethod) -> Result<Self> {
        let w = kern.weights(n, eps)?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut spectrum: Vec<Complex<f64>> = w.iter().map(|&v| Complex::new(v, 0.0)).collect();
        forward.process(&mut spectrum);
        let taps = w.iter().copied().enumerate().filter(|&(_, v)| v > 0.0).collect();
        Ok(Self { taps, symbol: spectrum.iter().map(|c| c.re).collect(), method, forward, inverse })
    }

    pub fn n(&self) -> usize {
        self.symbol.len()
    }

    /// Fourier multiplier of the sampled kernel, indexed by wave number.
    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    /// Smallest `s >= 0` with `K^ε + s` positive semidefinite.
    pub fn stabilizer(&self) -> f64 {
        self.symbol.iter().copied().fold(0.0, |m: f64, v| m.max(-v))
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n();
        match self.method {
            ConvolutionMethod::Direct => (0..n)
                .map(|j| self.taps.iter().map(|&(d, w)| w * f[(j + n - d) % n]).sum())
                .collect(),
            ConvolutionMethod::Spectral => {
                let mut buf: Vec<Complex<f64>> = f.iter().map(|&v| Complex::new(v, 0.0)).collect();
                self.forward.process(&mut buf);
                for (b, s) in buf.iter_mut().zip(&self.symbol) {
                    *b *= *s;
                }
                self.inverse.process(&mut buf);
                buf.iter().map(|c| c.re / n as f64).collect()
            }
        }
    }
}

fn cubic_w(y: f64) -> f64 {
    y * y * (y / 6.0 - 0.5)
}

/// Nonlocal pressure `f²/2 - K^ε * f`, the first variation of `F^ε`.
fn pressure(f: &[f64], c: &[f64]) -> Vec<f64> {
    f.iter().zip(c).map(|(&y, &k)| 0.5 * y * y - k).collect()
}

/// Settings for the semi-implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub max_newton: usize,
    pub newton_tol: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { max_newton: 50, newton_tol: 1e-10 }
    }
}

/// Convex-concave split of `F^ε`: the mobility, `f²/2` and `s f` are
/// implicit, `K^ε * f + s f` is explicit, with `s` from
/// [`Convolver::stabilizer`]. The raw values are returned before any
/// positivity treatment.
pub fn step_values(f: &[f64], dt: f64, conv: &Convolver, ctl: StepControl) -> Result<Vec<f64>> {
    let n = f.len();
    if n != conv.n() {
        return invalid("field and convolver sizes differ");
    }
    let h = 1.0 / n as f64;
    let stab = conv.stabilizer();
    let c: Vec<f64> = conv.apply(f).iter().zip(f).map(|(k, y)| k + stab * y).collect();
    let p0: Vec<f64> = pressure(f, &c).iter().zip(f).map(|(p, y)| p + stab * y).collect();
    let vmax = (0..n).map(|j| ((p0[(j + 1) % n] - p0[j]) / h).abs()).fold(0.0, f64::max);
    if vmax * dt > h {
        return Err(Error::StepFailure(format!("CFL violated: |v| dt = {:.3e} > h", vmax * dt)));
    }
    let tol = ctl.newton_tol * (1.0 + max_abs(f));
    let mut u = f.to_vec();
    let mut first = f64::NAN;
    for _ in 0..ctl.max_newton {
        let q: Vec<f64> = pressure(&u, &c).iter().zip(&u).map(|(p, y)| p + stab * y).collect();
        let mut flux = vec![0.0; n];
        let mut jac = CyclicBanded::zeros(n, 1);
        for j in 0..n {
            jac.add(j, 0, 1.0);
        }
        for j in 0..n {
            let jp = (j + 1) % n;
            let s = u[j] + u[jp];
            let mob = (0.5 * s).max(0.0);
            let dmob = if s > 0.0 { 0.5 } else { 0.0 };
            let g = (q[jp] - q[j]) / h;
            flux[j] = mob * g;
            let d = [dmob * g - mob * (u[j] + stab) / h, dmob * g + mob * (u[jp] + stab) / h];
            for (o, df) in (0isize..=1).zip(d) {
                jac.add(j, o, -dt * df / h);
                jac.add(jp, o - 1, dt * df / h);
            }
        }
        let residual: Vec<f64> = (0..n).map(|j| u[j] - f[j] - dt * (flux[j] - flux[(j + n - 1) % n]) / h).collect();
        let norm = max_abs(&residual);
        if !norm.is_finite() {
            return Err(Error::StepFailure("non-finite Newton residual".into()));
        }
        if norm < tol {
            return Ok(u);
        }
        if first.is_nan() {
            first = norm;
        } else if norm > 1e6 * first {
            return Err(Error::StepFailure(format!("Newton diverged (residual {norm:.3e})")));
        }
        let rhs: Vec<f64> = residual.iter().map(|r| -r).collect();
        let delta = jac.solve(&rhs).map_err(|_| Error::StepFailure("singular Jacobian".into()))?;
        let update = max_abs(&delta);
        for (ui, d) in u.iter_mut().zip(delta) {
            *ui += d;
        }
        if update < UPDATE_FLOOR * (1.0 + max_abs(&u)) {
            return Ok(u);
        }
    }
    Err(Error::StepFailure(format!("Newton did not converge in {} iterations", ctl.max_newton)))
}

pub fn step_nonlocal(f: &DensityField, dt: f64, eps: f64, kern: &KernelSpec) -> Result<DensityField> {
    if !(dt > 0.0 && eps > 0.0) {
        return invalid("step_nonlocal needs dt > 0 and eps > 0");
    }
    let conv = Convolver::new(kern, f.n(), eps, ConvolutionMethod::Spectral)?;
    let u = step_values(f.values(), dt, &conv, StepControl::default())?;
    let s = finish_step(u, f.values().iter().sum(), Default::default())?;
    Ok(DensityField::from_raw(s.values))
}

fn energy_with(f: &DensityField, conv: &Convolver) -> f64 {
    let c = conv.apply(f.values());
    f.values().iter().zip(&c).map(|(&y, &k)| cubic_w(y) + 0.5 * (y * y - y * k)).sum::<f64>() * f.h()
}

fn seminorm_with(f: &DensityField, conv: &Convolver) -> f64 {
    let c = conv.apply(f.values());
    0.5 * f.values().iter().zip(&c).map(|(&y, &k)| y * y - y * k).sum::<f64>() * f.h()
}

fn slope_with(f: &DensityField, conv: &Convolver) -> f64 {
    let p = pressure(f.values(), &conv.apply(f.values()));
    let dp = centered_diff(&p, f.h());
    f.values().iter().zip(dp).map(|(&y, d)| y * d * d).sum::<f64>().sqrt() * f.h().sqrt()
}

/// `F^ε[f]`, using `∫∫ K^ε(x-y)(f(x)-f(y))² = 2∫f² - 2∫f (K^ε*f)`.
pub fn energy_nonlocal(f: &DensityField, eps: f64, kern: &KernelSpec) -> Result<f64> {
    let conv = Convolver::new(kern, f.n(), eps, ConvolutionMethod::Spectral)?;
    Ok(energy_with(f, &conv))
}

/// `(1/4) ∫∫ K^ε(x-y) (f(x)-f(y))²`.
pub fn nonlocal_seminorm(f: &DensityField, eps: f64, kern: &KernelSpec) -> Result<f64> {
    let conv = Convolver::new(kern, f.n(), eps, ConvolutionMethod::Spectral)?;
    Ok(seminorm_with(f, &conv))
}

fn report_with(f: &DensityField, conv: &Convolver, env: &ConvexEnvelope) -> EnergyReport {
    let e = energy_with(f, conv);
    let e_star = energy_star(f, env);
    EnergyReport { e_eps: e, e_star, slope_eps: slope_with(f, conv), slope_star: slope_star(f, env), gap: e - e_star }
}

/// Integrates the nonlocal equation with `cfg.eps` as the kernel width.
/// Reports carry `F^ε` and its slope in the `e_eps` and `slope_eps` slots.
pub fn simulate_nonlocal(
    f0: &DensityField,
    cfg: &SolverConfig,
    kern: &KernelSpec,
    method: ConvolutionMethod,
) -> Result<TrajectoryRecord> {
    if !(cfg.eps > 0.0) {
        return invalid("simulate_nonlocal needs eps > 0");
    }
    let conv = Convolver::new(kern, cfg.n, cfg.eps, method)?;
    let env = compute_convex_envelope(&PotentialSpec::builtin("cubic-motivation")?, 4096)?;
    let ctl = StepControl { max_newton: cfg.max_newton, newton_tol: cfg.newton_tol };
    integrate(
        f0,
        cfg,
        FlowKind::Nonlocal,
        |u, dt| -> Result<Stepped> {
            let v = step_values(u, dt, &conv, ctl)?;
            finish_step(v, u.iter().sum(), cfg.positivity_mode)
        },
        |f| energy_with(f, &conv),
        |f| report_with(f, &conv, &env),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlocalComparison {
    pub eps: f64,
    pub eps_eff: f64,
    pub k0: f64,
    pub times: Vec<f64>,
    pub d2: Vec<f64>,
    pub max_local: Vec<f64>,
    pub max_nonlocal: Vec<f64>,
    /// Nonlocal seminorm of the initial data.
    pub seminorm: f64,
    /// `(ε_eff² / 2) |f0|²_{H¹}`.
    pub dirichlet: f64,
    pub local: TrajectoryRecord,
    pub nonlocal: TrajectoryRecord,
}

impl NonlocalComparison {
    pub fn final_gap(&self) -> f64 {
        self.d2.last().copied().unwrap_or(0.0)
    }

    pub fn sup_gap(&self) -> f64 {
        self.d2.iter().copied().fold(0.0, f64::max)
    }

    pub fn seminorm_ratio(&self) -> f64 {
        if self.dirichlet == 0.0 {
            if self.seminorm == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.seminorm / self.dirichlet
        }
    }

    /// `d2` at the output time closest to `t`.
    pub fn gap_at(&self, t: f64) -> Option<f64> {
        (0..self.times.len())
            .min_by(|&a, &b| (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs()))
            .map(|k| self.d2[k])
    }
}

/// True when final gaps strictly decrease along decreasing `eps`.
pub fn gap_decreasing(reports: &[NonlocalComparison]) -> bool {
    let mut sorted: Vec<&NonlocalComparison> = reports.iter().collect();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    sorted.windows(2).all(|w| w[1].final_gap() < w[0].final_gap())
}

fn is_cubic_motivation(spec: &PotentialSpec) -> bool {
    [0.0, 0.3, 1.0, 1.7, 2.9].iter().all(|&y| (spec.eval_w(y) - cubic_w(y)).abs() <= 1e-12 * (1.0 + cubic_w(y).abs()))
}

/// Runs the nonlocal flow with kernel width `cfg.eps` and the local flow
/// with `ε_eff`, then measures `d2` between them at every output time.
pub fn compare_local_nonlocal(
    f0: &DensityField,
    cfg: &SolverConfig,
    kern: &KernelSpec,
    spec: &PotentialSpec,
) -> Result<NonlocalComparison> {
    if !is_cubic_motivation(spec) {
        return Err(Error::Hypothesis(format!("nonlocal comparison needs W = y³/6 - y²/2, got {}", spec.name())));
    }
    let eps_eff = effective_eps(cfg.eps, kern);
    let env = compute_convex_envelope(spec, 4096)?;
    let nonlocal = simulate_nonlocal(f0, cfg, kern, ConvolutionMethod::Spectral)?;
    let local_cfg = SolverConfig { eps: eps_eff, ..cfg.clone() };
    let local = simulate_eps_with(f0, &local_cfg, spec, &env)?;
    for (label, traj) in [("nonlocal", &nonlocal), ("local", &local)] {
        if let Some(reason) = &traj.aborted {
            return Err(Error::StepFailure(format!("{label} run aborted: {reason}")));
        }
    }
    let m = default_m(f0.n());
    let d2 = local
        .snapshots
        .iter()
        .zip(&nonlocal.snapshots)
        .map(|(a, b)| w2_periodic(a, b, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(NonlocalComparison {
        eps: cfg.eps,
        eps_eff,
        k0: kern.k0(),
        times: local.times.clone(),
        d2,
        max_local: local.snapshots.iter().map(|f| f.max()).collect(),
        max_nonlocal: nonlocal.snapshots.iter().map(|f| f.max()).collect(),
        seminorm: nonlocal_seminorm(f0, cfg.eps, kern)?,
        dirichlet: 0.5 * eps_eff * eps_eff * dirichlet_seminorm_sq(f0),
        local,
        nonlocal,
    })
}
