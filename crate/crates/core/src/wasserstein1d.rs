//! Quadratic Wasserstein distance on the unit circle.
//!
//! Measures are represented through their quantile functions on the universal
//! cover. Every shifted monotone pairing `u -> (F_mu^-1(u), F_nu^-1(u + theta))`
//! is an admissible transport plan on the circle and the optimal plan is of
//! this form, so the distance reduces to a one-dimensional search over the
//! mass offset `theta`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::DensityField;
use crate::trajectory::TrajectoryRecord;

/// Samples of the inverse CDF at the mass levels `(k + 1/2) / m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRepr {
    positions: Vec<f64>,
}

impl QuantileRepr {
    /// Accepts non-decreasing positions whose unrolled span is below one.
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return invalid("no quantile samples");
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return invalid("non-finite quantile position");
        }
        if positions.windows(2).any(|w| w[1] < w[0]) {
            return invalid("quantile positions must be non-decreasing");
        }
        if positions[positions.len() - 1] - positions[0] >= 1.0 {
            return invalid("quantile span must stay below one period");
        }
        Ok(Self { positions })
    }

    pub fn m(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn level(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.m() as f64
    }
}

/// Exact inverse of the piecewise-linear CDF of a grid density.
#[derive(Debug, Clone)]
pub(crate) struct InverseCdf {
    cumulative: Vec<f64>,
    h: f64,
}

impl InverseCdf {
    pub(crate) fn new(f: &DensityField) -> Self {
        Self { cumulative: f.cumulative(), h: f.h() }
    }

    /// Smallest `x` in `[0, 1)` with `F(x) >= u` for `u` in `[0, 1)`.
    fn in_period(&self, u: f64) -> f64 {
        let c = &self.cumulative;
        let n = c.len() - 1;
        // first cell whose right edge reaches u
        let j = c[1..].partition_point(|&v| v < u).min(n - 1);
        let width = c[j + 1] - c[j];
        let frac = if width > 0.0 { ((u - c[j]) / width).clamp(0.0, 1.0) } else { 0.0 };
        (j as f64 + frac) * self.h
    }

    /// Quantile lifted to the cover: `Q(u + 1) = Q(u) + 1`.
    pub(crate) fn at(&self, u: f64) -> f64 {
        let w = u.floor();
        w + self.in_period(u - w)
    }
}

/// Periodic distance between two points of the cover.
#[inline]
pub fn dist_t(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Signed representative of `y - x` in `[-1/2, 1/2)`.
#[inline]
pub(crate) fn wrapped_diff(x: f64, y: f64) -> f64 {
    (y - x + 0.5).rem_euclid(1.0) - 0.5
}

pub fn to_quantiles(f: &DensityField, m: usize) -> Result<QuantileRepr> {
    if m == 0 {
        return invalid("quantile count must be positive");
    }
    if !(f.mass() > 0.0) {
        return invalid("zero-mass field");
    }
    let inv = InverseCdf::new(f);
    let positions = (0..m).map(|k| inv.in_period((k as f64 + 0.5) / m as f64)).collect();
    Ok(QuantileRepr { positions })
}

/// Density on `n` cells whose cover CDF interpolates linearly through the
/// points `(X_k, (k + 1/2) / m)`, continued periodically.
pub fn to_density(q: &QuantileRepr, n: usize) -> Result<DensityField> {
    if n == 0 {
        return invalid("empty grid");
    }
    let mut xs = q.positions.clone();
    xs.sort_by(f64::total_cmp);
    let g = CoverCdf::new(xs);
    let h = 1.0 / n as f64;
    let edges: Vec<f64> = (0..=n).map(|j| g.at(j as f64 * h)).collect();
    let masses = edges.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    Ok(DensityField::from_masses(masses))
}

struct CoverCdf {
    // X_0..X_{m-1} followed by X_0 + 1
    xs: Vec<f64>,
    m: usize,
}

impl CoverCdf {
    fn new(mut xs: Vec<f64>) -> Self {
        let m = xs.len();
        xs.push(xs[0] + 1.0);
        Self { xs, m }
    }

    fn at(&self, x: f64) -> f64 {
        let base = self.xs[0];
        let w = (x - base).floor();
        let r = x - w;
        let m = self.m as f64;
        let k = self.xs.partition_point(|&v| v <= r).saturating_sub(1).min(self.m - 1);
        let (a, b) = (self.xs[k], self.xs[k + 1]);
        let t = if b > a { ((r - a) / (b - a)).clamp(0.0, 1.0) } else { 1.0 };
        w + (k as f64 + 0.5 + t) / m
    }
}

/// Optimal quantile coupling between two fields.
#[derive(Debug, Clone)]
pub struct Coupling {
    /// Mass offset minimizing the transport cost.
    pub theta: f64,
    /// Squared distance `d2^2`.
    pub cost: f64,
    /// Source quantiles.
    pub source: Vec<f64>,
    /// Target quantiles at the shifted levels, lifted next to the source.
    pub target: Vec<f64>,
}

const SCAN_POINTS: usize = 128;
const RESTARTS: usize = 3;
const GOLDEN_TOL: f64 = 1e-12;

/// Transport cost of the pairing shifted by `theta`.
pub fn offset_cost(xs: &[f64], nu: &DensityField, theta: f64) -> f64 {
    offset_cost_with(xs, &InverseCdf::new(nu), theta)
}

fn offset_cost_with(xs: &[f64], inv: &InverseCdf, theta: f64) -> f64 {
    let m = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let d = dist_t(x, inv.at((k as f64 + 0.5) / m + theta));
            d * d
        })
        .sum::<f64>()
        / m
}

pub fn optimal_coupling(mu: &DensityField, nu: &DensityField, m: usize) -> Result<Coupling> {
    let source = to_quantiles(mu, m)?.positions;
    if !(nu.mass() > 0.0) {
        return invalid("zero-mass field");
    }
    let inv = InverseCdf::new(nu);
    let cost = |theta: f64| offset_cost_with(&source, &inv, theta);

    let scan: Vec<f64> = (0..SCAN_POINTS).map(|i| cost(i as f64 / SCAN_POINTS as f64)).collect();
    let mut minima: Vec<usize> = (0..SCAN_POINTS)
        .filter(|&i| {
            let prev = scan[(i + SCAN_POINTS - 1) % SCAN_POINTS];
            let next = scan[(i + 1) % SCAN_POINTS];
            scan[i] <= prev && scan[i] <= next
        })
        .collect();
    minima.sort_by(|&a, &b| scan[a].total_cmp(&scan[b]));
    minima.truncate(RESTARTS);

    let step = 1.0 / SCAN_POINTS as f64;
    let (mut best_theta, mut best_cost) = minima
        .first()
        .map(|&i| (i as f64 * step, scan[i]))
        .unwrap_or((0.0, scan[0]));
    for &i in &minima {
        let centre = i as f64 * step;
        let (theta, value) = golden_section(&cost, centre - step, centre + step);
        let (theta, value) = parabolic_refine(&cost, theta, value, 1e-6);
        if value < best_cost {
            best_cost = value;
            best_theta = theta;
        }
    }
    let theta = best_theta.rem_euclid(1.0);
    let target = source
        .iter()
        .enumerate()
        .map(|(k, &x)| x + wrapped_diff(x, inv.at((k as f64 + 0.5) / m as f64 + theta)))
        .collect();
    Ok(Coupling { theta, cost: best_cost.max(0.0), source, target })
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn parabolic_refine(f: &impl Fn(f64) -> f64, x: f64, fx: f64, h: f64) -> (f64, f64) {
    let (fl, fr) = (f(x - h), f(x + h));
    let curvature = fl - 2.0 * fx + fr;
    if curvature <= 0.0 {
        return (x, fx);
    }
    let candidate = x - 0.5 * h * (fr - fl) / curvature;
    let fc = f(candidate);
    if fc < fx {
        (candidate, fc)
    } else {
        (x, fx)
    }
}

/// Default quantile resolution for a grid of `n` cells.
pub fn default_m(n: usize) -> usize {
    4 * n
}

pub fn w2_periodic(mu: &DensityField, nu: &DensityField, m: usize) -> Result<f64> {
    Ok(optimal_coupling(mu, nu, m)?.cost.sqrt())
}

/// Displacement interpolation at `t` in `[0, 1]`, rendered on the grid of `mu`.
pub fn geodesic(mu: &DensityField, nu: &DensityField, t: f64) -> Result<DensityField> {
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("geodesic parameter {t} outside [0, 1]"));
    }
    let n = mu.n().max(nu.n());
    let c = optimal_coupling(mu, nu, default_m(n))?;
    let positions = c.source.iter().zip(&c.target).map(|(x, y)| (1.0 - t) * x + t * y).collect();
    let mut positions: Vec<f64> = positions;
    positions.sort_by(f64::total_cmp);
    to_density(&QuantileRepr { positions }, mu.n())
}

/// Discrete metric derivative between snapshots `k` and `k + 1`.
pub fn metric_speed(traj: &TrajectoryRecord, k: usize) -> Result<f64> {
    if traj.len() < 2 {
        return invalid("metric speed needs at least two snapshots");
    }
    if k + 1 >= traj.len() {
        return invalid(format!("snapshot index {k} out of range"));
    }
    let (a, b) = (&traj.snapshots[k], &traj.snapshots[k + 1]);
    let dt = traj.times[k + 1] - traj.times[k];
    Ok(w2_periodic(a, b, default_m(a.n().max(b.n())))? / dt)
}
