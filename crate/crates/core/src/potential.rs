//! Double-well potentials, their convex envelope and the unstable set.
//!
//! Potentials are polynomials on a working interval `[0, domain_max]`,
//! normalized so that `W(0) = W'(0) = 0`. Beyond `domain_max` they are
//! continued by their second-order Taylor polynomial at `domain_max`, which
//! keeps optimizers that step transiently outside the interval well defined.
//!
//! The convex envelope is computed from a sampled lower hull whose
//! non-contact gaps are refined to the exact tangency points by bisection.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Something with a value and two derivatives on `[0, domain_max]`.
pub trait ScalarProfile: Send + Sync {
    fn value(&self, y: f64) -> f64;
    fn slope(&self, y: f64) -> f64;
    fn curvature(&self, y: f64) -> f64;
    fn domain_max(&self) -> f64;
}

/// Polynomial potential `W(y) = sum_k c_k y^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    name: String,
    coeffs: Vec<f64>,
    domain_max: f64,
}

pub const BUILTIN_NAMES: [&str; 5] = [
    "cubic-motivation",
    "quartic-spinodal",
    "quartic-wrinkle",
    "quartic-convex",
    "thin-film",
];

impl PotentialSpec {
    /// Coefficients in increasing degree. Rejects potentials that violate
    /// `W(0) = W'(0) = 0`; see [`PotentialSpec::normalize_affine`].
    pub fn polynomial(name: impl Into<String>, coeffs: Vec<f64>, domain_max: f64) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        if !(domain_max.is_finite() && domain_max > 0.0) {
            return Err(Error::InvalidInput(format!("domain_max must be positive, got {domain_max}")));
        }
        let c0 = coeffs.first().copied().unwrap_or(0.0);
        let c1 = coeffs.get(1).copied().unwrap_or(0.0);
        if c0.abs() > 1e-14 || c1.abs() > 1e-14 {
            return Err(Error::InvalidInput(format!(
                "potential must satisfy W(0) = W'(0) = 0 (got c0 = {c0}, c1 = {c1})"
            )));
        }
        let mut coeffs = coeffs;
        while coeffs.len() > 2 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Ok(Self { name: name.into(), coeffs, domain_max })
    }

    /// Drops the affine part of a coefficient list. Adding an affine function
    /// to `W` leaves both evolution equations unchanged.
    pub fn normalize_affine(mut coeffs: Vec<f64>) -> Vec<f64> {
        if coeffs.len() < 2 {
            coeffs.resize(2, 0.0);
        }
        coeffs[0] = 0.0;
        coeffs[1] = 0.0;
        coeffs
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let coeffs = builtin_coeffs(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown potential '{name}'")))?;
        let domain_max = suggest_domain_max(&coeffs, 2.0)?;
        Self::polynomial(name, coeffs, domain_max)
    }

    pub fn with_domain_max(&self, domain_max: f64) -> Result<Self> {
        Self::polynomial(self.name.clone(), self.coeffs.clone(), domain_max)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval_w(&self, y: f64) -> f64 {
        let top = self.domain_max;
        if y > top {
            let d = y - top;
            poly(&self.coeffs, top, 0) + poly(&self.coeffs, top, 1) * d + 0.5 * poly(&self.coeffs, top, 2) * d * d
        } else {
            poly(&self.coeffs, y, 0)
        }
    }

    pub fn eval_w1(&self, y: f64) -> f64 {
        let top = self.domain_max;
        if y > top {
            poly(&self.coeffs, top, 1) + poly(&self.coeffs, top, 2) * (y - top)
        } else {
            poly(&self.coeffs, y, 1)
        }
    }

    pub fn eval_w2(&self, y: f64) -> f64 {
        poly(&self.coeffs, y.min(self.domain_max), 2)
    }

    /// Unchecked `y W'(y) - W(y)`.
    pub fn q1(&self, y: f64) -> f64 {
        y * self.eval_w1(y) - self.eval_w(y)
    }
}

impl fmt::Display for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} on [0, {}]", self.name, self.domain_max)
    }
}

impl ScalarProfile for PotentialSpec {
    fn value(&self, y: f64) -> f64 {
        self.eval_w(y)
    }
    fn slope(&self, y: f64) -> f64 {
        self.eval_w1(y)
    }
    fn curvature(&self, y: f64) -> f64 {
        self.eval_w2(y)
    }
    fn domain_max(&self) -> f64 {
        self.domain_max
    }
}

fn builtin_coeffs(name: &str) -> Option<Vec<f64>> {
    let c = match name {
        // W = y^3/6 - y^2/2
        "cubic-motivation" => vec![0.0, 0.0, -0.5, 1.0 / 6.0],
        // W'' = (y - 2)(y - 3)
        "quartic-spinodal" => vec![0.0, 0.0, 3.0, -5.0 / 6.0, 1.0 / 12.0],
        // W'' = (y - 0.5)(y - 1.5)
        "quartic-wrinkle" => vec![0.0, 0.0, 0.375, -1.0 / 3.0, 1.0 / 12.0],
        "quartic-convex" => vec![0.0, 0.0, 0.0, 0.0, 1.0],
        "thin-film" => vec![0.0, 0.0],
        _ => return None,
    };
    Some(c)
}

/// k-th derivative of the polynomial at `y` (Horner).
fn poly(coeffs: &[f64], y: f64, k: usize) -> f64 {
    let mut acc = 0.0;
    for (deg, &c) in coeffs.iter().enumerate().skip(k).rev() {
        let mut factor = c;
        for i in 0..k {
            factor *= (deg - i) as f64;
        }
        acc = acc * y + factor;
    }
    acc
}

/// Working interval for a coefficient list: `max(3 m0, 2 max_density, b_p + 1)`,
/// with the envelope first computed on a generous provisional interval.
pub fn suggest_domain_max(coeffs: &[f64], max_density: f64) -> Result<f64> {
    let provisional_top = 10.0 * max_density.max(1.0);
    let probe = PotentialSpec::polynomial("probe", coeffs.to_vec(), provisional_top)?;
    let env = compute_convex_envelope(&probe, 4096)?;
    let sigma = compute_unstable_set(&probe, &env, default_contact_tol(&probe, 4096))?;
    let last_b = sigma.intervals.last().map(|i| i.1).unwrap_or(0.0);
    Ok((3.0 * sigma.m0).max(2.0 * max_density).max(last_b + 1.0))
}

/// `Q'(y) = y W'(y) - W(y)` on the working interval.
pub fn eval_q1(spec: &PotentialSpec, y: f64) -> Result<f64> {
    if !(0.0..=spec.domain_max).contains(&y) {
        return Err(Error::Domain { value: y, max: spec.domain_max });
    }
    Ok(spec.q1(y))
}

/// One maximal component of `{W > W**}` together with its supporting line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub a: f64,
    pub b: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl AffinePiece {
    fn contains(&self, y: f64) -> bool {
        self.a <= y && y <= self.b
    }
}

/// Convex envelope `W**` of a profile on its working interval.
#[derive(Clone)]
pub struct ConvexEnvelope {
    base: Arc<dyn ScalarProfile>,
    pieces: Vec<AffinePiece>,
}

impl fmt::Debug for ConvexEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexEnvelope").field("pieces", &self.pieces).finish()
    }
}

impl ConvexEnvelope {
    /// Boundaries of the contact set, sorted.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().flat_map(|p| [p.a, p.b]).collect()
    }

    pub fn pieces(&self) -> &[AffinePiece] {
        &self.pieces
    }

    fn piece_at(&self, y: f64) -> Option<&AffinePiece> {
        self.pieces.iter().find(|p| p.contains(y))
    }

    pub fn eval_wss(&self, y: f64) -> f64 {
        match self.piece_at(y) {
            Some(p) => p.slope * y + p.intercept,
            None => self.base.value(y),
        }
    }

    /// Slope of the envelope; on a breakpoint the affine piece wins.
    pub fn eval_wss1(&self, y: f64) -> f64 {
        match self.piece_at(y) {
            Some(p) => p.slope,
            None => self.base.slope(y),
        }
    }

    pub fn eval_wss2(&self, y: f64) -> f64 {
        match self.piece_at(y) {
            Some(_) => 0.0,
            None => self.base.curvature(y),
        }
    }

    /// `Q**'(z) = z W**'(z) - W**(z)`; constant `-intercept` on affine pieces.
    pub fn eval_qss1(&self, z: f64) -> f64 {
        match self.piece_at(z) {
            Some(p) => -p.intercept,
            None => z * self.base.slope(z) - self.base.value(z),
        }
    }

    /// `Q**''(z) = z W**''(z)`.
    pub fn eval_qss2(&self, z: f64) -> f64 {
        z * self.eval_wss2(z)
    }

    /// `W(y) - W**(y)`.
    pub fn gap(&self, y: f64) -> f64 {
        self.base.value(y) - self.eval_wss(y)
    }

    pub fn base(&self) -> &Arc<dyn ScalarProfile> {
        &self.base
    }
}

impl ScalarProfile for ConvexEnvelope {
    fn value(&self, y: f64) -> f64 {
        self.eval_wss(y)
    }
    fn slope(&self, y: f64) -> f64 {
        self.eval_wss1(y)
    }
    fn curvature(&self, y: f64) -> f64 {
        self.eval_wss2(y)
    }
    fn domain_max(&self) -> f64 {
        self.base.domain_max()
    }
}

/// Default contact tolerance `1e-9 (max W - min W)` on the sampling grid.
pub fn default_contact_tol(profile: &dyn ScalarProfile, n_samples: usize) -> f64 {
    let top = profile.domain_max();
    let (lo, hi) = (0..n_samples)
        .map(|i| profile.value(top * i as f64 / (n_samples - 1) as f64))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(w), hi.max(w)));
    1e-9 * (hi - lo).max(f64::MIN_POSITIVE)
}

/// Convex envelope of a potential from `n_samples` points of its graph.
pub fn compute_convex_envelope(spec: &PotentialSpec, n_samples: usize) -> Result<ConvexEnvelope> {
    compute_convex_envelope_of(Arc::new(spec.clone()), n_samples)
}

/// Same as [`compute_convex_envelope`] for any profile, e.g. an envelope.
pub fn compute_convex_envelope_of(
    base: Arc<dyn ScalarProfile>,
    n_samples: usize,
) -> Result<ConvexEnvelope> {
    if n_samples < 64 {
        return Err(Error::InvalidInput(format!("n_samples must be >= 64, got {n_samples}")));
    }
    let top = base.domain_max();
    let ys: Vec<f64> = (0..n_samples).map(|i| top * i as f64 / (n_samples - 1) as f64).collect();
    let ws: Vec<f64> = ys.iter().map(|&y| base.value(y)).collect();
    if let Some(i) = ws.iter().position(|w| !w.is_finite()) {
        return Err(Error::Evaluation(ys[i]));
    }
    let tol = default_contact_tol(base.as_ref(), n_samples);

    let hull = lower_hull(&ys, &ws);
    let mut pieces = Vec::new();
    for pair in hull.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        if j == i + 1 {
            continue;
        }
        let chord = |y: f64| ws[i] + (ws[j] - ws[i]) * (y - ys[i]) / (ys[j] - ys[i]);
        let max_gap = (i + 1..j).map(|k| ws[k] - chord(ys[k])).fold(0.0, f64::max);
        if max_gap <= tol {
            continue;
        }
        let (a, b) = refine_piece(base.as_ref(), &ys, i, j);
        let slope = (base.value(b) - base.value(a)) / (b - a);
        let intercept = base.value(a) - slope * a;
        pieces.push(AffinePiece { a, b, slope, intercept });
    }
    Ok(ConvexEnvelope { base, pieces })
}

/// Andrew's monotone chain, lower half; collinear points are dropped.
fn lower_hull(xs: &[f64], ys: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for k in 0..xs.len() {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (xs[a] - xs[o]) * (ys[k] - ys[o]) - (ys[a] - ys[o]) * (xs[k] - xs[o]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    hull
}

const REFINE_TOL: f64 = 1e-10;

/// Tangency condition of the line through `(a, W(a))` and `(b, W(b))` at `t`.
fn tangency(base: &dyn ScalarProfile, a: f64, b: f64, t: f64) -> f64 {
    base.slope(t) * (b - a) - (base.value(b) - base.value(a))
}

/// Root of `g` in a bracket around `ys[k]`, widened until the sign changes.
fn bisect_near(ys: &[f64], k: usize, g: impl Fn(f64) -> f64) -> f64 {
    let last = ys.len() - 1;
    for width in [1usize, 2, 4, 8, 16] {
        let lo = ys[k.saturating_sub(width)];
        let hi = ys[(k + width).min(last)];
        if let Some(root) = bisect(lo, hi, &g) {
            return root;
        }
    }
    ys[k]
}

fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> Option<f64> {
    let (mut glo, ghi) = (g(lo), g(hi));
    if glo == 0.0 {
        return Some(lo);
    }
    if ghi == 0.0 {
        return Some(hi);
    }
    if glo.signum() == ghi.signum() {
        return None;
    }
    while hi - lo > REFINE_TOL {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return Some(mid);
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Exact endpoints of the affine piece spanning hull vertices `i < j`.
fn refine_piece(base: &dyn ScalarProfile, ys: &[f64], i: usize, j: usize) -> (f64, f64) {
    let last = ys.len() - 1;
    match (i == 0, j == last) {
        (true, true) => (ys[0], ys[last]),
        (true, false) => {
            let a = ys[0];
            (a, bisect_near(ys, j, |b| tangency(base, a, b, b)))
        }
        (false, true) => {
            let b = ys[last];
            (bisect_near(ys, i, |a| tangency(base, a, b, a)), b)
        }
        (false, false) => {
            let right_for = |a: f64| bisect_near(ys, j, |b| tangency(base, a, b, b));
            let a = bisect_near(ys, i, |a| tangency(base, a, right_for(a), a));
            (a, right_for(a))
        }
    }
}

/// `Sigma = cl({W > W**} ∪ {0})` split into closed intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstableSet {
    pub intervals: Vec<(f64, f64)>,
    pub m0: f64,
    pub degenerate_first: bool,
}

/// Upper bound on the number of components before (H3) is declared violated.
pub const MAX_SIGMA_COMPONENTS: usize = 32;

pub fn compute_unstable_set(spec: &PotentialSpec, env: &ConvexEnvelope, tol: f64) -> Result<UnstableSet> {
    unstable_set_with_limit(spec, env, tol, MAX_SIGMA_COMPONENTS)
}

pub fn unstable_set_with_limit(
    spec: &PotentialSpec,
    env: &ConvexEnvelope,
    tol: f64,
    max_components: usize,
) -> Result<UnstableSet> {
    let mut raw: Vec<(f64, f64)> = Vec::new();
    for p in env.pieces() {
        let max_gap = (1..256)
            .map(|k| {
                let y = p.a + (p.b - p.a) * k as f64 / 256.0;
                spec.eval_w(y) - env.eval_wss(y)
            })
            .fold(0.0, f64::max);
        if max_gap > tol {
            raw.push((p.a, p.b));
        }
    }
    raw.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for (a, b) in raw {
        match intervals.last_mut() {
            Some(last) if a <= last.1 + REFINE_TOL => last.1 = last.1.max(b),
            _ => intervals.push((a, b)),
        }
    }
    let degenerate_first = intervals.first().map_or(true, |iv| iv.0 > REFINE_TOL);
    if degenerate_first {
        intervals.insert(0, (0.0, 0.0));
    } else {
        intervals[0].0 = 0.0;
    }
    if intervals.len() > max_components {
        return Err(Error::Hypothesis(format!(
            "unstable set has {} components (limit {max_components})",
            intervals.len()
        )));
    }
    let m0 = if intervals.len() == 1 {
        intervals[0].1 + 1.0
    } else {
        0.5 * (intervals[0].1 + intervals[1].0)
    };
    Ok(UnstableSet { intervals, m0, degenerate_first })
}

impl UnstableSet {
    pub fn p(&self) -> usize {
        self.intervals.len()
    }

    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= y && y <= b)
    }
}

/// Euclidean distance from `y` to the union of the intervals of `Sigma`.
pub fn distance_to_sigma(y: f64, sigma: &UnstableSet) -> f64 {
    sigma
        .intervals
        .iter()
        .map(|&(a, b)| if y < a { a - y } else if y > b { y - b } else { 0.0 })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// `max |Q'| / (1 + |W|)` on the sampling grid.
    pub h1_q_ratio: f64,
    /// `max |W'| / (1 + |W|)` on the sampling grid.
    pub h1_w_ratio: f64,
    pub h2_tail_increasing: bool,
    /// `min W''` over the part of `Sigma^c` at distance at least `h4_margin` from `Sigma`.
    pub h4_min_curvature: f64,
    pub h4_margin: f64,
    pub nonnegative: bool,
    pub violations: Vec<String>,
    pub notes: Vec<String>,
}

impl HypothesisReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Numeric audit of the structural assumptions on `W`. Never fails.
pub fn validate_hypotheses(spec: &PotentialSpec, env: &ConvexEnvelope) -> HypothesisReport {
    let n = 2048;
    let top = spec.domain_max();
    let ys: Vec<f64> = (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect();
    let mut violations = Vec::new();
    let mut notes = Vec::new();

    let ratio = |num: f64, w: f64| num.abs() / (1.0 + w.abs());
    let h1_q_ratio = ys.iter().map(|&y| ratio(spec.q1(y), spec.eval_w(y))).fold(0.0, f64::max);
    let h1_w_ratio = ys.iter().map(|&y| ratio(spec.eval_w1(y), spec.eval_w(y))).fold(0.0, f64::max);
    if !h1_q_ratio.is_finite() || !h1_w_ratio.is_finite() {
        violations.push("H1: growth ratios are not finite on the working interval".into());
    }

    let sigma = compute_unstable_set(spec, env, default_contact_tol(spec, 4096));
    let sigma = match sigma {
        Ok(s) => s,
        Err(e) => {
            violations.push(format!("H3: {e}"));
            return HypothesisReport {
                h1_q_ratio,
                h1_w_ratio,
                h2_tail_increasing: false,
                h4_min_curvature: f64::NAN,
                h4_margin: 0.0,
                nonnegative: false,
                violations,
                notes,
            };
        }
    };
    let last_b = sigma.intervals.last().map_or(0.0, |iv| iv.1);

    let tail: Vec<f64> = ys.iter().copied().filter(|&y| y >= last_b).collect();
    let h2_tail_increasing =
        tail.len() > 1 && tail.windows(2).all(|w| spec.q1(w[1]) > spec.q1(w[0]));
    if !h2_tail_increasing {
        violations.push(format!("H2: Q' is not increasing on [{last_b:.4}, {top}]"));
    }
    notes.push("H2 is a limit at infinity; only monotonicity of Q' past the last breakpoint is checked".into());

    let h4_margin = 1e-2 * top;
    let h4_min_curvature = ys
        .iter()
        .copied()
        .filter(|&y| distance_to_sigma(y, &sigma) >= h4_margin)
        .map(|y| spec.eval_w2(y))
        .fold(f64::INFINITY, f64::min);
    if h4_min_curvature <= 0.0 {
        violations.push(format!("H4: W'' reaches {h4_min_curvature:.4e} outside Sigma"));
    }

    let nonnegative = ys.iter().all(|&y| spec.eval_w(y) >= -1e-14);
    if !nonnegative {
        notes.push("W takes negative values; only W(0) = W'(0) = 0 is required".into());
    }

    HypothesisReport {
        h1_q_ratio,
        h1_w_ratio,
        h2_tail_increasing,
        h4_min_curvature,
        h4_margin,
        nonnegative,
        violations,
        notes,
    }
}
