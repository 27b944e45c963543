use std::f64::consts::TAU;

use chflow::{DensityField, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::InitialData;

pub const GENERATORS: [&str; 4] = ["uniform", "cosine", "bump", "two-phase"];

fn param(data: &InitialData, key: &str, default: f64) -> f64 {
    data.params.get(key).copied().unwrap_or(default)
}

fn periodic_offset(x: f64, c: f64) -> f64 {
    let d = (x - c).rem_euclid(1.0);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

/// Builds a unit-mass density on `n` cells.
///
/// * `uniform`
/// * `cosine`: `1 + a cos(2πkx)`, params `a` (0.1), `k` (1), `phase` (0)
/// * `bump`: `floor + exp(-1/(1-r²))` with `r = |x - center| / width`,
///   params `center` (0.5), `width` (0.2), `floor` (0.01)
/// * `two-phase`: tanh-smoothed plateau at `high` on a centred interval,
///   `low` elsewhere, params `low`, `high`, `width` (0.02) and `fraction`
///   (default chosen so the mass is one before normalization)
///
/// Any generator accepts `noise`, a relative amplitude in `[0, 1)` of
/// multiplicative uniform noise drawn from `seed`.
pub fn generate_initial(data: &InitialData, n: usize, seed: u64) -> Result<DensityField> {
    let known: &[&str] = match data.name.as_str() {
        "uniform" => &[],
        "cosine" => &["a", "k", "phase"],
        "bump" => &["center", "width", "floor"],
        "two-phase" => &["low", "high", "width", "fraction"],
        other => return Err(Error::InvalidInput(format!("unknown initial data '{other}'"))),
    };
    if let Some(key) = data.params.keys().find(|k| k.as_str() != "noise" && !known.contains(&k.as_str())) {
        return Err(Error::InvalidInput(format!("'{}' does not take parameter '{key}'", data.name)));
    }
    let mut values: Vec<f64> = match data.name.as_str() {
        "uniform" => vec![1.0; n],
        "cosine" => {
            let a = param(data, "a", 0.1);
            let k = param(data, "k", 1.0);
            let phase = param(data, "phase", 0.0);
            if !(a.abs() < 1.0) {
                return Err(Error::InvalidInput(format!("cosine amplitude {a} would make the density negative")));
            }
            if k.fract() != 0.0 || k < 0.0 {
                return Err(Error::InvalidInput(format!("cosine wavenumber {k} must be a non-negative integer")));
            }
            cells(n).map(|x| 1.0 + a * (TAU * k * x + phase).cos()).collect()
        }
        "bump" => {
            let center = param(data, "center", 0.5);
            let width = param(data, "width", 0.2);
            let floor = param(data, "floor", 0.01);
            if !(width > 0.0 && width <= 0.5) || floor < 0.0 {
                return Err(Error::InvalidInput("bump needs 0 < width <= 1/2 and floor >= 0".into()));
            }
            cells(n)
                .map(|x| {
                    let r = periodic_offset(x, center) / width;
                    floor + if r.abs() < 1.0 { (-1.0 / (1.0 - r * r)).exp() } else { 0.0 }
                })
                .collect()
        }
        "two-phase" => {
            let low = param(data, "low", 0.5);
            let high = param(data, "high", 1.5);
            let width = param(data, "width", 0.02);
            if !(low >= 0.0 && high > low && low < 1.0 && high > 1.0) {
                return Err(Error::InvalidInput(format!("two-phase levels {low}, {high} must bracket 1 and be non-negative")));
            }
            let fraction = param(data, "fraction", (1.0 - low) / (high - low));
            if !(fraction > 0.0 && fraction < 1.0) || !(width > 0.0) {
                return Err(Error::InvalidInput("two-phase needs 0 < fraction < 1 and width > 0".into()));
            }
            let (a, b) = (0.5 - 0.5 * fraction, 0.5 + 0.5 * fraction);
            cells(n)
                .map(|x| {
                    let s = 0.5 * (((x - a) / width).tanh() - ((x - b) / width).tanh());
                    low + (high - low) * s
                })
                .collect()
        }
        _ => unreachable!(),
    };
    let noise = param(data, "noise", 0.0);
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::InvalidInput(format!("noise {noise} outside [0, 1)")));
    }
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut values {
            *v *= 1.0 + noise * rng.gen_range(-1.0..1.0);
        }
    }
    if values.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput(format!("'{}' produced a negative density", data.name)));
    }
    DensityField::normalized(values)
}

fn cells(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |j| (j as f64 + 0.5) / n as f64)
}
