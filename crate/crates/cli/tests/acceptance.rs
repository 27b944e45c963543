//! End-to-end acceptance checks. Run with `cargo test -p chflow-cli --test acceptance`;
//! prints one PASS/FAIL line per criterion and exits non-zero on any failure.

use std::f64::consts::TAU;
use std::time::Instant;

use chflow::diagnostics::{calibrate_delta, energy_dissipation_audit, wrinkling_report};
use chflow::jko::{simulate_jko, JkoConfig};
use chflow::nonlocal::{compare_local_nonlocal, KernelSpec};
use chflow::potential::{compute_convex_envelope, compute_unstable_set, default_contact_tol};
use chflow::solvers::{simulate_eps_with, simulate_limit};
use chflow::wasserstein1d::{default_m, w2_periodic};
use chflow::{DensityField, PotentialSpec, SolverConfig, TrajectoryRecord};
use chflow_cli::sweep::{grid_for, SweepReport};
use chflow_cli::{generate_initial, run_sweep, ExperimentConfig, InitialData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn fourier_cos(f: &DensityField, k: f64) -> f64 {
    2.0 * f.h() * f.values().iter().enumerate().map(|(j, v)| (v - 1.0) * (TAU * k * f.x(j)).cos()).sum::<f64>()
}

/// Least-squares slope of `ln|a(t)|` against `t`.
fn fitted_rate(times: &[f64], amps: &[f64]) -> f64 {
    let ys: Vec<f64> = amps.iter().map(|a| a.abs().ln()).collect();
    let n = times.len() as f64;
    let (mt, my) = (times.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = times.iter().zip(&ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let var: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
    cov / var
}

fn dispersion() -> Outcome {
    let spec = PotentialSpec::builtin("quartic-wrinkle").map_err(err)?;
    let env = compute_convex_envelope(&spec, 4096).map_err(err)?;
    let (n, eps, amp) = (512, 0.05, 1e-4);
    let mut worst = 0.0f64;
    let mut lines = vec![];
    for k in 1..=4 {
        let q = TAU * k as f64;
        let sigma = -q * q * (spec.eval_w2(1.0) + eps * eps * q * q);
        let t_end = 2.0 / sigma.abs();
        let f0 = DensityField::from_fn(n, |x| 1.0 + amp * (q * x).cos()).map_err(err)?;
        let cfg = SolverConfig { n, eps, dt: t_end / 200.0, t_end, theta_scheme: 0.5, record_speeds: false, ..Default::default() }
            .uniform_outputs(t_end / 20.0);
        let traj = simulate_eps_with(&f0, &cfg, &spec, &env).map_err(err)?;
        let amps: Vec<f64> = traj.snapshots.iter().map(|f| fourier_cos(f, k as f64)).collect();
        let rate = fitted_rate(&traj.times, &amps);
        let rel = (rate / sigma - 1.0).abs();
        worst = worst.max(rel);
        lines.push(format!("k={k}: {rate:.4} vs {sigma:.4}"));
    }
    check(worst < 0.05, format!("max relative error {worst:.2e} ({})", lines.join(", ")))
}

fn mass_and_monotone(traj: &TrajectoryRecord, energy: impl Fn(usize) -> f64) -> (f64, f64) {
    let m0 = traj.snapshots[0].mass();
    let drift = traj.snapshots.iter().map(|f| (f.mass() - m0).abs()).fold(0.0, f64::max);
    let e0 = energy(0).abs().max(1e-300);
    let rise = (1..traj.len()).map(|k| (energy(k) - energy(k - 1)) / e0).fold(f64::NEG_INFINITY, f64::max);
    (drift, rise)
}

fn conservation() -> Outcome {
    let generators = [
        InitialData::new("uniform", &[]),
        InitialData::new("cosine", &[("a", 0.3), ("k", 2.0)]),
        InitialData::new("bump", &[]),
        InitialData::new("two-phase", &[("low", 0.6), ("high", 1.5)]),
    ];
    let (n, eps) = (128, 0.05);
    let mut worst_drift = 0.0f64;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut runs = 0;
    for name in ["cubic-motivation", "quartic-spinodal", "quartic-wrinkle"] {
        let spec = PotentialSpec::builtin(name).map_err(err)?;
        let env = compute_convex_envelope(&spec, 4096).map_err(err)?;
        for data in &generators {
            let f0 = generate_initial(data, n, 0).map_err(err)?;
            let cfg = SolverConfig { n, eps, dt: 1e-5, t_end: 0.01, record_speeds: false, ..Default::default() }
                .uniform_outputs(5e-4);
            let eps_run = simulate_eps_with(&f0, &cfg, &spec, &env).map_err(err)?;
            let limit = simulate_limit(&f0, &SolverConfig { eps: 0.0, ..cfg }, &env).map_err(err)?;
            for (traj, use_star) in [(&eps_run, false), (&limit, true)] {
                if let Some(reason) = &traj.aborted {
                    return Err(format!("{name}/{}: aborted: {reason}", data.name));
                }
                let (drift, rise) =
                    mass_and_monotone(traj, |k| if use_star { traj.reports[k].e_star } else { traj.reports[k].e_eps });
                worst_drift = worst_drift.max(drift);
                worst_rise = worst_rise.max(rise);
                runs += 1;
            }
        }
    }
    check(
        worst_drift < 1e-10 && worst_rise <= 1e-8,
        format!("{runs} runs, max mass drift {worst_drift:.2e}, max relative energy rise {worst_rise:.2e}"),
    )
}

fn energy_audit() -> Outcome {
    let spec = PotentialSpec::builtin("quartic-spinodal").map_err(err)?;
    let env = compute_convex_envelope(&spec, 4096).map_err(err)?;
    let t_end = 0.05;
    let mut residuals = vec![];
    let mut worst_low = f64::INFINITY;
    for (n, dt) in [(32, 2e-3), (64, 1e-3), (128, 5e-4)] {
        let f0 = DensityField::from_fn(n, |x| 1.0 + 0.2 * (TAU * x).cos()).map_err(err)?;
        let cfg = SolverConfig { n, eps: 0.1, dt, t_end, theta_scheme: 0.5, ..Default::default() }.uniform_outputs(dt);
        let traj = simulate_eps_with(&f0, &cfg, &spec, &env).map_err(err)?;
        let audit = energy_dissipation_audit(&traj).map_err(err)?;
        worst_low = worst_low.min(audit.min_residual / audit.e0.abs());
        residuals.push(audit.max_abs_residual);
    }
    let orders: Vec<f64> = residuals.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    check(
        worst_low >= -1e-3 && orders.iter().all(|&p| p >= 1.0),
        format!("min residual / |E0| {worst_low:.2e}, max |residual| {}, orders {orders:.2?}", sci(&residuals)),
    )
}

fn jko_vs_fd() -> Outcome {
    let spec = PotentialSpec::builtin("cubic-motivation").map_err(err)?;
    let env = compute_convex_envelope(&spec, 4096).map_err(err)?;
    let (n, eps, t) = (128, 0.1, 0.01);
    let f0 = DensityField::from_fn(n, |x| 1.0 + 0.3 * (TAU * x).cos() + 0.2 * (2.0 * TAU * x).cos()).map_err(err)?;
    let cfg = SolverConfig { n, eps, dt: 1e-6, t_end: t, theta_scheme: 0.5, record_speeds: false, ..Default::default() };
    let reference = simulate_eps_with(&f0, &cfg, &spec, &env).map_err(err)?;
    let reference = reference.last_field().ok_or("empty reference")?.clone();
    let mut gaps = vec![];
    for tau in [0.005, 0.0025, 0.00125] {
        let jcfg = JkoConfig { tau, m: 256, ..Default::default() };
        let run = simulate_jko(&f0, &jcfg, eps, &spec, t).map_err(err)?;
        let last = run.trajectory.last_field().ok_or("empty JKO run")?;
        gaps.push(w2_periodic(last, &reference, default_m(n)).map_err(err)?);
    }
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    check(
        ratios.iter().all(|r| (1.5..=3.0).contains(r)) && gaps[2] < 5e-3,
        format!("d2 {}, ratios {ratios:.2?}", sci(&gaps)),
    )
}

fn sweep_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("quartic-spinodal", InitialData::new("cosine", &[("a", 0.1)]));
    cfg.solver.n = 128;
    cfg.solver.dt = 1e-3;
    cfg.solver.t_end = 0.5;
    cfg.eps_list = vec![0.1, 0.05, 0.025, 0.0125];
    cfg
}

fn sweep_limits(report: &SweepReport) -> Outcome {
    let rows = &report.rows;
    if let Some(bad) = rows.iter().find(|r| !r.ok()) {
        return Err(format!("eps = {} failed: {:?} {:?}", bad.eps, bad.error, bad.aborted));
    }
    let last = rows.last().ok_or("empty sweep")?;
    let d2: Vec<f64> = rows.iter().map(|r| r.sup_d2).collect();
    let egap: Vec<f64> = rows.iter().map(|r| r.energy_gap_max).collect();
    let sgap: Vec<f64> = rows.iter().map(|r| r.slope_gap_l2).collect();
    let ok = report.decreasing(|r| r.sup_d2)
        && report.decreasing(|r| r.energy_gap_max)
        && report.decreasing(|r| r.slope_gap_l2)
        && last.sup_d2 < 0.02
        && last.energy_gap_max < 0.02 * report.limit_e0.abs()
        && last.slope_gap_l2 < 0.1 * rows[0].slope_gap_l2;
    check(
        ok,
        format!("sup d2 {}; max energy gap {} (|E**(0)| = {:.3e}); slope gap {}", sci(&d2), sci(&egap), report.limit_e0.abs(), sci(&sgap)),
    )
}

fn lsc_probe(report: &SweepReport) -> Outcome {
    let rates: Vec<f64> = report.rows.iter().map(|r| r.lsc_pass_rate).collect();
    check(rates.last() == Some(&1.0), format!("pass rates by eps {rates:?}"))
}

fn wrinkling() -> Outcome {
    let spec = PotentialSpec::builtin("quartic-wrinkle").map_err(err)?;
    let env = compute_convex_envelope(&spec, 4096).map_err(err)?;
    let sigma = compute_unstable_set(&spec, &env, default_contact_tol(&spec, 4096)).map_err(err)?;
    let data = InitialData::new("two-phase", &[("low", 0.05), ("high", 2.2), ("width", 0.02)]);
    let eta = 0.05;
    let mut finals = vec![];
    for eps in [0.05, 0.025, 0.0125] {
        let n = grid_for(128, eps);
        let f0 = generate_initial(&data, n, 0).map_err(err)?;
        let cfg = SolverConfig { n, eps, dt: 1e-5, t_end: 0.2, record_speeds: false, ..Default::default() };
        let traj = simulate_eps_with(&f0, &cfg, &spec, &env).map_err(err)?;
        if let Some(reason) = traj.aborted {
            return Err(format!("eps = {eps} aborted: {reason}"));
        }
        finals.push(traj.last_field().ok_or("empty run")?.clone());
    }
    let candidates: Vec<f64> = (0..6).map(|k| 0.2 / f64::powi(2.0, k)).collect();
    let delta = calibrate_delta(&[&finals[0], &finals[1]], &sigma, eta, &candidates).ok_or("no delta without violations")?;
    let f = &finals[2];
    let rep = wrinkling_report(f, &sigma, eta, delta, 4.0 * f.max() / delta);
    check(
        rep.violation_count == 0 && rep.off_sigma_oscillating_mass < 0.02,
        format!(
            "delta {delta} (calibrated on eps 0.05, 0.025), eps 0.0125: {} violations, off-sigma oscillating mass {:.2e}",
            rep.violation_count, rep.off_sigma_oscillating_mass
        ),
    )
}

fn circle_dist(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Quantile atoms at levels (k + 1/2)/m, by bisection on the cell-wise linear CDF.
fn atoms(f: &DensityField, m: usize) -> Vec<f64> {
    let h = f.h();
    let cdf = |x: f64| -> f64 {
        f.values().iter().enumerate().map(|(j, &v)| v * (x - j as f64 * h).clamp(0.0, h)).sum()
    };
    (0..m)
        .map(|k| {
            let level = (k as f64 + 0.5) / m as f64;
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

fn brute_force(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len();
    (0..m)
        .map(|s| (0..m).map(|k| circle_dist(xs[k], ys[(k + s) % m]).powi(2)).sum::<f64>() / m as f64)
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn random_density(rng: &mut ChaCha8Rng, n: usize) -> DensityField {
    let modes: Vec<(f64, f64, f64)> =
        (1..=4).map(|k| (k as f64, rng.gen_range(-0.4..0.4) / k as f64, rng.gen_range(0.0..TAU))).collect();
    let floor = rng.gen_range(0.05..0.5);
    DensityField::from_fn(n, |x| floor + 1.0 + modes.iter().map(|&(k, a, p)| a * (TAU * k * x + p).cos()).sum::<f64>())
        .expect("positive")
}

fn random_bump(rng: &mut ChaCha8Rng, n: usize) -> DensityField {
    let (c, w) = (rng.gen_range(0.0..1.0), rng.gen_range(0.05..0.2));
    DensityField::from_fn(n, |x| 0.1 + (-(((x - c + 0.5).rem_euclid(1.0) - 0.5) / w).powi(2)).exp()).expect("positive")
}

fn w2_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    while pairs < 20 {
        let n = [48, 64, 100][pairs % 3];
        let a = if pairs % 2 == 0 { random_bump(&mut rng, n) } else { random_density(&mut rng, n) };
        let b = match pairs % 3 {
            0 => a.translated(rng.gen_range(0.05..0.45)),
            1 => random_bump(&mut rng, n),
            _ => random_density(&mut rng, n),
        };
        let oracle = brute_force(&atoms(&a, 200), &atoms(&b, 200));
        if oracle < 0.02 {
            continue;
        }
        let got = w2_periodic(&a, &b, default_m(n)).map_err(err)?;
        worst = worst.max((got / oracle - 1.0).abs());
        pairs += 1;
    }
    let m = 192;
    let tol = 1e-8 + 2.0 / m as f64;
    let mut axiom_failures = 0;
    for _ in 0..30 {
        let n = 64;
        let f: Vec<DensityField> = (0..3).map(|_| random_density(&mut rng, n)).collect();
        let d = |i: usize, j: usize| w2_periodic(&f[i], &f[j], m).expect("finite");
        let ok = d(0, 0) <= tol
            && (d(0, 1) - d(1, 0)).abs() <= tol
            && d(0, 2) <= d(0, 1) + d(1, 2) + tol
            && d(0, 1) >= 0.0;
        axiom_failures += usize::from(!ok);
    }
    check(
        worst < 0.01 && axiom_failures == 0,
        format!("20 pairs, max relative error {worst:.2e}; 30 triples, {axiom_failures} axiom failures"),
    )
}

fn contraction() -> Outcome {
    let spec = PotentialSpec::builtin("quartic-spinodal").map_err(err)?;
    let env = compute_convex_envelope(&spec, 4096).map_err(err)?;
    let n = 128;
    let a = generate_initial(&InitialData::new("cosine", &[("a", 0.5)]), n, 0).map_err(err)?;
    let b = generate_initial(&InitialData::new("bump", &[("center", 0.3), ("width", 0.3), ("floor", 0.2)]), n, 0).map_err(err)?;
    let cfg = SolverConfig { n, eps: 0.0, dt: 1e-4, t_end: 0.05, record_speeds: false, ..Default::default() }
        .uniform_outputs(2.5e-3);
    let x = simulate_limit(&a, &cfg, &env).map_err(err)?;
    let y = simulate_limit(&b, &cfg, &env).map_err(err)?;
    let m = 4 * default_m(n);
    let d: Vec<f64> =
        x.snapshots.iter().zip(&y.snapshots).map(|(p, q)| w2_periodic(p, q, m)).collect::<chflow::Result<_>>().map_err(err)?;
    let worst = d.windows(2).map(|w| (w[1] - w[0]) / w[0]).fold(f64::NEG_INFINITY, f64::max);
    check(
        worst <= 1e-6,
        format!("{} output times, d2 {:.4e} -> {:.4e}, largest relative increase {worst:.2e}", d.len(), d[0], d[d.len() - 1]),
    )
}

fn nonlocal() -> Outcome {
    let spec = PotentialSpec::builtin("cubic-motivation").map_err(err)?;
    let kern = KernelSpec::bump();
    let n = 512;
    let f0 = DensityField::from_fn(n, |x| 1.0 + 0.05 * (TAU * x).cos() + 0.025 * (2.0 * TAU * x).sin()).map_err(err)?;
    let mut gaps = vec![];
    let mut ratio = f64::NAN;
    for eps in [0.1, 0.05] {
        let cfg = SolverConfig { n, eps, dt: 1e-5, t_end: 0.05, record_speeds: false, ..Default::default() }
            .uniform_outputs(0.01);
        let cmp = compare_local_nonlocal(&f0, &cfg, &kern, &spec).map_err(err)?;
        gaps.push(cmp.gap_at(0.05).ok_or("no output at t = 0.05")?);
        ratio = cmp.seminorm_ratio();
    }
    check(
        gaps[1] < gaps[0] && (ratio - 1.0).abs() < 0.1,
        format!("d2 at t=0.05 {}; seminorm / Dirichlet at eps 0.05 = {ratio:.4}", sci(&gaps)),
    )
}

fn main() {
    let started = Instant::now();
    let sweep = run_sweep(&sweep_config());
    let sweep_time = started.elapsed();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("dispersion oracle", Box::new(dispersion)),
        ("conservation and monotonicity", Box::new(conservation)),
        ("energy-inequality audit", Box::new(energy_audit)),
        ("JKO vs finite differences", Box::new(jko_vs_fd)),
        ("sharp-interface sweep", Box::new(|| sweep.as_ref().map_err(err).and_then(sweep_limits))),
        ("slope lower bound", Box::new(|| sweep.as_ref().map_err(err).and_then(lsc_probe))),
        ("wrinkling localization", Box::new(wrinkling)),
        ("W2 oracle equivalence", Box::new(w2_oracle)),
        ("limit-flow contraction", Box::new(contraction)),
        ("nonlocal consistency", Box::new(nonlocal)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = run();
        let mut elapsed = t.elapsed();
        if i == 4 {
            elapsed += sweep_time;
        }
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} [{elapsed:.1?}]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} [{elapsed:.1?}]: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
