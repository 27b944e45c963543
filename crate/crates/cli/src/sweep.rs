use std::io::{self, Write};
use std::path::Path;

use chflow::diagnostics::{calibrate_delta, well_preparedness, wrinkling_report, Preparedness, PreparednessTol};
use chflow::potential::{compute_convex_envelope, compute_unstable_set, default_contact_tol};
use chflow::solvers::{simulate_eps_with, simulate_limit};
use chflow::wasserstein1d::{default_m, w2_periodic};
use chflow::{DensityField, Error, Result, TrajectoryRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::initial::generate_initial;
use crate::manifest::Manifest;

/// Cells needed to put at least eight cells across an interface of width `eps`.
pub fn grid_for(n_base: usize, eps: f64) -> usize {
    n_base.max((8.0 / eps).ceil() as usize)
}

/// Tolerance of the slope lower-semicontinuity probe.
pub fn lsc_tolerance(slope_star: f64) -> f64 {
    0.1 * slope_star + 1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrinkleSummary {
    pub delta: f64,
    pub violations: usize,
    pub oscillating_mass_fraction: f64,
    pub off_sigma_oscillating_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub n: usize,
    pub sup_d2: f64,
    /// Trapezoid rule on the output times of `(slope_eps - slope_star(ν₀))²`.
    pub slope_gap_l2: f64,
    pub energy_gap_max: f64,
    pub energy_gap_final: f64,
    /// Fraction of output times passing the slope lower bound.
    pub lsc_pass_rate: f64,
    pub wrinkle: Option<WrinkleSummary>,
    pub aborted: Option<String>,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(eps: f64, n: usize, error: String) -> Self {
        Self {
            eps,
            n,
            sup_d2: 0.0,
            slope_gap_l2: 0.0,
            energy_gap_max: 0.0,
            energy_gap_final: 0.0,
            lsc_pass_rate: 0.0,
            wrinkle: None,
            aborted: None,
            error: Some(error),
        }
    }

    pub fn ok(&self) -> bool {
        self.aborted.is_none() && self.error.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub potential: String,
    pub rows: Vec<SweepRow>,
    pub limit_n: usize,
    /// `E**` of the initial data on the limit grid.
    pub limit_e0: f64,
    pub preparedness: Preparedness,
    pub limit: TrajectoryRecord,
    #[serde(skip)]
    pub runs: Vec<Option<TrajectoryRecord>>,
}

impl SweepReport {
    /// True when `metric` strictly decreases along the rows.
    pub fn decreasing(&self, metric: impl Fn(&SweepRow) -> f64) -> bool {
        self.rows.windows(2).all(|w| metric(&w[1]) < metric(&w[0]))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "eps,n,sup_d2,slope_gap_l2,energy_gap_max,energy_gap_final,lsc_pass_rate,delta,violations,off_sigma_mass,status"
        )?;
        for r in &self.rows {
            let (delta, viol, off) = r
                .wrinkle
                .as_ref()
                .map_or((f64::NAN, 0, f64::NAN), |w| (w.delta, w.violations, w.off_sigma_oscillating_mass));
            let status = r.error.as_deref().or(r.aborted.as_deref()).unwrap_or("ok").replace(',', ";");
            writeln!(
                out,
                "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.6},{},{},{:.6e},{}",
                r.eps,
                r.n,
                r.sup_d2,
                r.slope_gap_l2,
                r.energy_gap_max,
                r.energy_gap_final,
                r.lsc_pass_rate,
                delta,
                viol,
                off,
                status
            )?;
        }
        Ok(())
    }
}

fn compare(run: &TrajectoryRecord, limit: &TrajectoryRecord, eps: f64) -> Result<SweepRow> {
    let k = run.len().min(limit.len());
    let m = default_m(run.snapshots[0].n().max(limit.snapshots[0].n()));
    let mut sup_d2 = 0.0f64;
    let mut gaps = Vec::with_capacity(k);
    let mut passes = 0;
    let mut slope_sq = Vec::with_capacity(k);
    for i in 0..k {
        if (run.times[i] - limit.times[i]).abs() > 1e-12 {
            return Err(Error::InvalidInput("runs have different output times".into()));
        }
        sup_d2 = sup_d2.max(w2_periodic(&run.snapshots[i], &limit.snapshots[i], m)?);
        let (r, l) = (&run.reports[i], &limit.reports[i]);
        gaps.push((r.e_eps - l.e_star).abs());
        slope_sq.push((r.slope_eps - l.slope_star).powi(2));
        if r.slope_eps >= l.slope_star - lsc_tolerance(l.slope_star) {
            passes += 1;
        }
    }
    let slope_gap_l2 =
        (1..k).map(|i| 0.5 * (run.times[i] - run.times[i - 1]) * (slope_sq[i] + slope_sq[i - 1])).sum();
    Ok(SweepRow {
        eps,
        n: run.snapshots[0].n(),
        sup_d2,
        slope_gap_l2,
        energy_gap_max: gaps.iter().copied().fold(0.0, f64::max),
        energy_gap_final: gaps.last().copied().unwrap_or(0.0),
        lsc_pass_rate: passes as f64 / k.max(1) as f64,
        wrinkle: None,
        aborted: run.aborted.clone(),
        error: None,
    })
}

/// Runs the limit flow once and the ε-flow for every `eps_list` entry in
/// parallel, then tabulates the distances, slope gaps and energy gaps.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    if cfg.eps_list.is_empty() {
        return Err(Error::InvalidInput("sweep needs a non-empty eps_list".into()));
    }
    let spec = cfg.potential.resolve()?;
    let env = compute_convex_envelope(&spec, 4096)?;
    let sigma = compute_unstable_set(&spec, &env, default_contact_tol(&spec, 4096))?;

    let grids: Vec<usize> = cfg.eps_list.iter().map(|&e| grid_for(cfg.solver.n, e)).collect();
    let limit_n = *grids.iter().max().expect("non-empty");
    let f_limit = generate_initial(&cfg.initial_data, limit_n, cfg.seed)?;
    let family = cfg
        .eps_list
        .iter()
        .zip(&grids)
        .map(|(&e, &n)| Ok((e, generate_initial(&cfg.initial_data, n, cfg.seed)?)))
        .collect::<Result<Vec<(f64, DensityField)>>>()?;
    let preparedness = well_preparedness(&family, &f_limit, &env, &spec, PreparednessTol::default())?;
    if !preparedness.well_prepared && !cfg.override_preparedness {
        return Err(Error::Hypothesis(format!(
            "initial data are not well prepared (last row d2 = {:.3e}, energy gap = {:.3e})",
            preparedness.rows.last().map_or(f64::NAN, |r| r.d2),
            preparedness.rows.last().map_or(f64::NAN, |r| r.energy_gap)
        )));
    }

    let limit = simulate_limit(&f_limit, &cfg.solver_for(0.0, limit_n), &env)?;
    if let Some(reason) = &limit.aborted {
        return Err(Error::StepFailure(format!("limit run aborted: {reason}")));
    }

    let results: Vec<Result<TrajectoryRecord>> = family
        .par_iter()
        .map(|(eps, f)| simulate_eps_with(f, &cfg.solver_for(*eps, f.n()), &spec, &env))
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    let mut runs = Vec::with_capacity(results.len());
    for ((eps, f), res) in family.iter().zip(results) {
        match res.and_then(|run| Ok((compare(&run, &limit, *eps)?, run))) {
            Ok((row, run)) => {
                rows.push(row);
                runs.push(Some(run));
            }
            Err(e) => {
                rows.push(SweepRow::failed(*eps, f.n(), e.to_string()));
                runs.push(None);
            }
        }
    }

    let finals: Vec<&DensityField> = runs.iter().flatten().filter_map(|r| r.last_field()).collect();
    let delta = match cfg.wrinkle.delta {
        Some(d) => Some(d),
        None => calibrate_delta(&finals, &sigma, cfg.wrinkle.eta, &cfg.wrinkle.delta_candidates)
            .or_else(|| cfg.wrinkle.delta_candidates.iter().copied().reduce(f64::min)),
    };
    if let Some(delta) = delta {
        for (row, run) in rows.iter_mut().zip(&runs) {
            if let Some(f) = run.as_ref().and_then(|r| r.last_field()) {
                let rep = wrinkling_report(f, &sigma, cfg.wrinkle.eta, delta, 4.0 * f.max() / delta);
                row.wrinkle = Some(WrinkleSummary {
                    delta,
                    violations: rep.violation_count,
                    oscillating_mass_fraction: rep.oscillating_mass_fraction,
                    off_sigma_oscillating_mass: rep.off_sigma_oscillating_mass,
                });
            }
        }
    }

    Ok(SweepReport {
        potential: spec.name().to_string(),
        limit_n,
        limit_e0: limit.reports[0].e_star,
        rows,
        preparedness,
        limit,
        runs,
    })
}

/// Writes `sweep.csv`, `sweep.json`, `limit.csv` and the manifest into `dir`.
pub fn write_sweep(cfg: &ExperimentConfig, report: &SweepReport, dir: &Path) -> io::Result<Manifest> {
    let mut manifest = Manifest::new(cfg);
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    manifest.write_output(dir, "sweep.csv", &csv)?;
    let json = serde_json::to_vec_pretty(report).map_err(io::Error::other)?;
    manifest.write_output(dir, "sweep.json", &json)?;
    let mut limit_csv = Vec::new();
    report.limit.write_csv(&mut limit_csv)?;
    manifest.write_output(dir, "limit.csv", &limit_csv)?;
    for (row, run) in report.rows.iter().zip(&report.runs) {
        manifest.grid.insert(format!("eps={}", row.eps), row.n);
        if let Some(run) = run {
            let mut buf = Vec::new();
            run.write_csv(&mut buf)?;
            manifest.write_output(dir, &format!("eps_{}.csv", row.eps), &buf)?;
        }
    }
    manifest.grid.insert("limit".into(), report.limit_n);
    manifest.finish(dir)?;
    Ok(manifest)
}
