use std::io;
use std::path::Path;

use chflow::diagnostics::{calibrate_delta, energy_dissipation_audit, wrinkling_report, AuditReport};
use chflow::jko::{simulate_jko, LedgerRow};
use chflow::nonlocal::{compare_local_nonlocal, KernelSpec, NonlocalComparison};
use chflow::potential::{compute_convex_envelope, compute_unstable_set, default_contact_tol};
use chflow::solvers::{simulate_eps_with, simulate_limit};
use chflow::wasserstein1d::{default_m, w2_periodic};
use chflow::{DensityField, Result, SolverConfig, TrajectoryRecord};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::initial::generate_initial;
use crate::manifest::Manifest;
use crate::sweep::WrinkleSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Eps,
    Limit,
    Jko,
    Nonlocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationRow {
    pub t: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleRun {
    pub mode: Mode,
    pub trajectory: TrajectoryRecord,
    pub audit: Option<AuditReport>,
    pub wrinkles: Vec<(f64, WrinkleSummary)>,
    /// JKO against the finite-difference flow at the JKO step times.
    pub cross_validation: Vec<CrossValidationRow>,
    pub jko_ledger: Vec<LedgerRow>,
    pub nonlocal: Option<NonlocalComparison>,
}

/// Runs one flow on `cfg.solver.n` cells with `cfg.solver.eps` and attaches
/// the energy audit and wrinkling reports at the output times.
pub fn run_single(cfg: &ExperimentConfig, mode: Mode) -> Result<SingleRun> {
    cfg.validate()?;
    let spec = cfg.potential.resolve()?;
    let env = compute_convex_envelope(&spec, 4096)?;
    let sigma = compute_unstable_set(&spec, &env, default_contact_tol(&spec, 4096))?;
    let solver = cfg.solver_for(cfg.solver.eps, cfg.solver.n);
    let f0 = generate_initial(&cfg.initial_data, solver.n, cfg.seed)?;

    let mut cross_validation = Vec::new();
    let mut jko_ledger = Vec::new();
    let mut nonlocal = None;
    let trajectory = match mode {
        Mode::Eps => simulate_eps_with(&f0, &solver, &spec, &env)?,
        Mode::Limit => simulate_limit(&f0, &SolverConfig { eps: 0.0, ..solver.clone() }, &env)?,
        Mode::Jko => {
            let run = simulate_jko(&f0, &cfg.jko, solver.eps, &spec, solver.t_end)?;
            cross_validation = cross_validate(&run.trajectory, &f0, &solver, &spec, &env)?;
            jko_ledger = run.ledger;
            run.trajectory
        }
        Mode::Nonlocal => {
            let cmp = compare_local_nonlocal(&f0, &solver, &KernelSpec::bump(), &spec)?;
            let traj = cmp.nonlocal.clone();
            nonlocal = Some(cmp);
            traj
        }
    };

    let audit = if trajectory.len() >= 2 && trajectory.speeds.len() == trajectory.len() {
        Some(energy_dissipation_audit(&trajectory)?)
    } else {
        None
    };
    let later: Vec<&DensityField> = trajectory.snapshots.iter().skip(1).collect();
    let delta = cfg.wrinkle.delta.or_else(|| {
        calibrate_delta(&later, &sigma, cfg.wrinkle.eta, &cfg.wrinkle.delta_candidates)
            .or_else(|| cfg.wrinkle.delta_candidates.iter().copied().reduce(f64::min))
    });
    let wrinkles = match delta {
        Some(delta) => trajectory
            .times
            .iter()
            .zip(&trajectory.snapshots)
            .map(|(&t, f)| {
                let rep = wrinkling_report(f, &sigma, cfg.wrinkle.eta, delta, 4.0 * f.max() / delta);
                (
                    t,
                    WrinkleSummary {
                        delta,
                        violations: rep.violation_count,
                        oscillating_mass_fraction: rep.oscillating_mass_fraction,
                        off_sigma_oscillating_mass: rep.off_sigma_oscillating_mass,
                    },
                )
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(SingleRun { mode, trajectory, audit, wrinkles, cross_validation, jko_ledger, nonlocal })
}

fn cross_validate(
    jko: &TrajectoryRecord,
    f0: &DensityField,
    solver: &SolverConfig,
    spec: &chflow::PotentialSpec,
    env: &chflow::ConvexEnvelope,
) -> Result<Vec<CrossValidationRow>> {
    let times: Vec<f64> = jko.times.iter().copied().filter(|&t| t > 0.0).collect();
    let cfg = SolverConfig { output_times: times, record_speeds: false, ..solver.clone() };
    let fd = simulate_eps_with(f0, &cfg, spec, env)?;
    let m = default_m(f0.n());
    jko.times
        .iter()
        .zip(&jko.snapshots)
        .filter_map(|(&t, f)| fd.nearest(t).filter(|&k| (fd.times[k] - t).abs() < 1e-12).map(|k| (t, f, k)))
        .map(|(t, f, k)| Ok(CrossValidationRow { t, d2: w2_periodic(f, &fd.snapshots[k], m)? }))
        .collect()
}

/// Writes the trajectory (CSV and JSON), diagnostics and the manifest into `dir`.
pub fn write_single(cfg: &ExperimentConfig, run: &SingleRun, dir: &Path) -> io::Result<Manifest> {
    let mut manifest = Manifest::new(cfg);
    manifest.grid.insert(format!("{:?}", run.mode).to_lowercase(), cfg.solver.n);
    let mut csv = Vec::new();
    run.trajectory.write_csv(&mut csv)?;
    manifest.write_output(dir, "trajectory.csv", &csv)?;
    let json = serde_json::to_vec(&run.trajectory).map_err(io::Error::other)?;
    manifest.write_output(dir, "trajectory.json", &json)?;
    if let Some(audit) = &run.audit {
        let mut buf = b"t,residual\n".to_vec();
        for (t, r) in audit.times.iter().zip(&audit.residuals) {
            buf.extend(format!("{t:.12e},{r:.12e}\n").bytes());
        }
        manifest.write_output(dir, "audit.csv", &buf)?;
    }
    if !run.wrinkles.is_empty() {
        let mut buf = b"t,delta,violations,oscillating_mass_fraction,off_sigma_oscillating_mass\n".to_vec();
        for (t, w) in &run.wrinkles {
            buf.extend(
                format!(
                    "{t:.12e},{},{},{:.6e},{:.6e}\n",
                    w.delta, w.violations, w.oscillating_mass_fraction, w.off_sigma_oscillating_mass
                )
                .bytes(),
            );
        }
        manifest.write_output(dir, "wrinkle.csv", &buf)?;
    }
    if !run.cross_validation.is_empty() {
        let mut buf = b"t,d2_jko_fd\n".to_vec();
        for row in &run.cross_validation {
            buf.extend(format!("{:.12e},{:.12e}\n", row.t, row.d2).bytes());
        }
        manifest.write_output(dir, "cross_validation.csv", &buf)?;
    }
    if !run.jko_ledger.is_empty() {
        let mut buf = b"step,t,energy,dissipation,margin,slack\n".to_vec();
        for r in &run.jko_ledger {
            buf.extend(
                format!("{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n", r.step, r.t, r.energy, r.dissipation, r.margin, r.slack)
                    .bytes(),
            );
        }
        manifest.write_output(dir, "jko_ledger.csv", &buf)?;
    }
    if let Some(cmp) = &run.nonlocal {
        let mut buf = format!(
            "# eps={} eps_eff={} k0={} seminorm={:.12e} dirichlet={:.12e}\nt,d2,max_local,max_nonlocal\n",
            cmp.eps, cmp.eps_eff, cmp.k0, cmp.seminorm, cmp.dirichlet
        )
        .into_bytes();
        for k in 0..cmp.times.len() {
            buf.extend(
                format!("{:.12e},{:.12e},{:.12e},{:.12e}\n", cmp.times[k], cmp.d2[k], cmp.max_local[k], cmp.max_nonlocal[k])
                    .bytes(),
            );
        }
        manifest.write_output(dir, "nonlocal.csv", &buf)?;
    }
    manifest.finish(dir)?;
    Ok(manifest)
}
