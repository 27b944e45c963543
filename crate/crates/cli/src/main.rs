use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use chflow::diagnostics::energy_dissipation_audit;
use chflow::potential::{
    compute_convex_envelope, compute_unstable_set, default_contact_tol, validate_hypotheses, ScalarProfile,
};
use chflow::{Error, PotentialSpec, TrajectoryRecord};
use chflow_cli::single::write_single;
use chflow_cli::sweep::write_sweep;
use chflow_cli::{run_single, run_sweep, ExperimentConfig, Mode};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "chflow", version, about = "Degenerate Cahn-Hilliard flows and their sharp-interface limit on the circle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one flow and write its trajectory and diagnostics.
    Simulate {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the ε-flows of `eps_list` with the limit flow.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the convex envelope breakpoints, the unstable set and m0.
    Envelope {
        #[arg(long)]
        potential: String,
    },
    /// Energy-dissipation audit of a trajectory JSON file.
    Audit {
        #[arg(long)]
        trajectory: PathBuf,
        /// Tolerance relative to |E(0)|.
        #[arg(long, default_value_t = 1e-3)]
        rel_tol: f64,
    },
    /// Check the structural hypotheses on a builtin potential.
    ValidatePotential {
        #[arg(long)]
        potential: String,
    },
}

enum Failure {
    Hypothesis(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Hypothesis(_) => Failure::Hypothesis(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { mode, config, out } => {
            let cfg = load_config(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let result = run_single(&cfg, mode)?;
            let manifest = write_single(&cfg, &result, &dir)?;
            print_json(&json!({
                "output_dir": dir,
                "snapshots": result.trajectory.len(),
                "aborted": result.trajectory.aborted,
                "audit_min_residual": result.audit.as_ref().map(|a| a.min_residual),
                "outputs": manifest.outputs,
            }));
            if let Some(reason) = &result.trajectory.aborted {
                return Err(Failure::Runtime(format!("run aborted: {reason}")));
            }
            Ok(())
        }
        Command::Sweep { config, out } => {
            let cfg = load_config(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let report = run_sweep(&cfg)?;
            write_sweep(&cfg, &report, &dir)?;
            report.write_csv(std::io::stdout())?;
            if report.rows.iter().any(|r| !r.ok()) {
                return Err(Failure::Runtime("some eps runs failed; see sweep.csv".into()));
            }
            Ok(())
        }
        Command::Envelope { potential } => {
            let spec = PotentialSpec::builtin(&potential)?;
            let env = compute_convex_envelope(&spec, 4096)?;
            let sigma = compute_unstable_set(&spec, &env, default_contact_tol(&spec, 4096))?;
            print_json(&json!({
                "potential": spec.name(),
                "coeffs": spec.coeffs(),
                "domain_max": spec.domain_max(),
                "breakpoints": env.breakpoints(),
                "sigma": sigma.intervals,
                "m0": sigma.m0,
            }));
            Ok(())
        }
        Command::Audit { trajectory, rel_tol } => {
            let bytes = fs::read(&trajectory)?;
            let traj: TrajectoryRecord =
                serde_json::from_slice(&bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", trajectory.display())))?;
            let audit = energy_dissipation_audit(&traj)?;
            let tol = rel_tol * audit.e0.abs();
            print_json(&json!({
                "e0": audit.e0,
                "min_residual": audit.min_residual,
                "max_abs_residual": audit.max_abs_residual,
                "tolerance": tol,
                "satisfied": audit.satisfied(tol),
            }));
            if !audit.satisfied(tol) {
                return Err(Failure::Hypothesis("energy-dissipation inequality violated".into()));
            }
            Ok(())
        }
        Command::ValidatePotential { potential } => {
            let spec = PotentialSpec::builtin(&potential)?;
            let env = compute_convex_envelope(&spec, 4096)?;
            let report = validate_hypotheses(&spec, &env);
            print_json(&serde_json::to_value(&report).expect("json"));
            if !report.is_clean() {
                return Err(Failure::Hypothesis(report.violations.join("; ")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Hypothesis(msg)) => {
            eprintln!("hypothesis violation: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
