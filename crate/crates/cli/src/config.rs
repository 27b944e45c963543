use std::collections::BTreeMap;
use std::path::PathBuf;

use chflow::jko::JkoConfig;
use chflow::{Error, PotentialSpec, Result, SolverConfig};
use serde::{Deserialize, Serialize};

/// A builtin potential by name, or polynomial coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialChoice {
    Named(String),
    Polynomial {
        #[serde(default = "custom_name")]
        name: String,
        coeffs: Vec<f64>,
        #[serde(default)]
        domain_max: Option<f64>,
    },
}

fn custom_name() -> String {
    "custom".into()
}

impl PotentialChoice {
    pub fn resolve(&self) -> Result<PotentialSpec> {
        match self {
            Self::Named(name) => PotentialSpec::builtin(name),
            Self::Polynomial { name, coeffs, domain_max } => {
                let top = match domain_max {
                    Some(top) => *top,
                    None => chflow::potential::suggest_domain_max(coeffs, 2.0)?,
                };
                PotentialSpec::polynomial(name.clone(), coeffs.clone(), top)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl InitialData {
    pub fn new(name: &str, params: &[(&str, f64)]) -> Self {
        Self { name: name.into(), params: params.iter().map(|&(k, v)| (k.to_string(), v)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WrinkleConfig {
    pub eta: f64,
    /// Fixed window; when absent the sweep calibrates it over `delta_candidates`.
    pub delta: Option<f64>,
    pub delta_candidates: Vec<f64>,
}

impl Default for WrinkleConfig {
    fn default() -> Self {
        Self { eta: 0.05, delta: None, delta_candidates: (0..6).map(|k| 0.2 / f64::powi(2.0, k)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: PotentialChoice,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub jko: JkoConfig,
    #[serde(default)]
    pub eps_list: Vec<f64>,
    pub initial_data: InitialData,
    /// Replaces `solver.output_times` when present.
    #[serde(default)]
    pub output_times: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub wrinkle: WrinkleConfig,
    #[serde(default)]
    pub override_preparedness: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Twenty times `t_end · 10^{-3(1 - k/19)}`, dense near `t = 0`.
pub fn log_spaced_outputs(t_end: f64) -> Vec<f64> {
    (0..20).map(|k| t_end * 10f64.powf(-3.0 * (1.0 - k as f64 / 19.0))).collect()
}

impl ExperimentConfig {
    pub fn new(potential: &str, initial_data: InitialData) -> Self {
        Self {
            potential: PotentialChoice::Named(potential.into()),
            solver: SolverConfig::default(),
            jko: JkoConfig::default(),
            eps_list: Vec::new(),
            initial_data,
            output_times: None,
            seed: 0,
            output_dir: default_output_dir(),
            wrinkle: WrinkleConfig::default(),
            override_preparedness: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Output times in effect: explicit list, else the solver's, else the
    /// log-spaced default.
    pub fn outputs(&self) -> Vec<f64> {
        match &self.output_times {
            Some(times) => times.clone(),
            None if !self.solver.output_times.is_empty() => self.solver.output_times.clone(),
            None => log_spaced_outputs(self.solver.t_end),
        }
    }

    /// Solver settings with the effective output times and the given `eps` and `n`.
    pub fn solver_for(&self, eps: f64, n: usize) -> SolverConfig {
        SolverConfig { eps, n, output_times: self.outputs(), ..self.solver.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.potential.resolve()?;
        self.solver.validate()?;
        self.jko.validate()?;
        if self.eps_list.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidInput("eps_list entries must be positive".into()));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidInput("eps_list must be strictly decreasing".into()));
        }
        let times = self.outputs();
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("output_times must be sorted".into()));
        }
        if times.iter().any(|&t| !(0.0..=self.solver.t_end).contains(&t)) {
            return Err(Error::InvalidInput(format!("output_times must lie in [0, {}]", self.solver.t_end)));
        }
        if !(self.wrinkle.eta > 0.0) {
            return Err(Error::InvalidInput("wrinkle.eta must be positive".into()));
        }
        if self.wrinkle.delta.is_none() && self.wrinkle.delta_candidates.is_empty() {
            return Err(Error::InvalidInput("wrinkle needs delta or delta_candidates".into()));
        }
        Ok(())
    }
}
