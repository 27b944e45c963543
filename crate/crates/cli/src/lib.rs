//! Experiment orchestration on top of `chflow`: JSON configuration, initial
//! data generators, ε-sweeps against the limit flow, single runs and
//! reproducibility manifests.

pub mod config;
pub mod initial;
pub mod manifest;
pub mod single;
pub mod sweep;

pub use config::{ExperimentConfig, InitialData, PotentialChoice, WrinkleConfig};
pub use initial::generate_initial;
pub use manifest::Manifest;
pub use single::{run_single, Mode, SingleRun};
pub use sweep::{run_sweep, SweepReport, SweepRow};
