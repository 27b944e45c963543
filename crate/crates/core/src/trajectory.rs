//! Time-stamped snapshots shared by every integrator.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::DensityField;
use crate::functionals::EnergyReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    DtHalved,
    Clipped,
    SeparationFloor,
    InnerNotConverged,
    Aborted,
}

/// Which evolution produced a trajectory; decides the energy that audits use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    #[default]
    Eps,
    Limit,
    Jko,
    Nonlocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverEvent {
    pub t: f64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub kind: FlowKind,
    pub times: Vec<f64>,
    pub snapshots: Vec<DensityField>,
    pub reports: Vec<EnergyReport>,
    /// `speeds[k]` is the metric speed over `[t_{k-1}, t_k]`; `speeds[0] = 0`.
    pub speeds: Vec<f64>,
    pub events: Vec<SolverEvent>,
    /// Set when integration stopped before the requested horizon.
    pub aborted: Option<String>,
}

impl TrajectoryRecord {
    pub fn new(kind: FlowKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends a snapshot. Times must increase strictly.
    pub fn push(&mut self, t: f64, f: DensityField, report: EnergyReport) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return invalid(format!("snapshot time {t} does not follow {last}"));
            }
        }
        self.times.push(t);
        self.snapshots.push(f);
        self.reports.push(report);
        Ok(())
    }

    pub fn log(&mut self, t: f64, kind: EventKind, detail: impl Into<String>) {
        self.events.push(SolverEvent { t, kind, detail: detail.into() });
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn last_field(&self) -> Option<&DensityField> {
        self.snapshots.last()
    }

    /// Fills `speeds` from consecutive snapshots.
    pub fn compute_speeds(&mut self) -> Result<()> {
        let mut speeds = vec![0.0; self.len()];
        for k in 1..self.len() {
            speeds[k] = crate::wasserstein1d::metric_speed(self, k - 1)?;
        }
        self.speeds = speeds;
        Ok(())
    }

    /// Index of the snapshot whose time is closest to `t`.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        (0..self.len()).min_by(|&a, &b| (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs()))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,min,max,mass,e_eps,e_star,slope_eps,slope_star,speed")?;
        for k in 0..self.len() {
            let f = &self.snapshots[k];
            let r = &self.reports[k];
            let speed = self.speeds.get(k).copied().unwrap_or(0.0);
            writeln!(
                out,
                "{:.12e},{:.12e},{:.12e},{:.15e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                self.times[k],
                f.min(),
                f.max(),
                f.mass(),
                r.e_eps,
                r.e_star,
                r.slope_eps,
                r.slope_star,
                speed
            )?;
        }
        Ok(())
    }
}
