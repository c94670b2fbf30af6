//! Parameter sweeps: one analysis per value of a single scenario parameter.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{compute_dmr, AnalysisResult};
use crate::chain::{build_chain, BuildOptions, DEFAULT_MAX_STATES};
use crate::error::{Error, Result};
use crate::io::{self, SupplyDoc, SCHEMA};
use crate::model::{ExecDistribution, TaskSpec};
use crate::supply::SupplyModel;
use crate::Rat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Deadline,
    DismissOffset,
    /// Probability of the larger value of a two-point execution time
    /// distribution.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    /// Relative paths are resolved against the sweep file's directory.
    pub task: PathBuf,
    pub supply: PathBuf,
    pub axis: SweepAxis,
    pub values: Vec<Rat>,
    #[serde(default)]
    pub max_states: Option<usize>,
    #[serde(default)]
    pub conservative_backlog: bool,
}

/// A sweep with its base scenario loaded.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub task: TaskSpec,
    pub supply: SupplyDoc,
    pub axis: SweepAxis,
    pub values: Vec<Rat>,
    pub options: BuildOptions,
}

impl Sweep {
    pub fn load(path: &Path) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(&io::read_file(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        spec.resolve(base)
    }

    /// Point of the sweep for one axis value.
    pub fn scenario(&self, value: &Rat) -> Result<TaskSpec> {
        let t = &self.task;
        let (exec, deadline, dismiss) = match self.axis {
            SweepAxis::Deadline => (t.exec.clone(), value.clone(), t.dismiss_offset.clone()),
            SweepAxis::DismissOffset => (t.exec.clone(), t.deadline.clone(), value.clone()),
            SweepAxis::Probability => {
                let e = t.exec.entries();
                let exec = ExecDistribution::from_pairs([
                    (e[0].value.clone(), Rat::one() - value),
                    (e[1].value.clone(), value.clone()),
                ]);
                (exec, t.deadline.clone(), t.dismiss_offset.clone())
            }
        };
        TaskSpec::new(exec, t.period.clone(), deadline, dismiss)
    }
}

impl SweepSpec {
    pub fn resolve(&self, base_dir: &Path) -> Result<Sweep> {
        if let Some(s) = &self.schema {
            if s != SCHEMA {
                return Err(Error::Schema(s.clone()));
            }
        }
        if self.values.is_empty() {
            return Err(Error::InvalidSweep("no sweep values".into()));
        }
        let task_path = base_dir.join(&self.task);
        let task = io::load_task(&task_path)?;
        if self.axis == SweepAxis::Probability && task.exec.len() != 2 {
            return Err(Error::InvalidSweep(format!(
                "probability axis needs a two-point distribution, {} has {} values",
                task_path.display(),
                task.exec.len()
            )));
        }
        let supply_path = base_dir.join(&self.supply);
        let supply: SupplyDoc = serde_json::from_str(&io::read_file(&supply_path)?)?;
        Ok(Sweep {
            task,
            supply,
            axis: self.axis,
            values: self.values.clone(),
            options: BuildOptions {
                max_states: self.max_states.unwrap_or(DEFAULT_MAX_STATES),
                conservative_backlog: self.conservative_backlog,
                ..BuildOptions::default()
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis_value: Rat,
    /// Error text when this point could not be analysed.
    pub status: std::result::Result<AnalysisResult, String>,
    pub build_ms: f64,
    pub solve_ms: f64,
}

impl SweepRow {
    pub fn dmr(&self) -> Option<&Rat> {
        self.status.as_ref().ok().and_then(|r| r.dmr.as_ref())
    }
}

fn run_point(sweep: &Sweep, value: &Rat) -> SweepRow {
    let mut row = SweepRow {
        axis_value: value.clone(),
        status: Err(String::new()),
        build_ms: 0.0,
        solve_ms: 0.0,
    };
    let outcome = (|| -> Result<AnalysisResult> {
        let task = sweep.scenario(value)?;
        let supply: SupplyModel = sweep.supply.resolve(&task.period)?;
        let start = Instant::now();
        let chain = build_chain(&task, &supply, &sweep.options)?;
        row.build_ms = start.elapsed().as_secs_f64() * 1e3;
        let start = Instant::now();
        let result = compute_dmr(&chain)?;
        row.solve_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(result)
    })();
    row.status = outcome.map_err(|e| e.to_string());
    row
}

/// Analyses every point, in parallel on the current rayon pool. Rows are
/// returned in input order; a failing point yields an error row.
pub fn run_sweep(sweep: &Sweep) -> Vec<SweepRow> {
    sweep.values.par_iter().map(|v| run_point(sweep, v)).collect()
}

/// CSV with columns `axis_value, dmr_rational, dmr_float, n_states,
/// build_ms, solve_ms, status`. Timings are left empty unless requested.
pub fn write_csv<W: std::io::Write>(rows: &[SweepRow], timing: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "axis_value",
        "dmr_rational",
        "dmr_float",
        "n_states",
        "build_ms",
        "solve_ms",
        "status",
    ])?;
    for row in rows {
        let (dmr, dmr_float, n_states, status) = match &row.status {
            Ok(r) => match &r.dmr {
                Some(d) => (
                    d.to_string(),
                    format!("{}", d.to_f64()),
                    r.n_states.to_string(),
                    "ok".to_string(),
                ),
                None => (
                    String::new(),
                    String::new(),
                    r.n_states.to_string(),
                    "not irreducible".to_string(),
                ),
            },
            Err(e) => (String::new(), String::new(), String::new(), format!("error: {e}")),
        };
        let (build, solve) = if timing {
            (format!("{:.3}", row.build_ms), format!("{:.3}", row.solve_ms))
        } else {
            (String::new(), String::new())
        };
        w.write_record([
            row.axis_value.to_string(),
            dmr,
            dmr_float,
            n_states,
            build,
            solve,
            status,
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: PathBuf::from("<csv output>"),
        source,
    })?;
    Ok(())
}
