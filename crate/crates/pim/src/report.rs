//! Run manifests and reports.
//!
//! Everything in a report is a pure function of the manifest and the input
//! files, so replaying a manifest reproduces the report byte for byte.
//! Wall-clock data lives in a separate [`Timings`] file.

use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pim_core::pim::KEstimate;
use pim_core::{EvalReport, LambdaTrial, LossBreakdown, PimConfig};
use serde::{Deserialize, Serialize};

use crate::cli::Invocation;

pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const MODEL_FILE: &str = "model.pmod";
pub const TRUTH_FILE: &str = "truth.json";

/// What was run, with which inputs and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub invocation: Invocation,
    pub seed: u64,
    pub inputs: Vec<String>,
    /// File names inside the output directory.
    pub outputs: Vec<String>,
    /// Resolved pipeline settings (partition runs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PimConfig>,
}

impl Manifest {
    pub fn new(invocation: Invocation, seed: u64) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            invocation,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub manifest: Manifest,
    pub n: usize,
    pub dim: usize,
    pub k_old: usize,
    /// Cluster count used for the partition.
    pub k: usize,
    pub k_estimate: Option<KEstimate>,
    pub per_lambda: Vec<LambdaTrial>,
    pub lambda_opt: f64,
    pub labeled_acc: f64,
    pub final_loss: LossBreakdown,
    pub cluster_sizes: Vec<usize>,
    /// Scores on the unlabeled rows when ground truth was supplied.
    pub eval: Option<EvalReport>,
}

/// Start/end timestamps and per-phase wall-clock seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub phases: BTreeMap<String, f64>,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub(crate) struct Clock {
    started: u64,
    phases: BTreeMap<String, f64>,
}

impl Clock {
    pub(crate) fn start() -> Self {
        Clock {
            started: unix_ms(),
            phases: BTreeMap::new(),
        }
    }

    pub(crate) fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.phases.insert(phase.to_owned(), t.elapsed().as_secs_f64());
        out
    }

    pub(crate) fn finish(self) -> Timings {
        Timings {
            started_unix_ms: self.started,
            finished_unix_ms: unix_ms(),
            phases: self.phases,
        }
    }
}
