//! Experiment configuration files and the top-level runner.

use std::path::{Path, PathBuf};

use enclave_core::cloudsim::{Topology, TraceSet};
use enclave_core::workload::{load_trace, synthesize_trace, TraceSynthesis};
use enclave_core::ZoneId;
use serde::{Deserialize, Serialize};

use crate::cost_aware::{run_cost_aware_experiment, CostAwareConfig, CostAwareReport};
use crate::report::{emit_report, ReportFormat};
use crate::scaling::{run_scaling_experiment, ScalingConfig, ScalingReport};
use crate::throughput::{run_throughput_experiment, ThroughputConfig, ThroughputReport};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFile {
    pub path: PathBuf,
}

/// Spot prices either read from a CSV file or synthesized for every zone
/// of the topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceSource {
    File(TraceFile),
    Synthetic(TraceSynthesis),
}

impl TraceSource {
    pub fn load(&self, topology: &Topology) -> Result<TraceSet, HarnessError> {
        match self {
            TraceSource::File(f) => Ok(load_trace(&f.path)?),
            TraceSource::Synthetic(p) => {
                let zones: Vec<ZoneId> = topology.zones().map(|z| z.id.clone()).collect();
                Ok(synthesize_trace(p, &zones)?)
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let TraceSource::File(f) = self {
            if f.path.is_relative() {
                f.path = base.join(&f.path);
            }
        }
    }
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Csv]
}

/// Each present section is one experiment; absent sections are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
    pub scaling: Option<ScalingConfig>,
    pub throughput: Option<ThroughputConfig>,
    pub cost_aware: Option<CostAwareConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            formats: default_formats(),
            scaling: Some(ScalingConfig::default()),
            throughput: Some(ThroughputConfig::default()),
            cost_aware: Some(CostAwareConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutputs {
    pub scaling: Option<ScalingReport>,
    pub throughput: Option<ThroughputReport>,
    pub cost_aware: Option<CostAwareReport>,
    pub files: Vec<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Parses a config file; relative trace paths are taken from the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(s) = cfg.scaling.as_mut() {
            s.traces.resolve(base);
        }
        if let Some(c) = cfg.cost_aware.as_mut() {
            c.traces.resolve(base);
        }
        Ok(cfg)
    }

    pub fn run(&self) -> Result<ExperimentOutputs, HarnessError> {
        if self.scaling.is_none() && self.throughput.is_none() && self.cost_aware.is_none() {
            return Err(HarnessError::Config("config names no experiment".into()));
        }
        Ok(ExperimentOutputs {
            scaling: self.scaling.as_ref().map(|c| run_scaling_experiment(c, self.seed)).transpose()?,
            throughput: self.throughput.as_ref().map(run_throughput_experiment).transpose()?,
            cost_aware: self.cost_aware.as_ref().map(run_cost_aware_experiment).transpose()?,
            files: Vec::new(),
        })
    }

    /// Runs every experiment and writes its reports into `out_dir`.
    pub fn run_to(&self, out_dir: &Path) -> Result<ExperimentOutputs, HarnessError> {
        let mut out = self.run()?;
        std::fs::create_dir_all(out_dir)?;
        for &fmt in &self.formats {
            if let Some(r) = &out.scaling {
                out.files.push(emit_report(r, fmt, out_dir)?);
            }
            if let Some(r) = &out.throughput {
                out.files.push(emit_report(r, fmt, out_dir)?);
            }
            if let Some(r) = &out.cost_aware {
                out.files.push(emit_report(r, fmt, out_dir)?);
            }
        }
        Ok(out)
    }
}
