//! Experiment drivers for the simulated enclave: elastic scaling over a
//! seeded workload, task throughput against a capacity-limited task
//! database, and cost-aware placement over a month of spot prices.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cost_aware;
pub mod fixture;
pub mod report;
pub mod scaling;
pub mod throughput;

pub use config::{ExperimentConfig, ExperimentOutputs, TraceSource};
pub use cost_aware::{run_cost_aware_experiment, CostAwareConfig, CostAwareReport, CostAwareRow, PlacementStrategy};
pub use report::{emit_report, Report, ReportFormat};
pub use scaling::{
    check_exclusive_execution, run_scaling_experiment, run_strategy, JobMetrics, PoolSample, RunMetrics, ScalingConfig,
    ScalingReport, SimOutcome,
};
pub use throughput::{run_throughput_experiment, ThroughputConfig, ThroughputPoint, ThroughputReport};

use enclave_core::cloudsim::CloudError;
use enclave_core::enclave::EnclaveError;
use enclave_core::jobqueue::JobError;
use enclave_core::provisioner::ProvisionError;
use enclave_core::security::SecurityError;
use enclave_core::storage::StorageError;
use enclave_core::workload::WorkloadError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("simulation: {0}")]
    Sim(String),
}

macro_rules! sim_error {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Sim(e.to_string())
            }
        }
    )*};
}

sim_error!(CloudError, EnclaveError, JobError, ProvisionError, SecurityError, StorageError);

impl From<WorkloadError> for HarnessError {
    fn from(e: WorkloadError) -> Self {
        match e {
            WorkloadError::Io(m) => HarnessError::Io(m),
            other => HarnessError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
