//! The assembled platform: security fabric, object store and job queue wired
//! together the way both the simulator and the service expect.

use serde::{Deserialize, Serialize};

use crate::ids::{PolicyId, RoleId};
use crate::jobqueue::{JobQueue, JobQueueConfig};
use crate::security::{Action, Policy, SecurityConfig, SecurityError, SecurityFabric, SecurityFixture, TASK_EXECUTOR};
use crate::storage::{Bucket, ObjectStore, StorageConfig, StorageError, TierName};

#[derive(Debug, thiserror::Error)]
pub enum EnclaveError {
    #[error(transparent)]
    Security(#[from] SecurityError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnclaveConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub security: SecurityFixture,
    #[serde(default)]
    pub security_settings: SecurityConfig,
    pub storage: StorageConfig,
    #[serde(default)]
    pub queue: JobQueueConfig,
}

impl EnclaveConfig {
    pub fn new(signing_secret: &str) -> Self {
        EnclaveConfig {
            seed: 0,
            security: SecurityFixture::default(),
            security_settings: SecurityConfig::default(),
            storage: StorageConfig::new(signing_secret),
            queue: JobQueueConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, EnclaveError> {
        toml::from_str(s).map_err(|e| EnclaveError::Config(e.to_string()))
    }
}

const RESULTS_WRITE: &str = "task-executor-results-write";

pub struct Enclave {
    pub security: SecurityFabric,
    pub store: ObjectStore,
    pub queue: JobQueue,
}

impl Enclave {
    /// Builds the platform. The results bucket is created if the storage
    /// config lacks it, and the task-executor role is allowed to write
    /// there so workers can stage outputs.
    pub fn new(config: EnclaveConfig) -> Result<Self, EnclaveError> {
        Self::with_store(config, None)
    }

    pub fn with_store(config: EnclaveConfig, store: Option<ObjectStore>) -> Result<Self, EnclaveError> {
        let mut security = SecurityFabric::from_fixture(config.security, config.security_settings, config.seed)?;
        let bucket = config.queue.results_bucket.clone();
        let mut store = match store {
            Some(s) => s,
            None => ObjectStore::new(config.storage)?,
        };
        if store.bucket(&bucket).is_none() {
            store.create_bucket(Bucket::new(bucket.clone(), TierName::Hot))?;
        }
        let pid = PolicyId::from(RESULTS_WRITE);
        if !security.policies().any(|p| p.id == pid) {
            security.define_policy(Policy::allow(pid.clone(), [Action::Write], bucket))?;
        }
        security.attach_policy(&RoleId::from(TASK_EXECUTOR), &pid)?;
        Ok(Enclave { security, store, queue: JobQueue::new(config.queue) })
    }
}
