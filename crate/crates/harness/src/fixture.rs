//! The enclave every experiment runs against: one researcher with a
//! datasets bucket and permission to submit to both queues.

use enclave_core::cloudsim::{Catalog, InstanceTypeSpec};
use enclave_core::enclave::{Enclave, EnclaveConfig};
use enclave_core::jobqueue::DbCapacity;
use enclave_core::security::{Action, Policy, Role, SecurityFixture, UserFixture};
use enclave_core::storage::{Bucket, TierName};
use enclave_core::{RoleId, UserId};

use crate::HarnessError;

pub const DATA_BUCKET: &str = "datasets";
pub const RESEARCHER: &str = "researcher";

/// 2016-era us-east-1 list prices.
pub fn default_catalog() -> Catalog {
    Catalog::new([
        InstanceTypeSpec::new("m4.xlarge", 4, 16.0, 0.239),
        InstanceTypeSpec::new("c4.8xlarge", 36, 60.0, 1.591),
    ])
    .expect("static catalog is valid")
}

pub fn researcher() -> UserId {
    UserId::from(RESEARCHER)
}

pub fn sim_enclave(seed: u64, db: DbCapacity) -> Result<Enclave, HarnessError> {
    let mut cfg = EnclaveConfig::new("harness-signing-secret");
    cfg.seed = seed;
    cfg.queue.db = db;
    cfg.security = SecurityFixture {
        policies: vec![
            Policy::allow("submit-jobs", [Action::Write], "jobs"),
            Policy::allow("datasets-rw", Action::ALL, DATA_BUCKET),
        ],
        roles: vec![Role::user("researcher", ["submit-jobs".into(), "datasets-rw".into()])],
        users: vec![UserFixture {
            id: researcher(),
            display_name: "Researcher".into(),
            registered: true,
            roles: vec![RoleId::from("researcher")],
        }],
        services: vec![],
    };
    cfg.storage.buckets.push(Bucket::new(DATA_BUCKET, TierName::Hot));
    Ok(Enclave::new(cfg)?)
}
