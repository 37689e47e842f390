//! Core of the elastic data enclave: a deterministic simulated cloud,
//! tiered object storage, the RBAC fabric, queue-based job management,
//! elastic provisioning and workload generation.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloudsim;
pub mod enclave;
pub mod ids;
pub mod jobqueue;
pub mod provisioner;
pub mod security;
pub mod storage;
pub mod time;
pub mod workload;

pub use ids::*;
pub use time::{Clock, SimDuration, SimTime};
