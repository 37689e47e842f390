//! The in-process enclave behind the gateway: platform state, templates,
//! finished experiments and the local workers that drain both queues.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicI64, Ordering};

use enclave_core::enclave::{Enclave, EnclaveConfig};
use enclave_core::jobqueue::{AlwaysHealthy, QueueClass, RunResult, ScriptRunner, SyntheticRunner, Worker};
use enclave_core::security::{ServiceAccount, TASK_EXECUTOR, WEB_SERVER};
use enclave_core::storage::{InMemory, ObjectStore, OnDisk, PayloadStore};
use enclave_core::{InstanceId, JobId, RoleId, ServiceId, SimDuration, SimTime};
use enclave_harness::ExperimentOutputs;
use serde::{Deserialize, Serialize};

use crate::templates::Template;

pub trait Clock: Send + Sync {
    fn now(&self) -> SimTime;
}

pub struct WallClock;

impl Clock for WallClock {
    fn now(&self) -> SimTime {
        SimTime::wall_clock()
    }
}

/// Settable clock for tests and replays.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(t: SimTime) -> Self {
        ManualClock(AtomicI64::new(t.0))
    }

    pub fn set(&self, t: SimTime) {
        self.0.store(t.0, Ordering::SeqCst);
    }

    pub fn advance(&self, d: SimDuration) {
        self.0.fetch_add(d.0, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> SimTime {
        SimTime(self.0.load(Ordering::SeqCst))
    }
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn one() -> usize {
    1
}

fn default_poll_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "one")]
    pub dev_workers: usize,
    #[serde(default = "one")]
    pub prod_workers: usize,
    #[serde(default = "default_poll_ms")]
    pub worker_poll_ms: u64,
    /// Object bytes live here; unset keeps them in memory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default, rename = "template")]
    pub templates: Vec<Template>,
    pub enclave: EnclaveConfig,
}

impl GatewayConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, String> {
        toml::from_str(s).map_err(|e| e.to_string())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: u64,
    pub submitted_by: String,
    pub submitted_at: SimTime,
    pub finished_at: SimTime,
    pub outputs: ExperimentOutputs,
}

struct Running {
    job: JobId,
    due: SimTime,
    started: SimTime,
    result: RunResult,
}

struct LocalWorker {
    worker: Worker,
    running: Option<Running>,
}

/// Identity the gateway itself runs under. It never touches user data.
pub const GATEWAY_SERVICE: &str = "gateway";

pub struct Service {
    pub enclave: Enclave,
    pub templates: BTreeMap<String, Template>,
    pub experiments: BTreeMap<u64, ExperimentRecord>,
    workers: Vec<LocalWorker>,
    runner: Box<dyn ScriptRunner + Send>,
    next_experiment: u64,
    last_lifecycle: Option<SimTime>,
}

impl Service {
    pub fn new(mut cfg: GatewayConfig, now: SimTime) -> Result<Self, String> {
        let mut worker_ids = Vec::new();
        for (pool, n) in [(QueueClass::Dev, cfg.dev_workers), (QueueClass::Prod, cfg.prod_workers)] {
            for i in 0..n {
                worker_ids.push((ServiceId::new(format!("local-{pool}-{i}")), pool));
            }
        }
        let services = &mut cfg.enclave.security.services;
        for (id, _) in &worker_ids {
            services.push(ServiceAccount { id: id.clone(), role: RoleId::from(TASK_EXECUTOR), secret: String::new() });
        }
        services.push(ServiceAccount {
            id: ServiceId::from(GATEWAY_SERVICE),
            role: RoleId::from(WEB_SERVER),
            secret: String::new(),
        });
        let payloads: Box<dyn PayloadStore> = match &cfg.data_dir {
            Some(dir) => Box::new(OnDisk::new(dir).map_err(|e| format!("{}: {e}", dir.display()))?),
            None => Box::<InMemory>::default(),
        };
        let store = ObjectStore::with_payloads(cfg.enclave.storage.clone(), payloads).map_err(|e| e.to_string())?;
        let mut enclave = Enclave::with_store(cfg.enclave, Some(store)).map_err(|e| e.to_string())?;
        let mut workers = Vec::new();
        for (n, (id, pool)) in worker_ids.into_iter().enumerate() {
            let token = enclave.security.issue_service_token(&id, now).map_err(|e| e.to_string())?.id;
            enclave.queue.register_worker(id.clone(), InstanceId(n as u64 + 1), pool);
            workers.push(LocalWorker { worker: Worker::new(id, pool, token), running: None });
        }
        let mut templates = BTreeMap::new();
        for t in cfg.templates {
            t.validate().map_err(|e| format!("template {}: {e}", t.name))?;
            templates.insert(t.name.clone(), t);
        }
        Ok(Service {
            enclave,
            templates,
            experiments: BTreeMap::new(),
            workers,
            runner: Box::<SyntheticRunner>::default(),
            next_experiment: 1,
            last_lifecycle: None,
        })
    }

    pub fn with_runner(mut self, runner: Box<dyn ScriptRunner + Send>) -> Self {
        self.runner = runner;
        self
    }

    pub fn worker_ids(&self) -> Vec<ServiceId> {
        self.workers.iter().map(|w| w.worker.id.clone()).collect()
    }

    pub fn record_experiment(&mut self, by: &str, submitted_at: SimTime, now: SimTime, outputs: ExperimentOutputs) -> u64 {
        let id = self.next_experiment;
        self.next_experiment += 1;
        let rec = ExperimentRecord { id, submitted_by: by.to_owned(), submitted_at, finished_at: now, outputs };
        self.experiments.insert(id, rec);
        id
    }

    /// One scheduling round at `now`: requeue lost work, finish runs that
    /// are due, hand pending jobs to idle workers, and migrate cold data
    /// once an hour.
    pub fn pump(&mut self, now: SimTime) {
        let Enclave { security, store, queue } = &mut self.enclave;
        for ev in queue.monitor_pass(now, &AlwaysHealthy) {
            tracing::info!(job = %ev.job, reason = ?ev.reason, "requeued");
            for w in &mut self.workers {
                if w.running.as_ref().is_some_and(|r| r.job == ev.job) {
                    w.running = None;
                }
            }
        }
        for w in &mut self.workers {
            if let Some(r) = w.running.take_if(|r| r.due <= now) {
                match w.worker.finish(queue, security, store, r.job, &r.result, r.started) {
                    Ok(out) => tracing::info!(job = %r.job, state = ?out.state, "finished"),
                    Err(e) => tracing::info!(job = %r.job, error = %e, "ended"),
                }
            }
            if w.running.is_some() {
                continue;
            }
            if let Err(e) = w.worker.ensure_token(security, now) {
                tracing::warn!(worker = %w.worker.id, error = %e, "token refresh failed");
                continue;
            }
            let claimed = match queue.claim(&w.worker.id, w.worker.pool, &AlwaysHealthy, now) {
                Ok(Some(c)) => c,
                Ok(None) => continue,
                Err(e) => {
                    tracing::warn!(worker = %w.worker.id, error = %e, "claim failed");
                    continue;
                }
            };
            let job = claimed.job.id;
            match w.worker.stage(queue, security, store, job, now) {
                Ok(report) => {
                    let rec = queue.job(job).expect("claimed job exists").clone();
                    let result = self.runner.run(&rec);
                    let started = report.ready_at;
                    let due = started + result.elapsed.min(rec.description.max_walltime());
                    w.running = Some(Running { job, due, started, result });
                }
                Err(e) => tracing::info!(job = %job, error = %e, "staging failed"),
            }
        }
        if self.last_lifecycle.is_none_or(|t| now - t >= SimDuration::HOUR) {
            match store.run_lifecycle(security, now) {
                Ok(moved) if !moved.is_empty() => tracing::info!(count = moved.len(), "lifecycle migrations"),
                Ok(_) => {}
                Err(e) => tracing::warn!(error = %e, "lifecycle pass failed"),
            }
            self.last_lifecycle = Some(now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_loads() {
        let cfg = GatewayConfig::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("gateway.example.toml")).unwrap();
        assert_eq!(cfg.templates.len(), 1);
        let svc = Service::new(cfg, SimTime(0)).unwrap();
        assert_eq!(svc.worker_ids().len(), 3);
        let d = svc.templates["wordcount"]
            .instantiate("alice", &BTreeMap::from([("input".into(), "wos/2016/a.dat".into())]))
            .unwrap();
        assert_eq!(d.max_walltime_secs, 3600);
    }
}
