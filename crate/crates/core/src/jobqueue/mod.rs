//! Job management: dev and prod FIFO queues, atomic claims, status markers,
//! monitor-driven requeue and a capacity-limited task database.

mod db;
mod worker;

pub use db::{DbCapacity, DbOp, DbStats, TaskDb};
pub use worker::{
    staging_duration, ExecutionOutcome, ProducedOutput, RunResult, ScriptRunner, StageReport, SyntheticRunner, Worker,
    DEFAULT_STAGING_MB_PER_S,
};

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloudsim::CloudSim;
use crate::ids::{InstanceId, JobId, RoleId, ServiceId, UserId};
use crate::security::{Action, ActiveJobBindings, SecurityFabric, TokenId};
use crate::storage::{ObjectStore, SignedUrl, SCHEME};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JobError {
    #[error("access denied")]
    AccessDenied,
    #[error("invalid job description: {0}")]
    InvalidDescription(String),
    #[error("unknown worker {0}")]
    UnknownWorker(ServiceId),
    #[error("worker {0} serves the other pool")]
    PoolMismatch(ServiceId),
    #[error("worker {0} already holds a job")]
    WorkerBusy(ServiceId),
    #[error("worker {0}'s instance is not running")]
    WorkerUnhealthy(ServiceId),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {0} is not assigned to this worker")]
    NotAssigned(JobId),
    #[error("job {0} is not active")]
    NotActive(JobId),
    #[error("invalid status marker: {0}")]
    InvalidMarker(String),
    #[error("staging failed: {0}")]
    StageFailed(String),
    #[error("job exceeded its wall-time limit")]
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueClass {
    /// Served by the on-demand pool.
    Dev,
    /// Served by the spot pool.
    Prod,
}

impl QueueClass {
    pub const ALL: [QueueClass; 2] = [QueueClass::Dev, QueueClass::Prod];

    pub fn as_str(self) -> &'static str {
        match self {
            QueueClass::Dev => "dev",
            QueueClass::Prod => "prod",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Resource the submitter needs write access to.
    pub fn resource(self) -> String {
        format!("jobs/{}", self.as_str())
    }
}

impl fmt::Display for QueueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A job input: a stored object (`bucket/key`) or a URL. Signed
/// `kotta://` URLs are fetched through the store; other URLs are external.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputRef {
    Object { bucket: String, key: String },
    Url(String),
}

impl FromStr for InputRef {
    type Err = JobError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains("://") {
            if s.starts_with(SCHEME) {
                SignedUrl::parse(s).map_err(|e| JobError::InvalidDescription(e.to_string()))?;
            }
            return Ok(InputRef::Url(s.to_owned()));
        }
        match s.split_once('/') {
            Some((b, k)) if !b.is_empty() && !k.is_empty() => Ok(InputRef::Object { bucket: b.to_owned(), key: k.to_owned() }),
            _ => Err(JobError::InvalidDescription(format!("input {s:?} is neither bucket/key nor a URL"))),
        }
    }
}

impl fmt::Display for InputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputRef::Object { bucket, key } => write!(f, "{bucket}/{key}"),
            InputRef::Url(u) => f.write_str(u),
        }
    }
}

impl Serialize for InputRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InputRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Submission format shared by the CLI and REST interfaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobDescription {
    pub owner: UserId,
    pub queue: QueueClass,
    #[serde(default)]
    pub inputs: Vec<InputRef>,
    pub script: String,
    #[serde(default)]
    pub outputs: Vec<String>,
    pub max_walltime_secs: u64,
}

impl JobDescription {
    pub fn max_walltime(&self) -> SimDuration {
        SimDuration::from_secs(self.max_walltime_secs as i64)
    }

    pub fn validate(&self) -> Result<(), JobError> {
        let bad = |m: String| Err(JobError::InvalidDescription(m));
        if self.max_walltime_secs == 0 {
            return bad("max_walltime_secs must be positive".into());
        }
        if self.owner.as_str().is_empty() {
            return bad("owner is required".into());
        }
        for o in &self.outputs {
            let ok = !o.is_empty()
                && !o.starts_with('/')
                && o.split('/').all(|s| !s.is_empty() && s != "." && s != "..")
                && !o.chars().any(|c| c.is_control() || matches!(c, '?' | '&' | '#' | '|' | '\\'));
            if !ok {
                return bad(format!("output name {o:?} is not a valid key"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Active,
    Completed,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FailureReason {
    ExitCode(i32),
    TimedOut,
    StageFailed(String),
    OutputStageFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequeueReason {
    InstanceLost,
    Stuck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusMarker {
    pub job: JobId,
    pub time: SimTime,
    pub cpu_util: f64,
    pub ram_util: f64,
    pub io_util: f64,
    pub progress: String,
}

impl StatusMarker {
    pub fn validate(&self) -> Result<(), JobError> {
        for (name, v) in [("cpu", self.cpu_util), ("ram", self.ram_util), ("io", self.io_util)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(JobError::InvalidMarker(format!("{name} utilization {v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JobEventKind {
    Submitted,
    Claimed { worker: ServiceId, instance: InstanceId },
    Staged,
    Requeued { reason: RequeueReason },
    Completed,
    Failed { reason: FailureReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub time: SimTime,
    #[serde(flatten)]
    pub kind: JobEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: JobId,
    pub description: JobDescription,
    pub state: JobState,
    pub requeues: u32,
    pub submit_time: SimTime,
    pub claim_time: Option<SimTime>,
    pub stage_done_time: Option<SimTime>,
    pub end_time: Option<SimTime>,
    pub assigned_worker: Option<ServiceId>,
    pub assigned_instance: Option<InstanceId>,
    pub exit_code: Option<i32>,
    pub failure: Option<FailureReason>,
    pub role_ref: Option<RoleId>,
    pub outputs: Vec<String>,
    pub markers: Vec<StatusMarker>,
    pub history: Vec<JobEvent>,
}

impl JobRecord {
    pub fn queue(&self) -> QueueClass {
        self.description.queue
    }

    pub fn owner(&self) -> &UserId {
        &self.description.owner
    }

    /// Submission to first claim.
    pub fn first_claim_time(&self) -> Option<SimTime> {
        self.history.iter().find_map(|e| matches!(e.kind, JobEventKind::Claimed { .. }).then_some(e.time))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequeueEvent {
    pub time: SimTime,
    pub job: JobId,
    pub worker: Option<ServiceId>,
    pub instance: Option<InstanceId>,
    pub reason: RequeueReason,
    pub requeues: u32,
}

/// Claim result: the job now active plus when the claim's database writes
/// settle.
#[derive(Debug, Clone, PartialEq)]
pub struct Claimed {
    pub job: JobRecord,
    pub settled_at: SimTime,
}

pub trait InstanceHealth {
    fn is_healthy(&self, instance: InstanceId) -> bool;
}

impl InstanceHealth for CloudSim {
    fn is_healthy(&self, instance: InstanceId) -> bool {
        self.instance(instance).is_some_and(|i| i.state.is_live())
    }
}

/// For service mode, where workers are local processes.
#[derive(Debug, Default, Clone, Copy)]
pub struct AlwaysHealthy;

impl InstanceHealth for AlwaysHealthy {
    fn is_healthy(&self, _instance: InstanceId) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerInfo {
    pub id: ServiceId,
    pub instance: InstanceId,
    pub pool: QueueClass,
    pub current: Option<JobId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobQueueConfig {
    pub db: DbCapacity,
    pub results_bucket: String,
    /// The monitor requeues jobs active for longer than this many wall-time
    /// limits.
    pub stuck_factor: u32,
    pub marker_interval: SimDuration,
}

impl Default for JobQueueConfig {
    fn default() -> Self {
        JobQueueConfig {
            db: DbCapacity::default(),
            results_bucket: "results".into(),
            stuck_factor: 2,
            marker_interval: SimDuration::from_secs(30),
        }
    }
}

pub struct JobQueue {
    config: JobQueueConfig,
    db: TaskDb,
    jobs: BTreeMap<JobId, JobRecord>,
    pending: [VecDeque<JobId>; 2],
    /// When each pending job's submit write became visible.
    visible_at: BTreeMap<JobId, SimTime>,
    workers: BTreeMap<ServiceId, WorkerInfo>,
    next_id: u64,
    last_monitor: Option<SimTime>,
}

impl JobQueue {
    pub fn new(config: JobQueueConfig) -> Self {
        JobQueue {
            db: TaskDb::new(config.db),
            config,
            jobs: BTreeMap::new(),
            pending: [VecDeque::new(), VecDeque::new()],
            visible_at: BTreeMap::new(),
            workers: BTreeMap::new(),
            next_id: 1,
            last_monitor: None,
        }
    }

    pub fn config(&self) -> &JobQueueConfig {
        &self.config
    }

    pub fn db_stats(&self) -> DbStats {
        self.db.stats()
    }

    pub fn job(&self, id: JobId) -> Option<&JobRecord> {
        self.jobs.get(&id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.values()
    }

    pub fn pending_count(&self, class: QueueClass) -> usize {
        self.pending[class.index()].len()
    }

    pub fn active_count(&self, class: QueueClass) -> usize {
        self.jobs.values().filter(|j| j.state == JobState::Active && j.queue() == class).count()
    }

    pub fn pending_ids(&self, class: QueueClass) -> impl Iterator<Item = JobId> + '_ {
        self.pending[class.index()].iter().copied()
    }

    pub fn counts(&self) -> BTreeMap<JobState, usize> {
        let mut m = BTreeMap::new();
        for j in self.jobs.values() {
            *m.entry(j.state).or_insert(0) += 1;
        }
        m
    }

    pub fn worker(&self, id: &ServiceId) -> Option<&WorkerInfo> {
        self.workers.get(id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerInfo> {
        self.workers.values()
    }

    pub fn register_worker(&mut self, id: ServiceId, instance: InstanceId, pool: QueueClass) {
        self.workers.insert(id.clone(), WorkerInfo { id, instance, pool, current: None });
    }

    /// Drops a worker; any job it held is left for the monitor to requeue.
    pub fn deregister_worker(&mut self, id: &ServiceId) -> Option<WorkerInfo> {
        self.workers.remove(id)
    }

    /// Authorizes against `jobs/<queue>` and enqueues. The returned time is
    /// when the submit write settles; the job is claimable from then on.
    pub fn submit(
        &mut self,
        sec: &mut SecurityFabric,
        description: JobDescription,
        token: &TokenId,
        now: SimTime,
    ) -> Result<(JobRecord, SimTime), JobError> {
        if !sec.check_access(token, Action::Write, &description.queue.resource(), now).allowed {
            return Err(JobError::AccessDenied);
        }
        if sec.effective_user(token).as_ref() != Some(&description.owner) {
            return Err(JobError::AccessDenied);
        }
        description.validate()?;
        let role_ref = sec.user(&description.owner).and_then(|u| u.roles.iter().next().cloned());
        let settled = self.db.reserve(DbOp::Write, now);
        let id = JobId(self.next_id);
        self.next_id += 1;
        let class = description.queue;
        let record = JobRecord {
            id,
            description,
            state: JobState::Pending,
            requeues: 0,
            submit_time: now,
            claim_time: None,
            stage_done_time: None,
            end_time: None,
            assigned_worker: None,
            assigned_instance: None,
            exit_code: None,
            failure: None,
            role_ref,
            outputs: Vec::new(),
            markers: Vec::new(),
            history: vec![JobEvent { time: now, kind: JobEventKind::Submitted }],
        };
        self.jobs.insert(id, record.clone());
        self.pending[class.index()].push_back(id);
        self.visible_at.insert(id, settled);
        Ok((record, settled))
    }

    /// Moves the head of `class`'s pending queue to active for `worker`.
    pub fn claim(
        &mut self,
        worker: &ServiceId,
        class: QueueClass,
        health: &dyn InstanceHealth,
        now: SimTime,
    ) -> Result<Option<Claimed>, JobError> {
        let info = self.workers.get(worker).ok_or_else(|| JobError::UnknownWorker(worker.clone()))?;
        if info.pool != class {
            return Err(JobError::PoolMismatch(worker.clone()));
        }
        if info.current.is_some() {
            return Err(JobError::WorkerBusy(worker.clone()));
        }
        if !health.is_healthy(info.instance) {
            return Err(JobError::WorkerUnhealthy(worker.clone()));
        }
        let instance = info.instance;
        let read_at = self.db.reserve(DbOp::Read, now);
        let queue = &mut self.pending[class.index()];
        let Some(&head) = queue.front() else {
            return Ok(None);
        };
        if self.visible_at.get(&head).is_some_and(|&v| v > read_at) {
            return Ok(None);
        }
        queue.pop_front();
        self.visible_at.remove(&head);
        let settled_at = self.db.reserve(DbOp::Write, read_at);
        let job = self.jobs.get_mut(&head).expect("queued job exists");
        job.state = JobState::Active;
        job.claim_time = Some(now);
        job.assigned_worker = Some(worker.clone());
        job.assigned_instance = Some(instance);
        job.history.push(JobEvent { time: now, kind: JobEventKind::Claimed { worker: worker.clone(), instance } });
        self.workers.get_mut(worker).expect("checked").current = Some(head);
        Ok(Some(Claimed { job: job.clone(), settled_at }))
    }

    fn assigned_mut(&mut self, worker: &ServiceId, job: JobId) -> Result<&mut JobRecord, JobError> {
        let rec = self.jobs.get_mut(&job).ok_or(JobError::UnknownJob(job))?;
        if rec.state != JobState::Active {
            return Err(JobError::NotActive(job));
        }
        if rec.assigned_worker.as_ref() != Some(worker) {
            return Err(JobError::NotAssigned(job));
        }
        Ok(rec)
    }

    pub fn report_status(&mut self, worker: &ServiceId, marker: StatusMarker, now: SimTime) -> Result<SimTime, JobError> {
        marker.validate()?;
        self.assigned_mut(worker, marker.job)?.markers.push(marker);
        Ok(self.db.reserve(DbOp::Write, now))
    }

    /// Records the end of input staging as a status marker.
    pub fn mark_staged(&mut self, worker: &ServiceId, job: JobId, at: SimTime) -> Result<SimTime, JobError> {
        let rec = self.assigned_mut(worker, job)?;
        rec.stage_done_time = Some(at);
        rec.history.push(JobEvent { time: at, kind: JobEventKind::Staged });
        rec.markers.push(StatusMarker {
            job,
            time: at,
            cpu_util: 0.0,
            ram_util: 0.0,
            io_util: 1.0,
            progress: "inputs staged".into(),
        });
        Ok(self.db.reserve(DbOp::Write, at))
    }

    fn finish(&mut self, worker: &ServiceId, job: JobId, failure: Option<FailureReason>, exit_code: Option<i32>, outputs: Vec<String>, now: SimTime) -> SimTime {
        let rec = self.jobs.get_mut(&job).expect("caller checked");
        rec.end_time = Some(now);
        rec.exit_code = exit_code;
        rec.outputs = outputs;
        rec.state = if failure.is_some() { JobState::Failed } else { JobState::Completed };
        rec.history.push(JobEvent {
            time: now,
            kind: match &failure {
                None => JobEventKind::Completed,
                Some(r) => JobEventKind::Failed { reason: r.clone() },
            },
        });
        rec.failure = failure;
        if let Some(w) = self.workers.get_mut(worker) {
            w.current = None;
        }
        self.db.reserve(DbOp::Write, now)
    }

    /// Stages produced outputs as private objects owned by the job's owner
    /// under `<results>/<owner>/<job>/<name>`, then records the exit code.
    /// A nonzero exit still stages outputs and marks the job failed.
    #[allow(clippy::too_many_arguments)]
    pub fn complete(
        &mut self,
        sec: &mut SecurityFabric,
        store: &mut ObjectStore,
        worker: &ServiceId,
        worker_token: &TokenId,
        job: JobId,
        exit_code: i32,
        produced: &[ProducedOutput],
        now: SimTime,
    ) -> Result<(JobRecord, SimTime), JobError> {
        let rec = self.assigned_mut(worker, job)?;
        let owner = rec.description.owner.clone();
        let bucket = self.config.results_bucket.clone();
        let mut staged = Vec::new();
        let mut failure = (exit_code != 0).then_some(FailureReason::ExitCode(exit_code));
        for out in produced {
            let key = format!("{owner}/{job}/{}", out.name);
            match store.put_private(sec, &bucket, &key, out.size_gb, &owner, worker_token, now) {
                Ok(o) => staged.push(o.resource()),
                Err(e) => {
                    failure = Some(FailureReason::OutputStageFailed(format!("{key}: {e}")));
                    break;
                }
            }
        }
        let settled = self.finish(worker, job, failure, Some(exit_code), staged, now);
        Ok((self.jobs[&job].clone(), settled))
    }

    /// Ends an active job as failed without staging outputs.
    pub fn fail(&mut self, worker: &ServiceId, job: JobId, reason: FailureReason, now: SimTime) -> Result<(JobRecord, SimTime), JobError> {
        self.assigned_mut(worker, job)?;
        let settled = self.finish(worker, job, Some(reason), None, Vec::new(), now);
        Ok((self.jobs[&job].clone(), settled))
    }

    fn requeue(&mut self, job: JobId, reason: RequeueReason, t: SimTime) -> RequeueEvent {
        let rec = self.jobs.get_mut(&job).expect("active job exists");
        let worker = rec.assigned_worker.take();
        let instance = rec.assigned_instance.take();
        rec.state = JobState::Pending;
        rec.requeues += 1;
        rec.claim_time = None;
        rec.stage_done_time = None;
        rec.history.push(JobEvent { time: t, kind: JobEventKind::Requeued { reason } });
        let class = rec.queue();
        let requeues = rec.requeues;
        if let Some(w) = worker.as_ref().and_then(|w| self.workers.get_mut(w)) {
            if w.current == Some(job) {
                w.current = None;
            }
        }
        self.pending[class.index()].push_back(job);
        self.visible_at.insert(job, t);
        RequeueEvent { time: t, job, worker, instance, reason, requeues }
    }

    /// Requeues every active job whose instance is gone or whose worker is
    /// stuck past `stuck_factor` wall-time limits. Jobs are visited in id
    /// order, so requeued jobs re-enter their queue tail in that order.
    pub fn monitor_pass(&mut self, t: SimTime, health: &dyn InstanceHealth) -> Vec<RequeueEvent> {
        let t = self.last_monitor.map_or(t, |prev| prev.max(t));
        self.last_monitor = Some(t);
        let factor = self.config.stuck_factor.max(1) as i64;
        let mut todo = Vec::new();
        for rec in self.jobs.values().filter(|j| j.state == JobState::Active) {
            let lost = rec.assigned_instance.is_none_or(|i| !health.is_healthy(i))
                || rec.assigned_worker.as_ref().is_none_or(|w| !self.workers.contains_key(w));
            let stuck = rec.claim_time.is_some_and(|c| t - c > SimDuration(rec.description.max_walltime().0 * factor));
            if lost {
                todo.push((rec.id, RequeueReason::InstanceLost));
            } else if stuck {
                todo.push((rec.id, RequeueReason::Stuck));
            }
        }
        todo.into_iter().map(|(id, reason)| self.requeue(id, reason, t)).collect()
    }
}

impl ActiveJobBindings for JobQueue {
    fn has_active_job(&self, worker: &ServiceId, owner: &UserId) -> bool {
        self.workers
            .get(worker)
            .and_then(|w| w.current)
            .and_then(|j| self.jobs.get(&j))
            .is_some_and(|j| j.state == JobState::Active && &j.description.owner == owner)
    }
}
