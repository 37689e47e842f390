//! Worker-side driver: assume the owner's role, stage inputs, drop back to
//! the task-executor role, run the script under its wall-time bound, then
//! stage outputs and complete.

use serde::{Deserialize, Serialize};

use super::{FailureReason, InputRef, JobError, JobQueue, JobRecord, JobState, QueueClass};
use crate::ids::{JobId, ServiceId};
use crate::security::{SecurityFabric, TokenId};
use crate::storage::{ObjectStore, SignedUrl, StagingReceipt, SCHEME};
use crate::time::{SimDuration, SimTime};

pub const DEFAULT_STAGING_MB_PER_S: f64 = 100.0;

/// Copy time for `size_gb` at `mb_per_s` (decimal units).
pub fn staging_duration(size_gb: f64, mb_per_s: f64) -> SimDuration {
    SimDuration::from_secs_f64(size_gb * 1000.0 / mb_per_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducedOutput {
    pub name: String,
    pub size_gb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub elapsed: SimDuration,
    pub exit_code: i32,
    pub outputs: Vec<ProducedOutput>,
}

pub trait ScriptRunner {
    fn run(&mut self, job: &JobRecord) -> RunResult;
}

/// Interprets scripts made of `sleep <secs>` and `exit <code>` commands
/// separated by `;` or `&&`. Every declared output is produced with a fixed
/// size. Anything else exits 127.
#[derive(Debug, Clone)]
pub struct SyntheticRunner {
    pub output_size_gb: f64,
}

impl Default for SyntheticRunner {
    fn default() -> Self {
        SyntheticRunner { output_size_gb: 0.001 }
    }
}

impl SyntheticRunner {
    pub fn interpret(script: &str) -> (SimDuration, i32) {
        let mut elapsed = SimDuration::ZERO;
        for cmd in script.split([';', '\n']).flat_map(|c| c.split("&&")) {
            let cmd = cmd.trim();
            if cmd.is_empty() {
                continue;
            }
            let cmd = cmd.replace(['(', ')'], " ");
            let mut words = cmd.split_whitespace();
            match (words.next(), words.next().map(str::parse::<f64>)) {
                (Some("sleep"), Some(Ok(s))) if s >= 0.0 => elapsed += SimDuration::from_secs_f64(s),
                (Some("exit"), Some(Ok(c))) => return (elapsed, c as i32),
                (Some("true"), None) => {}
                _ => return (elapsed, 127),
            }
        }
        (elapsed, 0)
    }
}

impl ScriptRunner for SyntheticRunner {
    fn run(&mut self, job: &JobRecord) -> RunResult {
        let (elapsed, exit_code) = Self::interpret(&job.description.script);
        let outputs = job
            .description
            .outputs
            .iter()
            .map(|n| ProducedOutput { name: n.clone(), size_gb: self.output_size_gb })
            .collect();
        RunResult { elapsed, exit_code, outputs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub job: JobId,
    pub receipts: Vec<StagingReceipt>,
    pub external: Vec<String>,
    pub total_gb: f64,
    /// Inputs are local and execution may begin.
    pub ready_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub job: JobId,
    pub state: JobState,
    pub stage_done: SimTime,
    pub end: SimTime,
    pub exit_code: Option<i32>,
    pub failure: Option<FailureReason>,
}

/// A worker process bound to one instance and one pool.
#[derive(Debug, Clone)]
pub struct Worker {
    pub id: ServiceId,
    pub pool: QueueClass,
    pub token: TokenId,
    pub staging_mb_per_s: f64,
}

impl Worker {
    pub fn new(id: ServiceId, pool: QueueClass, token: TokenId) -> Self {
        Worker { id, pool, token, staging_mb_per_s: DEFAULT_STAGING_MB_PER_S }
    }

    /// Re-issues the task-executor token if it is no longer honored at `now`.
    pub fn ensure_token(&mut self, sec: &mut SecurityFabric, now: SimTime) -> Result<(), JobError> {
        if sec.validate(&self.token, now).is_err() {
            let tok = sec.issue_service_token(&self.id, now).map_err(|_| JobError::UnknownWorker(self.id.clone()))?;
            self.token = tok.id;
        }
        Ok(())
    }

    /// Stages the job's inputs under the owner's assumed role. On failure
    /// the job is marked failed and `StageFailed` is returned.
    pub fn stage(
        &mut self,
        q: &mut JobQueue,
        sec: &mut SecurityFabric,
        store: &mut ObjectStore,
        job: JobId,
        now: SimTime,
    ) -> Result<StageReport, JobError> {
        self.ensure_token(sec, now)?;
        let rec = q.job(job).ok_or(JobError::UnknownJob(job))?;
        if rec.state != JobState::Active {
            return Err(JobError::NotActive(job));
        }
        if rec.assigned_worker.as_ref() != Some(&self.id) {
            return Err(JobError::NotAssigned(job));
        }
        let owner = rec.description.owner.clone();
        let inputs = rec.description.inputs.clone();
        let staged = match sec.assume_role(&self.token, &owner, &*q, now) {
            Err(e) => Err(format!("assume role: {e}")),
            Ok(assumed) => {
                let r = stage_inputs(sec, store, &inputs, &assumed.id, now);
                let _ = sec.release_role(&assumed.id, now);
                r
            }
        };
        match staged {
            Err(msg) => {
                q.fail(&self.id, job, FailureReason::StageFailed(msg.clone()), now)?;
                Err(JobError::StageFailed(msg))
            }
            Ok((receipts, external)) => {
                let total_gb: f64 = receipts.iter().map(|r| r.size_gb).sum();
                let available = receipts.iter().map(|r| r.available_at).max().unwrap_or(now).max(now);
                let ready_at = available + staging_duration(total_gb, self.staging_mb_per_s);
                q.mark_staged(&self.id, job, ready_at)?;
                Ok(StageReport { job, receipts, external, total_gb, ready_at })
            }
        }
    }

    /// Applies a finished run that started at `started`: an overrun fails
    /// the job with `TimedOut` at the limit, otherwise outputs are staged
    /// and the job completes at `started + elapsed`.
    pub fn finish(
        &mut self,
        q: &mut JobQueue,
        sec: &mut SecurityFabric,
        store: &mut ObjectStore,
        job: JobId,
        result: &RunResult,
        started: SimTime,
    ) -> Result<ExecutionOutcome, JobError> {
        let limit = q.job(job).ok_or(JobError::UnknownJob(job))?.description.max_walltime();
        if result.elapsed > limit {
            q.fail(&self.id, job, FailureReason::TimedOut, started + limit)?;
            return Err(JobError::TimedOut);
        }
        let end = started + result.elapsed;
        self.ensure_token(sec, end)?;
        let token = self.token.clone();
        let (rec, _) = q.complete(sec, store, &self.id, &token, job, result.exit_code, &result.outputs, end)?;
        Ok(ExecutionOutcome {
            job,
            state: rec.state,
            stage_done: started,
            end,
            exit_code: rec.exit_code,
            failure: rec.failure,
        })
    }

    /// Runs all phases back to back for a job this worker has claimed.
    pub fn execute(
        &mut self,
        q: &mut JobQueue,
        sec: &mut SecurityFabric,
        store: &mut ObjectStore,
        runner: &mut dyn ScriptRunner,
        job: JobId,
        now: SimTime,
    ) -> Result<ExecutionOutcome, JobError> {
        let report = self.stage(q, sec, store, job, now)?;
        let rec = q.job(job).ok_or(JobError::UnknownJob(job))?.clone();
        let result = runner.run(&rec);
        self.finish(q, sec, store, job, &result, report.ready_at)
    }
}

type Staged = (Vec<StagingReceipt>, Vec<String>);

fn stage_inputs(
    sec: &mut SecurityFabric,
    store: &mut ObjectStore,
    inputs: &[InputRef],
    token: &TokenId,
    now: SimTime,
) -> Result<Staged, String> {
    let mut receipts = Vec::new();
    let mut external = Vec::new();
    for input in inputs {
        match input {
            InputRef::Object { bucket, key } => {
                let r = store.stage(sec, bucket, key, token, now).map_err(|e| format!("{bucket}/{key}: {e}"))?;
                receipts.push(r);
            }
            InputRef::Url(u) if u.starts_with(SCHEME) => {
                let url = SignedUrl::parse(u).map_err(|e| e.to_string())?;
                let obj = store.fetch_by_url(sec, &url, now).map_err(|e| format!("{u}: {e}"))?;
                receipts.push(StagingReceipt {
                    bucket: obj.bucket,
                    key: obj.key,
                    size_gb: obj.size_gb,
                    tier: obj.tier,
                    available_at: now,
                });
            }
            InputRef::Url(u) => external.push(u.clone()),
        }
    }
    Ok((receipts, external))
}
