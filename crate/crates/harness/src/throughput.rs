//! Strong-scaling throughput: a fixed batch of zero-length tasks drained by
//! pre-provisioned workers through the capacity-limited task database.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use enclave_core::enclave::Enclave;
use enclave_core::jobqueue::{AlwaysHealthy, DbCapacity, JobDescription, QueueClass};
use enclave_core::security::TASK_EXECUTOR;
use enclave_core::time::{SimDuration, SimTime};
use enclave_core::{InstanceId, RoleId, ServiceId};
use serde::{Deserialize, Serialize};

use crate::fixture::{researcher, sim_enclave};
use crate::report::Report;
use crate::HarnessError;

/// Reads and writes one task costs once it is queued: a claim reads the
/// queue head and writes the assignment, completion writes the result.
pub const READS_PER_TASK: u32 = 1;
pub const WRITES_PER_TASK: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThroughputConfig {
    pub worker_counts: Vec<usize>,
    pub task_count: usize,
    pub db: DbCapacity,
    /// Tasks per second one worker sustains when the database never binds.
    pub per_worker_rate: f64,
}

impl Default for ThroughputConfig {
    fn default() -> Self {
        ThroughputConfig {
            worker_counts: vec![1, 2, 4, 8, 16, 32],
            task_count: 10_000,
            db: DbCapacity::default(),
            per_worker_rate: 4.90,
        }
    }
}

impl ThroughputConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_owned()));
        if self.worker_counts.is_empty() || self.worker_counts.contains(&0) {
            return bad("worker_counts must be non-empty and positive");
        }
        if self.task_count == 0 {
            return bad("task_count must be positive");
        }
        if !(self.per_worker_rate > 0.0 && self.per_worker_rate.is_finite()) {
            return bad("per_worker_rate must be positive");
        }
        if DbCapacity::new(self.db.reads_per_second, self.db.writes_per_second).is_none() {
            return bad("db capacity must be positive");
        }
        Ok(())
    }

    /// Task rate the database allows once submission is over.
    pub fn db_ceiling(&self) -> f64 {
        self.db.ceiling(READS_PER_TASK, WRITES_PER_TASK)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub workers: usize,
    pub total_tasks: usize,
    pub submission_time: SimDuration,
    /// From the end of submission until the last task is recorded.
    pub completion_time: SimDuration,
    pub throughput: f64,
    pub per_worker_throughput: f64,
    pub ideal_throughput: f64,
    pub db_ceiling: f64,
    pub db_reads: u64,
    pub db_writes: u64,
    pub db_delayed: u64,
}

/// End of the one-second database window holding `t`; work committed in a
/// window is only known to have landed once the window closes.
fn window_end(t: SimTime) -> SimTime {
    SimTime((t.0.div_euclid(1000) + 1) * 1000)
}

pub fn run_point(cfg: &ThroughputConfig, workers: usize) -> Result<ThroughputPoint, HarnessError> {
    let mut enc = sim_enclave(0, cfg.db)?;
    let t0 = SimTime::EPOCH;
    let owner = researcher();
    let token = enc.security.login(&owner, t0)?.id;
    let desc = JobDescription {
        owner: owner.clone(),
        queue: QueueClass::Prod,
        inputs: vec![],
        script: "sleep(0)".into(),
        outputs: vec![],
        max_walltime_secs: 60,
    };
    let mut last_submit = t0;
    for _ in 0..cfg.task_count {
        let (_, settled) = enc.queue.submit(&mut enc.security, desc.clone(), &token, t0)?;
        last_submit = last_submit.max(settled);
    }
    let started = window_end(last_submit);

    let mut ids = Vec::with_capacity(workers);
    let mut tokens = Vec::with_capacity(workers);
    for i in 0..workers {
        let sid = ServiceId::new(format!("bench-{i:02}"));
        enc.security.define_service(sid.clone(), RoleId::from(TASK_EXECUTOR), "")?;
        tokens.push(enc.security.issue_service_token(&sid, started)?.id);
        enc.queue.register_worker(sid.clone(), InstanceId(i as u64 + 1), QueueClass::Prod);
        ids.push(sid);
    }

    // worker clocks in microseconds; the queue itself works in milliseconds
    let cycle_us = (1e6 / cfg.per_worker_rate).round() as i64;
    let mut heap: BinaryHeap<Reverse<(i64, usize)>> = (0..workers).map(|w| Reverse((started.0 * 1000, w))).collect();
    let mut last_done = started;
    let mut done = 0usize;
    while let Some(Reverse((t_us, w))) = heap.pop() {
        let now = SimTime(t_us.div_euclid(1000));
        if enc.security.validate(&tokens[w], now).is_err() {
            tokens[w] = enc.security.issue_service_token(&ids[w], now)?.id;
        }
        let Enclave { security, store, queue } = &mut enc;
        let Some(claimed) = queue.claim(&ids[w], QueueClass::Prod, &AlwaysHealthy, now)? else {
            continue;
        };
        let (_, recorded) =
            queue.complete(security, store, &ids[w], &tokens[w], claimed.job.id, 0, &[], claimed.settled_at)?;
        done += 1;
        last_done = last_done.max(recorded);
        heap.push(Reverse(((t_us + cycle_us).max(recorded.0 * 1000), w)));
    }
    if done != cfg.task_count {
        return Err(HarnessError::Sim(format!("{done} of {} tasks completed", cfg.task_count)));
    }
    let completion_time = window_end(last_done) - started;
    let throughput = cfg.task_count as f64 / completion_time.as_secs_f64();
    let stats = enc.queue.db_stats();
    Ok(ThroughputPoint {
        workers,
        total_tasks: cfg.task_count,
        submission_time: started - t0,
        completion_time,
        throughput,
        per_worker_throughput: throughput / workers as f64,
        ideal_throughput: cfg.per_worker_rate * workers as f64,
        db_ceiling: cfg.db_ceiling(),
        db_reads: stats.reads,
        db_writes: stats.writes,
        db_delayed: stats.delayed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub config: ThroughputConfig,
    pub points: Vec<ThroughputPoint>,
}

impl ThroughputReport {
    pub fn point(&self, workers: usize) -> Option<&ThroughputPoint> {
        self.points.iter().find(|p| p.workers == workers)
    }
}

pub fn run_throughput_experiment(cfg: &ThroughputConfig) -> Result<ThroughputReport, HarnessError> {
    cfg.validate()?;
    let points = cfg.worker_counts.iter().map(|&n| run_point(cfg, n)).collect::<Result<_, _>>()?;
    Ok(ThroughputReport { config: cfg.clone(), points })
}

impl Report for ThroughputReport {
    type Row = ThroughputPoint;
    const STEM: &'static str = "throughput";
    fn csv_rows(&self) -> Vec<ThroughputPoint> {
        self.points.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(workers: Vec<usize>, db: DbCapacity) -> ThroughputConfig {
        ThroughputConfig { worker_counts: workers, task_count: 1_000, db, per_worker_rate: 4.90 }
    }

    #[test]
    fn unconstrained_workers_scale_linearly() {
        let r = run_throughput_experiment(&small(vec![1, 4], DbCapacity::generous())).unwrap();
        for p in &r.points {
            assert!((p.throughput / p.ideal_throughput - 1.0).abs() < 0.01, "{p:?}");
        }
    }

    #[test]
    fn database_caps_throughput() {
        let cfg = small(vec![32], DbCapacity::new(50, 400).unwrap());
        let p = &run_throughput_experiment(&cfg).unwrap().points[0];
        assert_eq!(cfg.db_ceiling(), 50.0);
        assert!(p.throughput <= 50.0, "{p:?}");
        assert!(p.throughput > 45.0, "{p:?}");
        assert!(p.db_delayed > 0);
    }

    #[test]
    fn submission_is_write_bound() {
        let p = run_point(&small(vec![1], DbCapacity::default()), 1).unwrap();
        // 1,000 writes at 400 per second fill three windows
        assert_eq!(p.submission_time, SimDuration::from_secs(3));
        assert_eq!(p.db_writes, 1_000 + 2 * 1_000);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(small(vec![], DbCapacity::default()).validate().is_err());
        assert!(small(vec![0], DbCapacity::default()).validate().is_err());
        let zero_rate = ThroughputConfig { per_worker_rate: 0.0, ..ThroughputConfig::default() };
        assert!(zero_rate.validate().is_err());
    }
}
