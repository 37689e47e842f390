//! Event-driven elastic-scaling runs: a seeded workload is submitted to the
//! production queue while the provisioner grows and shrinks a pool of
//! simulated instances, each hosting one worker.

use std::collections::{BTreeMap, BTreeSet};

use enclave_core::cloudsim::{
    CloudSim, DelayModel, Instance, InstanceEvent, InstanceState, Pricing, TraceSet,
};
use enclave_core::jobqueue::{
    JobDescription, JobError, JobEventKind, JobRecord, JobState, QueueClass, RunResult, ScriptRunner, SyntheticRunner,
    Worker,
};
use enclave_core::provisioner::{
    plan_scale, BidPolicy, MarketKind, MarketView, PlacementScope, PoolMember, PoolSpec, ScaleAction, ScalingStrategy,
    TransferParams,
};
use enclave_core::security::{TokenId, TASK_EXECUTOR};
use enclave_core::time::{Clock, SimDuration, SimTime};
use enclave_core::workload::{dataset_key, generate, to_descriptions, GeneratedJob, TraceSynthesis, WorkloadSpec};
use enclave_core::enclave::Enclave;
use enclave_core::jobqueue::DbCapacity;
use enclave_core::{InstanceId, JobId, RegionId, RoleId, ServiceId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TraceSource;
use crate::fixture::{default_catalog, researcher, sim_enclave, DATA_BUCKET};
use crate::report::Report;
use crate::HarnessError;

fn default_strategies() -> Vec<ScalingStrategy> {
    vec![
        ScalingStrategy::NoScaling { fixed: 40 },
        ScalingStrategy::NoScaling { fixed: 20 },
        ScalingStrategy::Limited { min: 0, max: 20 },
        ScalingStrategy::Limited { min: 0, max: 10 },
        ScalingStrategy::Unlimited { min: 0 },
    ]
}

/// m4.xlarge prices well below on-demand with no spikes.
pub fn calm_market() -> TraceSynthesis {
    TraceSynthesis {
        instance_type: "m4.xlarge".into(),
        duration: SimDuration::from_days(7),
        base: 0.04,
        on_demand: 0.239,
        spikes_per_day: 0.0,
        ..TraceSynthesis::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub strategies: Vec<ScalingStrategy>,
    /// Index into `strategies` of the strategy savings are measured against.
    pub baseline: usize,
    pub workload: WorkloadSpec,
    pub traces: TraceSource,
    pub instance_type: String,
    pub market: MarketKind,
    pub bid: BidPolicy,
    pub placement: PlacementScope,
    pub data_region: RegionId,
    pub provisioning_delay: DelayModel,
    pub tick: SimDuration,
    /// Time between the start of the simulation and the first arrival, so
    /// fixed and minimum pools are up before work shows up.
    pub warmup: SimDuration,
    pub staging_mb_per_s: f64,
    /// Chance per simulated hour that any running spot instance is
    /// reclaimed regardless of price.
    pub revocation_probability_per_hour: f64,
    /// Abort if the workload has not drained this long after the first
    /// arrival.
    pub horizon: SimDuration,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            strategies: default_strategies(),
            baseline: 0,
            workload: WorkloadSpec::default(),
            traces: TraceSource::Synthetic(calm_market()),
            instance_type: "m4.xlarge".into(),
            market: MarketKind::Spot,
            bid: BidPolicy::default(),
            placement: PlacementScope::CrossZone(RegionId::from("us-east-1")),
            data_region: RegionId::from("us-east-1"),
            provisioning_delay: DelayModel::default(),
            tick: SimDuration::MINUTE,
            warmup: SimDuration::from_mins(30),
            staging_mb_per_s: enclave_core::jobqueue::DEFAULT_STAGING_MB_PER_S,
            revocation_probability_per_hour: 0.0,
            horizon: SimDuration::from_days(5),
        }
    }
}

impl ScalingConfig {
    /// 200 jobs under unlimited scaling with every spot instance reclaimed
    /// at 30% per hour.
    pub fn chaos() -> Self {
        let traces = TraceSynthesis { duration: SimDuration::from_days(14), ..calm_market() };
        ScalingConfig {
            strategies: vec![ScalingStrategy::Unlimited { min: 0 }],
            workload: WorkloadSpec { job_count: 200, ..WorkloadSpec::default() },
            traces: TraceSource::Synthetic(traces),
            revocation_probability_per_hour: 0.3,
            horizon: SimDuration::from_days(12),
            ..ScalingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_owned()));
        if self.strategies.is_empty() {
            return bad("at least one strategy is required");
        }
        for s in &self.strategies {
            s.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.baseline >= self.strategies.len() {
            return bad("baseline index out of range");
        }
        self.bid.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !self.tick.is_positive() || self.warmup.0 < 0 || !self.horizon.is_positive() {
            return bad("tick and horizon must be positive, warmup non-negative");
        }
        if !(self.staging_mb_per_s > 0.0) {
            return bad("staging_mb_per_s must be positive");
        }
        if !(0.0..=1.0).contains(&self.revocation_probability_per_hour) {
            return bad("revocation_probability_per_hour must be in [0, 1]");
        }
        self.workload.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    fn pool(&self, strategy: ScalingStrategy) -> PoolSpec {
        PoolSpec {
            instance_type: self.instance_type.clone(),
            market: self.market,
            strategy,
            bid: self.bid,
            scope: self.placement.clone(),
            data_region: self.data_region.clone(),
            transfer: TransferParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMetrics {
    pub index: usize,
    pub job: JobId,
    /// Arrival offset from the first submission.
    pub submitted: SimDuration,
    /// Submission to first claim.
    pub wait: SimDuration,
    /// Claim to inputs staged, for the attempt that finished.
    pub stage: SimDuration,
    pub exec: SimDuration,
    pub requeues: u32,
    pub input_size_gb: f64,
    pub state: JobState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSample {
    /// Offset from the first submission; negative during warm-up.
    pub at: SimDuration,
    pub provisioned: usize,
    pub idle: usize,
    pub active_jobs: usize,
    pub pending_jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub strategy: String,
    pub per_job: Vec<JobMetrics>,
    pub makespan: SimDuration,
    pub spot_cost: f64,
    pub on_demand_equivalent_cost: f64,
    /// On-demand-equivalent saving against the baseline strategy.
    pub savings_vs_baseline_pct: f64,
    pub spot_savings_vs_baseline_pct: f64,
    pub peak_concurrency: usize,
    pub mean_wait: SimDuration,
    pub max_wait: SimDuration,
    pub instances_launched: usize,
    pub billed_hours: u64,
    pub revocations: usize,
    pub requeues: u32,
    pub timeline: Vec<PoolSample>,
}

/// Everything one run produced, for checks beyond the metrics.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub metrics: RunMetrics,
    pub jobs: Vec<JobRecord>,
    pub instances: Vec<Instance>,
    pub instance_events: Vec<InstanceEvent>,
}

struct Running {
    instance: InstanceId,
    started: SimTime,
    finish: SimTime,
    result: RunResult,
}

struct Sim<'a> {
    cfg: &'a ScalingConfig,
    pool: PoolSpec,
    cloud: CloudSim,
    enc: Enclave,
    token: Option<TokenId>,
    workers: BTreeMap<InstanceId, Worker>,
    members: BTreeSet<InstanceId>,
    running: BTreeMap<JobId, Running>,
    runner: SyntheticRunner,
    chaos: ChaCha8Rng,
    arrivals: Vec<(SimTime, JobDescription)>,
    next_arrival: usize,
    index_of: BTreeMap<JobId, usize>,
    timeline: Vec<PoolSample>,
    peak: usize,
    revocations: usize,
    t0: SimTime,
    start: SimTime,
    last_t: SimTime,
}

impl Sim<'_> {
    fn step(&mut self, t: SimTime) -> Result<(), HarnessError> {
        self.complete_due(t)?;
        self.revocations += self.cloud.step_markets(t)?.len();
        self.inject_chaos(t)?;
        self.reap();
        self.spawn_workers(t)?;
        for ev in self.enc.queue.monitor_pass(t, &self.cloud) {
            self.running.remove(&ev.job);
        }
        self.submit_due(t)?;
        self.claim_idle(t)?;
        self.scale(t)?;
        self.spawn_workers(t)?;
        self.claim_idle(t)?;
        self.peak = self.peak.max(self.enc.queue.active_count(QueueClass::Prod));
        if (t - self.t0).0 % self.cfg.tick.0 == 0 {
            self.sample(t);
        }
        self.last_t = t;
        Ok(())
    }

    fn complete_due(&mut self, t: SimTime) -> Result<(), HarnessError> {
        let mut due: Vec<(SimTime, JobId)> =
            self.running.iter().filter(|(_, r)| r.finish <= t).map(|(j, r)| (r.finish, *j)).collect();
        due.sort();
        for (_, job) in due {
            let run = self.running.remove(&job).expect("listed above");
            let worker = self.workers.get_mut(&run.instance).expect("running jobs have live workers");
            let Enclave { security, store, queue } = &mut self.enc;
            match worker.finish(queue, security, store, job, &run.result, run.started) {
                Ok(_) | Err(JobError::TimedOut) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn inject_chaos(&mut self, t: SimTime) -> Result<(), HarnessError> {
        let p = self.cfg.revocation_probability_per_hour;
        if p <= 0.0 || t <= self.last_t {
            return Ok(());
        }
        let q = 1.0 - (1.0 - p).powf((t - self.last_t).as_hours_f64());
        let victims: Vec<InstanceId> = self
            .members
            .iter()
            .copied()
            .filter(|id| {
                self.cloud.instance(*id).is_some_and(|i| i.state == InstanceState::Running && i.market.is_spot())
            })
            .collect();
        for id in victims {
            if self.chaos.random::<f64>() < q {
                self.cloud.inject_revocation(id)?;
                self.revocations += 1;
            }
        }
        Ok(())
    }

    fn reap(&mut self) {
        let dead: Vec<InstanceId> = self
            .members
            .iter()
            .copied()
            .filter(|id| !self.cloud.instance(*id).is_some_and(|i| i.state.is_live()))
            .collect();
        for id in dead {
            self.members.remove(&id);
            if let Some(w) = self.workers.remove(&id) {
                self.enc.queue.deregister_worker(&w.id);
            }
        }
    }

    fn spawn_workers(&mut self, t: SimTime) -> Result<(), HarnessError> {
        let ready: Vec<InstanceId> = self
            .members
            .iter()
            .copied()
            .filter(|id| !self.workers.contains_key(id))
            .filter(|id| self.cloud.instance(*id).is_some_and(|i| i.state == InstanceState::Running))
            .collect();
        for id in ready {
            let sid = ServiceId::new(format!("worker-{}", id.0));
            self.enc.security.define_service(sid.clone(), RoleId::from(TASK_EXECUTOR), "")?;
            let token = self.enc.security.issue_service_token(&sid, t)?;
            self.enc.queue.register_worker(sid.clone(), id, QueueClass::Prod);
            let mut w = Worker::new(sid, QueueClass::Prod, token.id);
            w.staging_mb_per_s = self.cfg.staging_mb_per_s;
            self.workers.insert(id, w);
        }
        Ok(())
    }

    fn researcher_token(&mut self, t: SimTime) -> Result<TokenId, HarnessError> {
        if let Some(tok) = &self.token {
            if self.enc.security.validate(tok, t).is_ok() {
                return Ok(tok.clone());
            }
        }
        let tok = self.enc.security.login(&researcher(), t)?.id;
        self.token = Some(tok.clone());
        Ok(tok)
    }

    fn submit_due(&mut self, t: SimTime) -> Result<(), HarnessError> {
        while self.next_arrival < self.arrivals.len() && self.arrivals[self.next_arrival].0 <= t {
            let desc = self.arrivals[self.next_arrival].1.clone();
            let token = self.researcher_token(t)?;
            let (rec, _) = self.enc.queue.submit(&mut self.enc.security, desc, &token, t)?;
            self.index_of.insert(rec.id, self.next_arrival);
            self.next_arrival += 1;
        }
        Ok(())
    }

    fn claim_idle(&mut self, t: SimTime) -> Result<(), HarnessError> {
        let idle: Vec<InstanceId> = self
            .workers
            .iter()
            .filter(|(_, w)| self.enc.queue.worker(&w.id).is_some_and(|i| i.current.is_none()))
            .map(|(id, _)| *id)
            .collect();
        for id in idle {
            if self.enc.queue.pending_count(QueueClass::Prod) == 0 {
                break;
            }
            let worker = self.workers.get_mut(&id).expect("listed above");
            let Enclave { security, store, queue } = &mut self.enc;
            let Some(claimed) = queue.claim(&worker.id, QueueClass::Prod, &self.cloud, t)? else {
                break;
            };
            let job = claimed.job.id;
            match worker.stage(queue, security, store, job, t) {
                Ok(report) => {
                    let rec = queue.job(job).expect("claimed job exists");
                    let result = self.runner.run(rec);
                    let limit = rec.description.max_walltime();
                    let finish = report.ready_at + result.elapsed.min(limit);
                    self.running.insert(job, Running { instance: id, started: report.ready_at, finish, result });
                }
                Err(JobError::StageFailed(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn pool_members(&self) -> Vec<PoolMember> {
        self.members
            .iter()
            .filter_map(|id| self.cloud.instance(*id))
            .map(|i| PoolMember {
                instance: i.id,
                state: i.state,
                ready_time: i.ready_time,
                idle: i.state == InstanceState::Running
                    && self
                        .workers
                        .get(&i.id)
                        .and_then(|w| self.enc.queue.worker(&w.id))
                        .is_some_and(|w| w.current.is_none()),
            })
            .collect()
    }

    fn scale(&mut self, t: SimTime) -> Result<(), HarnessError> {
        let members = self.pool_members();
        let active = self.enc.queue.active_count(QueueClass::Prod);
        let pending = self.enc.queue.pending_count(QueueClass::Prod);
        let market = MarketView::new(self.cloud.topology(), self.cloud.catalog(), self.cloud.traces());
        let actions = plan_scale(&self.pool, active, pending, &members, market, t, self.cfg.tick)?;
        for action in actions {
            match action {
                ScaleAction::Provision { quote, market } => {
                    let inst = self.cloud.provision(&self.pool.instance_type, &quote.zone, market, &self.cfg.provisioning_delay)?;
                    self.members.insert(inst.id);
                }
                ScaleAction::Terminate { instance } => {
                    self.cloud.terminate(instance)?;
                    self.members.remove(&instance);
                    if let Some(w) = self.workers.remove(&instance) {
                        self.enc.queue.deregister_worker(&w.id);
                    }
                }
            }
        }
        Ok(())
    }

    fn sample(&mut self, t: SimTime) {
        let members = self.pool_members();
        self.timeline.push(PoolSample {
            at: t - self.start,
            provisioned: members.len(),
            idle: members.iter().filter(|m| m.idle).count(),
            active_jobs: self.enc.queue.active_count(QueueClass::Prod),
            pending_jobs: self.enc.queue.pending_count(QueueClass::Prod),
        });
    }

    fn drained(&self) -> bool {
        self.next_arrival == self.arrivals.len() && self.enc.queue.jobs().all(|j| j.state.is_terminal())
    }

    fn next_event(&self, t: SimTime) -> SimTime {
        let tick = self.cfg.tick.0;
        let mut next = self.t0 + SimDuration(((t - self.t0).0 / tick + 1) * tick);
        if let Some((at, _)) = self.arrivals.get(self.next_arrival) {
            next = next.min(*at);
        }
        for r in self.running.values() {
            next = next.min(r.finish.max(t + SimDuration::MILLISECOND));
        }
        for id in &self.members {
            if let Some(i) = self.cloud.instance(*id) {
                if i.state == InstanceState::Provisioning && i.ready_time > t {
                    next = next.min(i.ready_time);
                }
            }
        }
        next.max(t + SimDuration::MILLISECOND)
    }
}

/// Runs one strategy over an already generated workload and trace set.
pub fn run_strategy(
    cfg: &ScalingConfig,
    strategy: ScalingStrategy,
    jobs: &[GeneratedJob],
    traces: &TraceSet,
    seed: u64,
) -> Result<SimOutcome, HarnessError> {
    let topology = enclave_core::cloudsim::Topology::ten_zone_default();
    let t0 = traces.common_start().ok_or_else(|| HarnessError::Config("empty trace set".into()))?;
    let start = t0 + cfg.warmup;
    let cloud = CloudSim::new(topology, default_catalog(), traces.clone(), seed, Clock::new(t0, cfg.tick));
    let mut enc = sim_enclave(seed, DbCapacity::default())?;
    let owner = researcher();
    let token = enc.security.login(&owner, t0)?.id;
    for j in jobs {
        enc.store.put(&mut enc.security, DATA_BUCKET, &dataset_key(j), j.input_size_gb, &owner, &token, t0)?;
    }
    let descs = to_descriptions(jobs, &owner, QueueClass::Prod, DATA_BUCKET);
    let arrivals = jobs.iter().zip(descs).map(|(j, d)| (start + j.arrival, d)).collect();
    let mut sim = Sim {
        cfg,
        pool: cfg.pool(strategy),
        cloud,
        enc,
        token: Some(token),
        workers: BTreeMap::new(),
        members: BTreeSet::new(),
        running: BTreeMap::new(),
        runner: SyntheticRunner::default(),
        chaos: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c4a0),
        arrivals,
        next_arrival: 0,
        index_of: BTreeMap::new(),
        timeline: Vec::new(),
        peak: 0,
        revocations: 0,
        t0,
        start,
        last_t: t0,
    };
    let mut t = t0;
    loop {
        sim.step(t)?;
        if sim.drained() {
            break;
        }
        if t - start > cfg.horizon {
            return Err(HarnessError::Sim(format!("{strategy}: workload did not drain within {:?}", cfg.horizon)));
        }
        t = sim.next_event(t);
    }
    for id in std::mem::take(&mut sim.members) {
        sim.cloud.terminate(id)?;
    }
    let sample_at_end = t;
    sim.sample(sample_at_end);
    finish_metrics(sim, strategy, jobs)
}

fn finish_metrics(sim: Sim<'_>, strategy: ScalingStrategy, jobs: &[GeneratedJob]) -> Result<SimOutcome, HarnessError> {
    let records: Vec<JobRecord> = sim.enc.queue.jobs().cloned().collect();
    let mut per_job = Vec::with_capacity(records.len());
    for rec in &records {
        let index = sim.index_of[&rec.id];
        let first = rec.first_claim_time().unwrap_or(rec.submit_time);
        let claim = rec.claim_time.unwrap_or(first);
        let staged = rec.stage_done_time.unwrap_or(claim);
        let end = rec.end_time.unwrap_or(staged);
        per_job.push(JobMetrics {
            index,
            job: rec.id,
            submitted: rec.submit_time - sim.start,
            wait: first - rec.submit_time,
            stage: staged - claim,
            exec: end - staged,
            requeues: rec.requeues,
            input_size_gb: jobs[index].input_size_gb,
            state: rec.state,
        });
    }
    per_job.sort_by_key(|m| m.index);
    let first_submit = records.iter().map(|r| r.submit_time).min().unwrap_or(sim.start);
    let last_end = records.iter().filter_map(|r| r.end_time).max().unwrap_or(first_submit);
    let mut spot_cost = 0.0;
    let mut od_cost = 0.0;
    let mut billed_hours = 0;
    for i in sim.cloud.instances() {
        spot_cost += sim.cloud.accrued_cost(i.id, Pricing::SpotTrace)?;
        od_cost += sim.cloud.accrued_cost(i.id, Pricing::OnDemandEquivalent)?;
        billed_hours += sim.cloud.billed_hours(i.id)?;
    }
    let waits: Vec<SimDuration> = per_job.iter().map(|m| m.wait).collect();
    let mean_wait = SimDuration(waits.iter().map(|w| w.0).sum::<i64>() / waits.len().max(1) as i64);
    let metrics = RunMetrics {
        strategy: strategy.label(),
        makespan: last_end - first_submit,
        spot_cost,
        on_demand_equivalent_cost: od_cost,
        savings_vs_baseline_pct: 0.0,
        spot_savings_vs_baseline_pct: 0.0,
        peak_concurrency: sim.peak,
        mean_wait,
        max_wait: waits.iter().copied().max().unwrap_or(SimDuration::ZERO),
        instances_launched: sim.cloud.instances().count(),
        billed_hours,
        revocations: sim.revocations,
        requeues: per_job.iter().map(|m| m.requeues).sum(),
        per_job,
        timeline: sim.timeline,
    };
    Ok(SimOutcome {
        metrics,
        jobs: records,
        instances: sim.cloud.instances().cloned().collect(),
        instance_events: sim.cloud.events().to_vec(),
    })
}

pub fn savings_pct(baseline: f64, cost: f64) -> f64 {
    if baseline > 0.0 {
        (baseline - cost) / baseline * 100.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub instance_type: String,
    pub market: MarketKind,
    pub baseline: String,
    pub workload: WorkloadSpec,
    pub runs: Vec<RunMetrics>,
}

impl ScalingReport {
    pub fn run(&self, label: &str) -> Option<&RunMetrics> {
        self.runs.iter().find(|r| r.strategy == label)
    }
}

/// Every strategy consumes the same generated workload and the same trace
/// set; only the pool policy differs between rows.
pub fn run_scaling_experiment(cfg: &ScalingConfig, seed: u64) -> Result<ScalingReport, HarnessError> {
    cfg.validate()?;
    let jobs = generate(&cfg.workload)?;
    let traces = cfg.traces.load(&enclave_core::cloudsim::Topology::ten_zone_default())?;
    let mut runs = Vec::with_capacity(cfg.strategies.len());
    for &s in &cfg.strategies {
        runs.push(run_strategy(cfg, s, &jobs, &traces, seed)?.metrics);
    }
    let base_od = runs[cfg.baseline].on_demand_equivalent_cost;
    let base_spot = runs[cfg.baseline].spot_cost;
    for r in &mut runs {
        r.savings_vs_baseline_pct = savings_pct(base_od, r.on_demand_equivalent_cost);
        r.spot_savings_vs_baseline_pct = savings_pct(base_spot, r.spot_cost);
    }
    Ok(ScalingReport {
        instance_type: cfg.instance_type.clone(),
        market: cfg.market,
        baseline: cfg.strategies[cfg.baseline].label(),
        workload: cfg.workload.clone(),
        runs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub strategy: String,
    pub makespan_hours: f64,
    pub mean_wait_secs: f64,
    pub max_wait_secs: f64,
    pub spot_cost: f64,
    pub on_demand_equivalent_cost: f64,
    pub savings_vs_baseline_pct: f64,
    pub spot_savings_vs_baseline_pct: f64,
    pub peak_concurrency: usize,
    pub instances_launched: usize,
    pub billed_hours: u64,
    pub revocations: usize,
    pub requeues: u32,
}

impl Report for ScalingReport {
    type Row = ScalingRow;
    const STEM: &'static str = "scaling_results";
    fn csv_rows(&self) -> Vec<ScalingRow> {
        self.runs
            .iter()
            .map(|r| ScalingRow {
                strategy: r.strategy.clone(),
                makespan_hours: r.makespan.as_hours_f64(),
                mean_wait_secs: r.mean_wait.as_secs_f64(),
                max_wait_secs: r.max_wait.as_secs_f64(),
                spot_cost: r.spot_cost,
                on_demand_equivalent_cost: r.on_demand_equivalent_cost,
                savings_vs_baseline_pct: r.savings_vs_baseline_pct,
                spot_savings_vs_baseline_pct: r.spot_savings_vs_baseline_pct,
                peak_concurrency: r.peak_concurrency,
                instances_launched: r.instances_launched,
                billed_hours: r.billed_hours,
                revocations: r.revocations,
                requeues: r.requeues,
            })
            .collect()
    }
}

/// Replays the job and instance event logs and reports every point where
/// a job was held by two instances at once, an instance ran two jobs at
/// once, or a job was claimed or finished on an instance that was not up.
pub fn check_exclusive_execution(jobs: &[JobRecord], instances: &[Instance]) -> Vec<String> {
    let by_id: BTreeMap<InstanceId, &Instance> = instances.iter().map(|i| (i.id, i)).collect();
    let up_at = |id: InstanceId, t: SimTime| {
        by_id.get(&id).is_some_and(|i| i.ready_time <= t && i.end_time.is_none_or(|e| t <= e))
    };
    let mut violations = Vec::new();
    let mut spans: BTreeMap<InstanceId, Vec<(SimTime, SimTime, JobId)>> = BTreeMap::new();
    for rec in jobs {
        let mut held: Option<(InstanceId, SimTime)> = None;
        let mut done = false;
        for ev in &rec.history {
            if done {
                violations.push(format!("{}: event after terminal state at {}", rec.id, ev.time));
            }
            match &ev.kind {
                JobEventKind::Submitted => {}
                JobEventKind::Claimed { instance, .. } => {
                    if let Some((other, _)) = held {
                        violations.push(format!("{}: claimed on {instance} while held by {other}", rec.id));
                    }
                    if !up_at(*instance, ev.time) {
                        violations.push(format!("{}: claimed on {instance} which was not up at {}", rec.id, ev.time));
                    }
                    held = Some((*instance, ev.time));
                }
                JobEventKind::Staged => {}
                JobEventKind::Requeued { .. } | JobEventKind::Completed | JobEventKind::Failed { .. } => {
                    match held.take() {
                        Some((inst, from)) => {
                            let finished = !matches!(ev.kind, JobEventKind::Requeued { .. });
                            if finished && !up_at(inst, ev.time) {
                                violations.push(format!("{}: finished on {inst} after it went down", rec.id));
                            }
                            spans.entry(inst).or_default().push((from, ev.time, rec.id));
                        }
                        None => violations.push(format!("{}: released at {} without a holder", rec.id, ev.time)),
                    }
                    done = !matches!(ev.kind, JobEventKind::Requeued { .. });
                }
            }
        }
        if let Some((inst, from)) = held {
            spans.entry(inst).or_default().push((from, SimTime(i64::MAX), rec.id));
        }
    }
    for (inst, mut list) in spans {
        list.sort();
        for w in list.windows(2) {
            if w[1].0 < w[0].1 {
                violations.push(format!("{inst}: ran {} and {} at once", w[0].2, w[1].2));
            }
        }
    }
    violations
}
