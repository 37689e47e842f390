//! Seeded workload generation, spot-trace files and synthetic spot markets.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::cloudsim::{SpotPriceTrace, TraceSet};
use crate::ids::{UserId, ZoneId};
use crate::jobqueue::{InputRef, JobDescription, QueueClass};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("trace parse error: {0}")]
    Parse(String),
    #[error("invalid trace parameters: {0}")]
    InvalidParams(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationClass {
    pub hours: f64,
    pub fraction: f64,
}

/// Defaults to 40 jobs over about four hours, durations of 1, 3 and 4 hours
/// in a 40/20/40 split, up to 5% jitter, and input datasets of 1 to 9 GB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub job_count: usize,
    pub window: SimDuration,
    /// Mean exponential gap between arrivals; 0.1 h fits 40 jobs into four
    /// hours.
    pub inter_arrival_mean_hours: f64,
    pub mix: Vec<DurationClass>,
    pub jitter_fraction: f64,
    pub data_sizes_gb: Vec<f64>,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            job_count: 40,
            window: SimDuration::from_hours(4),
            inter_arrival_mean_hours: 0.1,
            mix: vec![
                DurationClass { hours: 1.0, fraction: 0.4 },
                DurationClass { hours: 3.0, fraction: 0.2 },
                DurationClass { hours: 4.0, fraction: 0.4 },
            ],
            jitter_fraction: 0.05,
            data_sizes_gb: vec![1.0, 3.0, 5.0, 7.0, 9.0],
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidSpec(m.to_owned()));
        if self.job_count == 0 {
            return bad("job_count must be positive");
        }
        if !(self.inter_arrival_mean_hours > 0.0 && self.inter_arrival_mean_hours.is_finite()) {
            return bad("inter_arrival_mean_hours must be positive");
        }
        if self.mix.is_empty() || self.mix.iter().any(|c| !(c.hours > 0.0) || !(c.fraction >= 0.0)) {
            return bad("mix needs positive durations and non-negative fractions");
        }
        let total: f64 = self.mix.iter().map(|c| c.fraction).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad("mix fractions must sum to 1");
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return bad("jitter_fraction must be in [0, 1)");
        }
        if self.data_sizes_gb.is_empty() || self.data_sizes_gb.iter().any(|s| !(*s > 0.0)) {
            return bad("data_sizes_gb must be non-empty and positive");
        }
        Ok(())
    }

    /// Jobs per duration class: each fraction times the job count, rounded
    /// by largest remainder so the counts add up exactly.
    pub fn class_counts(&self) -> Vec<usize> {
        let n = self.job_count as f64;
        let raw: Vec<f64> = self.mix.iter().map(|c| c.fraction * n).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut left = self.job_count - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedJob {
    pub index: usize,
    /// Offset from the start of the experiment.
    pub arrival: SimDuration,
    pub class: usize,
    pub nominal: SimDuration,
    pub actual: SimDuration,
    pub input_size_gb: f64,
    pub script: String,
}

/// Deterministic in `spec` (including its seed). The first job arrives at 0.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<GeneratedJob>, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gaps = Exp::new(1.0 / spec.inter_arrival_mean_hours).map_err(|e| WorkloadError::InvalidSpec(e.to_string()))?;
    let mut classes: Vec<usize> = spec.class_counts().iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
    classes.shuffle(&mut rng);
    let j = spec.jitter_fraction;
    let mut at_hours = 0.0;
    let mut jobs = Vec::with_capacity(spec.job_count);
    for (index, class) in classes.into_iter().enumerate() {
        if index > 0 {
            at_hours += gaps.sample(&mut rng);
        }
        let nominal = SimDuration::from_hours_f64(spec.mix[class].hours);
        let factor = if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) } else { 1.0 };
        let lo = (nominal.0 as f64 * (1.0 - j)).ceil() as i64;
        let hi = (nominal.0 as f64 * (1.0 + j)).floor() as i64;
        let actual = SimDuration(((nominal.0 as f64 * factor).round() as i64).clamp(lo, hi));
        let input_size_gb = *spec.data_sizes_gb.choose(&mut rng).expect("validated non-empty");
        jobs.push(GeneratedJob {
            index,
            arrival: SimDuration::from_hours_f64(at_hours),
            class,
            nominal,
            actual,
            input_size_gb,
            script: format!("sleep {}", actual.0 as f64 / 1000.0),
        });
    }
    Ok(jobs)
}

/// Object key the generated job's input dataset is stored under.
pub fn dataset_key(job: &GeneratedJob) -> String {
    format!("workload/job-{:04}-{}gb.dat", job.index, job.input_size_gb)
}

/// The workload as submission descriptions: one input from `bucket`, one
/// output, and a wall-time limit with headroom above the jittered duration.
pub fn to_descriptions(jobs: &[GeneratedJob], owner: &UserId, queue: QueueClass, bucket: &str) -> Vec<JobDescription> {
    jobs.iter()
        .map(|j| JobDescription {
            owner: owner.clone(),
            queue,
            inputs: vec![InputRef::Object { bucket: bucket.to_owned(), key: dataset_key(j) }],
            script: j.script.clone(),
            outputs: vec!["result.out".into()],
            max_walltime_secs: (j.nominal.as_secs_f64() * 1.5).ceil() as u64,
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    timestamp: String,
    zone: String,
    instance_type: String,
    price: f64,
}

/// Reads `timestamp,zone,instance_type,price` rows (ISO 8601 timestamps).
/// Each (zone, type) series must be strictly increasing in time.
pub fn parse_trace_csv(reader: impl Read) -> Result<TraceSet, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut series: BTreeMap<(String, String), Vec<(SimTime, f64)>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<TraceRow>().enumerate() {
        let row = row.map_err(|e| WorkloadError::Parse(e.to_string()))?;
        let t = SimTime::parse_iso8601(&row.timestamp).map_err(|e| WorkloadError::Parse(format!("row {}: {e}", i + 1)))?;
        series.entry((row.zone, row.instance_type)).or_default().push((t, row.price));
    }
    series
        .into_iter()
        .map(|((zone, ty), samples)| SpotPriceTrace::new(zone.into(), ty, samples).map_err(|e| WorkloadError::Parse(e.to_string())))
        .collect()
}

pub fn load_trace(path: &Path) -> Result<TraceSet, WorkloadError> {
    let f = std::fs::File::open(path).map_err(|e| WorkloadError::Io(format!("{}: {e}", path.display())))?;
    parse_trace_csv(f)
}

pub fn write_trace_csv(traces: &TraceSet, writer: impl Write) -> Result<(), WorkloadError> {
    let mut w = csv::Writer::from_writer(writer);
    for tr in traces.iter() {
        for (t, p) in tr.samples() {
            w.serialize(TraceRow { timestamp: t.to_iso8601(), zone: tr.zone.to_string(), instance_type: tr.instance_type.clone(), price: *p })
                .map_err(|e| WorkloadError::Io(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| WorkloadError::Io(e.to_string()))
}

/// Parameters of the synthetic market: a mean-reverting log-price process
/// per zone around a zone-specific level, with occasional spikes above
/// the on-demand price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSynthesis {
    pub seed: u64,
    pub instance_type: String,
    pub start: SimTime,
    pub duration: SimDuration,
    pub step: SimDuration,
    /// Long-run spot price level.
    pub base: f64,
    pub on_demand: f64,
    /// Hourly standard deviation of the log price. Zero yields a constant
    /// series at `base` in every zone.
    pub volatility: f64,
    /// Standard deviation of the per-zone log level around `base`.
    pub zone_spread: f64,
    /// Pull toward the zone level per hour, in (0, 1].
    pub reversion_per_hour: f64,
    /// Expected spikes per zone per day.
    pub spikes_per_day: f64,
    /// Spike price as a multiple of on-demand, drawn uniformly.
    pub spike_multiplier: (f64, f64),
    pub spike_duration: (SimDuration, SimDuration),
}

impl Default for TraceSynthesis {
    fn default() -> Self {
        TraceSynthesis {
            seed: 1,
            instance_type: "c4.8xlarge".into(),
            start: SimTime::EPOCH,
            duration: SimDuration::from_days(31),
            step: SimDuration::from_mins(5),
            base: 0.45,
            on_demand: 1.591,
            volatility: 0.15,
            zone_spread: 0.25,
            reversion_per_hour: 0.3,
            spikes_per_day: 0.5,
            spike_multiplier: (1.1, 3.0),
            spike_duration: (SimDuration::from_mins(15), SimDuration::from_hours(2)),
        }
    }
}

impl TraceSynthesis {
    fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidParams(m.to_owned()));
        if !(self.base > 0.0 && self.on_demand > 0.0) {
            return bad("base and on_demand must be positive");
        }
        if !(self.volatility >= 0.0 && self.zone_spread >= 0.0 && self.spikes_per_day >= 0.0) {
            return bad("volatility, zone_spread and spikes_per_day must be non-negative");
        }
        if !(self.reversion_per_hour > 0.0 && self.reversion_per_hour <= 1.0) {
            return bad("reversion_per_hour must be in (0, 1]");
        }
        if !self.step.is_positive() || !self.duration.is_positive() {
            return bad("step and duration must be positive");
        }
        let (lo, hi) = self.spike_multiplier;
        if !(lo > 1.0 && hi >= lo) {
            return bad("spike multipliers must exceed 1");
        }
        let (dlo, dhi) = self.spike_duration;
        if !(dlo.is_positive() && dhi >= dlo) {
            return bad("spike durations must be positive and ordered");
        }
        Ok(())
    }
}

/// One series per zone, visited in the given order with a single seeded
/// generator, so the result is a pure function of the arguments.
pub fn synthesize_trace(params: &TraceSynthesis, zones: &[ZoneId]) -> Result<TraceSet, WorkloadError> {
    params.validate()?;
    if zones.is_empty() {
        return Err(WorkloadError::InvalidParams("no zones".into()));
    }
    let steps = (params.duration.0 / params.step.0).max(1) as usize + 1;
    let times = (0..steps).map(|i| params.start + SimDuration(params.step.0 * i as i64));
    if params.volatility == 0.0 {
        return zones
            .iter()
            .map(|z| {
                let samples = times.clone().map(|t| (t, params.base)).collect();
                SpotPriceTrace::new(z.clone(), params.instance_type.clone(), samples)
                    .map_err(|e| WorkloadError::InvalidParams(e.to_string()))
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let step_h = params.step.as_hours_f64();
    let theta = 1.0 - (1.0 - params.reversion_per_hour).powf(step_h);
    let sigma = params.volatility * step_h.sqrt();
    let p_spike = (params.spikes_per_day * params.step.0 as f64 / SimDuration::DAY.0 as f64).min(1.0);
    // keep ordinary fluctuations below the price a default bid tolerates
    let ceiling = (params.on_demand * 0.95).ln();
    let mut set = TraceSet::new();
    for zone in zones {
        let level = (params.base.ln() + params.zone_spread * normal.sample(&mut rng)).min(ceiling);
        let mut x = level;
        let mut spike_left = 0i64;
        let mut spike_price = 0.0;
        let mut samples = Vec::with_capacity(steps);
        for t in times.clone() {
            x += theta * (level - x) + sigma * normal.sample(&mut rng);
            x = x.min(ceiling);
            if spike_left <= 0 && rng.random::<f64>() < p_spike {
                let (dlo, dhi) = params.spike_duration;
                spike_left = rng.random_range(dlo.0..=dhi.0);
                spike_price = params.on_demand * rng.random_range(params.spike_multiplier.0..=params.spike_multiplier.1);
            }
            let price = if spike_left > 0 {
                spike_left -= params.step.0;
                spike_price
            } else {
                x.exp()
            };
            samples.push((t, (price * 10_000.0).round() / 10_000.0));
        }
        let tr = SpotPriceTrace::new(zone.clone(), params.instance_type.clone(), samples)
            .map_err(|e| WorkloadError::InvalidParams(e.to_string()))?;
        set.insert(tr);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloudsim::Topology;
    use proptest::prelude::*;

    #[test]
    fn default_workload_shape() {
        for seed in 0..20 {
            let spec = WorkloadSpec { seed, ..WorkloadSpec::default() };
            let jobs = generate(&spec).unwrap();
            assert_eq!(jobs.len(), 40);
            let mut by_class = [0usize; 3];
            for j in &jobs {
                by_class[j.class] += 1;
                assert!(spec.data_sizes_gb.contains(&j.input_size_gb));
                let dev = (j.actual.0 - j.nominal.0).abs() as f64 / j.nominal.0 as f64;
                assert!(dev <= 0.05 + 1e-12);
            }
            assert_eq!(by_class, [16, 8, 16]);
            assert_eq!(jobs[0].arrival, SimDuration::ZERO);
            assert!(jobs.windows(2).all(|w| w[0].arrival <= w[1].arrival));
        }
    }

    #[test]
    fn zero_jitter_is_exact_and_seed_is_deterministic() {
        let spec = WorkloadSpec { jitter_fraction: 0.0, ..WorkloadSpec::default() };
        assert!(generate(&spec).unwrap().iter().all(|j| j.actual == j.nominal));
        assert_eq!(generate(&WorkloadSpec::default()).unwrap(), generate(&WorkloadSpec::default()).unwrap());
        let other = WorkloadSpec { seed: 2, ..WorkloadSpec::default() };
        assert_ne!(generate(&other).unwrap(), generate(&WorkloadSpec::default()).unwrap());
    }

    #[test]
    fn quota_examples() {
        let mk = |n, f: &[f64]| WorkloadSpec {
            job_count: n,
            mix: f.iter().map(|&fraction| DurationClass { hours: 1.0, fraction }).collect(),
            ..WorkloadSpec::default()
        };
        assert_eq!(mk(40, &[0.4, 0.2, 0.4]).class_counts(), vec![16, 8, 16]);
        assert_eq!(mk(10, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).class_counts(), vec![4, 3, 3]);
        assert_eq!(mk(7, &[0.5, 0.5]).class_counts(), vec![4, 3]);
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            WorkloadSpec { job_count: 0, ..WorkloadSpec::default() },
            WorkloadSpec { jitter_fraction: 1.0, ..WorkloadSpec::default() },
            WorkloadSpec { data_sizes_gb: vec![], ..WorkloadSpec::default() },
            WorkloadSpec { mix: vec![DurationClass { hours: 1.0, fraction: 0.5 }], ..WorkloadSpec::default() },
        ];
        for s in bad {
            assert!(matches!(generate(&s), Err(WorkloadError::InvalidSpec(_))));
        }
    }

    #[test]
    fn mean_gap_converges() {
        let spec = WorkloadSpec { job_count: 20_001, ..WorkloadSpec::default() };
        let jobs = generate(&spec).unwrap();
        let mean = jobs.last().unwrap().arrival.as_hours_f64() / 20_000.0;
        assert!((mean - 0.1).abs() / 0.1 < 0.05, "{mean}");
    }

    #[test]
    fn trace_csv_round_trip_and_errors() {
        let csv = "timestamp,zone,instance_type,price\n\
                   2016-01-01T00:00:00Z,us-east-1a,c4.8xlarge,0.5\n\
                   2016-01-01T01:00:00Z,us-east-1a,c4.8xlarge,0.6\n\
                   2016-01-01T00:00:00Z,us-west-2a,c4.8xlarge,0.4\n";
        let set = parse_trace_csv(csv.as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        let mut out = Vec::new();
        write_trace_csv(&set, &mut out).unwrap();
        assert_eq!(parse_trace_csv(&out[..]).unwrap(), set);
        let decreasing = "timestamp,zone,instance_type,price\n\
                          2016-01-01T01:00:00Z,us-east-1a,c4.8xlarge,0.5\n\
                          2016-01-01T00:00:00Z,us-east-1a,c4.8xlarge,0.6\n";
        assert!(matches!(parse_trace_csv(decreasing.as_bytes()), Err(WorkloadError::Parse(_))));
        assert!(matches!(parse_trace_csv("timestamp,zone\nx,y\n".as_bytes()), Err(WorkloadError::Parse(_))));
    }

    #[test]
    fn zero_volatility_is_constant() {
        let zones: Vec<ZoneId> = Topology::ten_zone_default().zones().map(|z| z.id.clone()).collect();
        let p = TraceSynthesis { volatility: 0.0, duration: SimDuration::DAY, ..TraceSynthesis::default() };
        let set = synthesize_trace(&p, &zones).unwrap();
        assert_eq!(set.len(), 10);
        assert!(set.iter().all(|t| t.samples().iter().all(|(_, v)| *v == p.base)));
    }

    #[test]
    fn synthetic_market_has_spikes_and_is_pure() {
        let topo = Topology::ten_zone_default();
        let zones: Vec<ZoneId> = topo.zones().map(|z| z.id.clone()).collect();
        let p = TraceSynthesis::default();
        let a = synthesize_trace(&p, &zones).unwrap();
        assert_eq!(a, synthesize_trace(&p, &zones).unwrap());
        assert_eq!(a.len(), 10);
        let regions: std::collections::BTreeSet<_> = a.iter().map(|t| topo.region_of(&t.zone).unwrap().clone()).collect();
        assert_eq!(regions.len(), 4);
        let spikes = a.iter().flat_map(|t| t.samples()).filter(|(_, v)| *v > p.on_demand).count();
        assert!(spikes > 0);
        // ordinary prices stay well below on-demand on average
        let mean: f64 = a.iter().flat_map(|t| t.samples()).map(|(_, v)| v).sum::<f64>() / a.iter().map(|t| t.samples().len()).sum::<usize>() as f64;
        assert!(mean < p.on_demand * 0.6, "{mean}");
    }

    proptest! {
        #[test]
        fn class_counts_match_quota(n in 1usize..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (a, b) = if a + b > 1.0 { (a / 2.0, b / 2.0) } else { (a, b) };
            let c = 1.0 - a - b;
            let spec = WorkloadSpec {
                job_count: n,
                mix: [a, b, c].iter().map(|&fraction| DurationClass { hours: 1.0, fraction }).collect(),
                ..WorkloadSpec::default()
            };
            let counts = spec.class_counts();
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            for (k, f) in counts.iter().zip([a, b, c]) {
                prop_assert!((*k as f64 - f * n as f64).abs() < 1.0 + 1e-9);
            }
            let jobs = generate(&spec).unwrap();
            for (cls, k) in counts.iter().enumerate() {
                prop_assert_eq!(jobs.iter().filter(|j| j.class == cls).count(), *k);
            }
        }
    }
}
