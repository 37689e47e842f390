//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use enclave_core::cloudsim::Topology;
use enclave_core::provisioner::{quote, transfer_cost, MarketKind, MarketView, PlacementScope, TransferParams};
use enclave_core::security::{
    resource_matches, Action, ActiveJobBindings, SecurityConfig, SecurityFabric, SecurityFixture, TokenId,
};
use enclave_core::storage::{StorageConfig, TierName};
use enclave_core::workload::generate;
use enclave_core::{RegionId, ServiceId, SimDuration, SimTime, UserId, ZoneId};
use enclave_harness::fixture::{default_catalog, researcher, sim_enclave, DATA_BUCKET};
use enclave_harness::report::to_json;
use enclave_harness::*;
use enclave_core::cloudsim::{SpotPriceTrace, TraceSet};
use enclave_core::jobqueue::{DbCapacity, JobState};
use enclave_core::provisioner::ScalingStrategy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

// ---------------------------------------------------------------- scaling

fn scaling_table(report: &ScalingReport, elapsed: Duration) -> Check {
    let counts = report.workload.class_counts();
    ensure(counts == vec![16, 8, 16], format!("class counts {counts:?}"))?;
    let run = |l: &str| report.run(l).ok_or_else(|| format!("missing run {l}"));
    let base = run("no_scaling(40)")?;
    let unl = run("unlimited")?;
    let l20 = run("limited(20)")?;
    let l10 = run("limited(10)")?;
    ensure(base.per_job.len() == 40, "40 jobs")?;
    ensure(base.per_job.iter().all(|j| j.state == JobState::Completed), "baseline jobs not all completed")?;
    ensure(base.per_job.iter().all(|j| j.wait == SimDuration::ZERO), format!("baseline max wait {}", base.max_wait))?;
    let h = |m: &RunMetrics| m.makespan.as_hours_f64();
    ensure(
        h(base) <= h(unl) && h(unl) <= h(l20) && h(l20) <= h(l10),
        format!("makespan order {:.2} {:.2} {:.2} {:.2}", h(base), h(unl), h(l20), h(l10)),
    )?;
    let d20 = h(l20) - h(unl);
    let d10 = h(l10) - h(unl);
    ensure((0.5..=1.5).contains(&d20), format!("limited(20) - unlimited = {d20:.2} h"))?;
    ensure((2.5..=7.5).contains(&d10), format!("limited(10) - unlimited = {d10:.2} h"))?;
    let sav = unl.savings_vs_baseline_pct;
    ensure((51.0..=71.0).contains(&sav), format!("unlimited savings {sav:.1}%"))?;
    ensure(elapsed < Duration::from_secs(60), format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "makespan {:.2}/{:.2}/{:.2}/{:.2} h, +{d20:.2} h, +{d10:.2} h, savings {sav:.1}%, {:.1}s",
        h(base),
        h(unl),
        h(l20),
        h(l10),
        elapsed.as_secs_f64()
    ))
}

fn spot_below_on_demand(cfg: &ScalingConfig, report: &ScalingReport) -> Check {
    let topo = Topology::ten_zone_default();
    let traces = cfg.traces.load(&topo).map_err(err)?;
    let od = default_catalog().get(&cfg.instance_type).ok_or("unknown type")?.on_demand_price(None);
    let max = traces
        .iter()
        .filter(|t| t.instance_type == cfg.instance_type)
        .flat_map(|t| t.samples().iter().map(|s| s.1))
        .fold(0.0, f64::max);
    ensure(max < od, format!("precondition: trace max {max} >= on-demand {od}"))?;
    for r in &report.runs {
        ensure(
            r.spot_cost < r.on_demand_equivalent_cost,
            format!("{}: spot {} vs on-demand {}", r.strategy, r.spot_cost, r.on_demand_equivalent_cost),
        )?;
    }
    let u = report.run("unlimited").ok_or("missing unlimited")?;
    Ok(format!("unlimited spot ${:.2} < on-demand ${:.2}", u.spot_cost, u.on_demand_equivalent_cost))
}

// ------------------------------------------------------------- throughput

fn throughput(report: &ThroughputReport, elapsed: Duration) -> Check {
    for n in [1, 2, 4, 8, 16] {
        let p = report.point(n).ok_or(format!("missing n={n}"))?;
        let ideal = 4.90 * n as f64;
        ensure(
            (p.throughput / ideal - 1.0).abs() <= 0.10,
            format!("n={n}: {:.3} vs {ideal:.2}", p.throughput),
        )?;
    }
    let p16 = report.point(16).ok_or("missing n=16")?;
    ensure((p16.throughput / 79.84 - 1.0).abs() <= 0.10, format!("n=16 total {:.3}", p16.throughput))?;
    let p32 = report.point(32).ok_or("missing n=32")?;
    ensure(p32.throughput <= p32.db_ceiling, format!("n=32 {:.3} > ceiling {}", p32.throughput, p32.db_ceiling))?;
    ensure(report.points.iter().all(|p| p.total_tasks == 10_000), "task count")?;
    ensure(elapsed < Duration::from_secs(30), format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "n=16 {:.2}/s, n=32 {:.2}/s (ceiling {}), {:.1}s",
        p16.throughput,
        p32.throughput,
        p32.db_ceiling,
        elapsed.as_secs_f64()
    ))
}

// ------------------------------------------------------------- cost-aware

fn transfer_oracle() -> Check {
    let regions = ["us-east-1", "us-west-1", "us-west-2", "eu-west-1"];
    let mut rng = ChaCha8Rng::seed_from_u64(2016);
    let mut remote = 0;
    for i in 0..1_000 {
        let c = regions[rng.random_range(0..regions.len())];
        let d = regions[rng.random_range(0..regions.len())];
        let dn: f64 = rng.random_range(0.0..1_000.0);
        let up: f64 = rng.random_range(0.0..1_000.0);
        let tc: f64 = rng.random_range(0.0..0.2);
        let got = transfer_cost(&RegionId::from(c), &RegionId::from(d), dn, up, tc).map_err(err)?;
        let want = if c == d { 0.0 } else { (dn + up) * tc };
        if c != d {
            remote += 1;
        }
        ensure(got == want, format!("case {i}: {c}->{d} {dn} {up} {tc}: {got} != {want}"))?;
    }
    Ok(format!("1000 cases, {remote} cross-region"))
}

/// At ΔP = 2·D·T_c the remote zone exactly ties the local one. All values are
/// dyadic so the sums are exact.
fn crossover_boundary() -> Check {
    let topo = Topology::ten_zone_default();
    let catalog = default_catalog();
    let local = ZoneId::from("us-east-1a");
    let remote_zones = ["us-west-1a", "us-west-1c", "us-west-2a", "us-west-2b", "us-west-2c"];
    let data = RegionId::from("us-east-1");
    let it = "c4.8xlarge";
    let t = SimTime::EPOCH;
    let scope = PlacementScope::CrossRegion(vec![data.clone(), RegionId::from("us-west-1"), RegionId::from("us-west-2")]);
    let eps = 1.0 / 1024.0;
    for case in 0..20u32 {
        let d = f64::from(case + 1) * 0.5;
        let tc = [1.0 / 64.0, 1.0 / 32.0, 1.0 / 128.0, 1.0 / 16.0][case as usize % 4];
        let p_local = 8.0 + f64::from(case) * 0.25;
        let dp = 2.0 * d * tc;
        let remote = ZoneId::from(remote_zones[case as usize % remote_zones.len()]);
        let pick = |p_remote: f64| -> Result<ZoneId, String> {
            let mut traces = TraceSet::new();
            traces.insert(SpotPriceTrace::new(local.clone(), it, vec![(t, p_local)]).map_err(err)?);
            traces.insert(SpotPriceTrace::new(remote.clone(), it, vec![(t, p_remote)]).map_err(err)?);
            let q = quote(
                MarketView::new(&topo, &catalog, &traces),
                MarketKind::Spot,
                &scope,
                it,
                t,
                TransferParams::symmetric(d, tc),
                &data,
            )
            .map_err(err)?;
            Ok(q.zone)
        };
        ensure((p_local - dp) + dp == p_local, format!("case {case}: inexact arithmetic"))?;
        ensure(pick(p_local - dp)? == local, format!("case {case}: tie did not keep local"))?;
        ensure(pick(p_local - dp - eps)? == remote, format!("case {case}: below boundary stayed local"))?;
        ensure(pick(p_local - dp + eps)? == local, format!("case {case}: above boundary went remote"))?;
    }
    Ok("20 cases, tie keeps local, ±2^-10 flips".into())
}

fn diminishing_returns(report: &CostAwareReport) -> Check {
    let vols: Vec<f64> = report.series.iter().map(|s| s.volume_gb).collect();
    ensure(vols == vec![0.0, 10.0, 50.0, 100.0, 500.0], format!("volumes {vols:?}"))?;
    let zones = Topology::ten_zone_default();
    ensure(zones.zones().count() == 10 && zones.regions().count() == 4, "topology")?;
    for w in report.series.windows(2) {
        ensure(
            w[1].region_over_az_pct <= w[0].region_over_az_pct,
            format!("{} GB {:.3} > {} GB {:.3}", w[1].volume_gb, w[1].region_over_az_pct, w[0].volume_gb, w[0].region_over_az_pct),
        )?;
    }
    let gaps: Vec<String> = report.series.iter().map(|s| format!("{:.2}", s.region_over_az_pct)).collect();
    Ok(format!("region-over-AZ savings by volume: {}", gaps.join(" ")))
}

// ------------------------------------------------------------------ chaos

fn chaos() -> Check {
    let cfg = ScalingConfig::chaos();
    let jobs = generate(&cfg.workload).map_err(err)?;
    let traces = cfg.traces.load(&Topology::ten_zone_default()).map_err(err)?;
    let strategy = ScalingStrategy::Unlimited { min: 0 };
    let out = run_strategy(&cfg, strategy, &jobs, &traces, 11).map_err(err)?;
    ensure(out.jobs.len() == 200, format!("{} job records", out.jobs.len()))?;
    let done = out.jobs.iter().filter(|j| j.state == JobState::Completed).count();
    ensure(done == 200, format!("{done} of 200 completed"))?;
    ensure(out.metrics.revocations > 0, "no revocations were injected")?;
    let v = check_exclusive_execution(&out.jobs, &out.instances);
    ensure(v.is_empty(), format!("{} violations, first: {}", v.len(), v.first().cloned().unwrap_or_default()))?;
    Ok(format!("200/200 completed, {} revocations, {} requeues", out.metrics.revocations, out.metrics.requeues))
}

// --------------------------------------------------------------- security

const FIXTURE: &str = r#"
[[policy]]
id = "b0-read"
actions = ["read", "list"]
resource = "b0"
[[policy]]
id = "b1-all"
actions = ["read", "write", "list"]
resource = "b1"
[[policy]]
id = "b2-prefix"
actions = ["read"]
resource = "b2/k1"
[[policy]]
id = "b3-write"
actions = ["write"]
resource = "b3"
[[policy]]
id = "b4-b5"
actions = ["list"]
resource = "b4/"
[[policy]]
id = "b9-any"
actions = ["read", "write", "list"]
resource = "b9"

[[role]]
id = "reader"
policies = ["b0-read", "b2-prefix"]
[[role]]
id = "writer"
policies = ["b1-all", "b3-write"]
[[role]]
id = "lister"
policies = ["b4-b5", "b9-any"]

[[user]]
id = "ann"
roles = ["reader"]
[[user]]
id = "bo"
roles = ["writer", "lister"]
[[user]]
id = "cy"
roles = ["reader", "writer", "lister"]
[[user]]
id = "nobody"
[[user]]
id = "unreg"
registered = false

[[service]]
id = "exec-1"
role = "task-executor"
"#;

fn grid() -> Vec<(Action, String)> {
    let mut g = Vec::new();
    for b in 0..10 {
        for k in 0..10 {
            let res = if k == 0 { format!("b{b}") } else { format!("b{b}/k{k}") };
            for a in Action::ALL {
                g.push((a, res.clone()));
            }
        }
    }
    g
}

fn fabric() -> Result<(SecurityFabric, SecurityFixture), String> {
    let fx = SecurityFixture::from_toml_str(FIXTURE).map_err(err)?;
    let f = SecurityFabric::from_fixture(fx.clone(), SecurityConfig::default(), 5).map_err(err)?;
    Ok((f, fx))
}

struct BindsAll;
impl ActiveJobBindings for BindsAll {
    fn has_active_job(&self, _: &ServiceId, _: &UserId) -> bool {
        true
    }
}

fn allowed_set(f: &SecurityFabric, tok: &TokenId, now: SimTime) -> BTreeSet<(Action, String)> {
    grid().into_iter().filter(|(a, r)| f.evaluate(tok, *a, r, None, now).allowed).collect()
}

fn deny_grid() -> Check {
    let (mut f, _) = fabric()?;
    let now = SimTime::from_secs(10);
    let tok = f.login(&UserId::from("nobody"), now).map_err(err)?.id;
    let g = grid();
    let grants = g.iter().filter(|(a, r)| f.check_access(&tok, *a, r, now).allowed).count();
    ensure(grants == 0, format!("{grants} grants for a roleless user"))?;
    ensure(f.login(&UserId::from("unreg"), now).is_err(), "unregistered user logged in")?;
    let bogus = TokenId("0".repeat(32));
    ensure(g.iter().all(|(a, r)| !f.evaluate(&bogus, *a, r, None, now).allowed), "unknown token granted")?;
    Ok(format!("0 of {} (3 actions x 100 resources) granted", g.len()))
}

fn assumed_equals_user() -> Check {
    let (mut f, fx) = fabric()?;
    let now = SimTime::from_secs(100);
    let exec = f.issue_service_token(&ServiceId::from("exec-1"), now).map_err(err)?.id;
    let mut checked = 0;
    for u in fx.users.iter().filter(|u| u.registered) {
        let own = f.login(&u.id, now).map_err(err)?.id;
        let assumed = f.assume_role(&exec, &u.id, &BindsAll, now).map_err(err)?.id;
        let a = allowed_set(&f, &own, now);
        let b = allowed_set(&f, &assumed, now);
        // independent expectation straight from the fixture
        let want: BTreeSet<(Action, String)> = grid()
            .into_iter()
            .filter(|(act, res)| {
                u.roles.iter().any(|r| {
                    fx.roles.iter().filter(|role| &role.id == r).flat_map(|role| role.policies.iter()).any(|pid| {
                        fx.policies.iter().any(|p| &p.id == pid && p.actions.contains(act) && resource_matches(&p.resource, res))
                    })
                })
            })
            .collect();
        ensure(a == b, format!("{}: assumed set differs ({} vs {})", u.id, a.len(), b.len()))?;
        ensure(a == want, format!("{}: user set {} != fixture {}", u.id, a.len(), want.len()))?;
        f.release_role(&assumed, now).map_err(err)?;
        checked += 1;
    }
    Ok(format!("{checked} users, sets identical"))
}

fn expiry_sweep() -> Check {
    let (mut f, _) = fabric()?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let life = f.config().token_lifetime;
    let window = f.config().assumption_window;
    let user = UserId::from("cy");
    for i in 0..1_000 {
        let issued = SimTime::from_secs(rng.random_range(0..1_000_000));
        let tok = f.login(&user, issued).map_err(err)?;
        let exec = f.issue_service_token(&ServiceId::from("exec-1"), issued).map_err(err)?.id;
        let assumed = f.assume_role(&exec, &user, &BindsAll, issued).map_err(err)?;
        ensure(assumed.expiry <= tok.expiry && assumed.expiry == issued + window, format!("case {i}: assumed expiry"))?;
        let at = match i % 4 {
            0 => tok.expiry,
            1 => tok.expiry + SimDuration(rng.random_range(0..7_200_000)),
            2 => assumed.expiry + SimDuration(rng.random_range(0..(life - window).0)),
            _ => issued + SimDuration(rng.random_range(-600_000..life.0 + 600_000)),
        };
        for t in [&tok, &assumed] {
            let honored = f.validate(&t.id, at).is_ok();
            let granted = f.evaluate(&t.id, Action::Read, "b0/k1", None, at).allowed;
            let oracle = issued <= at && at < t.expiry;
            ensure(honored == oracle && granted == oracle, format!("case {i}: token at {at} honored={honored}"))?;
            ensure(!(honored && at >= t.expiry), format!("case {i}: honored at/after expiry"))?;
        }
    }
    Ok("1000 cases, user and assumed tokens".into())
}

fn audit_complete() -> Check {
    let mut enc = sim_enclave(3, DbCapacity::default()).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let owner = researcher();
    let mut expected = enc.security.audit().len();
    let mut now = SimTime::from_secs(1);
    let mut keys = Vec::new();
    let mut token = enc.security.login(&owner, now).map_err(err)?.id;
    expected += 1;
    for i in 0..500 {
        now += SimDuration::from_secs(rng.random_range(1..120));
        if enc.security.validate(&token, now).is_err() {
            token = enc.security.login(&owner, now).map_err(err)?.id;
            expected += 1;
        }
        let sec = &mut enc.security;
        let store = &mut enc.store;
        match rng.random_range(0..6) {
            0 => {
                let key = format!("obj-{i}");
                store.put(sec, DATA_BUCKET, &key, 1.0, &owner, &token, now).map_err(err)?;
                keys.push(key);
            }
            1 if !keys.is_empty() => {
                let k = &keys[rng.random_range(0..keys.len())];
                store.stage(sec, DATA_BUCKET, k, &token, now).map_err(err)?;
            }
            2 if !keys.is_empty() => {
                let k = &keys[rng.random_range(0..keys.len())];
                let url = store.sign_url(sec, DATA_BUCKET, k, SimDuration::from_mins(5), &token, now).map_err(err)?;
                expected += 1;
                store.fetch_by_url(sec, &url, now).map_err(err)?;
            }
            3 => {
                store.list(sec, DATA_BUCKET, "", &token, None, 10, now).map_err(err)?;
            }
            4 => {
                // denied: nothing grants the researcher access here
                let d = sec.check_access(&token, Action::Write, "elsewhere/x", now);
                ensure(!d.allowed, "unexpected grant")?;
            }
            _ => {
                let _ = sec.login(&UserId::from("ghost"), now);
            }
        }
        expected += 1;
    }
    let migrations = enc.store.run_lifecycle(&mut enc.security, now + SimDuration::from_days(45)).map_err(err)?;
    expected += migrations.len();
    let recs = enc.security.audit().records();
    ensure(recs.len() == expected, format!("{} records for {expected} operations", recs.len()))?;
    for (i, r) in recs.iter().enumerate() {
        ensure(r.seq == i as u64 + 1, format!("gap at index {i}: seq {}", r.seq))?;
    }
    ensure(recs.windows(2).all(|w| w[0].time <= w[1].time), "audit times go backwards")?;
    Ok(format!("{expected} operations, seq 1..={} gap-free, {} migrations", recs.len(), migrations.len()))
}

// ---------------------------------------------------------------- storage

#[derive(Clone, Copy, PartialEq, Debug)]
enum Op {
    Pass,
    Access(usize),
}

/// Tier of one object at every pass, replayed from its own access list
/// with nothing shared with the store.
fn brute_force_tiers(
    accesses: &[SimTime],
    passes: &[SimTime],
    created: SimTime,
    to_infrequent: SimDuration,
    to_archive: SimDuration,
    restore: SimDuration,
) -> Vec<TierName> {
    let mut out = Vec::with_capacity(passes.len());
    for &p in passes {
        // recompute from scratch up to p
        let mut tier = TierName::Hot;
        let mut last = created;
        let mut restoring: Option<SimTime> = None;
        let mut events: Vec<(SimTime, bool)> = accesses.iter().filter(|&&a| a <= p).map(|&a| (a, false)).collect();
        events.extend(passes.iter().filter(|&&q| q <= p).map(|&q| (q, true)));
        events.sort_by_key(|e| e.0);
        for (t, is_pass) in events {
            if restoring.is_some_and(|r| r <= t) {
                restoring = None;
                tier = TierName::Hot;
            }
            if is_pass {
                if restoring.is_none() {
                    let idle = t - last;
                    if tier == TierName::Hot && idle >= to_infrequent {
                        tier = TierName::Infrequent;
                    } else if tier == TierName::Infrequent && idle >= to_infrequent + to_archive {
                        tier = TierName::Archive;
                    }
                }
            } else {
                last = t;
                if restoring.is_none() {
                    match tier {
                        TierName::Infrequent => tier = TierName::Hot,
                        TierName::Archive => restoring = Some(t + restore),
                        _ => {}
                    }
                }
            }
        }
        out.push(tier);
    }
    out
}

fn storage_replay() -> Check {
    let mut enc = sim_enclave(8, DbCapacity::default()).map_err(err)?;
    let owner = researcher();
    let t0 = SimTime::EPOCH;
    let mut rng = ChaCha8Rng::seed_from_u64(180);
    let days = 180;
    let mut tok = enc.security.login(&owner, t0).map_err(err)?.id;
    let mut accesses: Vec<Vec<SimTime>> = vec![Vec::new(); 200];
    for (i, acc) in accesses.iter_mut().enumerate() {
        let key = format!("replay/obj-{i:03}");
        enc.store.put(&mut enc.security, DATA_BUCKET, &key, 1.0 + i as f64, &owner, &tok, t0).map_err(err)?;
        // mix of busy, occasional and dormant objects
        let mean_gap_days: f64 = match i % 4 {
            0 => 3.0,
            1 => 25.0,
            2 => 70.0,
            _ => 400.0,
        };
        let mut t = 0.0;
        loop {
            t += -mean_gap_days * (1.0 - rng.random::<f64>()).ln();
            if t >= days as f64 {
                break;
            }
            // keep accesses off the midnight passes
            let ms = (t * 86_400_000.0) as i64;
            if ms % 86_400_000 != 0 {
                acc.push(t0 + SimDuration(ms));
            }
        }
    }
    let passes: Vec<SimTime> = (1..=days).map(|d| t0 + SimDuration::from_days(d)).collect();
    let mut schedule: Vec<(SimTime, Op)> = passes.iter().map(|&p| (p, Op::Pass)).collect();
    for (i, acc) in accesses.iter().enumerate() {
        schedule.extend(acc.iter().map(|&a| (a, Op::Access(i))));
    }
    schedule.sort_by_key(|e| e.0);

    let mut observed: Vec<Vec<TierName>> = vec![Vec::new(); 200];
    for (t, op) in schedule {
        match op {
            Op::Access(i) => {
                if enc.security.validate(&tok, t).is_err() {
                    tok = enc.security.login(&owner, t).map_err(err)?.id;
                }
                let key = format!("replay/obj-{i:03}");
                enc.store.stage(&mut enc.security, DATA_BUCKET, &key, &tok, t).map_err(err)?;
            }
            Op::Pass => {
                enc.store.run_lifecycle(&mut enc.security, t).map_err(err)?;
                for (i, obs) in observed.iter_mut().enumerate() {
                    let o = enc.store.object(DATA_BUCKET, &format!("replay/obj-{i:03}")).ok_or("object vanished")?;
                    obs.push(o.tier);
                }
            }
        }
    }
    let policy = *enc.store.lifecycle_policy();
    let restore = enc.store.tiers().latency(TierName::Archive);
    let mut per_tier: BTreeMap<TierName, usize> = BTreeMap::new();
    let mut restores = 0;
    for (i, acc) in accesses.iter().enumerate() {
        let want = brute_force_tiers(
            acc,
            &passes,
            t0,
            policy.hot_to_infrequent_after,
            policy.infrequent_to_archive_after,
            restore,
        );
        if let Some(d) = want.iter().zip(&observed[i]).position(|(a, b)| a != b) {
            return Err(format!("obj {i} day {}: store {:?}, oracle {:?}", d + 1, observed[i][d], want[d]));
        }
        *per_tier.entry(*want.last().expect("passes")).or_default() += 1;
        restores += want.windows(2).filter(|w| w[0] == TierName::Archive && w[1] != TierName::Archive).count();
    }
    ensure(per_tier.contains_key(&TierName::Archive), "schedule never reached archive")?;
    ensure(restores > 0, "schedule never restored from archive")?;

    Ok(format!("200 objects x 180 passes match; final tiers {per_tier:?}; {restores} restores"))
}

fn tier_ratio_on_load() -> Check {
    let cfg = |block: f64| {
        format!(
            r#"
signing_secret = "s"
[[tier]]
name = "block"
storage_cost_per_gb_month = {block}
retrieval_latency = 0
availability = "mounted"
[[tier]]
name = "hot"
storage_cost_per_gb_month = 0.03
retrieval_latency = 0
availability = "immediate"
[[tier]]
name = "infrequent"
storage_cost_per_gb_month = 0.0125
retrieval_latency = 0
availability = "immediate"
[[tier]]
name = "archive"
storage_cost_per_gb_month = 0.007
retrieval_latency = 14400000
availability = "delayed"
"#
        )
    };
    ensure(StorageConfig::from_toml_str(&cfg(0.10)).is_ok(), "valid config rejected")?;
    for bad in [0.09, 0.05, 0.03] {
        ensure(StorageConfig::from_toml_str(&cfg(bad)).is_err(), format!("block {bad} accepted"))?;
    }
    Ok("block 0.10 accepted; 0.09, 0.05, 0.03 rejected".into())
}

// ------------------------------------------------------------ determinism

fn determinism(first: (&ScalingReport, &ThroughputReport, &CostAwareReport)) -> Check {
    let dirs = [tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?];
    let cfg = ExperimentConfig { formats: vec![ReportFormat::Json], ..ExperimentConfig::default() };
    let mut files = Vec::new();
    for d in &dirs {
        let out = cfg.run_to(d.path()).map_err(err)?;
        files.push(out.files);
    }
    let mut compared = 0;
    for (a, b) in files[0].iter().zip(&files[1]) {
        let x = std::fs::read(a).map_err(err)?;
        let y = std::fs::read(b).map_err(err)?;
        ensure(x == y, format!("{} differs between runs", a.display()))?;
        compared += 1;
    }
    ensure(compared == 3, format!("{compared} report files"))?;
    let read = |stem: &str| std::fs::read_to_string(dirs[0].path().join(format!("{stem}.json"))).map_err(err);
    ensure(read("scaling_results")? == to_json(first.0).map_err(err)?, "scaling differs from the standalone run")?;
    ensure(read("throughput")? == to_json(first.1).map_err(err)?, "throughput differs from the standalone run")?;
    ensure(read("cost_aware")? == to_json(first.2).map_err(err)?, "cost-aware differs from the standalone run")?;
    Ok("3 reports byte-identical across 3 runs".into())
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Check)> = Vec::new();
    let base = ExperimentConfig::default();

    let scfg = base.scaling.clone().expect("default scaling");
    let (scaling, s_time) = timed(|| run_scaling_experiment(&scfg, base.seed));
    let tcfg = base.throughput.clone().expect("default throughput");
    let (tput, t_time) = timed(|| run_throughput_experiment(&tcfg));
    let ccfg = base.cost_aware.clone().expect("default cost-aware");
    let cost = run_cost_aware_experiment(&ccfg);

    match &scaling {
        Ok(r) => {
            results.push(("scaling table shape", scaling_table(r, s_time)));
            results.push(("spot cost below on-demand equivalent", spot_below_on_demand(&scfg, r)));
        }
        Err(e) => results.push(("scaling table shape", Err(err(e)))),
    }
    results.push(("throughput scaling and db ceiling", tput.as_ref().map_err(err).and_then(|r| throughput(r, t_time))));
    results.push(("transfer cost oracle", transfer_oracle()));
    results.push(("crossover boundary", crossover_boundary()));
    results.push(("cross-region diminishing returns", cost.as_ref().map_err(err).and_then(diminishing_returns)));
    results.push(("at-least-once under chaos", chaos()));
    results.push(("deny by default", deny_grid()));
    results.push(("assumed role equals user set", assumed_equals_user()));
    results.push(("no token honored after expiry", expiry_sweep()));
    results.push(("audit gap-free and complete", audit_complete()));
    results.push(("lifecycle replay vs brute force", storage_replay()));
    results.push(("block over 3x hot enforced on load", tier_ratio_on_load()));
    let det = match (&scaling, &tput, &cost) {
        (Ok(s), Ok(t), Ok(c)) => determinism((s, t, c)),
        _ => Err("experiments failed".into()),
    };
    results.push(("deterministic reports", det));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
