//! Deterministic simulated cloud provider.
//!
//! Holds the zone topology, the instance catalog, spot price traces and the
//! set of leased instances. State only changes through [`CloudSim::provision`],
//! [`CloudSim::terminate`], [`CloudSim::advance`] and
//! [`CloudSim::step_markets`], all of which run against one clock.

mod catalog;
mod trace;

pub use catalog::{Catalog, CatalogConfig, InstanceTypeSpec, Region, Topology, Zone};
pub use trace::{SpotPriceTrace, TraceSet};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::ids::{InstanceId, RegionId, ZoneId};
use crate::time::{Clock, ClockRegression, SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CloudError {
    #[error("unknown instance type {0}")]
    UnknownType(String),
    #[error("unknown zone {0}")]
    UnknownZone(ZoneId),
    #[error("spot bid must be positive, got {0}")]
    NonPositiveBid(f64),
    #[error("no spot trace for {zone}/{instance_type}")]
    NoTrace { zone: ZoneId, instance_type: String },
    #[error("{t} is before the start of the {zone}/{instance_type} trace")]
    BeforeTraceStart { zone: ZoneId, instance_type: String, t: SimTime },
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("instance {0} has already ended")]
    AlreadyEnded(InstanceId),
    #[error(transparent)]
    Clock(#[from] ClockRegression),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("catalog: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Market {
    OnDemand,
    Spot { bid_per_hour: f64 },
}

impl Market {
    pub fn is_spot(&self) -> bool {
        matches!(self, Market::Spot { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceState {
    Provisioning,
    Running,
    Revoked,
    Terminated,
}

impl InstanceState {
    /// Provisioning or running; what the job monitor treats as healthy.
    pub fn is_live(self) -> bool {
        matches!(self, InstanceState::Provisioning | InstanceState::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub instance_type: String,
    pub zone: ZoneId,
    pub market: Market,
    pub state: InstanceState,
    pub launch_time: SimTime,
    pub ready_time: SimTime,
    pub end_time: Option<SimTime>,
}

impl Instance {
    /// Whole hours billed so far: partial hours round up, counted from
    /// `ready_time`. Instances that never became ready bill nothing.
    pub fn billed_hours(&self, now: SimTime) -> u64 {
        if self.state == InstanceState::Provisioning {
            return 0;
        }
        let end = self.end_time.unwrap_or(now);
        (end - self.ready_time).ceil_hours()
    }

    /// Running wall time (zero before ready).
    pub fn running_time(&self, now: SimTime) -> SimDuration {
        if self.state == InstanceState::Provisioning {
            return SimDuration::ZERO;
        }
        self.end_time.unwrap_or(now).saturating_since(self.ready_time)
    }
}

/// Distribution of the gap between a provisioning request and readiness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    Constant { secs: f64 },
    /// Lognormal with the given arithmetic mean, truncated at `cap_secs`.
    LogNormal { mean_secs: f64, sigma: f64, cap_secs: f64 },
}

impl Default for DelayModel {
    /// Mean 7:39 with a 30 minute ceiling.
    fn default() -> Self {
        DelayModel::LogNormal { mean_secs: 459.0, sigma: 0.5, cap_secs: 1800.0 }
    }
}

impl DelayModel {
    pub fn constant(d: SimDuration) -> Self {
        DelayModel::Constant { secs: d.as_secs_f64() }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> SimDuration {
        match *self {
            DelayModel::Constant { secs } => SimDuration::from_secs_f64(secs.max(0.0)),
            DelayModel::LogNormal { mean_secs, sigma, cap_secs } => {
                if sigma <= 0.0 {
                    return SimDuration::from_secs_f64(mean_secs.min(cap_secs).max(0.0));
                }
                let mu = mean_secs.ln() - sigma * sigma / 2.0;
                let dist = LogNormal::new(mu, sigma).expect("finite lognormal parameters");
                SimDuration::from_secs_f64(dist.sample(rng).min(cap_secs))
            }
        }
    }
}

/// How [`CloudSim::accrued_cost`] prices billed hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pricing {
    /// What was actually paid: the market price at the start of each billed
    /// hour for spot instances, the on-demand price for on-demand ones.
    SpotTrace,
    /// Every billed hour at the on-demand price.
    OnDemandEquivalent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevocationEvent {
    pub instance: InstanceId,
    pub time: SimTime,
    pub market_price: f64,
    pub bid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceEventKind {
    Launched { ready_at: SimTime },
    Ready,
    Revoked { market_price: f64, bid: f64 },
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEvent {
    pub time: SimTime,
    pub instance: InstanceId,
    pub kind: InstanceEventKind,
}

pub struct CloudSim {
    topology: Topology,
    catalog: Catalog,
    traces: TraceSet,
    instances: BTreeMap<InstanceId, Instance>,
    clock: Clock,
    rng: ChaCha8Rng,
    next_id: u64,
    events: Vec<InstanceEvent>,
}

impl CloudSim {
    pub fn new(topology: Topology, catalog: Catalog, traces: TraceSet, seed: u64, clock: Clock) -> Self {
        CloudSim {
            topology,
            catalog,
            traces,
            instances: BTreeMap::new(),
            clock,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 1,
            events: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn tick(&self) -> SimDuration {
        self.clock.tick()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn traces(&self) -> &TraceSet {
        &self.traces
    }

    pub fn instance(&self, id: InstanceId) -> Option<&Instance> {
        self.instances.get(&id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances.values()
    }

    /// Every lifecycle transition so far, in the order it happened.
    pub fn events(&self) -> &[InstanceEvent] {
        &self.events
    }

    pub fn region_of(&self, zone: &ZoneId) -> Option<&RegionId> {
        self.topology.region_of(zone)
    }

    pub fn on_demand_price(&self, instance_type: &str, zone: &ZoneId) -> Result<f64, CloudError> {
        let spec = self
            .catalog
            .get(instance_type)
            .ok_or_else(|| CloudError::UnknownType(instance_type.to_owned()))?;
        Ok(spec.on_demand_price(self.topology.region_of(zone)))
    }

    pub fn market_price(&self, zone: &ZoneId, instance_type: &str, t: SimTime) -> Result<f64, CloudError> {
        self.traces.price_at(zone, instance_type, t)
    }

    pub fn provision(
        &mut self,
        instance_type: &str,
        zone: &ZoneId,
        market: Market,
        delay: &DelayModel,
    ) -> Result<Instance, CloudError> {
        if self.catalog.get(instance_type).is_none() {
            return Err(CloudError::UnknownType(instance_type.to_owned()));
        }
        if self.topology.zone(zone).is_none() {
            return Err(CloudError::UnknownZone(zone.clone()));
        }
        if let Market::Spot { bid_per_hour } = market {
            if !(bid_per_hour > 0.0) {
                return Err(CloudError::NonPositiveBid(bid_per_hour));
            }
            // the market must be priced now, or revocation can't be evaluated
            self.market_price(zone, instance_type, self.now())?;
        }
        let now = self.now();
        let ready_time = now + delay.sample(&mut self.rng);
        let id = InstanceId(self.next_id);
        self.next_id += 1;
        let mut inst = Instance {
            id,
            instance_type: instance_type.to_owned(),
            zone: zone.clone(),
            market,
            state: InstanceState::Provisioning,
            launch_time: now,
            ready_time,
            end_time: None,
        };
        self.events.push(InstanceEvent { time: now, instance: id, kind: InstanceEventKind::Launched { ready_at: ready_time } });
        if ready_time <= now {
            inst.state = InstanceState::Running;
            self.events.push(InstanceEvent { time: now, instance: id, kind: InstanceEventKind::Ready });
        }
        self.instances.insert(id, inst.clone());
        Ok(inst)
    }

    /// Moves the clock to `t` and brings every instance whose ready time has
    /// arrived into `running`. Returns the newly running ids in id order.
    pub fn advance(&mut self, t: SimTime) -> Result<Vec<InstanceId>, CloudError> {
        self.clock.advance_to(t)?;
        let mut ready = Vec::new();
        for inst in self.instances.values_mut() {
            if inst.state == InstanceState::Provisioning && inst.ready_time <= t {
                inst.state = InstanceState::Running;
                ready.push(inst.id);
                self.events.push(InstanceEvent { time: inst.ready_time, instance: inst.id, kind: InstanceEventKind::Ready });
            }
        }
        Ok(ready)
    }

    /// Advances to `t` and revokes every running spot instance whose market
    /// price now exceeds its bid. Revocation is immediate.
    pub fn step_markets(&mut self, t: SimTime) -> Result<Vec<RevocationEvent>, CloudError> {
        self.advance(t)?;
        let mut revoked = Vec::new();
        for inst in self.instances.values_mut() {
            let Market::Spot { bid_per_hour } = inst.market else { continue };
            if inst.state != InstanceState::Running {
                continue;
            }
            let price = self.traces.price_at(&inst.zone, &inst.instance_type, t)?;
            if price > bid_per_hour {
                inst.state = InstanceState::Revoked;
                inst.end_time = Some(t);
                self.events.push(InstanceEvent {
                    time: t,
                    instance: inst.id,
                    kind: InstanceEventKind::Revoked { market_price: price, bid: bid_per_hour },
                });
                revoked.push(RevocationEvent { instance: inst.id, time: t, market_price: price, bid: bid_per_hour });
            }
        }
        Ok(revoked)
    }

    /// Forcibly revokes a running spot instance regardless of price, as if
    /// the provider reclaimed it. Used for fault injection.
    pub fn inject_revocation(&mut self, id: InstanceId) -> Result<RevocationEvent, CloudError> {
        let now = self.now();
        let inst = self.instances.get_mut(&id).ok_or(CloudError::UnknownInstance(id))?;
        let Market::Spot { bid_per_hour } = inst.market else {
            return Err(CloudError::Config(format!("{id} is on-demand and cannot be revoked")));
        };
        if inst.state != InstanceState::Running {
            return Err(CloudError::AlreadyEnded(id));
        }
        let price = self.traces.price_at(&inst.zone, &inst.instance_type, now)?;
        inst.state = InstanceState::Revoked;
        inst.end_time = Some(now);
        self.events.push(InstanceEvent {
            time: now,
            instance: id,
            kind: InstanceEventKind::Revoked { market_price: price, bid: bid_per_hour },
        });
        Ok(RevocationEvent { instance: id, time: now, market_price: price, bid: bid_per_hour })
    }

    pub fn terminate(&mut self, id: InstanceId) -> Result<(), CloudError> {
        let now = self.now();
        let inst = self.instances.get_mut(&id).ok_or(CloudError::UnknownInstance(id))?;
        if !inst.state.is_live() {
            return Err(CloudError::AlreadyEnded(id));
        }
        // an instance cancelled while provisioning has end_time < ready_time
        // and therefore bills zero hours
        inst.end_time = Some(now);
        inst.state = InstanceState::Terminated;
        self.events.push(InstanceEvent { time: now, instance: id, kind: InstanceEventKind::Terminated });
        Ok(())
    }

    pub fn billed_hours(&self, id: InstanceId) -> Result<u64, CloudError> {
        let inst = self.instances.get(&id).ok_or(CloudError::UnknownInstance(id))?;
        Ok(inst.billed_hours(self.now()))
    }

    pub fn accrued_cost(&self, id: InstanceId, pricing: Pricing) -> Result<f64, CloudError> {
        let inst = self.instances.get(&id).ok_or(CloudError::UnknownInstance(id))?;
        let hours = inst.billed_hours(self.now());
        let on_demand = self.on_demand_price(&inst.instance_type, &inst.zone)?;
        match (pricing, inst.market) {
            (Pricing::SpotTrace, Market::Spot { .. }) => {
                let mut total = 0.0;
                for h in 0..hours {
                    let start = inst.ready_time + SimDuration::from_hours(h as i64);
                    total += self.traces.price_at(&inst.zone, &inst.instance_type, start)?;
                }
                Ok(total)
            }
            _ => Ok(hours as f64 * on_demand),
        }
    }
}
