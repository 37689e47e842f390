use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CloudError;
use crate::ids::ZoneId;
use crate::time::SimTime;

/// Hourly (or arbitrary-cadence) spot price series for one zone and type.
/// The price at `t` is that of the latest sample at or before `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotPriceTrace {
    pub zone: ZoneId,
    pub instance_type: String,
    samples: Vec<(SimTime, f64)>,
}

impl SpotPriceTrace {
    pub fn new(
        zone: ZoneId,
        instance_type: impl Into<String>,
        samples: Vec<(SimTime, f64)>,
    ) -> Result<Self, CloudError> {
        let instance_type = instance_type.into();
        if samples.is_empty() {
            return Err(CloudError::InvalidTrace(format!("{zone}/{instance_type}: no samples")));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CloudError::InvalidTrace(format!(
                    "{zone}/{instance_type}: timestamps not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        if let Some((t, p)) = samples.iter().find(|(_, p)| !(*p > 0.0 && p.is_finite())) {
            return Err(CloudError::InvalidTrace(format!(
                "{zone}/{instance_type}: non-positive price {p} at {t}"
            )));
        }
        Ok(SpotPriceTrace { zone, instance_type, samples })
    }

    pub fn samples(&self) -> &[(SimTime, f64)] {
        &self.samples
    }

    pub fn start(&self) -> SimTime {
        self.samples[0].0
    }

    pub fn last_sample_time(&self) -> SimTime {
        self.samples[self.samples.len() - 1].0
    }

    pub fn price_at(&self, t: SimTime) -> Result<f64, CloudError> {
        let idx = self.samples.partition_point(|(ts, _)| *ts <= t);
        if idx == 0 {
            return Err(CloudError::BeforeTraceStart {
                zone: self.zone.clone(),
                instance_type: self.instance_type.clone(),
                t,
            });
        }
        Ok(self.samples[idx - 1].1)
    }
}

/// Traces keyed by (zone, instance type).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceSet {
    traces: BTreeMap<(ZoneId, String), SpotPriceTrace>,
}

impl TraceSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, trace: SpotPriceTrace) -> Option<SpotPriceTrace> {
        self.traces.insert((trace.zone.clone(), trace.instance_type.clone()), trace)
    }

    pub fn get(&self, zone: &ZoneId, instance_type: &str) -> Option<&SpotPriceTrace> {
        self.traces.get(&(zone.clone(), instance_type.to_owned()))
    }

    pub fn price_at(&self, zone: &ZoneId, instance_type: &str, t: SimTime) -> Result<f64, CloudError> {
        self.get(zone, instance_type)
            .ok_or_else(|| CloudError::NoTrace { zone: zone.clone(), instance_type: instance_type.to_owned() })?
            .price_at(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SpotPriceTrace> {
        self.traces.values()
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Latest first-sample time across all traces; the earliest instant
    /// at which every trace is defined.
    pub fn common_start(&self) -> Option<SimTime> {
        self.traces.values().map(|t| t.start()).max()
    }
}

impl FromIterator<SpotPriceTrace> for TraceSet {
    fn from_iter<I: IntoIterator<Item = SpotPriceTrace>>(iter: I) -> Self {
        let mut set = TraceSet::new();
        for t in iter {
            set.insert(t);
        }
        set
    }
}
