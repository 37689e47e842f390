use std::fmt;

use serde::{Deserialize, Serialize};

use super::StorageError;
use crate::time::SimDuration;

/// Storage classes, warmest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierName {
    Block,
    Hot,
    Infrequent,
    Archive,
}

impl TierName {
    pub const ALL: [TierName; 4] = [TierName::Block, TierName::Hot, TierName::Infrequent, TierName::Archive];

    pub fn as_str(self) -> &'static str {
        match self {
            TierName::Block => "block",
            TierName::Hot => "hot",
            TierName::Infrequent => "infrequent",
            TierName::Archive => "archive",
        }
    }

    /// 0 for block up to 3 for archive.
    pub fn coldness(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for TierName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Availability {
    Mounted,
    Immediate,
    Delayed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSpec {
    pub name: TierName,
    pub storage_cost_per_gb_month: f64,
    pub retrieval_latency: SimDuration,
    pub availability: Availability,
}

/// One spec per tier, checked for the cost and latency ordering on
/// construction: block costs more than three times hot, then
/// hot > infrequent > archive, and archive is slowest to retrieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TierSpec>", into = "Vec<TierSpec>")]
pub struct TierSet {
    specs: [TierSpec; 4],
}

impl TierSet {
    pub fn new(specs: Vec<TierSpec>) -> Result<Self, StorageError> {
        let mut slots: [Option<TierSpec>; 4] = Default::default();
        for s in specs {
            let i = s.name.coldness() as usize;
            if slots[i].is_some() {
                return Err(StorageError::Config(format!("tier {} defined twice", s.name)));
            }
            if !(s.storage_cost_per_gb_month > 0.0 && s.storage_cost_per_gb_month.is_finite()) {
                return Err(StorageError::Config(format!("tier {} cost must be positive", s.name)));
            }
            if s.retrieval_latency < SimDuration::ZERO {
                return Err(StorageError::Config(format!("tier {} latency must be non-negative", s.name)));
            }
            slots[i] = Some(s);
        }
        let [Some(block), Some(hot), Some(infrequent), Some(archive)] = slots else {
            return Err(StorageError::Config("all four tiers (block, hot, infrequent, archive) are required".into()));
        };
        let cost = |t: &TierSpec| t.storage_cost_per_gb_month;
        if !(cost(&block) > 3.0 * cost(&hot)) {
            return Err(StorageError::Config(format!(
                "block tier must cost more than 3x hot ({} vs {})",
                cost(&block),
                cost(&hot)
            )));
        }
        if !(cost(&hot) > cost(&infrequent) && cost(&infrequent) > cost(&archive)) {
            return Err(StorageError::Config("tier costs must satisfy hot > infrequent > archive".into()));
        }
        let slowest = [&block, &hot, &infrequent].iter().map(|t| t.retrieval_latency).max().unwrap_or_default();
        if archive.retrieval_latency <= slowest {
            return Err(StorageError::Config("archive must have the largest retrieval latency".into()));
        }
        Ok(TierSet { specs: [block, hot, infrequent, archive] })
    }

    pub fn get(&self, name: TierName) -> &TierSpec {
        &self.specs[name.coldness() as usize]
    }

    pub fn cost(&self, name: TierName) -> f64 {
        self.get(name).storage_cost_per_gb_month
    }

    pub fn latency(&self, name: TierName) -> SimDuration {
        self.get(name).retrieval_latency
    }

    pub fn iter(&self) -> impl Iterator<Item = &TierSpec> {
        self.specs.iter()
    }
}

impl Default for TierSet {
    fn default() -> Self {
        TierSet::new(vec![
            TierSpec {
                name: TierName::Block,
                storage_cost_per_gb_month: 0.10,
                retrieval_latency: SimDuration::ZERO,
                availability: Availability::Mounted,
            },
            TierSpec {
                name: TierName::Hot,
                storage_cost_per_gb_month: 0.03,
                retrieval_latency: SimDuration::ZERO,
                availability: Availability::Immediate,
            },
            TierSpec {
                name: TierName::Infrequent,
                storage_cost_per_gb_month: 0.0125,
                retrieval_latency: SimDuration::ZERO,
                availability: Availability::Immediate,
            },
            TierSpec {
                name: TierName::Archive,
                storage_cost_per_gb_month: 0.007,
                retrieval_latency: SimDuration::from_hours(4),
                availability: Availability::Delayed,
            },
        ])
        .expect("default tiers are consistent")
    }
}

impl TryFrom<Vec<TierSpec>> for TierSet {
    type Error = StorageError;
    fn try_from(v: Vec<TierSpec>) -> Result<Self, Self::Error> {
        TierSet::new(v)
    }
}

impl From<TierSet> for Vec<TierSpec> {
    fn from(t: TierSet) -> Self {
        t.specs.into()
    }
}

/// Idle thresholds for cold migration. Both are measured from the last
/// access: hot objects move to infrequent after `hot_to_infrequent_after`,
/// infrequent ones move to archive after a further
/// `infrequent_to_archive_after`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LifecycleDays", into = "LifecycleDays")]
pub struct LifecyclePolicy {
    pub hot_to_infrequent_after: SimDuration,
    pub infrequent_to_archive_after: SimDuration,
}

impl LifecyclePolicy {
    pub fn new(hot_to_infrequent_after: SimDuration, infrequent_to_archive_after: SimDuration) -> Result<Self, StorageError> {
        if !hot_to_infrequent_after.is_positive() || !infrequent_to_archive_after.is_positive() {
            return Err(StorageError::Config("lifecycle thresholds must be positive".into()));
        }
        Ok(LifecyclePolicy { hot_to_infrequent_after, infrequent_to_archive_after })
    }

    pub fn archive_after(&self) -> SimDuration {
        self.hot_to_infrequent_after + self.infrequent_to_archive_after
    }
}

impl Default for LifecyclePolicy {
    fn default() -> Self {
        LifecyclePolicy::new(SimDuration::from_days(30), SimDuration::from_days(90)).expect("positive")
    }
}

/// Config-file form of a lifecycle policy, in (possibly fractional) days.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct LifecycleDays {
    hot_to_infrequent_days: f64,
    infrequent_to_archive_days: f64,
}

impl TryFrom<LifecycleDays> for LifecyclePolicy {
    type Error = StorageError;
    fn try_from(d: LifecycleDays) -> Result<Self, Self::Error> {
        LifecyclePolicy::new(
            SimDuration::from_hours_f64(d.hot_to_infrequent_days * 24.0),
            SimDuration::from_hours_f64(d.infrequent_to_archive_days * 24.0),
        )
    }
}

impl From<LifecyclePolicy> for LifecycleDays {
    fn from(p: LifecyclePolicy) -> Self {
        LifecycleDays {
            hot_to_infrequent_days: p.hot_to_infrequent_after.as_hours_f64() / 24.0,
            infrequent_to_archive_days: p.infrequent_to_archive_after.as_hours_f64() / 24.0,
        }
    }
}
