//! Tiered object store.
//!
//! Objects land in their bucket's default tier, age toward colder tiers
//! through lifecycle passes (one step per pass), and are warmed back to hot
//! only by staging. Every put, stage, fetch and migration leaves exactly one
//! audit record in the security fabric.

mod payload;
mod signing;
mod tier;

pub use payload::{InMemory, MetadataOnly, OnDisk, PayloadStore};
pub use signing::{canonical, sign, verify, SignedUrl, SCHEME};
pub use tier::{Availability, LifecyclePolicy, TierName, TierSet, TierSpec};

use std::collections::{BTreeMap, HashMap};
use std::ops::Bound;

use serde::{Deserialize, Serialize};

use crate::ids::{PolicyId, UserId};
use crate::security::{Action, Actor, Outcome, SecurityFabric, TokenId};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StorageError {
    #[error("access denied")]
    AccessDenied,
    #[error("key {0} already exists")]
    DuplicateKey(String),
    #[error("object size must be positive")]
    NonPositiveSize,
    #[error("object {0} not found")]
    NotFound(String),
    #[error("bucket {0} does not exist")]
    NoSuchBucket(String),
    #[error("invalid key {0:?}")]
    InvalidKey(String),
    #[error("signed url expired")]
    Expired,
    #[error("signed url signature mismatch")]
    BadSignature,
    #[error("malformed signed url {0}")]
    MalformedUrl(String),
    #[error("lifecycle pass at {requested} precedes previous pass at {previous}")]
    TimeRegression { previous: SimTime, requested: SimTime },
    #[error("period must be positive")]
    InvalidPeriod,
    #[error("storage config: {0}")]
    Config(String),
    #[error("payload io: {0}")]
    Io(String),
}

impl From<std::io::Error> for StorageError {
    fn from(e: std::io::Error) -> Self {
        StorageError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub name: String,
    pub default_tier: TierName,
    #[serde(default)]
    pub policy_refs: Vec<PolicyId>,
}

impl Bucket {
    pub fn new(name: impl Into<String>, default_tier: TierName) -> Self {
        Bucket { name: name.into(), default_tier, policy_refs: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredObject {
    pub bucket: String,
    pub key: String,
    pub size_gb: f64,
    pub tier: TierName,
    pub owner: UserId,
    pub created_at: SimTime,
    pub last_access: SimTime,
    pub encrypted_at_rest: bool,
    /// Private objects are readable by their owner without a policy.
    pub private: bool,
    /// Set while a cold object is being restored to hot.
    pub restore_at: Option<SimTime>,
    /// Tier occupied from each instant onward; first entry is creation.
    pub tier_history: Vec<(SimTime, TierName)>,
}

impl StoredObject {
    pub fn resource(&self) -> String {
        format!("{}/{}", self.bucket, self.key)
    }

    fn move_to(&mut self, tier: TierName, at: SimTime) {
        self.tier = tier;
        self.tier_history.push((at, tier));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagingReceipt {
    pub bucket: String,
    pub key: String,
    pub size_gb: f64,
    pub tier: TierName,
    pub available_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationEvent {
    pub time: SimTime,
    pub bucket: String,
    pub key: String,
    pub from: TierName,
    pub to: TierName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<StoredObject>,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageConfig {
    #[serde(default, rename = "tier")]
    pub tiers: TierSet,
    #[serde(default)]
    pub lifecycle: LifecyclePolicy,
    /// Length of the billing month used by storage cost accounting.
    #[serde(default = "default_month")]
    pub month: SimDuration,
    pub signing_secret: String,
    #[serde(default, rename = "bucket")]
    pub buckets: Vec<Bucket>,
}

fn default_month() -> SimDuration {
    SimDuration::from_days(30)
}

impl StorageConfig {
    pub fn new(signing_secret: impl Into<String>) -> Self {
        StorageConfig {
            tiers: TierSet::default(),
            lifecycle: LifecyclePolicy::default(),
            month: default_month(),
            signing_secret: signing_secret.into(),
            buckets: Vec::new(),
        }
    }

    /// Parses and validates; tier ratios are checked here.
    pub fn from_toml_str(s: &str) -> Result<Self, StorageError> {
        let cfg: StorageConfig = toml::from_str(s).map_err(|e| StorageError::Config(e.to_string()))?;
        if !cfg.month.is_positive() {
            return Err(StorageError::Config("month must be positive".into()));
        }
        Ok(cfg)
    }
}

fn validate_key(key: &str) -> Result<(), StorageError> {
    let bad = key.is_empty()
        || key.starts_with('/')
        || key.split('/').any(|seg| seg.is_empty() || seg == "." || seg == "..")
        || key.chars().any(|c| c.is_control() || matches!(c, '?' | '&' | '#' | '|' | '\\'));
    if bad {
        Err(StorageError::InvalidKey(key.to_owned()))
    } else {
        Ok(())
    }
}

fn validate_bucket_name(name: &str) -> Result<(), StorageError> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_'));
    if ok {
        Ok(())
    } else {
        Err(StorageError::Config(format!("invalid bucket name {name:?}")))
    }
}

/// Sum of size x tier price x fraction of a month, over the sub-intervals each
/// object spent in each tier within `[from, to)`.
pub fn storage_cost<'a>(
    objects: impl IntoIterator<Item = &'a StoredObject>,
    tiers: &TierSet,
    month: SimDuration,
    from: SimTime,
    to: SimTime,
) -> Result<f64, StorageError> {
    if to <= from || !month.is_positive() {
        return Err(StorageError::InvalidPeriod);
    }
    let mut total = 0.0;
    for obj in objects {
        for (i, &(start, tier)) in obj.tier_history.iter().enumerate() {
            let end = obj.tier_history.get(i + 1).map(|(t, _)| *t).unwrap_or(to);
            let lo = start.max(from);
            let hi = end.min(to);
            if hi > lo {
                let months = (hi - lo).as_millis() as f64 / month.as_millis() as f64;
                total += obj.size_gb * tiers.cost(tier) * months;
            }
        }
    }
    Ok(total)
}

pub struct ObjectStore {
    tiers: TierSet,
    lifecycle: LifecyclePolicy,
    month: SimDuration,
    secret: Vec<u8>,
    buckets: BTreeMap<String, Bucket>,
    objects: BTreeMap<(String, String), StoredObject>,
    signers: HashMap<String, UserId>,
    payloads: Box<dyn PayloadStore>,
    last_lifecycle: Option<SimTime>,
}

const LIFECYCLE_SERVICE: &str = "lifecycle";

impl ObjectStore {
    pub fn new(config: StorageConfig) -> Result<Self, StorageError> {
        Self::with_payloads(config, Box::new(MetadataOnly))
    }

    pub fn with_payloads(config: StorageConfig, payloads: Box<dyn PayloadStore>) -> Result<Self, StorageError> {
        if config.signing_secret.is_empty() {
            return Err(StorageError::Config("signing secret must not be empty".into()));
        }
        let mut store = ObjectStore {
            tiers: config.tiers,
            lifecycle: config.lifecycle,
            month: config.month,
            secret: config.signing_secret.into_bytes(),
            buckets: BTreeMap::new(),
            objects: BTreeMap::new(),
            signers: HashMap::new(),
            payloads,
            last_lifecycle: None,
        };
        for b in config.buckets {
            store.create_bucket(b)?;
        }
        Ok(store)
    }

    pub fn tiers(&self) -> &TierSet {
        &self.tiers
    }

    pub fn lifecycle_policy(&self) -> &LifecyclePolicy {
        &self.lifecycle
    }

    pub fn create_bucket(&mut self, bucket: Bucket) -> Result<(), StorageError> {
        validate_bucket_name(&bucket.name)?;
        if self.buckets.contains_key(&bucket.name) {
            return Err(StorageError::Config(format!("duplicate bucket {}", bucket.name)));
        }
        self.buckets.insert(bucket.name.clone(), bucket);
        Ok(())
    }

    pub fn bucket(&self, name: &str) -> Option<&Bucket> {
        self.buckets.get(name)
    }

    pub fn buckets(&self) -> impl Iterator<Item = &Bucket> {
        self.buckets.values()
    }

    pub fn object(&self, bucket: &str, key: &str) -> Option<&StoredObject> {
        self.objects.get(&(bucket.to_owned(), key.to_owned()))
    }

    /// All objects in (bucket, key) order.
    pub fn objects(&self) -> impl Iterator<Item = &StoredObject> {
        self.objects.values()
    }

    /// Completes any restore that has finished by `now`.
    fn settle(&mut self, now: SimTime) {
        for obj in self.objects.values_mut() {
            if let Some(at) = obj.restore_at {
                if at <= now {
                    obj.restore_at = None;
                    obj.move_to(TierName::Hot, at);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn put_inner(
        &mut self,
        sec: &mut SecurityFabric,
        bucket: &str,
        key: &str,
        size_gb: f64,
        owner: &UserId,
        private: bool,
        token: &TokenId,
        now: SimTime,
    ) -> Result<StoredObject, StorageError> {
        self.settle(now);
        let decision = sec.check_access(token, Action::Write, &format!("{bucket}/{key}"), now);
        if !decision.allowed {
            return Err(StorageError::AccessDenied);
        }
        let b = self.buckets.get(bucket).ok_or_else(|| StorageError::NoSuchBucket(bucket.to_owned()))?;
        validate_key(key)?;
        if !(size_gb > 0.0 && size_gb.is_finite()) {
            return Err(StorageError::NonPositiveSize);
        }
        let id = (bucket.to_owned(), key.to_owned());
        if self.objects.contains_key(&id) {
            return Err(StorageError::DuplicateKey(format!("{bucket}/{key}")));
        }
        let obj = StoredObject {
            bucket: bucket.to_owned(),
            key: key.to_owned(),
            size_gb,
            tier: b.default_tier,
            owner: owner.clone(),
            created_at: now,
            last_access: now,
            encrypted_at_rest: true,
            private,
            restore_at: None,
            tier_history: vec![(now, b.default_tier)],
        };
        self.objects.insert(id, obj.clone());
        Ok(obj)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn put(
        &mut self,
        sec: &mut SecurityFabric,
        bucket: &str,
        key: &str,
        size_gb: f64,
        owner: &UserId,
        token: &TokenId,
        now: SimTime,
    ) -> Result<StoredObject, StorageError> {
        self.put_inner(sec, bucket, key, size_gb, owner, false, token, now)
    }

    /// Stores a job output: a private object readable only by `owner`
    /// (and principals a policy explicitly admits).
    #[allow(clippy::too_many_arguments)]
    pub fn put_private(
        &mut self,
        sec: &mut SecurityFabric,
        bucket: &str,
        key: &str,
        size_gb: f64,
        owner: &UserId,
        token: &TokenId,
        now: SimTime,
    ) -> Result<StoredObject, StorageError> {
        self.put_inner(sec, bucket, key, size_gb, owner, true, token, now)
    }

    /// Upload with bytes; the size is derived from the payload (decimal GB).
    #[allow(clippy::too_many_arguments)]
    pub fn put_bytes(
        &mut self,
        sec: &mut SecurityFabric,
        bucket: &str,
        key: &str,
        bytes: &[u8],
        owner: &UserId,
        private: bool,
        token: &TokenId,
        now: SimTime,
    ) -> Result<StoredObject, StorageError> {
        let size_gb = bytes.len() as f64 / 1e9;
        let obj = self.put_inner(sec, bucket, key, size_gb, owner, private, token, now)?;
        self.payloads.write(bucket, key, bytes)?;
        Ok(obj)
    }

    fn authorize_read(
        &mut self,
        sec: &mut SecurityFabric,
        bucket: &str,
        key: &str,
        token: &TokenId,
        now: SimTime,
    ) -> Result<(), StorageError> {
        let owner = self.object(bucket, key).filter(|o| o.private).map(|o| o.owner.clone());
        let decision = sec.check_access_owned(token, Action::Read, &format!("{bucket}/{key}"), owner.as_ref(), now);
        if decision.allowed {
            Ok(())
        } else {
            Err(StorageError::AccessDenied)
        }
    }

    /// Makes an object available to compute. Cold objects are restored to
    /// hot, which completes at the returned `available_at`.
    pub fn stage(
        &mut self,
        sec: &mut SecurityFabric,
        bucket: &str,
        key: &str,
        token: &TokenId,
        now: SimTime,
    ) -> Result<StagingReceipt, StorageError> {
        self.settle(now);
        self.authorize_read(sec, bucket, key, token, now)?;
        let hot_latency = self.tiers.latency(TierName::Hot);
        let tiers = &self.tiers;
        let obj = self
            .objects
            .get_mut(&(bucket.to_owned(), key.to_owned()))
            .ok_or_else(|| StorageError::NotFound(format!("{bucket}/{key}")))?;
        obj.last_access = now;
        let tier = obj.tier;
        let available_at = match (tier, obj.restore_at) {
            (_, Some(pending)) => pending + hot_latency,
            (TierName::Block | TierName::Hot, None) => now + tiers.latency(tier),
            (TierName::Infrequent | TierName::Archive, None) => {
                let restored = now + tiers.latency(tier);
                if restored <= now {
                    obj.move_to(TierName::Hot, now);
                } else {
                    obj.restore_at = Some(restored);
                }
                restored + hot_latency
            }
        };
        Ok(StagingReceipt { bucket: bucket.to_owned(), key: key.to_owned(), size_gb: obj.size_gb, tier, available_at })
    }

    /// Stages and returns the stored bytes, if the backend keeps any.
    pub fn read_bytes(
        &mut self,
        sec: &mut SecurityFabric,
        bucket: &str,
        key: &str,
        token: &TokenId,
        now: SimTime,
    ) -> Result<(StagingReceipt, Option<Vec<u8>>), StorageError> {
        let receipt = self.stage(sec, bucket, key, token, now)?;
        let bytes = self.payloads.read(bucket, key)?;
        Ok((receipt, bytes))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn list(
        &mut self,
        sec: &mut SecurityFabric,
        bucket: &str,
        prefix: &str,
        token: &TokenId,
        cursor: Option<&str>,
        limit: usize,
        now: SimTime,
    ) -> Result<Page, StorageError> {
        let resource = if prefix.is_empty() { bucket.to_owned() } else { format!("{bucket}/{prefix}") };
        if !sec.check_access(token, Action::List, &resource, now).allowed {
            return Err(StorageError::AccessDenied);
        }
        if !self.buckets.contains_key(bucket) {
            return Err(StorageError::NoSuchBucket(bucket.to_owned()));
        }
        let lower = match cursor {
            Some(c) => Bound::Excluded((bucket.to_owned(), c.to_owned())),
            None => Bound::Included((bucket.to_owned(), String::new())),
        };
        let mut items: Vec<StoredObject> = self
            .objects
            .range((lower, Bound::Unbounded))
            .take_while(|((b, _), _)| b == bucket)
            .filter(|((_, k), _)| k.starts_with(prefix))
            .take(limit.max(1) + 1)
            .map(|(_, o)| o.clone())
            .collect();
        let next_cursor = if items.len() > limit.max(1) {
            items.truncate(limit.max(1));
            items.last().map(|o| o.key.clone())
        } else {
            None
        };
        Ok(Page { items, next_cursor })
    }

    /// One migration pass with the configured policy.
    pub fn run_lifecycle(&mut self, sec: &mut SecurityFabric, t: SimTime) -> Result<Vec<MigrationEvent>, StorageError> {
        let policy = self.lifecycle;
        self.run_lifecycle_with(sec, &policy, t)
    }

    /// Moves each eligible object exactly one step colder. Events come back
    /// in (bucket, key) order.
    pub fn run_lifecycle_with(
        &mut self,
        sec: &mut SecurityFabric,
        policy: &LifecyclePolicy,
        t: SimTime,
    ) -> Result<Vec<MigrationEvent>, StorageError> {
        if let Some(prev) = self.last_lifecycle {
            if t < prev {
                return Err(StorageError::TimeRegression { previous: prev, requested: t });
            }
        }
        self.last_lifecycle = Some(t);
        self.settle(t);
        let mut events = Vec::new();
        for obj in self.objects.values_mut() {
            if obj.restore_at.is_some() {
                continue;
            }
            let idle = t - obj.last_access;
            let next = match obj.tier {
                TierName::Hot if idle >= policy.hot_to_infrequent_after => TierName::Infrequent,
                TierName::Infrequent if idle >= policy.archive_after() => TierName::Archive,
                _ => continue,
            };
            let from = obj.tier;
            obj.move_to(next, t);
            sec.record(
                t,
                Actor::service(LIFECYCLE_SERVICE),
                format!("migrate:{from}->{next}"),
                obj.resource(),
                Outcome::Allowed,
            );
            events.push(MigrationEvent { time: t, bucket: obj.bucket.clone(), key: obj.key.clone(), from, to: next });
        }
        Ok(events)
    }

    pub fn sign_url(
        &mut self,
        sec: &mut SecurityFabric,
        bucket: &str,
        key: &str,
        ttl: SimDuration,
        token: &TokenId,
        now: SimTime,
    ) -> Result<SignedUrl, StorageError> {
        self.authorize_read(sec, bucket, key, token, now)?;
        if self.object(bucket, key).is_none() {
            return Err(StorageError::NotFound(format!("{bucket}/{key}")));
        }
        if !ttl.is_positive() {
            return Err(StorageError::Config("ttl must be positive".into()));
        }
        let signer = sec.effective_user(token).ok_or(StorageError::AccessDenied)?;
        let url = signing::sign(&self.secret, bucket, key, (now + ttl).unix_seconds());
        self.signers.insert(url.signature.clone(), signer);
        Ok(url)
    }

    /// Anonymous read through a signed URL. The audit record is attributed
    /// to the user who signed it.
    pub fn fetch_by_url(&mut self, sec: &mut SecurityFabric, url: &SignedUrl, now: SimTime) -> Result<StoredObject, StorageError> {
        self.settle(now);
        let resource = format!("{}/{}", url.bucket, url.key);
        let actor = self.signers.get(&url.signature).cloned().map(Actor::user).unwrap_or_else(Actor::anonymous);
        let result = signing::verify(&self.secret, url, now).and_then(|()| {
            let obj = self
                .objects
                .get_mut(&(url.bucket.clone(), url.key.clone()))
                .ok_or_else(|| StorageError::NotFound(resource.clone()))?;
            obj.last_access = now;
            Ok(obj.clone())
        });
        sec.record(now, actor, "fetch", resource, Outcome::from_bool(result.is_ok()));
        result
    }

    pub fn fetch_bytes(&mut self, sec: &mut SecurityFabric, url: &SignedUrl, now: SimTime) -> Result<(StoredObject, Option<Vec<u8>>), StorageError> {
        let obj = self.fetch_by_url(sec, url, now)?;
        let bytes = self.payloads.read(&obj.bucket, &obj.key)?;
        Ok((obj, bytes))
    }

    /// Cost of the whole inventory over `[from, to)`.
    pub fn storage_cost(&mut self, from: SimTime, to: SimTime) -> Result<f64, StorageError> {
        self.settle(to);
        storage_cost(self.objects.values(), &self.tiers, self.month, from, to)
    }
}
