//! Append-only audit log.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::Principal;
use crate::ids::{ServiceId, UserId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Allowed,
    Denied,
}

impl Outcome {
    pub fn from_bool(allowed: bool) -> Self {
        if allowed {
            Outcome::Allowed
        } else {
            Outcome::Denied
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Allowed => "allowed",
            Outcome::Denied => "denied",
        }
    }
}

/// Who performed an audited action. Assumed-role activity is recorded
/// against the worker with the user it acted for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub principal: Principal,
    pub on_behalf_of: Option<UserId>,
}

impl Actor {
    pub fn user(u: UserId) -> Self {
        Actor { principal: Principal::User(u), on_behalf_of: None }
    }

    pub fn service(s: impl Into<ServiceId>) -> Self {
        Actor { principal: Principal::Service(s.into()), on_behalf_of: None }
    }

    pub fn anonymous() -> Self {
        Actor::service("anonymous")
    }

    /// The end user this actor resolves to, if any.
    pub fn effective_user(&self) -> Option<&UserId> {
        match (&self.principal, &self.on_behalf_of) {
            (_, Some(u)) => Some(u),
            (Principal::User(u), None) => Some(u),
            _ => None,
        }
    }

    pub fn service_id(&self) -> Option<&ServiceId> {
        match &self.principal {
            Principal::Service(s) => Some(s),
            Principal::User(_) => None,
        }
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.principal)?;
        if let Some(u) = &self.on_behalf_of {
            write!(f, ">user:{u}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub time: SimTime,
    pub actor: Actor,
    pub action: String,
    pub resource: String,
    pub outcome: Outcome,
}

fn escape_field(s: &str) -> String {
    s.replace('%', "%25").replace('|', "%7C").replace('\n', "%0A")
}

impl AuditRecord {
    /// `seq|iso8601|actor|action|resource|outcome`
    pub fn to_line(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.seq,
            self.time.to_iso8601(),
            escape_field(&self.actor.to_string()),
            escape_field(&self.action),
            escape_field(&self.resource),
            self.outcome.as_str()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFilter {
    /// Bucket (or `bucket/prefix`) the resource must fall under.
    pub dataset: Option<String>,
    pub user: Option<UserId>,
    pub service: Option<ServiceId>,
    /// Inclusive lower bound.
    pub from: Option<SimTime>,
    /// Exclusive upper bound.
    pub to: Option<SimTime>,
}

impl AuditFilter {
    pub fn matches(&self, r: &AuditRecord) -> bool {
        if let Some(d) = &self.dataset {
            if !super::model::resource_matches(d, &r.resource) {
                return false;
            }
        }
        if let Some(u) = &self.user {
            if r.actor.effective_user() != Some(u) {
                return false;
            }
        }
        if let Some(s) = &self.service {
            if r.actor.service_id() != Some(s) {
                return false;
            }
        }
        if self.from.is_some_and(|from| r.time < from) {
            return false;
        }
        if self.to.is_some_and(|to| r.time >= to) {
            return false;
        }
        true
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn append(
        &mut self,
        time: SimTime,
        actor: Actor,
        action: impl Into<String>,
        resource: impl Into<String>,
        outcome: Outcome,
    ) -> u64 {
        let seq = self.records.len() as u64 + 1;
        self.records.push(AuditRecord { seq, time, actor, action: action.into(), resource: resource.into(), outcome });
        seq
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn query(&self, filter: &AuditFilter) -> Vec<AuditRecord> {
        self.records.iter().filter(|r| filter.matches(r)).cloned().collect()
    }
}

/// Renders records in the newline-delimited export format.
pub fn to_ndjson_lines(records: &[AuditRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let mut log = AuditLog::default();
        log.append(SimTime::from_secs(60), Actor::user("alice".into()), "read", "wos/a|b", Outcome::Denied);
        assert_eq!(log.records()[0].to_line(), "1|1970-01-01T00:01:00.000Z|user:alice|read|wos/a%7Cb|denied");
    }

    #[test]
    fn assumed_actor_resolves_to_user() {
        let a = Actor { principal: Principal::Service("worker-1".into()), on_behalf_of: Some("bob".into()) };
        assert_eq!(a.to_string(), "service:worker-1>user:bob");
        assert_eq!(a.effective_user(), Some(&UserId::from("bob")));
        assert_eq!(a.service_id(), Some(&ServiceId::from("worker-1")));
    }

    #[test]
    fn empty_range_is_empty() {
        let mut log = AuditLog::default();
        log.append(SimTime::from_secs(5), Actor::user("u".into()), "read", "b", Outcome::Allowed);
        let f = AuditFilter { from: Some(SimTime::from_secs(5)), to: Some(SimTime::from_secs(5)), ..Default::default() };
        assert!(log.query(&f).is_empty());
    }
}
