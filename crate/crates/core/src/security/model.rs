use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{PolicyId, RoleId, ServiceId, UserId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Read,
    Write,
    List,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Read, Action::Write, Action::List];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Read => "read",
            Action::Write => "write",
            Action::List => "list",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    #[default]
    Allow,
}

/// Allow-rule over a resource pattern. Resources are written
/// `bucket/key`; a pattern without `/` names a whole bucket, a pattern with
/// `/` is a plain string prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub id: PolicyId,
    #[serde(default)]
    pub effect: Effect,
    pub actions: BTreeSet<Action>,
    pub resource: String,
}

impl Policy {
    pub fn allow(id: impl Into<PolicyId>, actions: impl IntoIterator<Item = Action>, resource: impl Into<String>) -> Self {
        Policy { id: id.into(), effect: Effect::Allow, actions: actions.into_iter().collect(), resource: resource.into() }
    }

    pub fn matches(&self, action: Action, resource: &str) -> bool {
        self.actions.contains(&action) && resource_matches(&self.resource, resource)
    }
}

pub fn resource_matches(pattern: &str, resource: &str) -> bool {
    if pattern.is_empty() {
        return false;
    }
    if pattern.contains('/') {
        resource.starts_with(pattern)
    } else {
        resource == pattern || resource.strip_prefix(pattern).is_some_and(|rest| rest.starts_with('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Role {
    pub id: RoleId,
    #[serde(default)]
    pub policies: BTreeSet<PolicyId>,
    /// Internal roles belong to services and are never granted to users.
    #[serde(default)]
    pub internal: bool,
}

impl Role {
    pub fn user(id: impl Into<RoleId>, policies: impl IntoIterator<Item = PolicyId>) -> Self {
        Role { id: id.into(), policies: policies.into_iter().collect(), internal: false }
    }

    pub fn internal(id: impl Into<RoleId>, policies: impl IntoIterator<Item = PolicyId>) -> Self {
        Role { id: id.into(), policies: policies.into_iter().collect(), internal: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub display_name: String,
    pub registered: bool,
    pub roles: BTreeSet<RoleId>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Principal {
    User(UserId),
    Service(ServiceId),
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::User(u) => write!(f, "user:{u}"),
            Principal::Service(s) => write!(f, "service:{s}"),
        }
    }
}

/// The permission set a token acts with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum RoleContext {
    /// Whatever roles the user currently holds.
    UserRoles(UserId),
    /// A single (internal) role.
    Role(RoleId),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub String);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    pub subject: Principal,
    pub acting: RoleContext,
    pub issued_at: SimTime,
    pub expiry: SimTime,
    /// Set on assumed-role tokens: the worker token that assumed.
    pub parent: Option<TokenId>,
}

impl Token {
    pub fn is_assumed(&self) -> bool {
        self.parent.is_some()
    }

    pub fn honored_at(&self, now: SimTime) -> bool {
        now >= self.issued_at && now < self.expiry
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "policy", rename_all = "snake_case")]
pub enum Grant {
    Policy(PolicyId),
    /// Private objects are readable by their creator without a policy.
    Owner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub allowed: bool,
    pub matched: Option<Grant>,
}

impl Decision {
    pub fn denied() -> Self {
        Decision { allowed: false, matched: None }
    }

    pub fn matched_policy(&self) -> Option<&PolicyId> {
        match &self.matched {
            Some(Grant::Policy(p)) => Some(p),
            _ => None,
        }
    }
}
