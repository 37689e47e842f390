//! Role-based access control fabric.
//!
//! Users start with no roles. Every permission comes from an allow policy
//! reachable through the acting role of a short-lived token; anything else
//! is denied. Workers run under the trusted `task-executor` role and may
//! briefly assume the role set of a user whose job they hold. Every
//! decision, login, assumption and release lands in the audit log.

mod audit;
mod model;

pub use audit::{to_ndjson_lines, Actor, AuditFilter, AuditLog, AuditRecord, Outcome};
pub use model::{
    resource_matches, Action, Decision, Effect, Grant, Policy, Principal, Role, RoleContext, Token, TokenId, User,
};

use std::collections::{BTreeMap, HashMap};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{PolicyId, RoleId, ServiceId, UserId};
use crate::time::{SimDuration, SimTime};

pub const TASK_EXECUTOR: &str = "task-executor";
pub const WEB_SERVER: &str = "web-server";
pub const ADMIN: &str = "admin";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SecurityError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("user {0} is not registered")]
    NotRegistered(UserId),
    #[error("unknown service {0}")]
    UnknownService(ServiceId),
    #[error("bad service credentials for {0}")]
    BadCredentials(ServiceId),
    #[error("unknown role {0}")]
    UnknownRole(RoleId),
    #[error("unknown policy {0}")]
    UnknownPolicy(PolicyId),
    #[error("role {0} is internal and cannot be granted to users")]
    InternalRole(RoleId),
    #[error("role {0} is not internal and cannot be held by a service")]
    NotInternalRole(RoleId),
    #[error("duplicate definition of {0}")]
    Duplicate(String),
    #[error("token is unknown or revoked")]
    InvalidToken,
    #[error("token expired")]
    Expired,
    #[error("only the trusted executor role may assume user roles")]
    NotTrustedRole,
    #[error("worker holds no active job owned by {0}")]
    NoActiveJobForUser(UserId),
    #[error("token is not an assumed-role token")]
    NotAssumedToken,
    #[error("access denied")]
    AccessDenied,
    #[error("fixture: {0}")]
    Fixture(String),
}

/// Lets role assumption check the worker-to-user job binding without the
/// security fabric depending on the job queue.
pub trait ActiveJobBindings {
    fn has_active_job(&self, worker: &ServiceId, owner: &UserId) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityConfig {
    pub token_lifetime: SimDuration,
    pub assumption_window: SimDuration,
}

impl Default for SecurityConfig {
    fn default() -> Self {
        SecurityConfig { token_lifetime: SimDuration::HOUR, assumption_window: SimDuration::from_mins(15) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceAccount {
    pub id: ServiceId,
    pub role: RoleId,
    #[serde(default)]
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserFixture {
    pub id: UserId,
    #[serde(default)]
    pub display_name: String,
    /// Fixture users are registered unless marked otherwise.
    #[serde(default = "yes")]
    pub registered: bool,
    #[serde(default)]
    pub roles: Vec<RoleId>,
}

fn yes() -> bool {
    true
}

/// Roles, policies, users and services loaded from a TOML file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SecurityFixture {
    #[serde(default, rename = "policy")]
    pub policies: Vec<Policy>,
    #[serde(default, rename = "role")]
    pub roles: Vec<Role>,
    #[serde(default, rename = "user")]
    pub users: Vec<UserFixture>,
    #[serde(default, rename = "service")]
    pub services: Vec<ServiceAccount>,
}

impl SecurityFixture {
    pub fn from_toml_str(s: &str) -> Result<Self, SecurityError> {
        toml::from_str(s).map_err(|e| SecurityError::Fixture(e.to_string()))
    }
}

#[derive(Debug, Clone)]
struct TokenEntry {
    token: Token,
    revoked: bool,
}

pub struct SecurityFabric {
    config: SecurityConfig,
    policies: BTreeMap<PolicyId, Policy>,
    roles: BTreeMap<RoleId, Role>,
    users: BTreeMap<UserId, User>,
    services: BTreeMap<ServiceId, ServiceAccount>,
    tokens: HashMap<TokenId, TokenEntry>,
    audit: AuditLog,
    rng: ChaCha8Rng,
}

impl SecurityFabric {
    /// An empty fabric with the built-in internal roles defined.
    pub fn new(config: SecurityConfig, seed: u64) -> Self {
        let mut fabric = SecurityFabric {
            config,
            policies: BTreeMap::new(),
            roles: BTreeMap::new(),
            users: BTreeMap::new(),
            services: BTreeMap::new(),
            tokens: HashMap::new(),
            audit: AuditLog::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        for r in [TASK_EXECUTOR, WEB_SERVER, ADMIN] {
            fabric.roles.insert(RoleId::from(r), Role::internal(r, []));
        }
        fabric
    }

    pub fn from_fixture(fixture: SecurityFixture, config: SecurityConfig, seed: u64) -> Result<Self, SecurityError> {
        let mut fabric = SecurityFabric::new(config, seed);
        for p in fixture.policies {
            fabric.define_policy(p)?;
        }
        for r in fixture.roles {
            // fixtures may redefine the built-in internal roles to attach policies
            if fabric.roles.get(&r.id).is_some_and(|existing| existing.internal && existing.policies.is_empty()) {
                fabric.roles.remove(&r.id);
            }
            fabric.define_role(r)?;
        }
        for u in fixture.users {
            fabric.add_user(u.id.clone(), u.display_name, u.registered)?;
            for role in u.roles {
                fabric.grant_role(&u.id, &role)?;
            }
        }
        for s in fixture.services {
            fabric.define_service(s.id, s.role, s.secret)?;
        }
        Ok(fabric)
    }

    pub fn config(&self) -> &SecurityConfig {
        &self.config
    }

    pub fn define_policy(&mut self, policy: Policy) -> Result<(), SecurityError> {
        if self.policies.contains_key(&policy.id) {
            return Err(SecurityError::Duplicate(format!("policy {}", policy.id)));
        }
        self.policies.insert(policy.id.clone(), policy);
        Ok(())
    }

    pub fn define_role(&mut self, role: Role) -> Result<(), SecurityError> {
        if self.roles.contains_key(&role.id) {
            return Err(SecurityError::Duplicate(format!("role {}", role.id)));
        }
        if let Some(p) = role.policies.iter().find(|p| !self.policies.contains_key(*p)) {
            return Err(SecurityError::UnknownPolicy(p.clone()));
        }
        self.roles.insert(role.id.clone(), role);
        Ok(())
    }

    /// Adds a policy to an existing role; used to equip internal roles.
    pub fn attach_policy(&mut self, role: &RoleId, policy: &PolicyId) -> Result<(), SecurityError> {
        if !self.policies.contains_key(policy) {
            return Err(SecurityError::UnknownPolicy(policy.clone()));
        }
        let r = self.roles.get_mut(role).ok_or_else(|| SecurityError::UnknownRole(role.clone()))?;
        r.policies.insert(policy.clone());
        Ok(())
    }

    /// Adds a user with no roles.
    pub fn add_user(&mut self, id: UserId, display_name: impl Into<String>, registered: bool) -> Result<(), SecurityError> {
        if self.users.contains_key(&id) {
            return Err(SecurityError::Duplicate(format!("user {id}")));
        }
        let user = User { id: id.clone(), display_name: display_name.into(), registered, roles: Default::default() };
        self.users.insert(id, user);
        Ok(())
    }

    pub fn register_user(&mut self, id: &UserId) -> Result<(), SecurityError> {
        let u = self.users.get_mut(id).ok_or_else(|| SecurityError::UnknownUser(id.clone()))?;
        u.registered = true;
        Ok(())
    }

    pub fn grant_role(&mut self, user: &UserId, role: &RoleId) -> Result<(), SecurityError> {
        let r = self.roles.get(role).ok_or_else(|| SecurityError::UnknownRole(role.clone()))?;
        if r.internal {
            return Err(SecurityError::InternalRole(role.clone()));
        }
        let u = self.users.get_mut(user).ok_or_else(|| SecurityError::UnknownUser(user.clone()))?;
        if !u.registered {
            return Err(SecurityError::NotRegistered(user.clone()));
        }
        u.roles.insert(role.clone());
        Ok(())
    }

    pub fn define_service(&mut self, id: ServiceId, role: RoleId, secret: impl Into<String>) -> Result<(), SecurityError> {
        let r = self.roles.get(&role).ok_or_else(|| SecurityError::UnknownRole(role.clone()))?;
        if !r.internal {
            return Err(SecurityError::NotInternalRole(role));
        }
        if self.services.contains_key(&id) {
            return Err(SecurityError::Duplicate(format!("service {id}")));
        }
        self.services.insert(id.clone(), ServiceAccount { id, role, secret: secret.into() });
        Ok(())
    }

    pub fn user(&self, id: &UserId) -> Option<&User> {
        self.users.get(id)
    }

    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.users.values()
    }

    pub fn role(&self, id: &RoleId) -> Option<&Role> {
        self.roles.get(id)
    }

    pub fn policies(&self) -> impl Iterator<Item = &Policy> {
        self.policies.values()
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    /// Appends a record for an action that is not itself an access check
    /// (lifecycle migrations, signed-URL fetches).
    pub fn record(
        &mut self,
        now: SimTime,
        actor: Actor,
        action: impl Into<String>,
        resource: impl Into<String>,
        outcome: Outcome,
    ) -> u64 {
        self.audit.append(now, actor, action, resource, outcome)
    }

    fn mint_id(&mut self) -> TokenId {
        let mut buf = [0u8; 16];
        self.rng.fill_bytes(&mut buf);
        TokenId(hex::encode(buf))
    }

    fn issue(&mut self, subject: Principal, acting: RoleContext, now: SimTime, expiry: SimTime, parent: Option<TokenId>) -> Token {
        let token = Token { id: self.mint_id(), subject, acting, issued_at: now, expiry, parent };
        self.tokens.insert(token.id.clone(), TokenEntry { token: token.clone(), revoked: false });
        token
    }

    pub fn login(&mut self, user: &UserId, now: SimTime) -> Result<Token, SecurityError> {
        let result = match self.users.get(user) {
            None => Err(SecurityError::UnknownUser(user.clone())),
            Some(u) if !u.registered => Err(SecurityError::NotRegistered(user.clone())),
            Some(_) => {
                let expiry = now + self.config.token_lifetime;
                Ok(self.issue(Principal::User(user.clone()), RoleContext::UserRoles(user.clone()), now, expiry, None))
            }
        };
        self.audit.append(now, Actor::user(user.clone()), "login", format!("user:{user}"), Outcome::from_bool(result.is_ok()));
        result
    }

    /// Service login with a shared secret.
    pub fn login_service(&mut self, service: &ServiceId, secret: &str, now: SimTime) -> Result<Token, SecurityError> {
        let check = match self.services.get(service) {
            None => Err(SecurityError::UnknownService(service.clone())),
            Some(acct) if acct.secret != secret => Err(SecurityError::BadCredentials(service.clone())),
            Some(_) => Ok(()),
        };
        match check {
            Ok(()) => self.issue_service_token(service, now),
            Err(e) => {
                self.audit.append(now, Actor::service(service.clone()), "login", format!("service:{service}"), Outcome::Denied);
                Err(e)
            }
        }
    }

    /// In-process issuance for trusted components that already hold the
    /// service identity (the simulator's workers, the gateway itself).
    pub fn issue_service_token(&mut self, service: &ServiceId, now: SimTime) -> Result<Token, SecurityError> {
        let result = match self.services.get(service) {
            None => Err(SecurityError::UnknownService(service.clone())),
            Some(acct) => {
                let role = acct.role.clone();
                let expiry = now + self.config.token_lifetime;
                Ok(self.issue(Principal::Service(service.clone()), RoleContext::Role(role), now, expiry, None))
            }
        };
        self.audit.append(
            now,
            Actor::service(service.clone()),
            "login",
            format!("service:{service}"),
            Outcome::from_bool(result.is_ok()),
        );
        result
    }

    /// Looks a token up and checks it is honored at `now`.
    pub fn validate(&self, id: &TokenId, now: SimTime) -> Result<&Token, SecurityError> {
        let entry = self.tokens.get(id).filter(|e| !e.revoked).ok_or(SecurityError::InvalidToken)?;
        if !entry.token.honored_at(now) {
            return Err(SecurityError::Expired);
        }
        if let Some(parent) = &entry.token.parent {
            // an assumed token dies with its parent
            if !self.tokens.get(parent).is_some_and(|p| !p.revoked && p.token.honored_at(now)) {
                return Err(SecurityError::Expired);
            }
        }
        Ok(&entry.token)
    }

    pub fn token(&self, id: &TokenId) -> Option<&Token> {
        self.tokens.get(id).map(|e| &e.token)
    }

    fn actor_for(&self, id: &TokenId) -> Actor {
        match self.tokens.get(id) {
            None => Actor::anonymous(),
            Some(e) => {
                let on_behalf_of = match (&e.token.parent, &e.token.acting) {
                    (Some(_), RoleContext::UserRoles(u)) => Some(u.clone()),
                    _ => None,
                };
                Actor { principal: e.token.subject.clone(), on_behalf_of }
            }
        }
    }

    pub fn actor_of(&self, id: &TokenId) -> Actor {
        self.actor_for(id)
    }

    /// The end user a token acts as: the subject of a user login, or the
    /// target of an assumed-role token.
    pub fn effective_user(&self, id: &TokenId) -> Option<UserId> {
        self.actor_for(id).effective_user().cloned()
    }

    fn roles_of(&self, ctx: &RoleContext) -> Vec<&Role> {
        match ctx {
            RoleContext::Role(r) => self.roles.get(r).into_iter().collect(),
            RoleContext::UserRoles(u) => match self.users.get(u) {
                Some(user) if user.registered => user.roles.iter().filter_map(|r| self.roles.get(r)).collect(),
                _ => Vec::new(),
            },
        }
    }

    /// Pure policy evaluation; no audit record.
    pub fn evaluate(&self, token: &TokenId, action: Action, resource: &str, owner: Option<&UserId>, now: SimTime) -> Decision {
        let Ok(tok) = self.validate(token, now) else {
            return Decision::denied();
        };
        for role in self.roles_of(&tok.acting) {
            for pid in &role.policies {
                if self.policies.get(pid).is_some_and(|p| p.matches(action, resource)) {
                    return Decision { allowed: true, matched: Some(Grant::Policy(pid.clone())) };
                }
            }
        }
        if let (Some(owner), Some(user)) = (owner, self.effective_user(token)) {
            if action != Action::Write && *owner == user {
                return Decision { allowed: true, matched: Some(Grant::Owner) };
            }
        }
        Decision::denied()
    }

    /// Allowed iff the token is honored and some policy reachable through
    /// its acting role allows `(action, resource)`. Always audited.
    pub fn check_access(&mut self, token: &TokenId, action: Action, resource: &str, now: SimTime) -> Decision {
        self.check_access_owned(token, action, resource, None, now)
    }

    /// Like [`check_access`](Self::check_access), additionally allowing
    /// non-write access by the creator of a private object.
    pub fn check_access_owned(
        &mut self,
        token: &TokenId,
        action: Action,
        resource: &str,
        owner: Option<&UserId>,
        now: SimTime,
    ) -> Decision {
        let decision = self.evaluate(token, action, resource, owner, now);
        let actor = self.actor_for(token);
        self.audit.append(now, actor, action.as_str(), resource, Outcome::from_bool(decision.allowed));
        decision
    }

    pub fn assume_role(
        &mut self,
        worker_token: &TokenId,
        target: &UserId,
        bindings: &dyn ActiveJobBindings,
        now: SimTime,
    ) -> Result<Token, SecurityError> {
        let result = self.try_assume(worker_token, target, bindings, now);
        let mut actor = self.actor_for(worker_token);
        actor.on_behalf_of = Some(target.clone());
        self.audit.append(now, actor, "assume-role", format!("user:{target}"), Outcome::from_bool(result.is_ok()));
        result
    }

    fn try_assume(
        &mut self,
        worker_token: &TokenId,
        target: &UserId,
        bindings: &dyn ActiveJobBindings,
        now: SimTime,
    ) -> Result<Token, SecurityError> {
        let worker = self.validate(worker_token, now)?.clone();
        if worker.is_assumed() || worker.acting != RoleContext::Role(RoleId::from(TASK_EXECUTOR)) {
            return Err(SecurityError::NotTrustedRole);
        }
        let Principal::Service(worker_id) = &worker.subject else {
            return Err(SecurityError::NotTrustedRole);
        };
        match self.users.get(target) {
            None => return Err(SecurityError::UnknownUser(target.clone())),
            Some(u) if !u.registered => return Err(SecurityError::NotRegistered(target.clone())),
            Some(_) => {}
        }
        if !bindings.has_active_job(worker_id, target) {
            return Err(SecurityError::NoActiveJobForUser(target.clone()));
        }
        let expiry = (now + self.config.assumption_window).min(worker.expiry);
        Ok(self.issue(worker.subject.clone(), RoleContext::UserRoles(target.clone()), now, expiry, Some(worker.id)))
    }

    pub fn release_role(&mut self, assumed: &TokenId, now: SimTime) -> Result<(), SecurityError> {
        let result = match self.tokens.get_mut(assumed) {
            Some(e) if e.token.is_assumed() && !e.revoked => {
                e.revoked = true;
                Ok(())
            }
            _ => Err(SecurityError::NotAssumedToken),
        };
        let actor = self.actor_for(assumed);
        self.audit.append(now, actor, "release-role", "token", Outcome::from_bool(result.is_ok()));
        result
    }

    /// Admin-only projection of the audit log. Does not itself append.
    pub fn export_audit(&self, caller: &TokenId, filter: &AuditFilter, now: SimTime) -> Result<Vec<AuditRecord>, SecurityError> {
        let tok = self.validate(caller, now).map_err(|_| SecurityError::AccessDenied)?;
        if tok.acting != RoleContext::Role(RoleId::from(ADMIN)) {
            return Err(SecurityError::AccessDenied);
        }
        Ok(self.audit.query(filter))
    }
}
