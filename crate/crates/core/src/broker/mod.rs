//! The runtime decision point.
//!
//! Every access request runs the same fixed pipeline:
//!
//! ```text
//! verify token -> build context -> decision cache -> evaluate policy
//!     allow            -> audit decision -> mint -> audit issuance -> Issued
//!     pending_approval -> audit decision -> enqueue                 -> Pending
//!     deny             -> audit decision                            -> Denied
//! ```
//!
//! Each request that reaches the caller has exactly one decision event in the
//! audit log. Nothing is issued unless that event (and the issuance event)
//! were durably written.

mod cache;
mod pending;

pub use cache::CacheSettings;
pub use pending::{ApprovalStatus, PendingApproval, Verdict};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::audit::{AuditError, AuditEvent, AuditFilter, AuditLog, ChainHead, EventKind};
use crate::identity::{
    BundleStore, TokenFormatError, TrustBundle, Verifier, VerifyError, WorkloadToken,
};
use crate::minting::{
    Credential, CredentialKind, CredentialScope, LeaseError, Minter, MintingKey, Rejection,
};
use crate::policy::{
    evaluate, explain, Decision, EvaluationTrace, Outcome, PolicyDocument, PolicyVersion,
    RequestContext, DEFAULT_GLOBAL_TTL_CAP,
};
use crate::Timestamp;
use cache::{CacheKey, DecisionCache};
use pending::PendingStore;

pub const DEFAULT_APPROVAL_WINDOW: Duration = Duration::from_secs(3600);
pub const DEFAULT_REQUESTED_TTL: Duration = Duration::from_secs(900);

#[derive(Debug, Clone)]
pub struct BrokerSettings {
    /// Identifier workload tokens must carry as their audience.
    pub audience: String,
    pub clock_leeway: Duration,
    pub token_max_lifetime: Duration,
    pub global_ttl_cap: Duration,
    pub approval_window: Duration,
    pub cache: CacheSettings,
    pub default_kind: CredentialKind,
    pub default_ttl: Duration,
}

impl BrokerSettings {
    pub fn new(audience: impl Into<String>) -> Self {
        BrokerSettings {
            audience: audience.into(),
            clock_leeway: crate::identity::DEFAULT_CLOCK_LEEWAY,
            token_max_lifetime: crate::identity::DEFAULT_TOKEN_MAX_LIFETIME,
            global_ttl_cap: DEFAULT_GLOBAL_TTL_CAP,
            approval_window: DEFAULT_APPROVAL_WINDOW,
            cache: CacheSettings::default(),
            default_kind: CredentialKind::SessionToken,
            default_ttl: DEFAULT_REQUESTED_TTL,
        }
    }
}

/// An access request as received from a workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRequest {
    /// Serialized workload token.
    pub token: String,
    pub resource: String,
    pub action: String,
    /// Why the workload wants access. Audited, not evaluated.
    pub justification: String,
    pub kind: Option<CredentialKind>,
    pub ttl: Option<Duration>,
}

impl AccessRequest {
    pub fn new(
        token: impl Into<String>,
        resource: impl Into<String>,
        action: impl Into<String>,
    ) -> Self {
        AccessRequest {
            token: token.into(),
            resource: resource.into(),
            action: action.into(),
            justification: String::new(),
            kind: None,
            ttl: None,
        }
    }

    pub fn with_justification(mut self, justification: impl Into<String>) -> Self {
        self.justification = justification.into();
        self
    }

    pub fn with_kind(mut self, kind: CredentialKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = Some(ttl);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("malformed token: {0}")]
    Malformed(TokenFormatError),
    #[error(transparent)]
    Rejected(VerifyError),
}

impl AuthError {
    pub fn category(&self) -> &'static str {
        match self {
            AuthError::Malformed(_) => "malformed-token",
            AuthError::Rejected(e) => e.category(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    AuthenticationFailed(AuthError),
    #[error("unknown request {0:?}")]
    UnknownRequest(String),
    #[error("approval already resolved as {}", .0.as_str())]
    AlreadyResolved(ApprovalStatus),
    #[error("approval window has elapsed")]
    ApprovalExpired,
    #[error("audit log unavailable: {0}")]
    AuditUnavailable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl BrokerError {
    pub fn category(&self) -> &'static str {
        match self {
            BrokerError::InvalidRequest(_) => "invalid-request",
            BrokerError::AuthenticationFailed(_) => "authentication-failed",
            BrokerError::UnknownRequest(_) => "unknown-request",
            BrokerError::AlreadyResolved(_) => "already-resolved",
            BrokerError::ApprovalExpired => "approval-expired",
            BrokerError::AuditUnavailable(_) => "audit-unavailable",
            BrokerError::Internal(_) => "internal",
        }
    }
}

impl From<AuditError> for BrokerError {
    fn from(e: AuditError) -> Self {
        BrokerError::AuditUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenyReason {
    NoMatchingRule,
    /// No active policy document: fail closed.
    PolicyUnavailable,
    ApproverDenied {
        approver: String,
    },
    /// Approved by a human, but policy at approval time no longer permits it.
    PolicyRecheckFailed {
        approver: String,
    },
}

impl DenyReason {
    pub fn category(&self) -> &'static str {
        match self {
            DenyReason::NoMatchingRule => "no-matching-rule",
            DenyReason::PolicyUnavailable => "policy-unavailable",
            DenyReason::ApproverDenied { .. } => "approver-denied",
            DenyReason::PolicyRecheckFailed { .. } => "policy-recheck-failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issued {
    pub request_id: String,
    pub credential: Credential,
    /// Seq of the event that authorized issuance: the decision, or the approval.
    pub decision_seq: u64,
    pub issuance_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Denied {
    pub request_id: String,
    pub reason: DenyReason,
    pub trace: Option<EvaluationTrace>,
    pub audit_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingTicket {
    pub request_id: String,
    pub deadline: Timestamp,
    pub decision_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrokerFailure {
    pub request_id: Option<String>,
    pub error: BrokerError,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BrokerResult {
    Issued(Issued),
    Denied(Denied),
    Pending(PendingTicket),
    Error(BrokerFailure),
}

impl BrokerResult {
    pub fn request_id(&self) -> Option<&str> {
        match self {
            BrokerResult::Issued(i) => Some(&i.request_id),
            BrokerResult::Denied(d) => Some(&d.request_id),
            BrokerResult::Pending(p) => Some(&p.request_id),
            BrokerResult::Error(f) => f.request_id.as_deref(),
        }
    }

    pub fn credential(&self) -> Option<&Credential> {
        match self {
            BrokerResult::Issued(i) => Some(&i.credential),
            _ => None,
        }
    }

    pub fn error(&self) -> Option<&BrokerError> {
        match self {
            BrokerResult::Error(f) => Some(&f.error),
            _ => None,
        }
    }

    fn failure(request_id: Option<&str>, error: BrokerError) -> Self {
        BrokerResult::Error(BrokerFailure {
            request_id: request_id.map(str::to_owned),
            error,
        })
    }
}

/// The credential broker. Safe to share across threads.
pub struct Broker {
    settings: BrokerSettings,
    verifier: Verifier,
    instance: String,
    bundles: RwLock<Arc<BundleStore>>,
    policy: RwLock<Option<Arc<PolicyDocument>>>,
    minter: Minter,
    audit: Mutex<AuditLog>,
    pending: Mutex<PendingStore>,
    cache: Mutex<DecisionCache>,
    next_request: AtomicU64,
}

impl Broker {
    pub fn new(settings: BrokerSettings, key: MintingKey, audit: AuditLog) -> Self {
        let minter = Minter::new(key, settings.global_ttl_cap);
        let instance = hex::encode(rand::random::<[u8; 4]>());
        Self::assemble(settings, minter, audit, instance)
    }

    /// Deterministic request ids and credential nonces for a given seed.
    pub fn with_seed(
        settings: BrokerSettings,
        key: MintingKey,
        audit: AuditLog,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let instance = format!("{:08x}", rng.next_u32());
        let minter = Minter::with_seed(key, settings.global_ttl_cap, rng.next_u64());
        Self::assemble(settings, minter, audit, instance)
    }

    fn assemble(
        settings: BrokerSettings,
        minter: Minter,
        audit: AuditLog,
        instance: String,
    ) -> Self {
        let verifier = Verifier::new(settings.audience.clone())
            .with_leeway(settings.clock_leeway)
            .with_max_lifetime(settings.token_max_lifetime);
        Broker {
            cache: Mutex::new(DecisionCache::new(settings.cache)),
            settings,
            verifier,
            instance,
            bundles: RwLock::new(Arc::new(BundleStore::new())),
            policy: RwLock::new(None),
            minter,
            audit: Mutex::new(audit),
            pending: Mutex::new(PendingStore::default()),
            next_request: AtomicU64::new(1),
        }
    }

    pub fn settings(&self) -> &BrokerSettings {
        &self.settings
    }

    pub fn minting_key(&self) -> &MintingKey {
        self.minter.key()
    }

    pub fn policy(&self) -> Option<Arc<PolicyDocument>> {
        self.policy.read().clone()
    }

    pub fn policy_version(&self) -> Option<PolicyVersion> {
        self.policy.read().as_ref().map(|p| p.version().clone())
    }

    pub fn bundles(&self) -> Arc<BundleStore> {
        self.bundles.read().clone()
    }

    /// Atomically replaces the active policy and flushes the decision cache.
    pub fn set_policy(
        &self,
        document: PolicyDocument,
        now: Timestamp,
    ) -> Result<PolicyVersion, BrokerError> {
        let version = document.version().clone();
        let mut slot = self.policy.write();
        let previous = slot.as_ref().map(|p| p.version().to_string());
        self.audit.lock().append(
            EventKind::PolicyChange,
            None,
            json!({
                "policy_version": version,
                "previous_version": previous,
                "rule_count": document.len(),
            }),
            now,
        )?;
        *slot = Some(Arc::new(document));
        self.cache.lock().clear();
        Ok(version)
    }

    /// Removes the active policy; every request then fails closed.
    pub fn clear_policy(&self, now: Timestamp) -> Result<(), BrokerError> {
        let mut slot = self.policy.write();
        self.audit.lock().append(
            EventKind::PolicyChange,
            None,
            json!({
                "policy_version": Value::Null,
                "previous_version": slot.as_ref().map(|p| p.version().to_string()),
                "rule_count": 0,
            }),
            now,
        )?;
        *slot = None;
        self.cache.lock().clear();
        Ok(())
    }

    /// Installs a trust bundle, replacing any earlier bundle for its domain.
    /// Returns whether a bundle was replaced.
    pub fn register_bundle(
        &self,
        bundle: TrustBundle,
        now: Timestamp,
    ) -> Result<bool, BrokerError> {
        let mut slot = self.bundles.write();
        let replaced = slot.get(bundle.trust_domain()).is_some();
        self.audit.lock().append(
            EventKind::BundleChange,
            None,
            json!({
                "trust_domain": bundle.trust_domain(),
                "local": bundle.is_local(),
                "key_ids": bundle.keys().iter().map(|k| k.key_id.as_str()).collect::<Vec<_>>(),
                "replaced": replaced,
            }),
            now,
        )?;
        let mut next = BundleStore::clone(slot.as_ref());
        next.register(bundle);
        *slot = Arc::new(next);
        Ok(replaced)
    }

    fn next_request_id(&self) -> String {
        let n = self.next_request.fetch_add(1, Ordering::Relaxed);
        format!("req-{}-{n:06}", self.instance)
    }

    fn append(
        &self,
        kind: EventKind,
        request_id: Option<&str>,
        payload: Value,
        now: Timestamp,
    ) -> Result<u64, AuditError> {
        self.audit
            .lock()
            .append(kind, request_id, payload, now)
            .map(|e| e.seq)
    }

    pub fn handle_access_request(&self, req: AccessRequest, now: Timestamp) -> BrokerResult {
        let request_id = self.next_request_id();
        let rid = Some(request_id.as_str());
        let base = json!({
            "resource": req.resource,
            "action": req.action,
            "justification": req.justification,
        });

        if req.resource.is_empty() || req.action.is_empty() {
            let error = BrokerError::InvalidRequest("resource and action must be non-empty".into());
            return self.fail_with_record(rid, error, base, now);
        }

        // (1) authenticate
        let identity = WorkloadToken::decode(&req.token)
            .map_err(AuthError::Malformed)
            .and_then(|token| {
                self.verifier
                    .verify(&token, now, &self.bundles.read())
                    .map_err(|e| (AuthError::Rejected(e), token))
                    .map_err(|(e, token)| {
                        tracing::debug!(subject = %token.subject, error = %e, "token rejected");
                        e
                    })
            });
        let identity = match identity {
            Ok(identity) => identity,
            Err(e) => {
                let error = BrokerError::AuthenticationFailed(e);
                return self.fail_with_record(rid, error, base, now);
            }
        };

        // (2) context
        let ctx = RequestContext {
            subject: identity.subject,
            claims: identity.claims,
            resource: req.resource.clone(),
            action: req.action.clone(),
            now,
        };
        let kind = req.kind.unwrap_or(self.settings.default_kind);
        let requested_ttl = req.ttl.unwrap_or(self.settings.default_ttl);
        let mut payload = base;
        payload["subject"] = json!(ctx.subject);
        payload["claims"] = json!(ctx.claims);
        payload["requested"] = json!({"kind": kind, "ttl_secs": requested_ttl.as_secs()});

        let Some(policy) = self.policy() else {
            payload["outcome"] = json!("deny");
            payload["reason"] = json!(DenyReason::PolicyUnavailable.category());
            payload["matched_rule_ids"] = json!([]);
            return match self.append(EventKind::Decision, rid, payload, now) {
                Ok(seq) => BrokerResult::Denied(Denied {
                    request_id,
                    reason: DenyReason::PolicyUnavailable,
                    trace: None,
                    audit_seq: seq,
                }),
                Err(e) => BrokerResult::failure(rid, e.into()),
            };
        };

        // (3) cache, (4) evaluate
        let (decision, cached) = self.decide(&policy, &ctx);
        payload["outcome"] = json!(decision.outcome.as_str());
        payload["matched_rule_ids"] = json!(decision.matched_rule_ids);
        payload["policy_version"] = json!(decision.policy_version);
        payload["obligations"] = json!(decision.effective_obligations);
        payload["cached"] = json!(cached);

        // (5) act on the outcome
        match decision.outcome {
            Outcome::Deny => {
                let trace = explain(&policy, &ctx);
                payload["reason"] = json!(DenyReason::NoMatchingRule.category());
                payload["trace"] = json!(trace.rules);
                match self.append(EventKind::Decision, rid, payload, now) {
                    Ok(seq) => BrokerResult::Denied(Denied {
                        request_id,
                        reason: DenyReason::NoMatchingRule,
                        trace: Some(trace),
                        audit_seq: seq,
                    }),
                    Err(e) => BrokerResult::failure(rid, e.into()),
                }
            }
            Outcome::PendingApproval => {
                let deadline = now + self.settings.approval_window;
                payload["approval_deadline"] = json!(deadline);
                let seq = match self.append(EventKind::Decision, rid, payload, now) {
                    Ok(seq) => seq,
                    Err(e) => return BrokerResult::failure(rid, e.into()),
                };
                self.pending.lock().insert(PendingApproval::new(
                    request_id.clone(),
                    decision,
                    ctx,
                    req.justification,
                    kind,
                    requested_ttl,
                    seq,
                    now,
                    self.settings.approval_window,
                ));
                BrokerResult::Pending(PendingTicket {
                    request_id,
                    deadline,
                    decision_seq: seq,
                })
            }
            Outcome::Allow => {
                let seq = match self.append(EventKind::Decision, rid, payload, now) {
                    Ok(seq) => seq,
                    Err(e) => return BrokerResult::failure(rid, e.into()),
                };
                self.issue(&request_id, kind, &ctx, requested_ttl, &decision, seq, now)
            }
        }
    }

    fn decide(&self, policy: &PolicyDocument, ctx: &RequestContext) -> (Decision, bool) {
        let key = CacheKey::new(policy.version(), ctx);
        let mut cache = self.cache.lock();
        if let Some(mut decision) = cache.get(&key, ctx.now) {
            decision.evaluated_at = ctx.now;
            return (decision, true);
        }
        let decision = evaluate(policy, ctx);
        cache.insert(
            key,
            decision.clone(),
            ctx.now,
            policy.next_window_edge(ctx.now),
        );
        (decision, false)
    }

    /// Records a failure as this request's decision event, then reports it.
    fn fail_with_record(
        &self,
        rid: Option<&str>,
        error: BrokerError,
        mut payload: Value,
        now: Timestamp,
    ) -> BrokerResult {
        payload["outcome"] = json!(error.category().replace('-', "_"));
        if let BrokerError::AuthenticationFailed(e) = &error {
            payload["error"] = json!(e.category());
            payload["detail"] = json!(e.to_string());
        }
        match self.append(EventKind::Decision, rid, payload, now) {
            Ok(_) => BrokerResult::failure(rid, error),
            Err(e) => BrokerResult::failure(rid, e.into()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn issue(
        &self,
        request_id: &str,
        kind: CredentialKind,
        ctx: &RequestContext,
        requested_ttl: Duration,
        decision: &Decision,
        decision_seq: u64,
        now: Timestamp,
    ) -> BrokerResult {
        let rid = Some(request_id);
        let scope = CredentialScope::new(
            ctx.subject.clone(),
            ctx.resource.clone(),
            ctx.action.clone(),
        );
        let credential =
            match self
                .minter
                .mint(kind, scope, requested_ttl, decision, decision_seq, now)
            {
                Ok(c) => c,
                Err(e) => {
                    let anomaly = json!({
                        "stage": "mint",
                        "error": e.to_string(),
                        "decision_seq": decision_seq,
                        "subject": ctx.subject,
                    });
                    if let Err(audit_err) = self.append(EventKind::Anomaly, rid, anomaly, now) {
                        tracing::error!(error = %audit_err, "failed to audit minting anomaly");
                    }
                    return BrokerResult::failure(rid, BrokerError::Internal(e.to_string()));
                }
            };
        let payload = json!({
            "credential_id": credential.credential_id,
            "kind": credential.kind,
            "scope": credential.scope,
            "subject": credential.scope.subject,
            "not_before": credential.not_before,
            "expires_at": credential.expires_at,
            "lifetime_secs": credential.lifetime().as_secs(),
            "decision_ref": credential.decision_ref,
        });
        match self.append(EventKind::Issuance, rid, payload, now) {
            Ok(issuance_seq) => BrokerResult::Issued(Issued {
                request_id: request_id.to_owned(),
                credential,
                decision_seq,
                issuance_seq,
            }),
            Err(e) => {
                // unaudited credentials never leave the broker
                if credential.kind == CredentialKind::SecretLease {
                    self.minter.revoke_lease(&credential.secret_material);
                }
                BrokerResult::failure(rid, e.into())
            }
        }
    }

    /// Resolves a pending request. Approval re-evaluates the request against
    /// the policy active now; a credential is minted only if that still
    /// matches. Its lifetime is what is left of the requested TTL, measured
    /// from the original request.
    pub fn record_approval(
        &self,
        request_id: &str,
        approver: &str,
        verdict: Verdict,
        now: Timestamp,
    ) -> BrokerResult {
        let rid = Some(request_id);
        let policy = self.policy();
        // decide the terminal state under the store lock so that concurrent
        // verdicts and expiry resolve to exactly one outcome
        let (entry, status, recheck, budget) = {
            let mut store = self.pending.lock();
            let Some(existing) = store.get(request_id) else {
                return BrokerResult::failure(
                    rid,
                    BrokerError::UnknownRequest(request_id.to_owned()),
                );
            };
            match existing.status {
                ApprovalStatus::Pending => {}
                ApprovalStatus::Expired => {
                    return BrokerResult::failure(rid, BrokerError::ApprovalExpired)
                }
                other => return BrokerResult::failure(rid, BrokerError::AlreadyResolved(other)),
            }
            // the requested lifetime counts from the request, so waiting for
            // a human uses it up
            let budget = existing
                .requested_ttl
                .saturating_sub(now.saturating_since(existing.created_at));
            let window_over = now >= existing.expires_at;
            if window_over || (verdict == Verdict::Approve && budget.is_zero()) {
                let entry = store
                    .resolve(request_id, ApprovalStatus::Expired, None, now)
                    .expect("entry exists")
                    .expect("entry was pending");
                drop(store);
                let mut payload = approval_payload(&entry, "expired", None);
                payload["reason"] = json!(if window_over {
                    "approval-window-elapsed"
                } else {
                    "requested-ttl-elapsed"
                });
                if let Err(e) = self.append(EventKind::Approval, rid, payload, now) {
                    return BrokerResult::failure(rid, e.into());
                }
                return BrokerResult::failure(rid, BrokerError::ApprovalExpired);
            }
            let recheck = match verdict {
                Verdict::Deny => None,
                Verdict::Approve => {
                    let mut ctx = existing.ctx.clone();
                    ctx.now = now;
                    Some(policy.as_deref().map(|p| evaluate(p, &ctx)))
                }
            };
            let status = match &recheck {
                Some(Some(d)) if d.outcome != Outcome::Deny => ApprovalStatus::Approved,
                _ => ApprovalStatus::Denied,
            };
            let entry = store
                .resolve(request_id, status, Some(approver), now)
                .expect("entry exists")
                .expect("entry was pending");
            (entry, status, recheck, budget)
        };

        let verdict_label = match verdict {
            Verdict::Approve => "approve",
            Verdict::Deny => "deny",
        };
        let mut payload = approval_payload(&entry, status.as_str(), Some(approver));
        payload["verdict"] = json!(verdict_label);
        payload["reevaluation"] = match &recheck {
            Some(Some(d)) => json!({
                "outcome": d.outcome.as_str(),
                "matched_rule_ids": d.matched_rule_ids,
                "policy_version": d.policy_version,
                "evaluated_at": d.evaluated_at,
            }),
            Some(None) => {
                json!({"outcome": "deny", "reason": DenyReason::PolicyUnavailable.category()})
            }
            None => Value::Null,
        };
        let approval_seq = match self.append(EventKind::Approval, rid, payload, now) {
            Ok(seq) => seq,
            Err(e) => return BrokerResult::failure(rid, e.into()),
        };

        match (verdict, recheck) {
            (Verdict::Approve, Some(Some(decision))) if decision.outcome != Outcome::Deny => self
                .issue(
                    request_id,
                    entry.kind,
                    &entry.ctx,
                    budget,
                    &decision.approved(),
                    approval_seq,
                    now,
                ),
            (Verdict::Approve, Some(None)) => BrokerResult::Denied(Denied {
                request_id: request_id.to_owned(),
                reason: DenyReason::PolicyUnavailable,
                trace: None,
                audit_seq: approval_seq,
            }),
            (Verdict::Approve, _) => {
                let mut ctx = entry.ctx.clone();
                ctx.now = now;
                BrokerResult::Denied(Denied {
                    request_id: request_id.to_owned(),
                    reason: DenyReason::PolicyRecheckFailed {
                        approver: approver.to_owned(),
                    },
                    trace: policy.as_deref().map(|p| explain(p, &ctx)),
                    audit_seq: approval_seq,
                })
            }
            (Verdict::Deny, _) => BrokerResult::Denied(Denied {
                request_id: request_id.to_owned(),
                reason: DenyReason::ApproverDenied {
                    approver: approver.to_owned(),
                },
                trace: None,
                audit_seq: approval_seq,
            }),
        }
    }

    /// Live pending approvals, oldest first. Entries whose window has elapsed
    /// are moved to `expired` (and audited) instead of being returned.
    pub fn list_pending(&self, now: Timestamp) -> Vec<PendingApproval> {
        let (live, expired) = self.pending.lock().sweep(now);
        for entry in &expired {
            let mut payload = approval_payload(entry, "expired", None);
            payload["reason"] = json!("approval-window-elapsed");
            if let Err(e) = self.append(EventKind::Approval, Some(&entry.request_id), payload, now)
            {
                tracing::error!(request_id = %entry.request_id, error = %e, "failed to audit approval expiry");
            }
        }
        live
    }

    pub fn pending_entry(&self, request_id: &str) -> Option<PendingApproval> {
        self.pending.lock().get(request_id).cloned()
    }

    pub fn verify_credential(
        &self,
        credential: &Credential,
        presented: &CredentialScope,
        now: Timestamp,
    ) -> Result<(), Rejection> {
        self.minter.verify(credential, presented, now)
    }

    pub fn redeem_lease(
        &self,
        lease_id: &str,
        now: Timestamp,
    ) -> Result<CredentialScope, LeaseError> {
        self.minter.redeem_lease(lease_id, now)
    }

    pub fn outstanding_leases(&self) -> usize {
        self.minter.outstanding_leases()
    }

    pub fn audit_query(
        &self,
        filter: &AuditFilter,
    ) -> Result<(Vec<AuditEvent>, ChainHead), AuditError> {
        let log = self.audit.lock();
        Ok((log.query(filter)?, log.head()))
    }

    pub fn audit_head(&self) -> ChainHead {
        self.audit.lock().head()
    }

    /// Runs `f` with read access to the audit log.
    pub fn with_audit<R>(&self, f: impl FnOnce(&AuditLog) -> R) -> R {
        f(&self.audit.lock())
    }

    /// (hits, misses) of the decision cache.
    pub fn cache_stats(&self) -> (u64, u64) {
        self.cache.lock().stats()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().len()
    }
}

fn approval_payload(entry: &PendingApproval, outcome: &str, approver: Option<&str>) -> Value {
    json!({
        "outcome": outcome,
        "approver": approver,
        "decision_seq": entry.decision_seq,
        "subject": entry.ctx.subject,
        "resource": entry.ctx.resource,
        "action": entry.ctx.action,
        "justification": entry.justification,
        "created_at": entry.created_at,
        "expires_at": entry.expires_at,
    })
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker")
            .field("audience", &self.settings.audience)
            .field("instance", &self.instance)
            .field("policy_version", &self.policy_version())
            .finish_non_exhaustive()
    }
}
