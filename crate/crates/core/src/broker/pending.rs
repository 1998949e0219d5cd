use std::collections::HashMap;
use std::time::Duration;

use serde::Serialize;

use crate::minting::CredentialKind;
use crate::policy::{Decision, RequestContext};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalStatus {
    Pending,
    Approved,
    Denied,
    Expired,
}

impl ApprovalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ApprovalStatus::Pending => "pending",
            ApprovalStatus::Approved => "approved",
            ApprovalStatus::Denied => "denied",
            ApprovalStatus::Expired => "expired",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != ApprovalStatus::Pending
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Deny,
}

/// A request parked until a human approves or denies it.
#[derive(Debug, Clone, Serialize)]
pub struct PendingApproval {
    pub request_id: String,
    pub decision: Decision,
    pub ctx: RequestContext,
    pub justification: String,
    pub kind: CredentialKind,
    #[serde(with = "crate::time::duration_secs")]
    pub requested_ttl: Duration,
    /// Audit seq of the decision event that created this entry.
    pub decision_seq: u64,
    pub created_at: Timestamp,
    pub expires_at: Timestamp,
    pub status: ApprovalStatus,
    pub approver: Option<String>,
    pub resolved_at: Option<Timestamp>,
    #[serde(skip)]
    order: u64,
}

impl PendingApproval {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        request_id: String,
        decision: Decision,
        ctx: RequestContext,
        justification: String,
        kind: CredentialKind,
        requested_ttl: Duration,
        decision_seq: u64,
        created_at: Timestamp,
        window: Duration,
    ) -> Self {
        PendingApproval {
            request_id,
            decision,
            ctx,
            justification,
            kind,
            requested_ttl,
            decision_seq,
            created_at,
            expires_at: created_at + window,
            status: ApprovalStatus::Pending,
            approver: None,
            resolved_at: None,
            order: 0,
        }
    }

    /// Moves out of `pending`. Terminal states never change again.
    fn resolve(
        &mut self,
        to: ApprovalStatus,
        approver: Option<&str>,
        now: Timestamp,
    ) -> Result<(), ApprovalStatus> {
        if self.status.is_terminal() {
            return Err(self.status);
        }
        debug_assert!(to.is_terminal());
        self.status = to;
        self.approver = approver.map(str::to_owned);
        self.resolved_at = Some(now);
        Ok(())
    }
}

#[derive(Debug, Default)]
pub(crate) struct PendingStore {
    entries: HashMap<String, PendingApproval>,
    next_order: u64,
}

impl PendingStore {
    pub(crate) fn insert(&mut self, mut entry: PendingApproval) {
        entry.order = self.next_order;
        self.next_order += 1;
        self.entries.insert(entry.request_id.clone(), entry);
    }

    pub(crate) fn get(&self, request_id: &str) -> Option<&PendingApproval> {
        self.entries.get(request_id)
    }

    pub(crate) fn resolve(
        &mut self,
        request_id: &str,
        to: ApprovalStatus,
        approver: Option<&str>,
        now: Timestamp,
    ) -> Option<Result<PendingApproval, ApprovalStatus>> {
        let entry = self.entries.get_mut(request_id)?;
        Some(entry.resolve(to, approver, now).map(|()| entry.clone()))
    }

    /// Expires overdue entries and returns (live pending list, newly expired).
    pub(crate) fn sweep(&mut self, now: Timestamp) -> (Vec<PendingApproval>, Vec<PendingApproval>) {
        let mut live = Vec::new();
        let mut expired = Vec::new();
        for entry in self.entries.values_mut() {
            if entry.status != ApprovalStatus::Pending {
                continue;
            }
            if now >= entry.expires_at {
                entry
                    .resolve(ApprovalStatus::Expired, None, now)
                    .expect("entry was pending");
                expired.push(entry.clone());
            } else {
                live.push(entry.clone());
            }
        }
        live.sort_by_key(|e| (e.created_at, e.order));
        expired.sort_by_key(|e| (e.created_at, e.order));
        (live, expired)
    }
}
