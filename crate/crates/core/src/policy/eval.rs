use std::fmt;
use std::time::Duration;

use serde::{Serialize, Serializer};

use super::document::{PolicyDocument, PolicyRule, PolicyVersion};
use crate::identity::{Claims, SpiffeId};
use crate::time::duration_secs;
use crate::Timestamp;

/// Everything policy may look at: who (subject), what (resource, action) and
/// the circumstances (claims, now).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestContext {
    pub subject: SpiffeId,
    pub claims: Claims,
    pub resource: String,
    pub action: String,
    pub now: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Allow,
    Deny,
    PendingApproval,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Allow => "allow",
            Outcome::Deny => "deny",
            Outcome::PendingApproval => "pending_approval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EffectiveObligations {
    pub approval_required: bool,
    #[serde(rename = "ttl_cap_secs", with = "duration_secs")]
    pub ttl_cap: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub matched_rule_ids: Vec<String>,
    pub effective_obligations: EffectiveObligations,
    pub evaluated_at: Timestamp,
    pub policy_version: PolicyVersion,
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        self.outcome == Outcome::Allow
    }

    /// Converts a pending decision into an allow once a human approved it.
    /// Obligations, including `approval_required`, are kept for the record.
    pub fn approved(mut self) -> Decision {
        if self.outcome == Outcome::PendingApproval {
            self.outcome = Outcome::Allow;
        }
        self
    }
}

/// The first match dimension on which a rule failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Subject,
    Resource,
    Action,
    Condition(usize),
    TimeWindow,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimension::Subject => f.write_str("subject"),
            Dimension::Resource => f.write_str("resource"),
            Dimension::Action => f.write_str("action"),
            Dimension::Condition(i) => write!(f, "condition[{i}]"),
            Dimension::TimeWindow => f.write_str("time_window"),
        }
    }
}

impl Serialize for Dimension {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleTrace {
    pub rule_id: String,
    /// `None` when the rule matched on every dimension.
    pub failed_at: Option<Dimension>,
}

impl RuleTrace {
    pub fn matched(&self) -> bool {
        self.failed_at.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvaluationTrace {
    pub rules: Vec<RuleTrace>,
    pub decision: Decision,
}

fn check_rule(rule: &PolicyRule, subject: &str, ctx: &RequestContext) -> Result<(), Dimension> {
    if !rule.subject.matches_str(subject) {
        return Err(Dimension::Subject);
    }
    if !rule.resource.matches(&ctx.resource) {
        return Err(Dimension::Resource);
    }
    if !rule.actions.contains(&ctx.action) {
        return Err(Dimension::Action);
    }
    for (i, cond) in rule.conditions.iter().enumerate() {
        // a claim the token does not carry fails the condition
        if ctx.claims.get(&cond.claim) != Some(&cond.equals) {
            return Err(Dimension::Condition(i));
        }
    }
    if let Some(window) = &rule.window {
        if !window.contains(ctx.now) {
            return Err(Dimension::TimeWindow);
        }
    }
    Ok(())
}

fn decide<'a>(
    document: &PolicyDocument,
    matched: impl Iterator<Item = &'a PolicyRule>,
    now: Timestamp,
) -> Decision {
    let cap = document.global_cap();
    let mut ids = Vec::new();
    let mut direct_cap: Option<Duration> = None;
    let mut approval_cap: Option<Duration> = None;
    for rule in matched {
        ids.push(rule.id.clone());
        let rule_cap = rule.obligations.max_ttl.unwrap_or(cap).min(cap);
        let slot = if rule.obligations.approval_required {
            &mut approval_cap
        } else {
            &mut direct_cap
        };
        *slot = Some(slot.map_or(rule_cap, |c| c.max(rule_cap)));
    }
    let (outcome, approval_required, ttl_cap) = match (direct_cap, approval_cap) {
        (Some(c), _) => (Outcome::Allow, false, c),
        (None, Some(c)) => (Outcome::PendingApproval, true, c),
        (None, None) => (Outcome::Deny, false, Duration::ZERO),
    };
    Decision {
        outcome,
        matched_rule_ids: ids,
        effective_obligations: EffectiveObligations {
            approval_required,
            ttl_cap,
        },
        evaluated_at: now,
        policy_version: document.version().clone(),
    }
}

/// Default-deny evaluation. Pure: the same document and context always give
/// the same decision.
///
/// When several rules match, any matching rule without an approval obligation
/// allows outright and the TTL cap is the largest among those rules. If every
/// match requires approval the outcome is pending and the cap is the largest
/// among them.
pub fn evaluate(document: &PolicyDocument, ctx: &RequestContext) -> Decision {
    let subject = ctx.subject.to_string();
    let matched = document
        .rules()
        .iter()
        .filter(|rule| check_rule(rule, &subject, ctx).is_ok());
    decide(document, matched, ctx.now)
}

/// Like [`evaluate`], also reporting where each rule stopped matching.
pub fn explain(document: &PolicyDocument, ctx: &RequestContext) -> EvaluationTrace {
    let subject = ctx.subject.to_string();
    let rules: Vec<RuleTrace> = document
        .rules()
        .iter()
        .map(|rule| RuleTrace {
            rule_id: rule.id.clone(),
            failed_at: check_rule(rule, &subject, ctx).err(),
        })
        .collect();
    let matched = document
        .rules()
        .iter()
        .zip(&rules)
        .filter(|(_, t)| t.matched())
        .map(|(r, _)| r);
    let decision = decide(document, matched, ctx.now);
    EvaluationTrace { rules, decision }
}
