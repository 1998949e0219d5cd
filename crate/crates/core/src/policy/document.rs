use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::pattern::{ResourcePattern, SubjectPattern};
use crate::Timestamp;

/// Ceiling on any minted credential's lifetime: fifteen minutes.
pub const DEFAULT_GLOBAL_TTL_CAP: Duration = Duration::from_secs(900);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyLoadError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("rule #{index}: rule id is empty")]
    EmptyRuleId { index: usize },
    #[error("duplicate rule id {0:?}")]
    DuplicateRuleId(String),
    #[error("rule {0:?}: actions must be a non-empty list of non-empty strings")]
    EmptyActions(String),
    #[error("rule {rule:?}: malformed {field} pattern {pattern:?}: {reason}")]
    MalformedPattern {
        rule: String,
        field: &'static str,
        pattern: String,
        reason: String,
    },
    #[error("rule {rule:?}: max_ttl_seconds {ttl} exceeds the global cap of {cap} s")]
    TtlExceedsGlobalCap { rule: String, ttl: u64, cap: u64 },
    #[error("rule {0:?}: max_ttl_seconds must be positive")]
    ZeroMaxTtl(String),
    #[error("rule {rule:?}: condition #{index} needs a non-empty claim key")]
    EmptyCondition { rule: String, index: usize },
    #[error("rule {rule:?}: bad time window: {reason}")]
    MalformedTimeWindow { rule: String, reason: String },
}

/// Every problem found in a document, not only the first.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} policy validation error(s): {}", .0.len(), summary(.0))]
pub struct PolicyLoadErrors(pub Vec<PolicyLoadError>);

fn summary(errors: &[PolicyLoadError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Content hash of the source text; identifies the active policy in decisions,
/// audit records and cache keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyVersion(String);

impl PolicyVersion {
    pub fn of_text(text: &str) -> Self {
        PolicyVersion(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PolicyVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClaimCondition {
    pub claim: String,
    pub equals: String,
}

/// Half-open validity window `[not_before, not_after)`; either side may be open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TimeWindow {
    pub not_before: Option<Timestamp>,
    pub not_after: Option<Timestamp>,
}

impl TimeWindow {
    pub fn contains(&self, now: Timestamp) -> bool {
        self.not_before.is_none_or(|nb| now >= nb) && self.not_after.is_none_or(|na| now < na)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Obligations {
    pub approval_required: bool,
    pub max_ttl: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyRule {
    pub id: String,
    pub subject: SubjectPattern,
    pub resource: ResourcePattern,
    pub actions: BTreeSet<String>,
    pub conditions: Vec<ClaimCondition>,
    pub window: Option<TimeWindow>,
    pub obligations: Obligations,
}

/// A validated, immutable rule list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDocument {
    rules: Vec<PolicyRule>,
    version: PolicyVersion,
    global_cap: Duration,
}

impl PolicyDocument {
    /// The vacuous policy: denies everything.
    pub fn empty(global_cap: Duration) -> Self {
        PolicyDocument {
            rules: Vec::new(),
            version: PolicyVersion::of_text(""),
            global_cap,
        }
    }

    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }

    pub fn version(&self) -> &PolicyVersion {
        &self.version
    }

    pub fn global_cap(&self) -> Duration {
        self.global_cap
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// The earliest time-window edge strictly after `now`; decisions taken at
    /// `now` hold at least until then.
    pub fn next_window_edge(&self, now: Timestamp) -> Option<Timestamp> {
        self.rules
            .iter()
            .filter_map(|r| r.window)
            .flat_map(|w| [w.not_before, w.not_after])
            .flatten()
            .filter(|edge| *edge > now)
            .min()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    #[serde(default)]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: String,
    subject: String,
    resource: String,
    actions: Vec<String>,
    #[serde(default)]
    conditions: Vec<RawCondition>,
    not_before: Option<String>,
    not_after: Option<String>,
    #[serde(default)]
    approval_required: bool,
    max_ttl_seconds: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCondition {
    claim: String,
    equals: String,
}

/// Parses and validates a policy document.
///
/// The format is TOML with an ordered `[[rules]]` array:
///
/// ```toml
/// [[rules]]
/// id = "deploy-prod-artifacts"
/// subject = "spiffe://ci/org/deploy"      # or a prefix: "spiffe://ci/*"
/// resource = "s3://prod-release-artifacts" # or a prefix: "s3://prod-*"
/// actions = ["write"]
/// approval_required = false                # optional
/// max_ttl_seconds = 600                    # optional, <= global cap
/// not_before = "2026-01-01T00:00:00Z"      # optional
/// not_after = "2027-01-01T00:00:00Z"       # optional
///
/// [[rules.conditions]]                     # optional, exact claim equality
/// claim = "environment"
/// equals = "prod"
/// ```
pub fn load_policy(text: &str, global_cap: Duration) -> Result<PolicyDocument, PolicyLoadErrors> {
    let raw: RawDocument = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map_or((0, 0), |span| line_column(text, span.start));
        PolicyLoadErrors(vec![PolicyLoadError::Parse {
            line,
            column,
            message: e.message().to_owned(),
        }])
    })?;

    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let mut rules = Vec::with_capacity(raw.rules.len());
    for (index, r) in raw.rules.into_iter().enumerate() {
        let before = errors.len();
        if r.id.trim().is_empty() {
            errors.push(PolicyLoadError::EmptyRuleId { index });
        } else if !seen.insert(r.id.clone()) {
            errors.push(PolicyLoadError::DuplicateRuleId(r.id.clone()));
        }
        let subject = SubjectPattern::parse(&r.subject)
            .map_err(|e| malformed(&r.id, "subject", &r.subject, e.to_string()))
            .map_err(|e| errors.push(e))
            .ok();
        let resource = ResourcePattern::parse(&r.resource)
            .map_err(|e| malformed(&r.id, "resource", &r.resource, e.to_string()))
            .map_err(|e| errors.push(e))
            .ok();
        if r.actions.is_empty() || r.actions.iter().any(|a| a.is_empty()) {
            errors.push(PolicyLoadError::EmptyActions(r.id.clone()));
        }
        for (i, c) in r.conditions.iter().enumerate() {
            if c.claim.is_empty() {
                errors.push(PolicyLoadError::EmptyCondition {
                    rule: r.id.clone(),
                    index: i,
                });
            }
        }
        let window = parse_window(&r.id, r.not_before.as_deref(), r.not_after.as_deref())
            .map_err(|e| errors.push(e))
            .ok()
            .flatten();
        match r.max_ttl_seconds {
            Some(0) => errors.push(PolicyLoadError::ZeroMaxTtl(r.id.clone())),
            Some(ttl) if ttl > global_cap.as_secs() => {
                errors.push(PolicyLoadError::TtlExceedsGlobalCap {
                    rule: r.id.clone(),
                    ttl,
                    cap: global_cap.as_secs(),
                })
            }
            _ => {}
        }
        if errors.len() > before {
            continue;
        }
        rules.push(PolicyRule {
            id: r.id,
            subject: subject.expect("validated"),
            resource: resource.expect("validated"),
            actions: r.actions.into_iter().collect(),
            conditions: r
                .conditions
                .into_iter()
                .map(|c| ClaimCondition {
                    claim: c.claim,
                    equals: c.equals,
                })
                .collect(),
            window,
            obligations: Obligations {
                approval_required: r.approval_required,
                max_ttl: r.max_ttl_seconds.map(Duration::from_secs),
            },
        });
    }
    if !errors.is_empty() {
        return Err(PolicyLoadErrors(errors));
    }
    Ok(PolicyDocument {
        rules,
        version: PolicyVersion::of_text(text),
        global_cap,
    })
}

fn malformed(rule: &str, field: &'static str, pattern: &str, reason: String) -> PolicyLoadError {
    PolicyLoadError::MalformedPattern {
        rule: rule.to_owned(),
        field,
        pattern: pattern.to_owned(),
        reason,
    }
}

fn parse_window(
    rule: &str,
    not_before: Option<&str>,
    not_after: Option<&str>,
) -> Result<Option<TimeWindow>, PolicyLoadError> {
    let bad = |reason: String| PolicyLoadError::MalformedTimeWindow {
        rule: rule.to_owned(),
        reason,
    };
    let parse = |field: &str, value: Option<&str>| {
        value
            .map(|v| {
                Timestamp::parse_rfc3339(v)
                    .ok_or_else(|| bad(format!("{field} {v:?} is not RFC 3339")))
            })
            .transpose()
    };
    let window = TimeWindow {
        not_before: parse("not_before", not_before)?,
        not_after: parse("not_after", not_after)?,
    };
    match (window.not_before, window.not_after) {
        (None, None) => Ok(None),
        (Some(nb), Some(na)) if nb >= na => Err(bad("not_before must precede not_after".into())),
        _ => Ok(Some(window)),
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let prefix = &text[..offset.min(text.len())];
    let line = prefix.matches('\n').count() + 1;
    let column = prefix
        .rfind('\n')
        .map_or(prefix.len(), |nl| prefix.len() - nl - 1)
        + 1;
    (line, column)
}
