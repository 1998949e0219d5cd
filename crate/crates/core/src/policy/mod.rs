//! Default-deny attribute-based policy.
//!
//! A document is an ordered list of rules. A request is allowed only when at
//! least one rule matches on subject, resource, action, every claim condition
//! and the time window; with no match the answer is deny.

mod document;
mod eval;
mod pattern;

pub use document::{
    load_policy, ClaimCondition, Obligations, PolicyDocument, PolicyLoadError, PolicyLoadErrors,
    PolicyRule, PolicyVersion, TimeWindow, DEFAULT_GLOBAL_TTL_CAP,
};
pub use eval::{
    evaluate, explain, Decision, Dimension, EffectiveObligations, EvaluationTrace, Outcome,
    RequestContext, RuleTrace,
};
pub use pattern::{PatternError, ResourcePattern, SubjectPattern};
