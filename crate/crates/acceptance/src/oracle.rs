use std::collections::BTreeSet;

use crate::generate::{GenContext, GenRule};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    /// "allow", "deny" or "pending_approval".
    pub outcome: &'static str,
    pub matched: BTreeSet<String>,
    /// Effective TTL cap in seconds; zero on deny.
    pub ttl_cap: u64,
}

fn subject_matches(pattern: &str, subject: &str) -> bool {
    match pattern.strip_suffix('*') {
        // "spiffe://ci/*" keeps its slash, so "spiffe://cix/..." cannot match
        Some(prefix) => subject.len() > prefix.len() && subject.starts_with(prefix),
        None => pattern == subject,
    }
}

fn resource_matches(pattern: &str, resource: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => resource.starts_with(prefix),
        None => pattern == resource,
    }
}

fn rule_matches(rule: &GenRule, ctx: &GenContext) -> bool {
    subject_matches(&rule.subject, &ctx.subject)
        && resource_matches(&rule.resource, &ctx.resource)
        && rule.actions.contains(&ctx.action)
        && rule
            .conditions
            .iter()
            .all(|(claim, value)| ctx.claims.get(claim) == Some(value))
        && rule.not_before.is_none_or(|t| ctx.now >= t)
        && rule.not_after.is_none_or(|t| ctx.now < t)
}

/// Checks every rule independently, then decides: a match with no approval
/// obligation allows; otherwise any match is pending; otherwise deny.
pub fn naive_scan(rules: &[GenRule], ctx: &GenContext, global_cap: u64) -> Expected {
    let matched: Vec<&GenRule> = rules.iter().filter(|r| rule_matches(r, ctx)).collect();
    let cap_of = |r: &&GenRule| r.max_ttl.unwrap_or(global_cap).min(global_cap);
    let direct: Vec<&GenRule> = matched
        .iter()
        .copied()
        .filter(|r| !r.approval_required)
        .collect();
    let (outcome, ttl_cap) = if !direct.is_empty() {
        ("allow", direct.iter().map(cap_of).max().unwrap())
    } else if !matched.is_empty() {
        (
            "pending_approval",
            matched.iter().map(cap_of).max().unwrap(),
        )
    } else {
        ("deny", 0)
    };
    Expected {
        outcome,
        matched: matched.iter().map(|r| r.id.clone()).collect(),
        ttl_cap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_patterns() {
        assert!(subject_matches("spiffe://ci/*", "spiffe://ci/a"));
        assert!(!subject_matches(
            "spiffe://ci/org/deploy/*",
            "spiffe://ci/org/deployer"
        ));
        assert!(!subject_matches(
            "spiffe://ci/org/deploy/*",
            "spiffe://ci/org/deploy"
        ));
        assert!(resource_matches(
            "s3://prod-*",
            "s3://prod-release-artifacts"
        ));
        assert!(resource_matches("*", "db://x"));
        assert!(!resource_matches(
            "s3://prod-release-artifacts",
            "s3://prod-release-artifacts-backup"
        ));
    }
}
