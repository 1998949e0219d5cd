use std::fmt;

use thiserror::Error;

use crate::identity::SpiffeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("pattern is empty")]
    Empty,
    #[error("`*` is only allowed as the final character{0}")]
    MisplacedWildcard(&'static str),
    #[error("invalid SPIFFE ID: {0}")]
    InvalidId(String),
    #[error("pattern contains whitespace")]
    Whitespace,
}

/// Matches a subject by canonical SPIFFE ID: either an exact id or every id
/// under a path prefix (`spiffe://ci/*`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubjectPattern {
    Exact(String),
    /// Stored with its trailing `/`, e.g. `spiffe://ci/`.
    Prefix(String),
}

impl SubjectPattern {
    pub fn parse(text: &str) -> Result<Self, PatternError> {
        if text.is_empty() {
            return Err(PatternError::Empty);
        }
        if let Some(base) = text.strip_suffix("/*") {
            if base.contains('*') {
                return Err(PatternError::MisplacedWildcard(
                    " (subject prefixes end in `/*`)",
                ));
            }
            let id = SpiffeId::parse(base).map_err(|e| PatternError::InvalidId(e.to_string()))?;
            return Ok(SubjectPattern::Prefix(format!("{id}/")));
        }
        if text.contains('*') {
            return Err(PatternError::MisplacedWildcard(
                " (subject prefixes end in `/*`)",
            ));
        }
        let id = SpiffeId::parse(text).map_err(|e| PatternError::InvalidId(e.to_string()))?;
        Ok(SubjectPattern::Exact(id.to_string()))
    }

    pub fn matches(&self, subject: &SpiffeId) -> bool {
        self.matches_str(&subject.to_string())
    }

    pub fn matches_str(&self, canonical: &str) -> bool {
        match self {
            SubjectPattern::Exact(id) => id == canonical,
            SubjectPattern::Prefix(prefix) => canonical.starts_with(prefix.as_str()),
        }
    }
}

impl fmt::Display for SubjectPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubjectPattern::Exact(id) => f.write_str(id),
            SubjectPattern::Prefix(prefix) => write!(f, "{prefix}*"),
        }
    }
}

/// Matches a resource URI exactly, or by prefix when the pattern ends in `*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResourcePattern {
    Exact(String),
    Prefix(String),
}

impl ResourcePattern {
    pub fn parse(text: &str) -> Result<Self, PatternError> {
        if text.is_empty() {
            return Err(PatternError::Empty);
        }
        if text.chars().any(char::is_whitespace) {
            return Err(PatternError::Whitespace);
        }
        match text.strip_suffix('*') {
            Some(prefix) if prefix.contains('*') => Err(PatternError::MisplacedWildcard("")),
            Some(prefix) => Ok(ResourcePattern::Prefix(prefix.to_owned())),
            None if text.contains('*') => Err(PatternError::MisplacedWildcard("")),
            None => Ok(ResourcePattern::Exact(text.to_owned())),
        }
    }

    pub fn matches(&self, resource: &str) -> bool {
        match self {
            ResourcePattern::Exact(r) => r == resource,
            ResourcePattern::Prefix(prefix) => resource.starts_with(prefix.as_str()),
        }
    }
}

impl fmt::Display for ResourcePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourcePattern::Exact(r) => f.write_str(r),
            ResourcePattern::Prefix(prefix) => write!(f, "{prefix}*"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(s: &str) -> SpiffeId {
        SpiffeId::parse(s).unwrap()
    }

    #[test]
    fn subject_prefix_matches_children_only() {
        let p = SubjectPattern::parse("spiffe://ci/*").unwrap();
        assert_eq!(p, SubjectPattern::Prefix("spiffe://ci/".into()));
        assert!(p.matches(&id("spiffe://ci/org/deploy")));
        assert!(!p.matches(&id("spiffe://ci")));
        assert!(!p.matches(&id("spiffe://ci-other/org")));
        assert_eq!(p.to_string(), "spiffe://ci/*");
    }

    #[test]
    fn subject_exact_is_string_equality() {
        let p = SubjectPattern::parse("spiffe://ci/org/deploy").unwrap();
        assert!(p.matches(&id("spiffe://ci/org/deploy")));
        assert!(!p.matches(&id("spiffe://ci/org/deploy2")));
        assert!(!p.matches(&id("spiffe://ci/org/Deploy")));
    }

    #[test]
    fn malformed_patterns() {
        assert_eq!(SubjectPattern::parse(""), Err(PatternError::Empty));
        assert!(matches!(
            SubjectPattern::parse("spiffe://ci/org*"),
            Err(PatternError::MisplacedWildcard(_))
        ));
        assert!(matches!(
            SubjectPattern::parse("spiffe://*/x"),
            Err(PatternError::MisplacedWildcard(_))
        ));
        assert!(matches!(
            SubjectPattern::parse("https://ci/x"),
            Err(PatternError::InvalidId(_))
        ));
        assert!(matches!(
            ResourcePattern::parse("s3://*/x"),
            Err(PatternError::MisplacedWildcard(_))
        ));
        assert_eq!(
            ResourcePattern::parse("s3://a b"),
            Err(PatternError::Whitespace)
        );
        assert_eq!(ResourcePattern::parse(""), Err(PatternError::Empty));
    }

    #[test]
    fn resource_prefix_and_wildcard() {
        let p = ResourcePattern::parse("s3://prod-*").unwrap();
        assert!(p.matches("s3://prod-release-artifacts"));
        assert!(!p.matches("s3://staging-release-artifacts"));
        assert!(ResourcePattern::parse("*").unwrap().matches("anything"));
    }

    proptest! {
        #[test]
        fn prefix_pattern_soundness(
            td in "[a-z]{1,4}",
            segs in prop::collection::vec("[a-z]{1,3}", 0..4),
            other_td in "[a-z]{1,4}",
            other in prop::collection::vec("[a-z]{1,3}", 0..4),
        ) {
            let base_path: String = segs.iter().map(|s| format!("/{s}")).collect();
            let pattern = SubjectPattern::parse(&format!("spiffe://{td}{base_path}/*")).unwrap();
            let prefix = format!("spiffe://{td}{base_path}/");
            let candidate_path: String = other.iter().map(|s| format!("/{s}")).collect();
            let candidate = SpiffeId::new(&other_td, &candidate_path).unwrap();
            prop_assert_eq!(pattern.matches(&candidate), candidate.to_string().starts_with(&prefix));
        }
    }
}
