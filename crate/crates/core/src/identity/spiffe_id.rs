use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const SCHEME: &str = "spiffe://";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpiffeIdError {
    #[error("malformed scheme: SPIFFE IDs start with `spiffe://`")]
    MalformedScheme,
    #[error("empty trust domain")]
    EmptyTrustDomain,
    #[error("illegal character {ch:?} at byte {position}")]
    IllegalCharacter { ch: char, position: usize },
    #[error("illegal path segment {0:?}")]
    IllegalPathSegment(String),
}

/// A parsed workload identity: `spiffe://<trust_domain><path>`.
///
/// The trust domain is lowercase-normalized on parse; the path is kept
/// case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpiffeId {
    trust_domain: String,
    path: String,
}

impl SpiffeId {
    pub fn parse(text: &str) -> Result<Self, SpiffeIdError> {
        let rest = text
            .strip_prefix(SCHEME)
            .ok_or(SpiffeIdError::MalformedScheme)?;
        let (domain, path) = match rest.find('/') {
            Some(idx) => rest.split_at(idx),
            None => (rest, ""),
        };
        let trust_domain = validate_trust_domain(domain, SCHEME.len())?;
        validate_path(path, SCHEME.len() + domain.len())?;
        Ok(SpiffeId {
            trust_domain,
            path: path.to_owned(),
        })
    }

    /// Builds an id from its parts, applying the same validation as [`SpiffeId::parse`].
    pub fn new(trust_domain: &str, path: &str) -> Result<Self, SpiffeIdError> {
        let trust_domain = validate_trust_domain(trust_domain, 0)?;
        validate_path(path, 0)?;
        Ok(SpiffeId {
            trust_domain,
            path: path.to_owned(),
        })
    }

    pub fn trust_domain(&self) -> &str {
        &self.trust_domain
    }

    pub fn path(&self) -> &str {
        &self.path
    }
}

/// Validates a trust domain name and returns its lowercase form.
pub(crate) fn validate_trust_domain(domain: &str, offset: usize) -> Result<String, SpiffeIdError> {
    if domain.is_empty() {
        return Err(SpiffeIdError::EmptyTrustDomain);
    }
    let lowered = domain.to_ascii_lowercase();
    for (i, ch) in lowered.char_indices() {
        if !(ch.is_ascii_lowercase() || ch.is_ascii_digit() || matches!(ch, '.' | '-' | '_')) {
            // report the character as written, not the lowered one
            let original = domain[i..].chars().next().unwrap_or(ch);
            return Err(SpiffeIdError::IllegalCharacter {
                ch: original,
                position: offset + i,
            });
        }
    }
    Ok(lowered)
}

fn validate_path(path: &str, offset: usize) -> Result<(), SpiffeIdError> {
    if path.is_empty() {
        return Ok(());
    }
    if !path.starts_with('/') {
        return Err(SpiffeIdError::IllegalPathSegment(path.to_owned()));
    }
    for (i, ch) in path.char_indices() {
        let ok = ch.is_ascii_alphanumeric() || matches!(ch, '.' | '-' | '_' | '/');
        if !ok {
            return Err(SpiffeIdError::IllegalCharacter {
                ch,
                position: offset + i,
            });
        }
    }
    for segment in path[1..].split('/') {
        if segment.is_empty() || segment == "." || segment == ".." {
            return Err(SpiffeIdError::IllegalPathSegment(segment.to_owned()));
        }
    }
    Ok(())
}

impl fmt::Display for SpiffeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{SCHEME}{}{}", self.trust_domain, self.path)
    }
}

impl FromStr for SpiffeId {
    type Err = SpiffeIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SpiffeId::parse(s)
    }
}

impl Serialize for SpiffeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpiffeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        SpiffeId::parse(&text).map_err(serde::de::Error::custom)
    }
}
