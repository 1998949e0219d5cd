use std::time::Duration;

use ed25519_dalek::Signature;
use thiserror::Error;

use super::{BundleStore, Claims, SpiffeId, WorkloadToken, DEFAULT_TOKEN_MAX_LIFETIME};
use crate::Timestamp;

pub const DEFAULT_CLOCK_LEEWAY: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("no trust bundle registered for trust domain {0:?}")]
    UnknownTrustDomain(String),
    #[error("key id {0:?} not present in the trust bundle")]
    UnknownKeyId(String),
    #[error("bundle key {0:?} has expired")]
    KeyExpired(String),
    #[error("signature does not verify")]
    BadSignature,
    #[error("token expired")]
    TokenExpired,
    #[error("token not yet valid")]
    TokenNotYetValid,
    #[error("audience mismatch: expected {expected:?}, got {found:?}")]
    AudienceMismatch { expected: String, found: String },
    #[error("token validity window is empty or exceeds the maximum lifetime")]
    InvalidLifetime,
}

impl VerifyError {
    /// Stable kebab-case category used in audit records and API responses.
    pub fn category(&self) -> &'static str {
        match self {
            VerifyError::UnknownTrustDomain(_) => "unknown-trust-domain",
            VerifyError::UnknownKeyId(_) => "unknown-key-id",
            VerifyError::KeyExpired(_) => "key-expired",
            VerifyError::BadSignature => "bad-signature",
            VerifyError::TokenExpired => "token-expired",
            VerifyError::TokenNotYetValid => "token-not-yet-valid",
            VerifyError::AudienceMismatch { .. } => "audience-mismatch",
            VerifyError::InvalidLifetime => "invalid-lifetime",
        }
    }
}

/// The output of a successful verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedIdentity {
    pub subject: SpiffeId,
    pub claims: Claims,
}

/// Token verification settings for one broker.
#[derive(Debug, Clone)]
pub struct Verifier {
    pub audience: String,
    pub leeway: Duration,
    pub max_lifetime: Duration,
}

impl Verifier {
    pub fn new(audience: impl Into<String>) -> Self {
        Verifier {
            audience: audience.into(),
            leeway: DEFAULT_CLOCK_LEEWAY,
            max_lifetime: DEFAULT_TOKEN_MAX_LIFETIME,
        }
    }

    pub fn with_leeway(mut self, leeway: Duration) -> Self {
        self.leeway = leeway;
        self
    }

    pub fn with_max_lifetime(mut self, max_lifetime: Duration) -> Self {
        self.max_lifetime = max_lifetime;
        self
    }

    /// Verifies `token` against the bundle registered for the subject's trust
    /// domain. Bundle lookup is keyed by that domain only, so a key shared
    /// between two domains never lets one vouch for the other.
    pub fn verify(
        &self,
        token: &WorkloadToken,
        now: Timestamp,
        store: &BundleStore,
    ) -> Result<VerifiedIdentity, VerifyError> {
        let domain = token.subject.trust_domain();
        let bundle = store
            .get(domain)
            .ok_or_else(|| VerifyError::UnknownTrustDomain(domain.to_owned()))?;
        let key = bundle
            .key(&token.key_id)
            .ok_or_else(|| VerifyError::UnknownKeyId(token.key_id.clone()))?;
        if key.is_expired(now) {
            return Err(VerifyError::KeyExpired(key.key_id.clone()));
        }
        let signature =
            Signature::from_slice(&token.signature).map_err(|_| VerifyError::BadSignature)?;
        key.public_key
            .verify_strict(&token.signing_input(), &signature)
            .map_err(|_| VerifyError::BadSignature)?;

        if token.audience != self.audience {
            return Err(VerifyError::AudienceMismatch {
                expected: self.audience.clone(),
                found: token.audience.clone(),
            });
        }
        if token.expires_at <= token.issued_at
            || token.expires_at.saturating_since(token.issued_at) > self.max_lifetime
        {
            return Err(VerifyError::InvalidLifetime);
        }
        if now + self.leeway < token.issued_at {
            return Err(VerifyError::TokenNotYetValid);
        }
        if now >= token.expires_at + self.leeway {
            return Err(VerifyError::TokenExpired);
        }
        Ok(VerifiedIdentity {
            subject: token.subject.clone(),
            claims: token.claims.clone(),
        })
    }
}
