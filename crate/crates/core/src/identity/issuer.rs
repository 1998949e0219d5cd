use std::collections::BTreeMap;
use std::time::Duration;

use ed25519_dalek::{Signer, SigningKey};
use thiserror::Error;

use super::{BundleKey, Claims, SpiffeId, TrustBundle, WorkloadToken};
use crate::Timestamp;

pub const DEFAULT_TOKEN_MAX_LIFETIME: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IssueError {
    #[error("unknown signing key {0:?}")]
    UnknownSigningKey(String),
    #[error("requested ttl {requested:?} exceeds the identity token maximum {max:?}")]
    TtlExceedsMax { requested: Duration, max: Duration },
    #[error("ttl must be at least one second")]
    ZeroTtl,
    #[error("subject {subject} is outside trust domain {trust_domain:?}")]
    SubjectOutsideDomain {
        subject: String,
        trust_domain: String,
    },
}

struct IssuerKey {
    signing: SigningKey,
    not_after: Timestamp,
}

/// Local stand-in for the identity plane: holds signing keys for one trust
/// domain and mints workload tokens.
pub struct LocalIssuer {
    trust_domain: String,
    keys: BTreeMap<String, IssuerKey>,
    max_lifetime: Duration,
}

impl LocalIssuer {
    pub fn new(trust_domain: &str) -> Self {
        LocalIssuer {
            trust_domain: trust_domain.to_ascii_lowercase(),
            keys: BTreeMap::new(),
            max_lifetime: DEFAULT_TOKEN_MAX_LIFETIME,
        }
    }

    pub fn with_max_lifetime(mut self, max_lifetime: Duration) -> Self {
        self.max_lifetime = max_lifetime;
        self
    }

    pub fn trust_domain(&self) -> &str {
        &self.trust_domain
    }

    /// Adds a signing key from a 32-byte Ed25519 seed.
    pub fn add_key(&mut self, key_id: &str, seed: [u8; 32], not_after: Timestamp) {
        self.keys.insert(
            key_id.to_owned(),
            IssuerKey {
                signing: SigningKey::from_bytes(&seed),
                not_after,
            },
        );
    }

    pub fn remove_key(&mut self, key_id: &str) -> bool {
        self.keys.remove(key_id).is_some()
    }

    /// The bundle a verifier needs to accept this issuer's tokens. `local`
    /// marks whether the verifying broker lives in this domain.
    pub fn bundle(&self, local: bool) -> TrustBundle {
        let keys = self
            .keys
            .iter()
            .map(|(id, k)| BundleKey {
                key_id: id.clone(),
                public_key: k.signing.verifying_key(),
                not_after: k.not_after,
            })
            .collect();
        TrustBundle::new(&self.trust_domain, keys, local).expect("issuer keys have unique ids")
    }

    pub fn issue_token(
        &self,
        key_id: &str,
        subject: &SpiffeId,
        audience: &str,
        claims: Claims,
        ttl: Duration,
        now: Timestamp,
    ) -> Result<WorkloadToken, IssueError> {
        let key = self
            .keys
            .get(key_id)
            .ok_or_else(|| IssueError::UnknownSigningKey(key_id.to_owned()))?;
        if subject.trust_domain() != self.trust_domain {
            return Err(IssueError::SubjectOutsideDomain {
                subject: subject.to_string(),
                trust_domain: self.trust_domain.clone(),
            });
        }
        if ttl.as_secs() == 0 {
            return Err(IssueError::ZeroTtl);
        }
        if ttl > self.max_lifetime {
            return Err(IssueError::TtlExceedsMax {
                requested: ttl,
                max: self.max_lifetime,
            });
        }
        let mut token = WorkloadToken {
            subject: subject.clone(),
            audience: audience.to_owned(),
            issued_at: now,
            expires_at: now + Duration::from_secs(ttl.as_secs()),
            claims,
            key_id: key_id.to_owned(),
            signature: Vec::new(),
        };
        token.signature = key.signing.sign(&token.signing_input()).to_bytes().to_vec();
        Ok(token)
    }
}

impl std::fmt::Debug for LocalIssuer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalIssuer")
            .field("trust_domain", &self.trust_domain)
            .field("key_ids", &self.keys.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{BundleStore, Verifier, VerifyError};

    const AUD: &str = "spiffe://ci/broker";

    fn setup() -> (LocalIssuer, BundleStore, SpiffeId) {
        let mut issuer = LocalIssuer::new("ci");
        issuer.add_key("ci-1", [1; 32], Timestamp::from_unix(1_000_000));
        let mut store = BundleStore::new();
        store.register(issuer.bundle(true));
        (
            issuer,
            store,
            SpiffeId::parse("spiffe://ci/org/deploy").unwrap(),
        )
    }

    #[test]
    fn ttl_echoed_into_validity_window() {
        let (issuer, _, id) = setup();
        let now = Timestamp::from_unix(5_000);
        let token = issuer
            .issue_token(
                "ci-1",
                &id,
                AUD,
                Claims::new(),
                Duration::from_secs(300),
                now,
            )
            .unwrap();
        assert_eq!(token.expires_at.unix() - token.issued_at.unix(), 300);
    }

    #[test]
    fn issue_then_verify() {
        let (issuer, store, id) = setup();
        let now = Timestamp::from_unix(5_000);
        let claims: Claims = [("environment".to_string(), "prod".to_string())].into();
        let token = issuer
            .issue_token(
                "ci-1",
                &id,
                AUD,
                claims.clone(),
                Duration::from_secs(300),
                now,
            )
            .unwrap();
        let verified = Verifier::new(AUD).verify(&token, now, &store).unwrap();
        assert_eq!(verified.subject, id);
        assert_eq!(verified.claims, claims);
    }

    #[test]
    fn ttl_beyond_max_rejected() {
        let (issuer, _, id) = setup();
        let err = issuer
            .issue_token(
                "ci-1",
                &id,
                AUD,
                Claims::new(),
                Duration::from_secs(86_400),
                Timestamp::EPOCH,
            )
            .unwrap_err();
        assert_eq!(
            err,
            IssueError::TtlExceedsMax {
                requested: Duration::from_secs(86_400),
                max: Duration::from_secs(3600)
            }
        );
    }

    #[test]
    fn unknown_key_and_foreign_subject() {
        let (issuer, _, id) = setup();
        assert_eq!(
            issuer
                .issue_token(
                    "nope",
                    &id,
                    AUD,
                    Claims::new(),
                    Duration::from_secs(60),
                    Timestamp::EPOCH
                )
                .unwrap_err(),
            IssueError::UnknownSigningKey("nope".into())
        );
        let foreign = SpiffeId::parse("spiffe://partner/job").unwrap();
        assert!(matches!(
            issuer.issue_token(
                "ci-1",
                &foreign,
                AUD,
                Claims::new(),
                Duration::from_secs(60),
                Timestamp::EPOCH
            ),
            Err(IssueError::SubjectOutsideDomain { .. })
        ));
    }

    #[test]
    fn verification_window_and_audience() {
        let (issuer, store, id) = setup();
        let t0 = Timestamp::from_unix(10_000);
        let token = issuer
            .issue_token("ci-1", &id, AUD, Claims::new(), Duration::from_secs(60), t0)
            .unwrap();
        let strict = Verifier::new(AUD).with_leeway(Duration::ZERO);
        assert!(strict.verify(&token, t0, &store).is_ok());
        assert!(strict
            .verify(&token, t0 + Duration::from_secs(59), &store)
            .is_ok());
        assert_eq!(
            strict.verify(&token, t0 + Duration::from_secs(60), &store),
            Err(VerifyError::TokenExpired)
        );
        assert_eq!(
            strict.verify(&token, t0 - Duration::from_secs(1), &store),
            Err(VerifyError::TokenNotYetValid)
        );
        // default leeway absorbs small skew
        let lenient = Verifier::new(AUD);
        assert!(lenient
            .verify(&token, t0 - Duration::from_secs(5), &store)
            .is_ok());
        assert!(lenient
            .verify(&token, t0 + Duration::from_secs(64), &store)
            .is_ok());
        assert_eq!(
            lenient.verify(&token, t0 + Duration::from_secs(65), &store),
            Err(VerifyError::TokenExpired)
        );
        assert!(matches!(
            Verifier::new("spiffe://other/broker").verify(&token, t0, &store),
            Err(VerifyError::AudienceMismatch { .. })
        ));
    }
}
