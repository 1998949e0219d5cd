//! Just-in-time credential minting.
//!
//! A [`Minter`] turns an allow decision into a credential bound to one
//! (subject, resource, action) scope and a lifetime of at most
//! `min(requested, decision cap, global cap)`. Every credential carries a
//! keyed proof over all its other fields, so the broker (or a resource server
//! holding the minting key) can check it without any lookup.
//!
//! Serialized envelope: the canonical JSON encoding of [`Credential`], i.e.
//! compact JSON with keys in byte order:
//! `credential_id, decision_ref, expires_at, kind, not_before, proof,
//! proof_alg, scope{action, resource, subject}, secret_material`.
//! `proof` is base64url (unpadded) of HMAC-SHA256 over the same encoding with
//! the `proof` key removed.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use hmac::{Hmac, Mac};
use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::canonical;
use crate::identity::SpiffeId;
use crate::policy::{Decision, Outcome};
use crate::Timestamp;

type HmacSha256 = Hmac<Sha256>;

pub const PROOF_ALG: &str = "hmac-sha256";

const SESSION_TOKEN_PREFIX: &str = "bst1";
const SESSION_TOKEN_DOMAIN: &[u8] = b"credbroker/session-token\0";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MintError {
    #[error("minting requires an allow decision, got {0:?}")]
    DenyDecision(Outcome),
    #[error("credential lifetime must be at least one second")]
    ZeroTtl,
    #[error("unknown credential kind {0:?}")]
    UnknownKind(String),
    #[error("scope field {0} is empty")]
    EmptyScope(ScopeField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeField {
    Subject,
    Resource,
    Action,
}

impl fmt::Display for ScopeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScopeField::Subject => "subject",
            ScopeField::Resource => "resource",
            ScopeField::Action => "action",
        })
    }
}

/// Why a presented credential was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Rejection {
    /// The proof does not verify, or the envelope is not a well-formed credential.
    #[error("bad proof")]
    BadProof,
    #[error("credential expired")]
    Expired,
    #[error("credential not yet valid")]
    NotYetValid,
    #[error("scope mismatch on {0}")]
    ScopeMismatch(ScopeField),
}

impl Rejection {
    pub fn category(&self) -> &'static str {
        match self {
            Rejection::BadProof => "bad-proof",
            Rejection::Expired => "expired",
            Rejection::NotYetValid => "not-yet-valid",
            Rejection::ScopeMismatch(_) => "scope-mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LeaseError {
    #[error("lease unknown or already redeemed")]
    NotRedeemable,
    #[error("lease expired")]
    Expired,
}

/// The broker's symmetric minting key.
#[derive(Clone, PartialEq, Eq)]
pub struct MintingKey([u8; 32]);

impl MintingKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        MintingKey(bytes)
    }

    pub fn generate() -> Self {
        let mut bytes = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut bytes);
        MintingKey(bytes)
    }

    /// Accepts the standard base64 encoding of 32 bytes.
    pub fn from_base64(text: &str) -> Option<Self> {
        let raw = STANDARD.decode(text.trim()).ok()?;
        raw.as_slice().try_into().ok().map(MintingKey)
    }

    pub fn to_base64(&self) -> String {
        STANDARD.encode(self.0)
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.0).expect("hmac accepts any key length")
    }
}

impl fmt::Debug for MintingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MintingKey(<redacted>)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialKind {
    /// Self-contained signed bearer token.
    SessionToken,
    /// Cloud-style temporary credential triple.
    StsLike,
    /// Opaque lease id redeemable exactly once.
    SecretLease,
}

impl CredentialKind {
    pub const ALL: [CredentialKind; 3] = [
        CredentialKind::SessionToken,
        CredentialKind::StsLike,
        CredentialKind::SecretLease,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CredentialKind::SessionToken => "session_token",
            CredentialKind::StsLike => "sts_like",
            CredentialKind::SecretLease => "secret_lease",
        }
    }
}

impl FromStr for CredentialKind {
    type Err = MintError;

    fn from_str(s: &str) -> Result<Self, MintError> {
        CredentialKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| MintError::UnknownKind(s.to_owned()))
    }
}

impl fmt::Display for CredentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialScope {
    pub subject: SpiffeId,
    pub resource: String,
    pub action: String,
}

impl CredentialScope {
    pub fn new(subject: SpiffeId, resource: impl Into<String>, action: impl Into<String>) -> Self {
        CredentialScope {
            subject,
            resource: resource.into(),
            action: action.into(),
        }
    }

    /// The first field in which `self` differs from `other`.
    pub fn first_difference(&self, other: &CredentialScope) -> Option<ScopeField> {
        if self.subject != other.subject {
            Some(ScopeField::Subject)
        } else if self.resource != other.resource {
            Some(ScopeField::Resource)
        } else if self.action != other.action {
            Some(ScopeField::Action)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Credential {
    pub credential_id: String,
    pub kind: CredentialKind,
    pub scope: CredentialScope,
    pub not_before: Timestamp,
    pub expires_at: Timestamp,
    /// Audit sequence number of the event that authorized this credential.
    pub decision_ref: u64,
    pub secret_material: String,
    pub proof_alg: String,
    #[serde(with = "b64url")]
    pub proof: Vec<u8>,
}

#[derive(Serialize)]
struct ProofInput<'a> {
    credential_id: &'a str,
    kind: CredentialKind,
    scope: &'a CredentialScope,
    not_before: Timestamp,
    expires_at: Timestamp,
    decision_ref: u64,
    secret_material: &'a str,
    proof_alg: &'a str,
}

impl Credential {
    pub fn lifetime(&self) -> Duration {
        self.expires_at.saturating_since(self.not_before)
    }

    fn proof_input(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(&ProofInput {
            credential_id: &self.credential_id,
            kind: self.kind,
            scope: &self.scope,
            not_before: self.not_before,
            expires_at: self.expires_at,
            decision_ref: self.decision_ref,
            secret_material: &self.secret_material,
            proof_alg: &self.proof_alg,
        })
        .expect("credential fields serialize")
    }

    /// The canonical envelope.
    pub fn to_envelope(&self) -> String {
        canonical::to_canonical_string(self).expect("credential serializes")
    }

    /// Parses an envelope, requiring it to be in canonical form.
    pub fn from_envelope(text: &str) -> Option<Credential> {
        let credential: Credential = serde_json::from_str(text).ok()?;
        (credential.to_envelope() == text).then_some(credential)
    }
}

mod b64url {
    use base64::engine::general_purpose::URL_SAFE_NO_PAD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&URL_SAFE_NO_PAD.encode(value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(deserializer)?;
        URL_SAFE_NO_PAD
            .decode(text)
            .map_err(serde::de::Error::custom)
    }
}

/// Checks a credential presented for `presented` at `now`.
///
/// Accepts iff the proof verifies under `key`, `now` lies in
/// `[not_before, expires_at)` and the presented scope equals the minted one
/// field for field.
pub fn verify_credential(
    credential: &Credential,
    presented: &CredentialScope,
    now: Timestamp,
    key: &MintingKey,
) -> Result<(), Rejection> {
    if credential.proof_alg != PROOF_ALG {
        return Err(Rejection::BadProof);
    }
    let mut mac = key.mac();
    mac.update(&credential.proof_input());
    mac.verify_slice(&credential.proof)
        .map_err(|_| Rejection::BadProof)?;
    if now < credential.not_before {
        return Err(Rejection::NotYetValid);
    }
    if now >= credential.expires_at {
        return Err(Rejection::Expired);
    }
    match credential.scope.first_difference(presented) {
        Some(field) => Err(Rejection::ScopeMismatch(field)),
        None => Ok(()),
    }
}

/// [`verify_credential`] over the serialized envelope. An envelope that does
/// not parse, or is not canonical, is rejected as [`Rejection::BadProof`].
pub fn verify_envelope(
    envelope: &str,
    presented: &CredentialScope,
    now: Timestamp,
    key: &MintingKey,
) -> Result<Credential, Rejection> {
    let credential = Credential::from_envelope(envelope).ok_or(Rejection::BadProof)?;
    verify_credential(&credential, presented, now, key)?;
    Ok(credential)
}

#[derive(Debug)]
struct Lease {
    scope: CredentialScope,
    expires_at: Timestamp,
}

/// Issues credentials under the broker's minting key.
///
/// State is limited to the key, an id counter, the nonce generator and the
/// table of outstanding single-use leases (each dies with its credential).
pub struct Minter {
    key: MintingKey,
    global_cap: Duration,
    counter: AtomicU64,
    rng: Mutex<ChaCha20Rng>,
    leases: Mutex<HashMap<String, Lease>>,
}

impl Minter {
    pub fn new(key: MintingKey, global_cap: Duration) -> Self {
        Self::with_rng(key, global_cap, ChaCha20Rng::from_entropy())
    }

    /// Deterministic nonces, for reproducible simulation runs.
    pub fn with_seed(key: MintingKey, global_cap: Duration, seed: u64) -> Self {
        Self::with_rng(key, global_cap, ChaCha20Rng::seed_from_u64(seed))
    }

    fn with_rng(key: MintingKey, global_cap: Duration, rng: ChaCha20Rng) -> Self {
        Minter {
            key,
            global_cap,
            counter: AtomicU64::new(0),
            rng: Mutex::new(rng),
            leases: Mutex::new(HashMap::new()),
        }
    }

    pub fn key(&self) -> &MintingKey {
        &self.key
    }

    pub fn global_cap(&self) -> Duration {
        self.global_cap
    }

    fn random_bytes<const N: usize>(&self) -> [u8; N] {
        let mut buf = [0u8; N];
        self.rng.lock().fill_bytes(&mut buf);
        buf
    }

    pub fn mint(
        &self,
        kind: CredentialKind,
        scope: CredentialScope,
        requested_ttl: Duration,
        decision: &Decision,
        decision_ref: u64,
        now: Timestamp,
    ) -> Result<Credential, MintError> {
        if decision.outcome != Outcome::Allow {
            return Err(MintError::DenyDecision(decision.outcome));
        }
        if scope.resource.is_empty() {
            return Err(MintError::EmptyScope(ScopeField::Resource));
        }
        if scope.action.is_empty() {
            return Err(MintError::EmptyScope(ScopeField::Action));
        }
        let lifetime = requested_ttl
            .min(decision.effective_obligations.ttl_cap)
            .min(self.global_cap)
            .as_secs();
        if lifetime == 0 {
            return Err(MintError::ZeroTtl);
        }
        let not_before = now;
        let expires_at = now + Duration::from_secs(lifetime);
        let seq = self.counter.fetch_add(1, Ordering::Relaxed);
        let credential_id = format!("cred-{seq:08x}-{}", hex::encode(self.random_bytes::<8>()));
        let secret_material = match kind {
            CredentialKind::SessionToken => self.session_token(&credential_id, &scope, expires_at),
            CredentialKind::StsLike => self.sts_material(&credential_id, &scope, expires_at),
            CredentialKind::SecretLease => {
                let lease_id = format!("lease-{}", hex::encode(self.random_bytes::<16>()));
                self.leases.lock().insert(
                    lease_id.clone(),
                    Lease {
                        scope: scope.clone(),
                        expires_at,
                    },
                );
                lease_id
            }
        };
        let mut credential = Credential {
            credential_id,
            kind,
            scope,
            not_before,
            expires_at,
            decision_ref,
            secret_material,
            proof_alg: PROOF_ALG.to_owned(),
            proof: Vec::new(),
        };
        let mut mac = self.key.mac();
        mac.update(&credential.proof_input());
        credential.proof = mac.finalize().into_bytes().to_vec();
        Ok(credential)
    }

    pub fn verify(
        &self,
        credential: &Credential,
        presented: &CredentialScope,
        now: Timestamp,
    ) -> Result<(), Rejection> {
        verify_credential(credential, presented, now, &self.key)
    }

    fn session_token(
        &self,
        credential_id: &str,
        scope: &CredentialScope,
        expires_at: Timestamp,
    ) -> String {
        let body = canonical::to_canonical_bytes(&serde_json::json!({
            "cid": credential_id,
            "exp": expires_at,
            "scope": scope,
        }))
        .expect("session body serializes");
        let mut mac = self.key.mac();
        mac.update(SESSION_TOKEN_DOMAIN);
        mac.update(&body);
        format!(
            "{SESSION_TOKEN_PREFIX}.{}.{}",
            URL_SAFE_NO_PAD.encode(&body),
            URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes())
        )
    }

    fn sts_material(
        &self,
        credential_id: &str,
        scope: &CredentialScope,
        expires_at: Timestamp,
    ) -> String {
        let access_key_id = format!("ASIA{}", hex::encode_upper(self.random_bytes::<8>()));
        let secret_access_key: String = STANDARD.encode(self.random_bytes::<30>());
        let session_token = self.session_token(credential_id, scope, expires_at);
        canonical::to_canonical_string(&serde_json::json!({
            "AccessKeyId": access_key_id,
            "SecretAccessKey": secret_access_key,
            "SessionToken": session_token,
            "Expiration": expires_at.to_rfc3339(),
        }))
        .expect("sts material serializes")
    }

    /// Redeems a `secret_lease` credential's lease id. Succeeds at most once.
    pub fn redeem_lease(
        &self,
        lease_id: &str,
        now: Timestamp,
    ) -> Result<CredentialScope, LeaseError> {
        let lease = self
            .leases
            .lock()
            .remove(lease_id)
            .ok_or(LeaseError::NotRedeemable)?;
        if now >= lease.expires_at {
            return Err(LeaseError::Expired);
        }
        Ok(lease.scope)
    }

    /// Drops a lease that will never be handed out.
    pub fn revoke_lease(&self, lease_id: &str) -> bool {
        self.leases.lock().remove(lease_id).is_some()
    }

    /// Forgets leases whose credential has expired.
    pub fn purge_expired_leases(&self, now: Timestamp) -> usize {
        let mut leases = self.leases.lock();
        let before = leases.len();
        leases.retain(|_, l| now < l.expires_at);
        before - leases.len()
    }

    pub fn outstanding_leases(&self) -> usize {
        self.leases.lock().len()
    }

    pub fn minted_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

impl fmt::Debug for Minter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Minter")
            .field("global_cap", &self.global_cap)
            .field("minted", &self.minted_count())
            .field("outstanding_leases", &self.outstanding_leases())
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{EffectiveObligations, PolicyVersion};

    fn decision(outcome: Outcome, cap: u64) -> Decision {
        Decision {
            outcome,
            matched_rule_ids: if outcome == Outcome::Deny {
                vec![]
            } else {
                vec!["r".into()]
            },
            effective_obligations: EffectiveObligations {
                approval_required: outcome == Outcome::PendingApproval,
                ttl_cap: Duration::from_secs(cap),
            },
            evaluated_at: Timestamp::from_unix(0),
            policy_version: PolicyVersion::of_text(""),
        }
    }

    fn scope() -> CredentialScope {
        CredentialScope::new(
            SpiffeId::parse("spiffe://ci/org/deploy").unwrap(),
            "s3://prod-release-artifacts",
            "write",
        )
    }

    fn minter() -> Minter {
        Minter::with_seed(MintingKey::from_bytes([9; 32]), Duration::from_secs(900), 1)
    }

    #[test]
    fn lifetime_clamped_to_decision_cap() {
        let now = Timestamp::from_unix(1_000);
        let c = minter()
            .mint(
                CredentialKind::SessionToken,
                scope(),
                Duration::from_secs(3600),
                &decision(Outcome::Allow, 900),
                3,
                now,
            )
            .unwrap();
        assert_eq!(c.lifetime(), Duration::from_secs(900));
        assert_eq!(c.not_before, now);
        assert_eq!(c.decision_ref, 3);
    }

    #[test]
    fn lifetime_follows_smaller_request() {
        let c = minter()
            .mint(
                CredentialKind::SessionToken,
                scope(),
                Duration::from_secs(60),
                &decision(Outcome::Allow, 900),
                0,
                Timestamp::EPOCH,
            )
            .unwrap();
        assert_eq!(c.lifetime(), Duration::from_secs(60));
    }

    #[test]
    fn refuses_without_allow() {
        let m = minter();
        for outcome in [Outcome::Deny, Outcome::PendingApproval] {
            assert_eq!(
                m.mint(
                    CredentialKind::SessionToken,
                    scope(),
                    Duration::from_secs(60),
                    &decision(outcome, 900),
                    0,
                    Timestamp::EPOCH
                ),
                Err(MintError::DenyDecision(outcome))
            );
        }
        assert_eq!(
            m.mint(
                CredentialKind::SessionToken,
                scope(),
                Duration::ZERO,
                &decision(Outcome::Allow, 900),
                0,
                Timestamp::EPOCH
            ),
            Err(MintError::ZeroTtl)
        );
        assert_eq!(
            "vault".parse::<CredentialKind>(),
            Err(MintError::UnknownKind("vault".into()))
        );
    }

    #[test]
    fn scope_mismatch_reports_field() {
        let m = minter();
        let now = Timestamp::from_unix(10);
        let c = m
            .mint(
                CredentialKind::SessionToken,
                scope(),
                Duration::from_secs(60),
                &decision(Outcome::Allow, 900),
                0,
                now,
            )
            .unwrap();
        assert_eq!(m.verify(&c, &scope(), now), Ok(()));
        let mut read = scope();
        read.action = "read".into();
        assert_eq!(
            m.verify(&c, &read, now),
            Err(Rejection::ScopeMismatch(ScopeField::Action))
        );
    }

    #[test]
    fn expiry_boundary() {
        let m = minter();
        let now = Timestamp::from_unix(10);
        let c = m
            .mint(
                CredentialKind::StsLike,
                scope(),
                Duration::from_secs(60),
                &decision(Outcome::Allow, 900),
                0,
                now,
            )
            .unwrap();
        assert_eq!(
            m.verify(&c, &scope(), c.expires_at - Duration::from_secs(1)),
            Ok(())
        );
        assert_eq!(
            m.verify(&c, &scope(), c.expires_at),
            Err(Rejection::Expired)
        );
        assert_eq!(
            m.verify(&c, &scope(), now - Duration::from_secs(1)),
            Err(Rejection::NotYetValid)
        );
    }

    #[test]
    fn sts_material_shape() {
        let c = minter()
            .mint(
                CredentialKind::StsLike,
                scope(),
                Duration::from_secs(60),
                &decision(Outcome::Allow, 900),
                0,
                Timestamp::EPOCH,
            )
            .unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.secret_material).unwrap();
        assert!(v["AccessKeyId"].as_str().unwrap().starts_with("ASIA"));
        assert_eq!(v["SecretAccessKey"].as_str().unwrap().len(), 40);
        assert!(v["SessionToken"].as_str().unwrap().starts_with("bst1."));
        assert_eq!(v["Expiration"], "1970-01-01T00:01:00Z");
    }

    #[test]
    fn lease_redeemable_once() {
        let m = minter();
        let now = Timestamp::from_unix(10);
        let c = m
            .mint(
                CredentialKind::SecretLease,
                scope(),
                Duration::from_secs(60),
                &decision(Outcome::Allow, 900),
                0,
                now,
            )
            .unwrap();
        assert!(c.secret_material.starts_with("lease-"));
        assert_eq!(m.redeem_lease(&c.secret_material, now), Ok(scope()));
        assert_eq!(
            m.redeem_lease(&c.secret_material, now),
            Err(LeaseError::NotRedeemable)
        );
        assert_eq!(m.outstanding_leases(), 0);
    }

    #[test]
    fn expired_leases_purged() {
        let m = minter();
        let now = Timestamp::from_unix(10);
        let c = m
            .mint(
                CredentialKind::SecretLease,
                scope(),
                Duration::from_secs(60),
                &decision(Outcome::Allow, 900),
                0,
                now,
            )
            .unwrap();
        assert_eq!(m.purge_expired_leases(now), 0);
        assert_eq!(m.purge_expired_leases(c.expires_at), 1);
        assert_eq!(
            m.redeem_lease(&c.secret_material, now),
            Err(LeaseError::NotRedeemable)
        );
    }

    #[test]
    fn envelope_round_trip_and_field_order() {
        let c = minter()
            .mint(
                CredentialKind::SessionToken,
                scope(),
                Duration::from_secs(60),
                &decision(Outcome::Allow, 900),
                7,
                Timestamp::EPOCH,
            )
            .unwrap();
        let env = c.to_envelope();
        assert_eq!(Credential::from_envelope(&env), Some(c.clone()));
        let keys = [
            "\"credential_id\"",
            "\"decision_ref\"",
            "\"expires_at\"",
            "\"kind\"",
            "\"not_before\"",
            "\"proof\"",
            "\"proof_alg\"",
            "\"scope\"",
            "\"secret_material\"",
        ];
        let positions: Vec<usize> = keys.iter().map(|k| env.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{env}");
    }

    #[test]
    fn ids_unique() {
        let m = minter();
        let ids: std::collections::HashSet<_> = (0..200)
            .map(|_| {
                m.mint(
                    CredentialKind::SessionToken,
                    scope(),
                    Duration::from_secs(60),
                    &decision(Outcome::Allow, 900),
                    0,
                    Timestamp::EPOCH,
                )
                .unwrap()
                .credential_id
            })
            .collect();
        assert_eq!(ids.len(), 200);
    }
}
