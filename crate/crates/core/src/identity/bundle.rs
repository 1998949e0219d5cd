use std::collections::{BTreeMap, HashSet};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::spiffe_id::validate_trust_domain;
use super::SpiffeIdError;
use crate::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BundleError {
    #[error("empty trust domain")]
    EmptyTrustDomain,
    #[error("invalid trust domain: {0}")]
    InvalidTrustDomain(SpiffeIdError),
    #[error("duplicate key id {0:?}")]
    DuplicateKeyId(String),
    #[error("key {key_id:?}: {reason}")]
    InvalidKey { key_id: String, reason: String },
    #[error("bundle document: {0}")]
    Format(String),
}

/// One verification key in a trust bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleKey {
    pub key_id: String,
    pub public_key: VerifyingKey,
    pub not_after: Timestamp,
}

impl BundleKey {
    pub fn is_expired(&self, now: Timestamp) -> bool {
        now >= self.not_after
    }
}

/// The public keys by which tokens from one trust domain are verified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustBundle {
    trust_domain: String,
    keys: Vec<BundleKey>,
    local: bool,
}

impl TrustBundle {
    pub fn new(trust_domain: &str, keys: Vec<BundleKey>, local: bool) -> Result<Self, BundleError> {
        if trust_domain.is_empty() {
            return Err(BundleError::EmptyTrustDomain);
        }
        let trust_domain =
            validate_trust_domain(trust_domain, 0).map_err(BundleError::InvalidTrustDomain)?;
        let mut seen = HashSet::new();
        for key in &keys {
            if !seen.insert(key.key_id.as_str()) {
                return Err(BundleError::DuplicateKeyId(key.key_id.clone()));
            }
        }
        Ok(TrustBundle {
            trust_domain,
            keys,
            local,
        })
    }

    pub fn trust_domain(&self) -> &str {
        &self.trust_domain
    }

    pub fn keys(&self) -> &[BundleKey] {
        &self.keys
    }

    /// True for the broker's own domain, false for federated peers.
    pub fn is_local(&self) -> bool {
        self.local
    }

    pub fn key(&self, key_id: &str) -> Option<&BundleKey> {
        self.keys.iter().find(|k| k.key_id == key_id)
    }

    /// A bundle is usable while it holds at least one unexpired key.
    pub fn is_usable(&self, now: Timestamp) -> bool {
        self.keys.iter().any(|k| !k.is_expired(now))
    }

    /// Parses the on-disk bundle document (TOML).
    ///
    /// ```toml
    /// trust_domain = "partner"
    /// local = false
    ///
    /// [[keys]]
    /// key_id = "partner-1"
    /// public_key = "<base64 Ed25519 public key>"
    /// not_after = "2027-01-01T00:00:00Z"
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, BundleError> {
        let doc: BundleDocument =
            toml::from_str(text).map_err(|e| BundleError::Format(e.message().to_owned()))?;
        doc.try_into()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&BundleDocument::from(self)).expect("bundle document serializes")
    }

    pub fn to_document(&self) -> BundleDocument {
        BundleDocument::from(self)
    }
}

/// Serializable form of a [`TrustBundle`], shared by the bundle file and the
/// admin endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleDocument {
    pub trust_domain: String,
    #[serde(default)]
    pub local: bool,
    #[serde(default)]
    pub keys: Vec<BundleKeyDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleKeyDocument {
    pub key_id: String,
    pub public_key: String,
    pub not_after: String,
}

impl TryFrom<BundleDocument> for TrustBundle {
    type Error = BundleError;

    fn try_from(doc: BundleDocument) -> Result<Self, BundleError> {
        let keys = doc
            .keys
            .into_iter()
            .map(|k| {
                let invalid = |reason: &str| BundleError::InvalidKey {
                    key_id: k.key_id.clone(),
                    reason: reason.to_owned(),
                };
                let raw = STANDARD
                    .decode(k.public_key.trim())
                    .map_err(|_| invalid("public_key is not base64"))?;
                let bytes: [u8; 32] = raw
                    .as_slice()
                    .try_into()
                    .map_err(|_| invalid("public_key must be 32 bytes"))?;
                let public_key = VerifyingKey::from_bytes(&bytes)
                    .map_err(|_| invalid("public_key is not an Ed25519 point"))?;
                let not_after = Timestamp::parse_rfc3339(&k.not_after)
                    .ok_or_else(|| invalid("not_after is not an RFC 3339 timestamp"))?;
                Ok(BundleKey {
                    key_id: k.key_id,
                    public_key,
                    not_after,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        TrustBundle::new(&doc.trust_domain, keys, doc.local)
    }
}

impl From<&TrustBundle> for BundleDocument {
    fn from(bundle: &TrustBundle) -> Self {
        BundleDocument {
            trust_domain: bundle.trust_domain.clone(),
            local: bundle.local,
            keys: bundle
                .keys
                .iter()
                .map(|k| BundleKeyDocument {
                    key_id: k.key_id.clone(),
                    public_key: STANDARD.encode(k.public_key.as_bytes()),
                    not_after: k.not_after.to_rfc3339(),
                })
                .collect(),
        }
    }
}

/// Exactly one bundle per trust domain.
#[derive(Debug, Clone, Default)]
pub struct BundleStore {
    bundles: BTreeMap<String, TrustBundle>,
}

impl BundleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs `bundle`, replacing any prior bundle for its domain. Registering
    /// a bundle with no keys is how trust in a domain is withdrawn.
    pub fn register(&mut self, bundle: TrustBundle) -> Option<TrustBundle> {
        self.bundles.insert(bundle.trust_domain.clone(), bundle)
    }

    pub fn get(&self, trust_domain: &str) -> Option<&TrustBundle> {
        self.bundles.get(trust_domain)
    }

    pub fn trust_domains(&self) -> impl Iterator<Item = &str> {
        self.bundles.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }
}
