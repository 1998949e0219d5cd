//! Workload identity: SPIFFE IDs, signed workload tokens and trust bundles.
//!
//! This module answers "which workload is making this request?" and nothing
//! else. Its public surface returns identities, tokens, bundles and errors;
//! access decisions live in [`crate::policy`].

mod bundle;
mod issuer;
mod spiffe_id;
mod token;
mod verify;

pub use bundle::{
    BundleDocument, BundleError, BundleKey, BundleKeyDocument, BundleStore, TrustBundle,
};
pub use issuer::{IssueError, LocalIssuer, DEFAULT_TOKEN_MAX_LIFETIME};
pub use spiffe_id::{SpiffeId, SpiffeIdError};
pub use token::{TokenFormatError, WorkloadToken, TOKEN_ALG};
pub use verify::{VerifiedIdentity, Verifier, VerifyError, DEFAULT_CLOCK_LEEWAY};

use std::collections::BTreeMap;

/// Attested attributes carried by a workload token (platform, environment, ...).
pub type Claims = BTreeMap<String, String>;
