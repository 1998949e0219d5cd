//! Core of the credential broker.
//!
//! The crate is split along the identity/access boundary:
//!
//! * [`identity`] parses SPIFFE IDs, verifies workload tokens against trust
//!   bundles and manages federated bundles. It never makes access decisions.
//! * [`policy`] evaluates default-deny attribute rules over an already
//!   verified identity. It never looks at token signatures.
//! * [`minting`] turns an allow decision into a short-lived, scope-bound
//!   credential and verifies credentials presented back.
//! * [`audit`] is the append-only hash chain every decision lands in.
//! * [`broker`] wires the pipeline together and owns the approval queue and
//!   the decision cache.

pub mod audit;
pub mod broker;
pub mod canonical;
pub mod identity;
pub mod minting;
pub mod policy;
pub mod time;

pub use time::Timestamp;
