//! Test-side tooling for the acceptance suite: a random policy generator and
//! a naive policy oracle that shares no code with the broker's evaluator.

pub mod generate;
pub mod oracle;

pub use generate::{GenContext, GenRule, Generator};
pub use oracle::{naive_scan, Expected};
