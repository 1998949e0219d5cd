//! Desk-scale comparison of CI/CD access models.
//!
//! Four static-secret models (inline injection, static role mapping, global
//! secrets mounts, cross-environment reuse) are simulated by their access
//! rule; the brokered model runs a real in-process broker on a logical
//! clock. Every run yields the same four metrics, see [`ScenarioMetrics`].

pub mod builtin;
pub mod metrics;
pub mod report;
pub mod run;
pub mod scenario;

pub use metrics::ScenarioMetrics;
pub use report::{render_json, render_table, ReportError};
pub use run::{run_scenario, run_with_audit, RunError, RunOutput, TraceEvent};
pub use scenario::{Model, Scenario, ScenarioError};
