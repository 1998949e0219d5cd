use std::time::Duration;

use serde::Serialize;

/// Security measurements of one scenario run.
///
/// * `standing_privilege_count`: grants that stay usable while their holder
///   is not running. For static secrets this is every (identity, secret)
///   binding; for brokered runs it is the number of issued credentials that
///   verify at some second outside their holder job's interval.
/// * `max_exposure_window`: the longest time a usable secret sits with one
///   job. Static secrets are held for the job's full wall time; brokered
///   credentials for their lifetime.
/// * `blast_radius`: (environment, resource) targets an attacker who owns the
///   compromised job at the compromise instant can open with what that job
///   holds.
/// * `audit_coverage`: fraction of access events backed by an authorizing
///   record in a verified audit log. Accesses with static secrets have none.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioMetrics {
    pub standing_privilege_count: u64,
    #[serde(
        rename = "max_exposure_window_secs",
        with = "credbroker_core::time::duration_secs"
    )]
    pub max_exposure_window: Duration,
    pub blast_radius: u64,
    pub audit_coverage: f64,
}
