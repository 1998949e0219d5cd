//! Executes a scenario on a logical clock and measures it.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::time::Duration;

use credbroker_core::audit::{AuditError, AuditLog, EventKind};
use credbroker_core::broker::{AccessRequest, Broker, BrokerResult, BrokerSettings, Verdict};
use credbroker_core::identity::LocalIssuer;
use credbroker_core::minting::{Credential, CredentialScope, MintingKey};
use credbroker_core::Timestamp;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::metrics::ScenarioMetrics;
use crate::scenario::{ApproverVerdict, Job, Model, Scenario, Secret, Target};

/// Wall-clock instant of simulated second zero.
pub const TIMELINE_ORIGIN: Timestamp = Timestamp::from_unix(1_767_225_600);
pub const AUDIENCE: &str = "credbroker";
const TOKEN_TTL: Duration = Duration::from_secs(300);
const APPROVER: &str = "scripted-approver";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("audit log: {0}")]
    Audit(#[from] AuditError),
    #[error("broker setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    /// Simulated seconds since the start of the timeline.
    pub t: u64,
    pub job: Option<String>,
    pub event: &'static str,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub scenario: Model,
    pub seed: u64,
    pub metrics: ScenarioMetrics,
    pub trace: Vec<TraceEvent>,
}

pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    run_with_audit(scenario, seed, AuditLog::in_memory())
}

/// Like [`run_scenario`]; brokered runs write their audit trail to `audit`.
pub fn run_with_audit(
    scenario: &Scenario,
    seed: u64,
    audit: AuditLog,
) -> Result<RunOutput, RunError> {
    let (metrics, mut trace) = match scenario.model {
        Model::Brokered => run_brokered(scenario, seed, audit)?,
        _ => run_static(scenario),
    };
    // stable: same-instant events keep their causal order
    trace.sort_by_key(|e| e.t);
    Ok(RunOutput {
        scenario: scenario.model,
        seed,
        metrics,
        trace,
    })
}

fn coverage(covered: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        covered as f64 / total as f64
    }
}

fn event(t: u64, job: Option<&Job>, name: &'static str, detail: Value) -> TraceEvent {
    TraceEvent {
        t,
        job: job.map(|j| j.name.clone()),
        event: name,
        detail,
    }
}

fn holds(model: Model, secret: &Secret, job: &Job) -> bool {
    model == Model::GlobalSecretsMount || secret.holders.includes(&job.identity)
}

/// The anti-pattern models: static secrets, granted by configuration.
fn run_static(s: &Scenario) -> (ScenarioMetrics, Vec<TraceEvent>) {
    let identities = s.identities();
    let standing: usize = s
        .secrets
        .iter()
        .map(|secret| {
            identities
                .iter()
                .filter(|id| s.model == Model::GlobalSecretsMount || secret.holders.includes(id))
                .count()
        })
        .sum();

    let mut trace = Vec::new();
    let mut exposure = 0;
    let mut accesses = 0;
    for job in &s.jobs {
        let held: Vec<&Secret> = s
            .secrets
            .iter()
            .filter(|sec| holds(s.model, sec, job))
            .collect();
        let ids: Vec<&str> = held.iter().map(|sec| sec.id.as_str()).collect();
        trace.push(event(
            job.start,
            Some(job),
            "job_start",
            json!({ "secrets_loaded": ids }),
        ));
        if !held.is_empty() {
            // loaded at start, usable until the job exits
            exposure = exposure.max(job.wall_time);
        }
        for access in &job.accesses {
            accesses += 1;
            let used = held
                .iter()
                .find(|sec| sec.unlocks.iter().any(|t| t.resource == access.resource));
            trace.push(event(
                job.start + access.at,
                Some(job),
                if used.is_some() {
                    "access"
                } else {
                    "access_failed"
                },
                json!({
                    "resource": access.resource,
                    "action": access.action,
                    "secret": used.map(|sec| sec.id.as_str()),
                    "audited": false,
                }),
            ));
        }
        trace.push(event(
            job.end(),
            Some(job),
            "job_end",
            json!({ "secrets_held_secs": if held.is_empty() { 0 } else { job.wall_time } }),
        ));
    }

    let mut blast = 0;
    if let Some(c) = &s.compromise {
        let job = &s.jobs[c.job];
        let reachable: BTreeSet<&Target> = s
            .secrets
            .iter()
            .filter(|sec| holds(s.model, sec, job))
            .flat_map(|sec| sec.unlocks.iter())
            .collect();
        blast = reachable.len();
        trace.push(event(
            job.start + c.at,
            Some(job),
            "compromise",
            json!({ "reachable": reachable.iter().map(ToString::to_string).collect::<Vec<_>>() }),
        ));
    }

    let metrics = ScenarioMetrics {
        standing_privilege_count: standing as u64,
        max_exposure_window: Duration::from_secs(exposure),
        blast_radius: blast as u64,
        audit_coverage: coverage(0, accesses),
    };
    (metrics, trace)
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Step {
    Access {
        job: usize,
        access: usize,
    },
    Verdict {
        job: usize,
        access: usize,
        request_id: String,
        decision_seq: u64,
    },
}

/// Instants at which held credentials are checked for validity outside their job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sweep {
    /// Both sides of every job boundary and credential issue/expiry instant.
    Edges,
    /// Every simulated second; slow, kept to cross-check `Edges`.
    #[cfg_attr(not(test), allow(dead_code))]
    EverySecond,
}

fn run_brokered(
    s: &Scenario,
    seed: u64,
    audit: AuditLog,
) -> Result<(ScenarioMetrics, Vec<TraceEvent>), RunError> {
    run_brokered_with(s, seed, audit, Sweep::Edges)
}

/// The brokered model, driving a real broker instance.
fn run_brokered_with(
    s: &Scenario,
    seed: u64,
    audit: AuditLog,
    sweep: Sweep,
) -> Result<(ScenarioMetrics, Vec<TraceEvent>), RunError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let key = MintingKey::from_bytes(rng.gen());
    let settings = BrokerSettings::new(AUDIENCE);
    let cap = settings.global_ttl_cap;
    let broker = Broker::with_seed(settings, key, audit, rng.next_u64());

    let mut issuers: BTreeMap<String, LocalIssuer> = BTreeMap::new();
    for id in s.identities() {
        issuers
            .entry(id.trust_domain().to_owned())
            .or_insert_with(|| {
                let mut issuer = LocalIssuer::new(id.trust_domain());
                issuer.add_key(
                    "k1",
                    rng.gen(),
                    TIMELINE_ORIGIN + Duration::from_secs(s.timeline_end() + 86_400),
                );
                issuer
            });
    }
    for issuer in issuers.values() {
        broker
            .register_bundle(issuer.bundle(true), TIMELINE_ORIGIN)
            .map_err(|e| RunError::Setup(e.to_string()))?;
    }
    let policy = s
        .policy
        .clone()
        .expect("validated brokered scenario has a policy");
    broker
        .set_policy(policy, TIMELINE_ORIGIN)
        .map_err(|e| RunError::Setup(e.to_string()))?;

    let mut trace = Vec::new();
    for job in &s.jobs {
        trace.push(event(
            job.start,
            Some(job),
            "job_start",
            json!({ "secrets_loaded": [] }),
        ));
        trace.push(event(job.end(), Some(job), "job_end", json!({})));
    }

    let mut queue = BinaryHeap::new();
    for (j, job) in s.jobs.iter().enumerate() {
        for (a, access) in job.accesses.iter().enumerate() {
            queue.push(Reverse((
                job.start + access.at,
                Step::Access { job: j, access: a },
            )));
        }
    }

    // (holder job, credential) for everything ever issued
    let mut issued: Vec<(usize, Credential)> = Vec::new();
    // authorizing audit seq per access event, if any
    let mut authorizations: Vec<Option<u64>> = Vec::new();

    while let Some(Reverse((t, step))) = queue.pop() {
        let now = TIMELINE_ORIGIN + Duration::from_secs(t);
        match step {
            Step::Access { job: j, access: a } => {
                let job = &s.jobs[j];
                let access = &job.accesses[a];
                let scope = CredentialScope::new(
                    job.identity.clone(),
                    access.resource.clone(),
                    access.action.clone(),
                );
                let reusable = issued
                    .iter()
                    .filter(|(holder, _)| *holder == j)
                    .map(|(_, c)| c)
                    .find(|c| broker.verify_credential(c, &scope, now).is_ok());
                if let Some(c) = reusable {
                    authorizations.push(Some(c.decision_ref));
                    trace.push(event(
                        t,
                        Some(job),
                        "access",
                        json!({"resource": access.resource, "action": access.action, "credential_id": c.credential_id, "reused": true}),
                    ));
                    continue;
                }
                let issuer = &issuers[job.identity.trust_domain()];
                let claims = [
                    ("env", job.environment.as_str()),
                    ("job", job.name.as_str()),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v.to_owned()))
                .collect();
                let token = issuer
                    .issue_token("k1", &job.identity, AUDIENCE, claims, TOKEN_TTL, now)
                    .map_err(|e| RunError::Setup(e.to_string()))?;
                // never ask for longer than the job will run
                let ttl = Duration::from_secs(job.end() - t).min(cap);
                let request = AccessRequest::new(
                    token.encode(),
                    access.resource.clone(),
                    access.action.clone(),
                )
                .with_ttl(ttl)
                .with_justification(format!("{} step {}", job.name, a + 1));
                match broker.handle_access_request(request, now) {
                    BrokerResult::Issued(i) => {
                        authorizations.push(Some(i.decision_seq));
                        trace.push(issued_event(t, job, &i.credential));
                        issued.push((j, i.credential));
                    }
                    BrokerResult::Denied(d) => {
                        authorizations.push(Some(d.audit_seq));
                        trace.push(event(
                            t,
                            Some(job),
                            "denied",
                            json!({"resource": access.resource, "action": access.action, "reason": d.reason.category()}),
                        ));
                    }
                    BrokerResult::Pending(p) => {
                        trace.push(event(
                            t,
                            Some(job),
                            "pending_approval",
                            json!({"resource": access.resource, "action": access.action, "request_id": p.request_id}),
                        ));
                        queue.push(Reverse((
                            t + s.approval_delay,
                            Step::Verdict {
                                job: j,
                                access: a,
                                request_id: p.request_id,
                                decision_seq: p.decision_seq,
                            },
                        )));
                    }
                    BrokerResult::Error(f) => {
                        let seq = f
                            .request_id
                            .as_deref()
                            .and_then(|rid| decision_seq_of(&broker, rid));
                        authorizations.push(seq);
                        trace.push(event(
                            t,
                            Some(job),
                            "error",
                            json!({"error": f.error.category()}),
                        ));
                    }
                }
            }
            Step::Verdict {
                job: j,
                access: a,
                request_id,
                decision_seq,
            } => {
                let job = &s.jobs[j];
                let access = &job.accesses[a];
                let verdict = match s.approver_verdict {
                    ApproverVerdict::Approve => Verdict::Approve,
                    ApproverVerdict::Deny => Verdict::Deny,
                };
                match broker.record_approval(&request_id, APPROVER, verdict, now) {
                    BrokerResult::Issued(i) => {
                        authorizations.push(Some(i.decision_seq));
                        trace.push(issued_event(t, job, &i.credential));
                        issued.push((j, i.credential));
                    }
                    BrokerResult::Denied(d) => {
                        authorizations.push(Some(d.audit_seq));
                        trace.push(event(
                            t,
                            Some(job),
                            "denied",
                            json!({"resource": access.resource, "action": access.action, "reason": d.reason.category()}),
                        ));
                    }
                    other => {
                        authorizations.push(Some(decision_seq));
                        let category = other.error().map_or("unexpected", |e| e.category());
                        trace.push(event(
                            t,
                            Some(job),
                            "approval_failed",
                            json!({"error": category}),
                        ));
                    }
                }
            }
        }
    }

    // Validity and job activity only change at job boundaries and credential
    // issue/expiry instants, so probing each side of every such edge is exhaustive.
    let horizon = s.timeline_end() + cap.as_secs() + 1;
    let offset = |at: Timestamp| at.saturating_since(TIMELINE_ORIGIN).as_secs();
    let probes: BTreeSet<u64> = match sweep {
        Sweep::Edges => s
            .jobs
            .iter()
            .flat_map(|j| [j.start, j.end()])
            .chain(
                issued
                    .iter()
                    .flat_map(|(_, c)| [offset(c.not_before), offset(c.expires_at)]),
            )
            .chain([0, horizon])
            .flat_map(|t| [t.saturating_sub(1), t, t + 1])
            .filter(|t| *t <= horizon)
            .collect(),
        Sweep::EverySecond => (0..=horizon).collect(),
    };
    let standing = issued
        .iter()
        .filter(|(holder, c)| {
            let job = &s.jobs[*holder];
            probes.iter().any(|&t| {
                !job.is_running(t)
                    && broker
                        .verify_credential(c, &c.scope, TIMELINE_ORIGIN + Duration::from_secs(t))
                        .is_ok()
            })
        })
        .count();
    let exposure = issued
        .iter()
        .map(|(_, c)| c.lifetime())
        .max()
        .unwrap_or(Duration::ZERO);

    let mut blast = 0;
    if let Some(c) = &s.compromise {
        let job = &s.jobs[c.job];
        let t = job.start + c.at;
        let at = TIMELINE_ORIGIN + Duration::from_secs(t);
        let actions = s.actions();
        let reachable: BTreeSet<&Target> = s
            .targets
            .iter()
            .filter(|target| {
                issued
                    .iter()
                    .filter(|(holder, _)| *holder == c.job)
                    .any(|(_, cred)| {
                        actions.iter().any(|action| {
                            let probe = CredentialScope::new(
                                job.identity.clone(),
                                target.resource.clone(),
                                *action,
                            );
                            broker.verify_credential(cred, &probe, at).is_ok()
                        })
                    })
            })
            .collect();
        blast = reachable.len();
        trace.push(event(
            t,
            Some(job),
            "compromise",
            json!({ "reachable": reachable.iter().map(ToString::to_string).collect::<Vec<_>>() }),
        ));
    }

    let covered = broker.with_audit(|log| {
        if !log.verify().is_ok() {
            return 0;
        }
        authorizations
            .iter()
            .filter(|seq| {
                seq.and_then(|seq| log.get(seq))
                    .is_some_and(|e| matches!(e.kind, EventKind::Decision | EventKind::Approval))
            })
            .count()
    });

    let metrics = ScenarioMetrics {
        standing_privilege_count: standing as u64,
        max_exposure_window: exposure,
        blast_radius: blast as u64,
        audit_coverage: coverage(covered, authorizations.len()),
    };
    Ok((metrics, trace))
}

fn issued_event(t: u64, job: &Job, c: &Credential) -> TraceEvent {
    event(
        t,
        Some(job),
        "issued",
        json!({
            "resource": c.scope.resource,
            "action": c.scope.action,
            "credential_id": c.credential_id,
            "lifetime_secs": c.lifetime().as_secs(),
            "decision_ref": c.decision_ref,
        }),
    )
}

fn decision_seq_of(broker: &Broker, request_id: &str) -> Option<u64> {
    broker.with_audit(|log| {
        log.events()
            .iter()
            .find(|e| e.kind == EventKind::Decision && e.request_id.as_deref() == Some(request_id))
            .map(|e| e.seq)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::builtin_text;

    #[test]
    fn edge_probes_agree_with_a_full_clock_sweep() {
        let approve = builtin_text("brokered").unwrap();
        let deny = approve.replacen(
            "approval_delay = 90",
            "approval_delay = 90\napprover_verdict = \"deny\"",
            1,
        );
        for text in [approve.to_owned(), deny] {
            let s = Scenario::from_toml(&text, None).unwrap();
            let edges = run_brokered_with(&s, 3, AuditLog::in_memory(), Sweep::Edges).unwrap();
            let dense =
                run_brokered_with(&s, 3, AuditLog::in_memory(), Sweep::EverySecond).unwrap();
            assert_eq!(edges, dense);
            assert_eq!(dense.0.standing_privilege_count, 0);
        }
    }
}
