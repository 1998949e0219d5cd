//! Scenario files.
//!
//! A scenario names one access model and a job set. The job set (targets,
//! jobs, compromise point) is either inline or pulled from a separate file
//! with `job_set = "<path>"`; `job_set = "default"` selects the bundled set.
//!
//! ```toml
//! name = "cross_env_reuse"
//! job_set = "default"
//!
//! [[secrets]]
//! id = "shared-deploy-key"
//! holders = "*"
//! unlocks = ["dev:db://dev-orders", "prod:s3://prod-release-artifacts"]
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use credbroker_core::identity::SpiffeId;
use credbroker_core::policy::{load_policy, PolicyDocument, DEFAULT_GLOBAL_TTL_CAP};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_JOB_SET: &str = include_str!("../scenarios/default-jobs.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// The access model under simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Secrets are written into each job's environment for its whole run.
    InlineInjection,
    /// Each identity is bound to fixed roles that are always granted.
    StaticRoleMapping,
    /// Every job on the runner sees every secret.
    GlobalSecretsMount,
    /// One secret serves all environments.
    CrossEnvReuse,
    /// Jobs ask the broker for a scoped credential per access.
    Brokered,
}

impl Model {
    pub const ALL: [Model; 5] = [
        Model::InlineInjection,
        Model::StaticRoleMapping,
        Model::GlobalSecretsMount,
        Model::CrossEnvReuse,
        Model::Brokered,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Model::InlineInjection => "inline_injection",
            Model::StaticRoleMapping => "static_role_mapping",
            Model::GlobalSecretsMount => "global_secrets_mount",
            Model::CrossEnvReuse => "cross_env_reuse",
            Model::Brokered => "brokered",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Dev,
    Staging,
    Prod,
}

impl Environment {
    pub fn as_str(self) -> &'static str {
        match self {
            Environment::Dev => "dev",
            Environment::Staging => "staging",
            Environment::Prod => "prod",
        }
    }
}

impl FromStr for Environment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dev" => Ok(Environment::Dev),
            "staging" => Ok(Environment::Staging),
            "prod" => Ok(Environment::Prod),
            other => Err(format!(
                "unknown environment {other:?} (expected dev, staging or prod)"
            )),
        }
    }
}

/// An (environment, resource) pair a credential could open.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Target {
    pub env: Environment,
    pub resource: String,
}

impl Target {
    fn parse(text: &str) -> Result<Self, String> {
        let (env, resource) = text
            .split_once(':')
            .ok_or_else(|| format!("target {text:?} must look like env:resource"))?;
        Ok(Target {
            env: env.parse()?,
            resource: resource.to_owned(),
        })
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.env.as_str(), self.resource)
    }
}

/// One access a job performs, `at` seconds after it starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Access {
    pub resource: String,
    pub action: String,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Job {
    pub name: String,
    pub identity: SpiffeId,
    pub environment: Environment,
    /// Seconds from the start of the timeline.
    pub start: u64,
    pub wall_time: u64,
    pub accesses: Vec<Access>,
}

impl Job {
    pub fn end(&self) -> u64 {
        self.start + self.wall_time
    }

    pub fn is_running(&self, t: u64) -> bool {
        self.start <= t && t < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Holders {
    Everyone,
    Only(BTreeSet<SpiffeId>),
}

impl Holders {
    pub fn includes(&self, id: &SpiffeId) -> bool {
        match self {
            Holders::Everyone => true,
            Holders::Only(ids) => ids.contains(id),
        }
    }
}

/// A static secret (or role) and what it opens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Secret {
    pub id: String,
    pub holders: Holders,
    pub unlocks: BTreeSet<Target>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Compromise {
    pub job: usize,
    /// Seconds after the job starts.
    pub at: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub model: Model,
    pub targets: Vec<Target>,
    pub jobs: Vec<Job>,
    pub secrets: Vec<Secret>,
    #[serde(skip)]
    pub policy: Option<PolicyDocument>,
    pub compromise: Option<Compromise>,
    /// Seconds the scripted approver takes to answer.
    pub approval_delay: u64,
    pub approver_verdict: ApproverVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ApproverVerdict {
    #[default]
    Approve,
    Deny,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Model,
    job_set: Option<String>,
    #[serde(default)]
    targets: Vec<String>,
    #[serde(default)]
    jobs: Vec<RawJob>,
    compromise: Option<RawCompromise>,
    #[serde(default)]
    secrets: Vec<RawSecret>,
    policy: Option<String>,
    #[serde(default)]
    approval_delay: u64,
    #[serde(default)]
    approver_verdict: ApproverVerdict,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJobSet {
    targets: Vec<String>,
    jobs: Vec<RawJob>,
    compromise: Option<RawCompromise>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJob {
    name: String,
    identity: String,
    environment: String,
    start: u64,
    wall_time: u64,
    #[serde(default)]
    accesses: Vec<Access>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompromise {
    job: String,
    at: u64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawHolders {
    All(String),
    Listed(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSecret {
    id: String,
    holders: RawHolders,
    unlocks: Vec<String>,
}

impl Scenario {
    /// Parses a scenario; `base` resolves a relative `job_set` path.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self, ScenarioError> {
        let raw: RawScenario =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let (targets, jobs, compromise) = match raw.job_set.as_deref() {
            None => (raw.targets, raw.jobs, raw.compromise),
            Some(reference) => {
                if !raw.targets.is_empty() || !raw.jobs.is_empty() {
                    return Err(ScenarioError::Invalid(
                        "job_set excludes inline targets and jobs".into(),
                    ));
                }
                let set_text = if reference == "default" {
                    DEFAULT_JOB_SET.to_owned()
                } else {
                    let path = base.unwrap_or(Path::new(".")).join(reference);
                    std::fs::read_to_string(&path).map_err(|e| ScenarioError::Read {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?
                };
                let set: RawJobSet = toml::from_str(&set_text)
                    .map_err(|e| ScenarioError::Parse(format!("job set: {e}")))?;
                (set.targets, set.jobs, raw.compromise.or(set.compromise))
            }
        };
        let invalid = |m: String| ScenarioError::Invalid(m);

        let targets = targets
            .iter()
            .map(|t| Target::parse(t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(invalid)?;
        let jobs = jobs
            .into_iter()
            .map(|j| {
                Ok(Job {
                    identity: SpiffeId::parse(&j.identity)
                        .map_err(|e| format!("job {}: {e}", j.name))?,
                    environment: j
                        .environment
                        .parse()
                        .map_err(|e| format!("job {}: {e}", j.name))?,
                    name: j.name,
                    start: j.start,
                    wall_time: j.wall_time,
                    accesses: j.accesses,
                })
            })
            .collect::<Result<Vec<_>, String>>()
            .map_err(invalid)?;
        let secrets = raw
            .secrets
            .into_iter()
            .map(|s| {
                let holders = match s.holders {
                    RawHolders::All(star) if star == "*" => Holders::Everyone,
                    RawHolders::All(other) => {
                        return Err(format!(
                            "secret {}: holders must be \"*\" or a list, got {other:?}",
                            s.id
                        ))
                    }
                    RawHolders::Listed(ids) => Holders::Only(
                        ids.iter()
                            .map(|i| {
                                SpiffeId::parse(i).map_err(|e| format!("secret {}: {e}", s.id))
                            })
                            .collect::<Result<_, _>>()?,
                    ),
                };
                let unlocks = s
                    .unlocks
                    .iter()
                    .map(|t| Target::parse(t))
                    .collect::<Result<_, _>>()?;
                Ok(Secret {
                    id: s.id,
                    holders,
                    unlocks,
                })
            })
            .collect::<Result<Vec<_>, String>>()
            .map_err(invalid)?;
        let compromise = compromise
            .map(|c| {
                let job = jobs
                    .iter()
                    .position(|j| j.name == c.job)
                    .ok_or_else(|| format!("compromise names unknown job {:?}", c.job))?;
                Ok(Compromise { job, at: c.at })
            })
            .transpose()
            .map_err(invalid)?;
        let policy = raw
            .policy
            .map(|text| {
                load_policy(&text, DEFAULT_GLOBAL_TTL_CAP)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))
            })
            .transpose()?;

        let scenario = Scenario {
            model: raw.name,
            targets,
            jobs,
            secrets,
            policy,
            compromise,
            approval_delay: raw.approval_delay,
            approver_verdict: raw.approver_verdict,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, path.parent())
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError::Invalid(m));
        if self.jobs.is_empty() {
            return fail("a scenario needs at least one job".into());
        }
        let mut names = BTreeSet::new();
        for job in &self.jobs {
            if !names.insert(job.name.as_str()) {
                return fail(format!("duplicate job name {:?}", job.name));
            }
            if job.wall_time == 0 {
                return fail(format!("job {}: wall_time must be positive", job.name));
            }
            for access in &job.accesses {
                if access.at >= job.wall_time {
                    return fail(format!(
                        "job {}: access at {}s is outside its wall time",
                        job.name, access.at
                    ));
                }
                if !self.targets.iter().any(|t| t.resource == access.resource) {
                    return fail(format!(
                        "job {}: resource {} is not a declared target",
                        job.name, access.resource
                    ));
                }
            }
        }
        for secret in &self.secrets {
            for t in &secret.unlocks {
                if !self.targets.contains(t) {
                    return fail(format!(
                        "secret {}: {t} is not a declared target",
                        secret.id
                    ));
                }
            }
        }
        if let Some(c) = &self.compromise {
            if c.at >= self.jobs[c.job].wall_time {
                return fail("compromise time is outside the compromised job's wall time".into());
            }
        }
        match (self.model, &self.policy) {
            (Model::Brokered, None) => fail("a brokered scenario needs a policy".into()),
            (Model::Brokered, Some(_)) => Ok(()),
            (_, Some(_)) => fail(format!(
                "{} scenarios take secrets, not a policy",
                self.model
            )),
            (_, None) if self.secrets.is_empty() => {
                fail(format!("{} scenarios need at least one secret", self.model))
            }
            _ => Ok(()),
        }
    }

    /// Distinct identities appearing in the job set.
    pub fn identities(&self) -> BTreeSet<&SpiffeId> {
        self.jobs.iter().map(|j| &j.identity).collect()
    }

    /// Every action named by some access, for reachability probing.
    pub fn actions(&self) -> BTreeSet<&str> {
        self.jobs
            .iter()
            .flat_map(|j| j.accesses.iter().map(|a| a.action.as_str()))
            .collect()
    }

    pub fn timeline_end(&self) -> u64 {
        self.jobs.iter().map(Job::end).max().unwrap_or(0)
    }

    pub fn approval_wait(&self) -> Duration {
        Duration::from_secs(self.approval_delay)
    }
}
