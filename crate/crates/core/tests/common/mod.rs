#![allow(dead_code)]

use std::time::Duration;

use credbroker_core::audit::AuditLog;
use credbroker_core::broker::{AccessRequest, Broker, BrokerSettings};
use credbroker_core::identity::{Claims, LocalIssuer, SpiffeId};
use credbroker_core::minting::MintingKey;
use credbroker_core::policy::{load_policy, DEFAULT_GLOBAL_TTL_CAP};
use credbroker_core::Timestamp;

pub const AUDIENCE: &str = "credbroker";
pub const T0: Timestamp = Timestamp::from_unix(1_760_000_000);

pub const POLICY: &str = r#"
[[rules]]
id = "build-reads-artifacts"
subject = "spiffe://ci/org/build"
resource = "s3://prod-release-artifacts"
actions = ["read"]
max_ttl_seconds = 300

[[rules]]
id = "deploy-writes-prod"
subject = "spiffe://ci/org/deploy"
resource = "s3://prod-release-artifacts"
actions = ["write"]
conditions = [{ claim = "env", equals = "prod" }]

[[rules]]
id = "migrate-needs-approval"
subject = "spiffe://ci/org/migrate"
resource = "db://prod-orders"
actions = ["write"]
approval_required = true
max_ttl_seconds = 600
"#;

pub fn id(text: &str) -> SpiffeId {
    SpiffeId::parse(text).unwrap()
}

pub fn issuer(domain: &str, seed: u8) -> LocalIssuer {
    let mut issuer = LocalIssuer::new(domain);
    issuer.add_key(
        "k1",
        [seed; 32],
        Timestamp::from_unix(T0.unix() + 86_400 * 365),
    );
    issuer
}

pub fn token(
    issuer: &LocalIssuer,
    subject: &str,
    claims: &[(&str, &str)],
    now: Timestamp,
) -> String {
    let claims: Claims = claims
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    issuer
        .issue_token(
            "k1",
            &id(subject),
            AUDIENCE,
            claims,
            Duration::from_secs(600),
            now,
        )
        .unwrap()
        .encode()
}

pub struct Fixture {
    pub broker: Broker,
    pub ci: LocalIssuer,
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_settings(BrokerSettings::new(AUDIENCE), AuditLog::in_memory())
    }

    pub fn with_settings(settings: BrokerSettings, audit: AuditLog) -> Self {
        let broker = Broker::with_seed(settings, MintingKey::from_bytes([7; 32]), audit, 42);
        let ci = issuer("ci", 1);
        broker.register_bundle(ci.bundle(true), T0).unwrap();
        broker
            .set_policy(load_policy(POLICY, DEFAULT_GLOBAL_TTL_CAP).unwrap(), T0)
            .unwrap();
        Fixture { broker, ci }
    }

    pub fn request(
        &self,
        subject: &str,
        claims: &[(&str, &str)],
        resource: &str,
        action: &str,
        now: Timestamp,
    ) -> AccessRequest {
        AccessRequest::new(token(&self.ci, subject, claims, now), resource, action)
    }
}
