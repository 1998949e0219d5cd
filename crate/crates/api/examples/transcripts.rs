//! Prints example request/response exchanges for every endpoint, produced by
//! a seeded broker on a fixed clock. Regenerate the docs with
//! `cargo run -p credbroker-api --example transcripts > docs/api-transcripts.md`.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use credbroker_api::{router, AppState, ManualClock};
use credbroker_core::audit::AuditLog;
use credbroker_core::broker::{Broker, BrokerSettings};
use credbroker_core::identity::{LocalIssuer, SpiffeId};
use credbroker_core::minting::MintingKey;
use credbroker_core::policy::{load_policy, DEFAULT_GLOBAL_TTL_CAP};
use credbroker_core::Timestamp;
use serde_json::{json, Value};
use tower::ServiceExt;

const T0: Timestamp = Timestamp::from_unix(1_767_225_600); // 2026-01-01T00:00:00Z
const ADMIN: &str = "example-admin-token";
const POLICY: &str = r#"[[rules]]
id = "deploy-writes-release-artifacts"
subject = "spiffe://ci/org/deploy"
resource = "s3://prod-release-artifacts"
actions = ["write"]

[[rules]]
id = "prod-migration-needs-approval"
subject = "spiffe://ci/org/migrate"
resource = "db://prod-orders"
actions = ["write"]
approval_required = true
max_ttl_seconds = 600
"#;

async fn exchange(
    app: &Router,
    title: &str,
    method: &str,
    uri: &str,
    admin: bool,
    body: Option<Value>,
) -> Value {
    let mut req = Request::builder().method(method).uri(uri);
    let mut shown = format!("{method} {uri}\n");
    if body.is_some() {
        req = req.header("content-type", "application/json");
        shown.push_str("Content-Type: application/json\n");
    }
    if admin {
        req = req.header("authorization", format!("Bearer {ADMIN}"));
        shown.push_str(&format!("Authorization: Bearer {ADMIN}\n"));
    }
    if let Some(b) = &body {
        shown.push('\n');
        shown.push_str(&serde_json::to_string_pretty(b).unwrap());
        shown.push('\n');
    }
    let payload = body.map_or(Body::empty(), |b| Body::from(b.to_string()));
    let resp = app
        .clone()
        .oneshot(req.body(payload).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    let value: Value = serde_json::from_slice(&bytes).unwrap();
    println!("## {title}\n");
    println!("```http\n{shown}```\n");
    println!(
        "```http\nHTTP/1.1 {status}\nContent-Type: application/json\n\n{}\n```\n",
        serde_json::to_string_pretty(&value).unwrap()
    );
    value
}

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let mut ci = LocalIssuer::new("ci");
    ci.add_key("k1", [1; 32], T0 + Duration::from_secs(86_400 * 365));
    let mut partner = LocalIssuer::new("partner.example");
    partner.add_key("p1", [2; 32], T0 + Duration::from_secs(86_400 * 365));

    let broker = Arc::new(Broker::with_seed(
        BrokerSettings::new("credbroker"),
        MintingKey::from_bytes([3; 32]),
        AuditLog::in_memory(),
        7,
    ));
    broker.register_bundle(ci.bundle(true), T0).unwrap();
    broker
        .set_policy(load_policy(POLICY, DEFAULT_GLOBAL_TTL_CAP).unwrap(), T0)
        .unwrap();
    let clock = Arc::new(ManualClock::new(T0 + Duration::from_secs(60)));
    let app = router(AppState {
        broker,
        admin_token: ADMIN.into(),
        clock: clock.clone(),
    });
    let token = |issuer: &LocalIssuer, key: &str, subject: &str| {
        issuer
            .issue_token(
                key,
                &SpiffeId::parse(subject).unwrap(),
                "credbroker",
                Default::default(),
                Duration::from_secs(300),
                T0 + Duration::from_secs(60),
            )
            .unwrap()
            .encode()
    };

    println!("# API transcripts\n");
    println!(
        "Generated by `cargo run -p credbroker-api --example transcripts` against a seeded broker on a fixed \
         clock (2026-01-01T00:01:00Z). The policy allows `spiffe://ci/org/deploy` to write \
         `s3://prod-release-artifacts` and requires approval for production migrations. Timestamps are unix seconds.\n"
    );
    let deploy = token(&ci, "k1", "spiffe://ci/org/deploy");
    exchange(
        &app,
        "Issue a credential",
        "POST",
        "/v1/credentials",
        false,
        Some(json!({"token": deploy, "resource": "s3://prod-release-artifacts", "action": "write", "kind": "sts_like", "ttl_seconds": 300, "justification": "release 1.4.2"})),
    )
    .await;
    exchange(
        &app,
        "Denied request",
        "POST",
        "/v1/credentials",
        false,
        Some(
            json!({"token": deploy, "resource": "s3://prod-release-artifacts", "action": "delete"}),
        ),
    )
    .await;
    exchange(
        &app,
        "Malformed token",
        "POST",
        "/v1/credentials",
        false,
        Some(json!({"token": "not-a-token", "resource": "s3://prod-release-artifacts", "action": "write"})),
    )
    .await;
    let migrate = token(&ci, "k1", "spiffe://ci/org/migrate");
    let pending = exchange(
        &app,
        "Request that needs approval",
        "POST",
        "/v1/credentials",
        false,
        Some(json!({"token": migrate, "resource": "db://prod-orders", "action": "write", "kind": "secret_lease", "justification": "apply migration 0042"})),
    )
    .await;
    let rid = pending["request_id"].as_str().unwrap().to_owned();
    exchange(
        &app,
        "List pending approvals",
        "GET",
        "/v1/approvals",
        true,
        None,
    )
    .await;
    clock.advance(120);
    exchange(
        &app,
        "Approve",
        "POST",
        &format!("/v1/approvals/{rid}"),
        true,
        Some(json!({"verdict": "approve", "approver": "alice@example.com"})),
    )
    .await;
    exchange(
        &app,
        "Second verdict on a resolved request",
        "POST",
        &format!("/v1/approvals/{rid}"),
        true,
        Some(json!({"verdict": "deny", "approver": "bob@example.com"})),
    )
    .await;
    exchange(
        &app,
        "Audit trail for one request",
        "GET",
        &format!("/v1/audit?request_id={rid}"),
        true,
        None,
    )
    .await;
    exchange(
        &app,
        "Rejected policy document",
        "PUT",
        "/v1/policy",
        true,
        Some(json!({"document": "[[rules]]\nid = \"broken\"\nsubject = \"ci/org/deploy\"\nresource = \"s3://x\"\nactions = []\n"})),
    )
    .await;
    exchange(
        &app,
        "Replace the policy",
        "PUT",
        "/v1/policy",
        true,
        Some(json!({"document": POLICY.replace("[\"write\"]", "[\"write\", \"read\"]")})),
    )
    .await;
    exchange(
        &app,
        "Register a federated trust bundle",
        "PUT",
        "/v1/bundles",
        true,
        Some(serde_json::to_value(partner.bundle(false).to_document()).unwrap()),
    )
    .await;
    exchange(
        &app,
        "Missing admin token",
        "GET",
        "/v1/approvals",
        false,
        None,
    )
    .await;
    exchange(&app, "Health", "GET", "/healthz", false, None).await;
}
