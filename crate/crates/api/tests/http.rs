use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use credbroker_api::http::status_for;
use credbroker_api::{router, AppState, ManualClock};
use credbroker_core::audit::{AuditFilter, AuditLog};
use credbroker_core::broker::{
    AccessRequest, ApprovalStatus, Broker, BrokerError, BrokerResult, BrokerSettings,
};
use credbroker_core::identity::{LocalIssuer, SpiffeId};
use credbroker_core::minting::{verify_envelope, CredentialScope, MintingKey};
use credbroker_core::policy::{load_policy, DEFAULT_GLOBAL_TTL_CAP};
use credbroker_core::Timestamp;
use serde_json::{json, Value};
use tower::ServiceExt;

const T0: Timestamp = Timestamp::from_unix(1_760_000_000);
const ADMIN: &str = "s3cret-admin-token";
const CANONICAL: &str = include_str!("../../../policies/canonical-deploy.toml");
const APPROVAL: &str = r#"
[[rules]]
id = "migrate"
subject = "spiffe://ci/org/migrate"
resource = "db://prod-orders"
actions = ["write"]
approval_required = true
"#;

struct Harness {
    app: Router,
    broker: Arc<Broker>,
    clock: Arc<ManualClock>,
    ci: LocalIssuer,
}

fn issuer(domain: &str, seed: u8) -> LocalIssuer {
    let mut issuer = LocalIssuer::new(domain);
    issuer.add_key(
        "k1",
        [seed; 32],
        Timestamp::from_unix(T0.unix() + 86_400 * 365),
    );
    issuer
}

fn broker(policy: &str) -> Broker {
    let broker = Broker::with_seed(
        BrokerSettings::new("credbroker"),
        MintingKey::from_bytes([4; 32]),
        AuditLog::in_memory(),
        11,
    );
    broker
        .register_bundle(issuer("ci", 1).bundle(true), T0)
        .unwrap();
    broker
        .set_policy(load_policy(policy, DEFAULT_GLOBAL_TTL_CAP).unwrap(), T0)
        .unwrap();
    broker
}

fn harness(policy: &str) -> Harness {
    let broker = Arc::new(broker(policy));
    let clock = Arc::new(ManualClock::new(T0));
    let app = router(AppState {
        broker: broker.clone(),
        admin_token: ADMIN.into(),
        clock: clock.clone(),
    });
    Harness {
        app,
        broker,
        clock,
        ci: issuer("ci", 1),
    }
}

impl Harness {
    fn token(&self, subject: &str) -> String {
        self.ci
            .issue_token(
                "k1",
                &SpiffeId::parse(subject).unwrap(),
                "credbroker",
                Default::default(),
                Duration::from_secs(600),
                self.clock_now(),
            )
            .unwrap()
            .encode()
    }

    fn clock_now(&self) -> Timestamp {
        use credbroker_api::Clock;
        self.clock.now()
    }

    async fn call(
        &self,
        method: &str,
        uri: &str,
        admin: bool,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if admin {
            req = req.header("authorization", format!("Bearer {ADMIN}"));
        }
        let body = body.map_or(Body::empty(), |b| Body::from(b.to_string()));
        let resp = self
            .app
            .clone()
            .oneshot(req.body(body).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
            .await
            .unwrap();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value)
    }

    async fn request(&self, subject: &str, resource: &str, action: &str) -> (StatusCode, Value) {
        let body = json!({"token": self.token(subject), "resource": resource, "action": action});
        self.call("POST", "/v1/credentials", false, Some(body))
            .await
    }
}

#[tokio::test]
async fn canonical_triple_is_issued_end_to_end() {
    let h = harness(CANONICAL);
    let (status, body) = h
        .request(
            "spiffe://ci/org/deploy",
            "s3://prod-release-artifacts",
            "write",
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "issued");
    let scope = CredentialScope::new(
        SpiffeId::parse("spiffe://ci/org/deploy").unwrap(),
        "s3://prod-release-artifacts",
        "write",
    );
    let credential = verify_envelope(
        body["envelope"].as_str().unwrap(),
        &scope,
        T0,
        h.broker.minting_key(),
    )
    .unwrap();
    assert_eq!(
        serde_json::to_value(&credential).unwrap(),
        body["credential"]
    );
    assert_eq!(credential.decision_ref, body["decision_seq"]);
}

#[tokio::test]
async fn malformed_token_is_401() {
    let h = harness(CANONICAL);
    let body =
        json!({"token": "abc", "resource": "s3://prod-release-artifacts", "action": "write"});
    let (status, body) = h.call("POST", "/v1/credentials", false, Some(body)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"], "authentication-failed");
    assert_eq!(body["reason"], "malformed-token");
    assert!(body["request_id"].is_string());
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let h = harness(CANONICAL);
    for body in [
        json!({"resource": "r"}),
        json!([1, 2]),
        json!({"token": "t", "resource": "r", "action": "a", "extra": 1}),
    ] {
        let (status, body) = h.call("POST", "/v1/credentials", false, Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(body["error"], "invalid-request");
    }
    let tok = h.token("spiffe://ci/org/deploy");
    let bad_kind = json!({"token": tok, "resource": "r", "action": "a", "kind": "root_password"});
    assert_eq!(
        h.call("POST", "/v1/credentials", false, Some(bad_kind))
            .await
            .0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn denial_is_403_with_trace_and_visible_in_audit() {
    let h = harness(CANONICAL);
    let (status, denied) = h
        .request(
            "spiffe://ci/org/deploy",
            "s3://prod-release-artifacts",
            "read",
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(denied["reason"], "no-matching-rule");
    assert_eq!(denied["trace"][0]["failed_at"], "action");

    let rid = denied["request_id"].as_str().unwrap();
    let (status, audit) = h
        .call("GET", &format!("/v1/audit?request_id={rid}"), true, None)
        .await;
    assert_eq!(status, StatusCode::OK);
    let (direct, head) = h
        .broker
        .audit_query(&AuditFilter {
            request_id: Some(rid.to_owned()),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(audit["events"], serde_json::to_value(&direct).unwrap());
    assert_eq!(audit["events"][0]["payload"]["outcome"], "deny");
    assert_eq!(audit["head"]["head_hash"], head.head_hash.to_hex());
    assert_eq!(audit["head"]["count"], head.count);
}

#[tokio::test]
async fn transport_adds_no_authorization() {
    // the same inputs through HTTP and through a twin broker give the same answers
    let h = harness(CANONICAL);
    let twin = broker(CANONICAL);
    let subjects = [
        "spiffe://ci/org/deploy",
        "spiffe://ci/org/build",
        "spiffe://ci/org/deploy/x",
    ];
    let resources = ["s3://prod-release-artifacts", "s3://other"];
    for s in subjects {
        for r in resources {
            for a in ["write", "read"] {
                let token = h.token(s);
                let (status, body) = h
                    .call(
                        "POST",
                        "/v1/credentials",
                        false,
                        Some(json!({"token": token, "resource": r, "action": a})),
                    )
                    .await;
                let direct = twin.handle_access_request(AccessRequest::new(token, r, a), T0);
                match direct {
                    BrokerResult::Issued(i) => {
                        assert_eq!(status, StatusCode::OK);
                        assert_eq!(
                            body["credential"],
                            serde_json::to_value(&i.credential).unwrap()
                        );
                    }
                    BrokerResult::Denied(_) => assert_eq!(status, StatusCode::FORBIDDEN),
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
    }
    assert_eq!(h.broker.audit_head(), twin.audit_head());
}

#[tokio::test]
async fn approval_flow_over_http() {
    let h = harness(APPROVAL);
    let (status, pending) = h
        .request("spiffe://ci/org/migrate", "db://prod-orders", "write")
        .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let rid = pending["request_id"].as_str().unwrap().to_owned();
    assert_eq!(pending["deadline"], T0.unix() + 3600);

    assert_eq!(
        h.call("GET", "/v1/approvals", false, None).await.0,
        StatusCode::UNAUTHORIZED
    );
    let (_, list) = h.call("GET", "/v1/approvals", true, None).await;
    assert_eq!(list["pending"].as_array().unwrap().len(), 1);
    assert_eq!(list["pending"][0]["subject"], "spiffe://ci/org/migrate");

    let uri = format!("/v1/approvals/{rid}");
    let verdict = json!({"verdict": "approve", "approver": "alice"});
    assert_eq!(
        h.call("POST", &uri, false, Some(verdict.clone())).await.0,
        StatusCode::UNAUTHORIZED
    );
    let bad = json!({"verdict": "maybe", "approver": "alice"});
    assert_eq!(
        h.call("POST", &uri, true, Some(bad)).await.0,
        StatusCode::BAD_REQUEST
    );

    h.clock.advance(30);
    let (status, issued) = h.call("POST", &uri, true, Some(verdict.clone())).await;
    assert_eq!(status, StatusCode::OK, "{issued}");
    assert_eq!(issued["request_id"], rid.as_str());

    let (status, again) = h.call("POST", &uri, true, Some(verdict)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(again["error"], "already-resolved");

    let (_, trail) = h
        .call("GET", &format!("/v1/audit?request_id={rid}"), true, None)
        .await;
    let kinds: Vec<&str> = trail["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["decision", "approval", "issuance"]);
    assert!(
        h.call("GET", "/v1/approvals", true, None).await.1["pending"]
            .as_array()
            .unwrap()
            .is_empty()
    );
}

#[tokio::test]
async fn expired_and_unknown_approvals() {
    let h = harness(APPROVAL);
    let (_, pending) = h
        .request("spiffe://ci/org/migrate", "db://prod-orders", "write")
        .await;
    let rid = pending["request_id"].as_str().unwrap();
    h.clock.advance(3600);
    let verdict = json!({"verdict": "approve", "approver": "alice"});
    let (status, body) = h
        .call(
            "POST",
            &format!("/v1/approvals/{rid}"),
            true,
            Some(verdict.clone()),
        )
        .await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(body["error"], "approval-expired");
    assert_eq!(
        h.broker.pending_entry(rid).unwrap().status,
        ApprovalStatus::Expired
    );
    let (status, _) = h
        .call("POST", "/v1/approvals/req-missing", true, Some(verdict))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn approver_denial_is_403() {
    let h = harness(APPROVAL);
    let (_, pending) = h
        .request("spiffe://ci/org/migrate", "db://prod-orders", "write")
        .await;
    let rid = pending["request_id"].as_str().unwrap();
    let (status, body) = h
        .call(
            "POST",
            &format!("/v1/approvals/{rid}"),
            true,
            Some(json!({"verdict": "deny", "approver": "bob"})),
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["reason"], "approver-denied");
    assert_eq!(body["approver"], "bob");
}

#[tokio::test]
async fn policy_replacement() {
    let h = harness(CANONICAL);
    let bad = json!({"document": "[[rules]]\nid = \"\"\nsubject = \"nope\"\nresource = \"r\"\nactions = []\n"});
    assert_eq!(
        h.call("PUT", "/v1/policy", false, Some(bad.clone()))
            .await
            .0,
        StatusCode::UNAUTHORIZED
    );
    let (status, body) = h.call("PUT", "/v1/policy", true, Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "policy-invalid");
    assert!(body["errors"].as_array().unwrap().len() >= 3);

    let (status, body) = h
        .call("PUT", "/v1/policy", true, Some(json!({"document": ""})))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["rule_count"], 0);
    assert_eq!(body["version"], h.broker.policy_version().unwrap().as_str());
    let (status, _) = h
        .request(
            "spiffe://ci/org/deploy",
            "s3://prod-release-artifacts",
            "write",
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn bundle_registration_enables_federation() {
    let h = harness(
        "[[rules]]\nid = \"p\"\nsubject = \"spiffe://partner.example/*\"\nresource = \"s3://x\"\nactions = [\"read\"]\n",
    );
    let partner = issuer("partner.example", 8);
    let token = partner
        .issue_token(
            "k1",
            &SpiffeId::parse("spiffe://partner.example/job").unwrap(),
            "credbroker",
            Default::default(),
            Duration::from_secs(60),
            T0,
        )
        .unwrap()
        .encode();
    let body = json!({"token": token, "resource": "s3://x", "action": "read"});
    assert_eq!(
        h.call("POST", "/v1/credentials", false, Some(body.clone()))
            .await
            .0,
        StatusCode::UNAUTHORIZED
    );

    let doc = serde_json::to_value(partner.bundle(false).to_document()).unwrap();
    let (status, reg) = h.call("PUT", "/v1/bundles", true, Some(doc)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reg["replaced"], false);
    assert_eq!(
        h.call("POST", "/v1/credentials", false, Some(body.clone()))
            .await
            .0,
        StatusCode::OK
    );

    let removal = json!({"trust_domain": "partner.example", "keys": []});
    assert_eq!(
        h.call("PUT", "/v1/bundles", true, Some(removal)).await.1["replaced"],
        true
    );
    assert_eq!(
        h.call("POST", "/v1/credentials", false, Some(body)).await.0,
        StatusCode::UNAUTHORIZED
    );

    let garbage = json!({"trust_domain": "x", "keys": [{"key_id": "k", "public_key": "!!", "not_after": "2030-01-01T00:00:00Z"}]});
    assert_eq!(
        h.call("PUT", "/v1/bundles", true, Some(garbage)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
}

#[tokio::test]
async fn audit_filters_are_validated() {
    let h = harness(CANONICAL);
    h.request(
        "spiffe://ci/org/deploy",
        "s3://prod-release-artifacts",
        "write",
    )
    .await;
    for uri in [
        "/v1/audit?kind=bogus",
        "/v1/audit?seq_from=5&seq_to=1",
        "/v1/audit?colour=red",
        "/v1/audit?since=yesterday",
    ] {
        assert_eq!(
            h.call("GET", uri, true, None).await.0,
            StatusCode::BAD_REQUEST,
            "{uri}"
        );
    }
    let (_, issuance) = h.call("GET", "/v1/audit?kind=issuance", true, None).await;
    assert_eq!(issuance["events"].as_array().unwrap().len(), 1);
    let (_, window) = h
        .call(
            "GET",
            "/v1/audit?since=2025-10-09T08:53:20Z&until=1760000001",
            true,
            None,
        )
        .await;
    assert!(!window["events"].as_array().unwrap().is_empty());
    let (_, by_subject) = h
        .call(
            "GET",
            "/v1/audit?subject=spiffe://ci/org/deploy",
            true,
            None,
        )
        .await;
    assert_eq!(by_subject["events"].as_array().unwrap().len(), 2);
    let (direct, head) = h
        .broker
        .audit_query(&AuditFilter {
            subject: Some("spiffe://ci/org/deploy".into()),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(by_subject["events"], serde_json::to_value(&direct).unwrap());
    assert_eq!(by_subject["head"], serde_json::to_value(head).unwrap());
}

#[test]
fn every_error_category_has_one_status() {
    let errors = [
        BrokerError::InvalidRequest(String::new()),
        BrokerError::AuthenticationFailed(credbroker_core::broker::AuthError::Malformed(
            credbroker_core::identity::TokenFormatError::SegmentCount,
        )),
        BrokerError::UnknownRequest(String::new()),
        BrokerError::AlreadyResolved(ApprovalStatus::Approved),
        BrokerError::ApprovalExpired,
        BrokerError::AuditUnavailable(String::new()),
        BrokerError::Internal(String::new()),
    ];
    let statuses: std::collections::BTreeSet<u16> =
        errors.iter().map(|e| status_for(e).as_u16()).collect();
    let categories: std::collections::BTreeSet<&str> =
        errors.iter().map(BrokerError::category).collect();
    assert_eq!(statuses.len(), errors.len());
    assert_eq!(categories.len(), errors.len());
}

#[tokio::test]
async fn documented_operations_are_routed() {
    let h = harness(CANONICAL);
    let doc: Value = serde_json::from_str(include_str!("../../../docs/openapi.json")).unwrap();
    for (path, ops) in doc["paths"].as_object().unwrap() {
        for method in ops.as_object().unwrap().keys() {
            let uri = path.replace("{request_id}", "req-x");
            let body = (method != "get").then(|| json!({}));
            let (status, _) = h.call(&method.to_uppercase(), &uri, true, body).await;
            assert_ne!(status, StatusCode::METHOD_NOT_ALLOWED, "{method} {path}");
            let documented = ops[method]["responses"].as_object().unwrap();
            assert!(
                documented.contains_key(status.as_str()),
                "{method} {path} answered {status}"
            );
        }
    }
}
