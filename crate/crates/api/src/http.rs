//! Routes and wire formats.
//!
//! | Method | Path                       | Auth          |
//! |--------|----------------------------|---------------|
//! | POST   | /v1/credentials            | workload token in body |
//! | GET    | /v1/approvals              | admin bearer  |
//! | POST   | /v1/approvals/{request_id} | admin bearer  |
//! | GET    | /v1/audit                  | admin bearer  |
//! | PUT    | /v1/policy                 | admin bearer  |
//! | PUT    | /v1/bundles                | admin bearer  |
//! | GET    | /healthz                   | none          |
//!
//! Every broker error category maps to exactly one status code, see
//! [`status_for`].

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use credbroker_core::audit::{AuditFilter, EventKind};
use credbroker_core::broker::{
    AccessRequest, Broker, BrokerError, BrokerResult, Denied, DenyReason, PendingApproval, Verdict,
};
use credbroker_core::identity::{BundleDocument, TrustBundle};
use credbroker_core::minting::CredentialKind;
use credbroker_core::policy::load_policy;
use credbroker_core::Timestamp;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::clock::Clock;

#[derive(Clone)]
pub struct AppState {
    pub broker: Arc<Broker>,
    pub admin_token: Arc<str>,
    pub clock: Arc<dyn Clock>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/credentials", post(request_credential))
        .route("/v1/approvals", get(list_approvals))
        .route("/v1/approvals/{request_id}", post(submit_verdict))
        .route("/v1/audit", get(query_audit))
        .route("/v1/policy", put(replace_policy))
        .route("/v1/bundles", put(register_bundle))
        .route("/healthz", get(health))
        .with_state(state)
}

/// Status code for each broker error category.
pub fn status_for(error: &BrokerError) -> StatusCode {
    match error {
        BrokerError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
        BrokerError::AuthenticationFailed(_) => StatusCode::UNAUTHORIZED,
        BrokerError::UnknownRequest(_) => StatusCode::NOT_FOUND,
        BrokerError::AlreadyResolved(_) => StatusCode::CONFLICT,
        BrokerError::ApprovalExpired => StatusCode::GONE,
        BrokerError::AuditUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        BrokerError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// Errors raised by the transport itself, before reaching the broker.
#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Unauthorized,
    Unprocessable {
        error: &'static str,
        details: Vec<String>,
    },
    Broker(BrokerError),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::BadRequest(detail) => (
                StatusCode::BAD_REQUEST,
                Json(json!({"status": "error", "error": "invalid-request", "detail": detail})),
            )
                .into_response(),
            ApiError::Unauthorized => (
                StatusCode::UNAUTHORIZED,
                [(header::WWW_AUTHENTICATE, "Bearer")],
                Json(json!({"status": "error", "error": "admin-unauthorized"})),
            )
                .into_response(),
            ApiError::Unprocessable { error, details } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(json!({"status": "error", "error": error, "errors": details})),
            )
                .into_response(),
            ApiError::Broker(e) => error_response(None, &e),
        }
    }
}

fn error_response(request_id: Option<&str>, error: &BrokerError) -> Response {
    let mut body = json!({
        "status": "error",
        "error": error.category(),
        "detail": error.to_string(),
        "request_id": request_id,
    });
    if let BrokerError::AuthenticationFailed(auth) = error {
        body["reason"] = json!(auth.category());
    }
    (status_for(error), Json(body)).into_response()
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::BadRequest(format!("malformed JSON body: {e}")))
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or(ApiError::Unauthorized)?;
    if constant_time_eq(presented.trim().as_bytes(), state.admin_token.as_bytes()) {
        Ok(())
    } else {
        Err(ApiError::Unauthorized)
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Runs a broker call off the async executor; audit appends may fsync.
async fn blocking<R: Send + 'static>(
    f: impl FnOnce() -> R + Send + 'static,
) -> Result<R, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Broker(BrokerError::Internal(e.to_string())))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CredentialRequestBody {
    token: String,
    resource: String,
    action: String,
    #[serde(default)]
    justification: Option<String>,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    ttl_seconds: Option<u64>,
}

async fn request_credential(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body: CredentialRequestBody = parse_body(&body)?;
    let mut req = AccessRequest::new(body.token, body.resource, body.action);
    if let Some(j) = body.justification {
        req = req.with_justification(j);
    }
    if let Some(kind) = body.kind {
        let kind: CredentialKind = kind
            .parse()
            .map_err(|_| ApiError::BadRequest(format!("unknown credential kind {kind:?}")))?;
        req = req.with_kind(kind);
    }
    if let Some(ttl) = body.ttl_seconds {
        req = req.with_ttl(Duration::from_secs(ttl));
    }
    let now = state.clock.now();
    let broker = state.broker.clone();
    let result = blocking(move || broker.handle_access_request(req, now)).await?;
    Ok(result_response(result))
}

/// Wire form of any broker result.
pub fn result_response(result: BrokerResult) -> Response {
    match result {
        BrokerResult::Issued(issued) => (
            StatusCode::OK,
            Json(json!({
                "status": "issued",
                "request_id": issued.request_id,
                "decision_seq": issued.decision_seq,
                "issuance_seq": issued.issuance_seq,
                "envelope": issued.credential.to_envelope(),
                "credential": issued.credential,
            })),
        )
            .into_response(),
        BrokerResult::Pending(p) => (
            StatusCode::ACCEPTED,
            Json(json!({
                "status": "pending",
                "request_id": p.request_id,
                "deadline": p.deadline,
                "decision_seq": p.decision_seq,
            })),
        )
            .into_response(),
        BrokerResult::Denied(d) => (StatusCode::FORBIDDEN, Json(denied_body(&d))).into_response(),
        BrokerResult::Error(f) => error_response(f.request_id.as_deref(), &f.error),
    }
}

fn denied_body(d: &Denied) -> Value {
    let approver = match &d.reason {
        DenyReason::ApproverDenied { approver } | DenyReason::PolicyRecheckFailed { approver } => {
            Some(approver)
        }
        _ => None,
    };
    json!({
        "status": "denied",
        "request_id": d.request_id,
        "reason": d.reason.category(),
        "approver": approver,
        "audit_seq": d.audit_seq,
        "trace": d.trace.as_ref().map(|t| &t.rules),
    })
}

fn pending_view(p: &PendingApproval) -> Value {
    json!({
        "request_id": p.request_id,
        "subject": p.ctx.subject,
        "resource": p.ctx.resource,
        "action": p.ctx.action,
        "justification": p.justification,
        "kind": p.kind,
        "requested_ttl_seconds": p.requested_ttl.as_secs(),
        "matched_rule_ids": p.decision.matched_rule_ids,
        "decision_seq": p.decision_seq,
        "created_at": p.created_at,
        "deadline": p.expires_at,
    })
}

async fn list_approvals(
    State(state): State<AppState>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let now = state.clock.now();
    let broker = state.broker.clone();
    let pending = blocking(move || broker.list_pending(now)).await?;
    let items: Vec<Value> = pending.iter().map(pending_view).collect();
    Ok(Json(json!({ "pending": items })).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    verdict: String,
    approver: String,
}

async fn submit_verdict(
    State(state): State<AppState>,
    Path(request_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let body: VerdictBody = parse_body(&body)?;
    let verdict = match body.verdict.as_str() {
        "approve" => Verdict::Approve,
        "deny" => Verdict::Deny,
        other => {
            return Err(ApiError::BadRequest(format!(
                "verdict must be approve or deny, got {other:?}"
            )))
        }
    };
    let approver = body.approver.trim().to_owned();
    if approver.is_empty() {
        return Err(ApiError::BadRequest("approver must not be empty".into()));
    }
    let now = state.clock.now();
    let broker = state.broker.clone();
    let result =
        blocking(move || broker.record_approval(&request_id, &approver, verdict, now)).await?;
    Ok(result_response(result))
}

fn parse_time(name: &str, value: &str) -> Result<Timestamp, ApiError> {
    value
        .parse::<i64>()
        .ok()
        .map(Timestamp::from_unix)
        .or_else(|| Timestamp::parse_rfc3339(value))
        .ok_or_else(|| ApiError::BadRequest(format!("{name} must be unix seconds or RFC 3339")))
}

fn parse_seq(name: &str, value: &str) -> Result<u64, ApiError> {
    value
        .parse()
        .map_err(|_| ApiError::BadRequest(format!("{name} must be a non-negative integer")))
}

/// Builds a filter from query parameters; unknown parameters are errors.
pub fn audit_filter(params: &HashMap<String, String>) -> Result<AuditFilter, ApiError> {
    let mut filter = AuditFilter::default();
    for (name, value) in params {
        match name.as_str() {
            "kind" => {
                filter.kind =
                    Some(value.parse::<EventKind>().map_err(|_| {
                        ApiError::BadRequest(format!("unknown event kind {value:?}"))
                    })?)
            }
            "request_id" => filter.request_id = Some(value.clone()),
            "subject" => filter.subject = Some(value.clone()),
            "seq_from" => filter.seq_from = Some(parse_seq(name, value)?),
            "seq_to" => filter.seq_to = Some(parse_seq(name, value)?),
            "since" => filter.since = Some(parse_time(name, value)?),
            "until" => filter.until = Some(parse_time(name, value)?),
            other => return Err(ApiError::BadRequest(format!("unknown filter {other:?}"))),
        }
    }
    filter
        .validate()
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(filter)
}

async fn query_audit(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let filter = audit_filter(&params)?;
    let (events, head) = state
        .broker
        .audit_query(&filter)
        .map_err(|e| ApiError::Broker(BrokerError::from(e)))?;
    Ok(Json(json!({ "events": events, "head": head })).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyBody {
    document: String,
}

async fn replace_policy(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let body: PolicyBody = parse_body(&body)?;
    let document =
        load_policy(&body.document, state.broker.settings().global_ttl_cap).map_err(|errors| {
            ApiError::Unprocessable {
                error: "policy-invalid",
                details: errors.0.iter().map(ToString::to_string).collect(),
            }
        })?;
    let rule_count = document.len();
    let now = state.clock.now();
    let broker = state.broker.clone();
    let version = blocking(move || broker.set_policy(document, now))
        .await?
        .map_err(ApiError::Broker)?;
    Ok(Json(json!({ "version": version, "rule_count": rule_count })).into_response())
}

async fn register_bundle(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let document: BundleDocument = parse_body(&body)?;
    let bundle = TrustBundle::try_from(document).map_err(|e| ApiError::Unprocessable {
        error: "bundle-invalid",
        details: vec![e.to_string()],
    })?;
    let trust_domain = bundle.trust_domain().to_owned();
    let key_count = bundle.keys().len();
    let now = state.clock.now();
    let broker = state.broker.clone();
    let replaced = blocking(move || broker.register_bundle(bundle, now))
        .await?
        .map_err(ApiError::Broker)?;
    Ok(Json(json!({
        "trust_domain": trust_domain,
        "key_count": key_count,
        "replaced": replaced,
    }))
    .into_response())
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    let head = state.broker.audit_head();
    Json(json!({
        "status": "ok",
        "policy_version": state.broker.policy_version(),
        "audit_count": head.count,
    }))
}
