use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use credbroker_api::{build_broker, serve, BrokerConfig, ConfigError, ManualClock, ServeError};
use credbroker_core::audit::verify_log_bytes;
use credbroker_core::identity::{LocalIssuer, SpiffeId};
use credbroker_core::minting::MintingKey;
use credbroker_core::Timestamp;
use serde_json::Value;

const T0: Timestamp = Timestamp::from_unix(1_760_000_000);

fn issuer() -> LocalIssuer {
    let mut issuer = LocalIssuer::new("ci");
    issuer.add_key("k1", [1; 32], Timestamp::from_unix(T0.unix() + 86_400));
    issuer
}

/// Lays out a complete deployment directory and returns its config text.
fn deployment(dir: &Path) -> String {
    std::fs::create_dir_all(dir.join("var")).unwrap();
    std::fs::write(
        dir.join("policy.toml"),
        include_str!("../../../policies/canonical-deploy.toml"),
    )
    .unwrap();
    std::fs::write(dir.join("ci.toml"), issuer().bundle(true).to_toml()).unwrap();
    std::fs::write(
        dir.join("minting.key"),
        MintingKey::from_bytes([5; 32]).to_base64(),
    )
    .unwrap();
    std::fs::write(dir.join("admin.token"), "admin-token\n").unwrap();
    r#"
listen = "127.0.0.1:0"
audience = "credbroker"
policy = "policy.toml"
trust_bundles = ["ci.toml"]
minting_key_file = "minting.key"
admin_token_file = "admin.token"
audit_log = "var/audit.log"
audit_sync = false

[cache]
enabled = true
"#
    .to_owned()
}

async fn http(addr: std::net::SocketAddr, method: &str, path: &str, body: &str) -> (u16, Value) {
    let request = format!(
        "{method} {path} HTTP/1.1\r\nhost: localhost\r\ncontent-type: application/json\r\nauthorization: Bearer admin-token\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    let response = tokio::task::spawn_blocking(move || {
        use std::io::{Read, Write};
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        stream.write_all(request.as_bytes()).unwrap();
        let mut response = String::new();
        stream.read_to_string(&mut response).unwrap();
        response
    })
    .await
    .unwrap();
    let status = response[9..12].parse().unwrap();
    let body = response.split_once("\r\n\r\n").unwrap().1;
    (status, serde_json::from_str(body).unwrap_or(Value::Null))
}

#[tokio::test]
async fn serves_over_tcp_and_persists_audit() {
    let dir = tempfile::tempdir().unwrap();
    let config = BrokerConfig::from_toml(&deployment(dir.path()), dir.path()).unwrap();
    let clock = Arc::new(ManualClock::new(T0));
    let handle = serve(&config, clock).await.unwrap();
    let addr = handle.local_addr;

    let token = issuer()
        .issue_token(
            "k1",
            &SpiffeId::parse("spiffe://ci/org/deploy").unwrap(),
            "credbroker",
            Default::default(),
            Duration::from_secs(60),
            T0,
        )
        .unwrap()
        .encode();
    let body = format!(
        r#"{{"token":"{token}","resource":"s3://prod-release-artifacts","action":"write"}}"#
    );
    let (status, issued) = http(addr, "POST", "/v1/credentials", &body).await;
    assert_eq!(status, 200, "{issued}");
    let (status, health) = http(addr, "GET", "/healthz", "").await;
    assert_eq!(status, 200);
    assert_eq!(health["audit_count"], 4); // bundle, policy, decision, issuance
    handle.shutdown().await.unwrap();

    let bytes = std::fs::read(dir.path().join("var/audit.log")).unwrap();
    let (status, events) = verify_log_bytes(&bytes);
    assert!(status.is_ok());
    assert_eq!(events.len(), 4);

    // a restart resumes the same chain
    let broker = build_broker(&config, &ManualClock::new(T0)).unwrap();
    assert_eq!(broker.audit_head().count, 6);
}

#[test]
fn tampered_audit_log_blocks_startup() {
    let dir = tempfile::tempdir().unwrap();
    let config = BrokerConfig::from_toml(&deployment(dir.path()), dir.path()).unwrap();
    drop(build_broker(&config, &ManualClock::new(T0)).unwrap());
    let path = dir.path().join("var/audit.log");
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"local\":true"));
    let text = text.replacen("\"local\":true", "\"local\":false", 1);
    std::fs::write(&path, text).unwrap();
    assert!(matches!(
        build_broker(&config, &ManualClock::new(T0)),
        Err(ServeError::AuditUnrecoverable(_))
    ));
}

#[test]
fn config_errors_are_precise() {
    let dir = tempfile::tempdir().unwrap();
    let text = deployment(dir.path());
    let base = dir.path();

    let zero = text.replace(
        "audit_sync = false",
        "audit_sync = false\nglobal_ttl_seconds = 0",
    );
    assert!(matches!(
        BrokerConfig::from_toml(&zero, base),
        Err(ConfigError::NotPositive {
            field: "global_ttl_seconds"
        })
    ));
    let zero = text.replace(
        "audit_sync = false",
        "audit_sync = false\napproval_window_seconds = 0",
    );
    assert!(matches!(
        BrokerConfig::from_toml(&zero, base),
        Err(ConfigError::NotPositive {
            field: "approval_window_seconds"
        })
    ));

    let missing = text.replace("\"ci.toml\"", "\"nope.toml\"");
    let err = BrokerConfig::from_toml(&missing, base).unwrap_err();
    assert!(matches!(
        err,
        ConfigError::MissingFile {
            field: "trust_bundles",
            ..
        }
    ));
    assert!(err.to_string().contains("nope.toml"));

    let unknown = format!("{text}\ncolour = 1\n");
    assert!(matches!(
        BrokerConfig::from_toml(&unknown, base),
        Err(ConfigError::Parse(_))
    ));

    std::fs::write(base.join("minting.key"), "short").unwrap();
    let config = BrokerConfig::from_toml(&text, base).unwrap();
    assert!(matches!(
        build_broker(&config, &ManualClock::new(T0)),
        Err(ServeError::Config(ConfigError::InvalidMintingKey(_)))
    ));
}

#[test]
fn invalid_policy_file_blocks_startup() {
    let dir = tempfile::tempdir().unwrap();
    let config = BrokerConfig::from_toml(&deployment(dir.path()), dir.path()).unwrap();
    std::fs::write(dir.path().join("policy.toml"), "[[rules]]\nid = \"x\"\n").unwrap();
    let err = build_broker(&config, &ManualClock::new(T0)).unwrap_err();
    assert!(matches!(err, ServeError::Policy { .. }));
    assert!(err.to_string().contains("policy.toml"));
}

#[tokio::test]
async fn bind_failure_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port();
    let text = deployment(dir.path()).replace("127.0.0.1:0", &format!("127.0.0.1:{port}"));
    let config = BrokerConfig::from_toml(&text, dir.path()).unwrap();
    assert!(matches!(
        serve(&config, Arc::new(ManualClock::new(T0))).await,
        Err(ServeError::Bind { .. })
    ));
}
