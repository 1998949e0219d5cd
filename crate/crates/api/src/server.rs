use std::net::SocketAddr;
use std::sync::Arc;

use credbroker_core::audit::{AuditError, AuditLog};
use credbroker_core::broker::{Broker, BrokerError};
use credbroker_core::identity::{BundleError, TrustBundle};
use credbroker_core::policy::{load_policy, PolicyLoadErrors};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::clock::Clock;
use crate::config::{BrokerConfig, ConfigError};
use crate::http::{router, AppState};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("policy {path}: {errors}")]
    Policy {
        path: String,
        errors: PolicyLoadErrors,
    },
    #[error("trust bundle {path}: {error}")]
    Bundle { path: String, error: BundleError },
    #[error("audit log is unrecoverable: {0}")]
    AuditUnrecoverable(AuditError),
    #[error("cannot record startup configuration: {0}")]
    Startup(BrokerError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
}

/// Opens the audit log, then installs the configured bundles and policy.
/// Startup itself is audited, so the log records what the broker ran with.
pub fn build_broker(config: &BrokerConfig, clock: &dyn Clock) -> Result<Broker, ServeError> {
    let key = config.read_minting_key()?;
    let policy_text =
        std::fs::read_to_string(&config.policy).map_err(|source| ConfigError::Read {
            path: config.policy.clone(),
            source,
        })?;
    let policy =
        load_policy(&policy_text, config.global_ttl).map_err(|errors| ServeError::Policy {
            path: config.policy.display().to_string(),
            errors,
        })?;
    let mut bundles = Vec::new();
    for path in &config.trust_bundles {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?;
        let bundle = TrustBundle::from_toml(&text).map_err(|error| ServeError::Bundle {
            path: path.display().to_string(),
            error,
        })?;
        bundles.push(bundle);
    }
    let audit = AuditLog::open(&config.audit_log, config.audit_sync)
        .map_err(ServeError::AuditUnrecoverable)?;
    let broker = Broker::new(config.settings(), key, audit);
    let now = clock.now();
    for bundle in bundles {
        broker
            .register_bundle(bundle, now)
            .map_err(ServeError::Startup)?;
    }
    broker
        .set_policy(policy, now)
        .map_err(ServeError::Startup)?;
    Ok(broker)
}

/// A running server.
pub struct ServiceHandle {
    pub local_addr: SocketAddr,
    pub broker: Arc<Broker>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    /// Stops accepting connections and waits for in-flight requests.
    /// Audit appends are written through before each response, so nothing is
    /// left to flush afterwards.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.map_err(std::io::Error::other)?
    }

    /// Waits until the server exits on its own (e.g. a signal).
    pub async fn wait(self) -> std::io::Result<()> {
        let _keep_open = self.shutdown;
        self.task.await.map_err(std::io::Error::other)?
    }
}

pub async fn serve(
    config: &BrokerConfig,
    clock: Arc<dyn Clock>,
) -> Result<ServiceHandle, ServeError> {
    let admin_token = config.read_admin_token()?;
    let broker = Arc::new(build_broker(config, clock.as_ref())?);
    let listener = TcpListener::bind(config.listen)
        .await
        .map_err(|source| ServeError::Bind {
            addr: config.listen,
            source,
        })?;
    serve_on(listener, broker, admin_token.into(), clock)
}

/// Serves an already built broker on a bound listener.
pub fn serve_on(
    listener: TcpListener,
    broker: Arc<Broker>,
    admin_token: Arc<str>,
    clock: Arc<dyn Clock>,
) -> Result<ServiceHandle, ServeError> {
    let local_addr = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: "0.0.0.0:0".parse().expect("literal address"),
        source,
    })?;
    let app = router(AppState {
        broker: broker.clone(),
        admin_token,
        clock,
    });
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%local_addr, "credential broker listening");
    Ok(ServiceHandle {
        local_addr,
        broker,
        shutdown: Some(tx),
        task,
    })
}
