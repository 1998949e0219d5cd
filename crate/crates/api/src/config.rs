//! Server configuration file.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! audience = "credbroker"
//! policy = "policy.toml"
//! trust_bundles = ["bundles/ci.toml"]
//! minting_key_file = "secrets/minting.key"
//! admin_token_file = "secrets/admin.token"
//! audit_log = "var/audit.log"
//! global_ttl_seconds = 900
//! approval_window_seconds = 3600
//!
//! [cache]
//! enabled = true
//! ttl_seconds = 30
//! capacity = 1024
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use credbroker_core::broker::{BrokerSettings, CacheSettings};
use credbroker_core::minting::MintingKey;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("{field} must be greater than zero")]
    NotPositive { field: &'static str },
    #[error("{field} refers to {}, which does not exist", path.display())]
    MissingFile { field: &'static str, path: PathBuf },
    #[error("audit_log directory {} does not exist", .0.display())]
    MissingAuditDir(PathBuf),
    #[error("minting key in {} must be 32 bytes of standard base64", .0.display())]
    InvalidMintingKey(PathBuf),
    #[error("admin token in {} is empty", .0.display())]
    EmptyAdminToken(PathBuf),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    listen: SocketAddr,
    audience: String,
    policy: PathBuf,
    #[serde(default)]
    trust_bundles: Vec<PathBuf>,
    minting_key_file: PathBuf,
    admin_token_file: PathBuf,
    audit_log: PathBuf,
    #[serde(default = "default_true")]
    audit_sync: bool,
    #[serde(default = "default_ttl")]
    global_ttl_seconds: u64,
    #[serde(default = "default_window")]
    approval_window_seconds: u64,
    #[serde(default)]
    cache: RawCache,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCache {
    #[serde(default)]
    enabled: bool,
    #[serde(default = "default_cache_ttl")]
    ttl_seconds: u64,
    #[serde(default = "default_cache_capacity")]
    capacity: usize,
}

impl Default for RawCache {
    fn default() -> Self {
        RawCache {
            enabled: false,
            ttl_seconds: default_cache_ttl(),
            capacity: default_cache_capacity(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_ttl() -> u64 {
    900
}
fn default_window() -> u64 {
    3600
}
fn default_cache_ttl() -> u64 {
    30
}
fn default_cache_capacity() -> usize {
    1024
}

/// Validated configuration with absolute paths.
#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub listen: SocketAddr,
    pub audience: String,
    pub policy: PathBuf,
    pub trust_bundles: Vec<PathBuf>,
    pub minting_key_file: PathBuf,
    pub admin_token_file: PathBuf,
    pub audit_log: PathBuf,
    /// fsync every audit append before answering.
    pub audit_sync: bool,
    pub global_ttl: Duration,
    pub approval_window: Duration,
    pub cache: CacheSettings,
}

impl BrokerConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let config = BrokerConfig {
            listen: raw.listen,
            audience: raw.audience,
            policy: base.join(raw.policy),
            trust_bundles: raw
                .trust_bundles
                .into_iter()
                .map(|p| base.join(p))
                .collect(),
            minting_key_file: base.join(raw.minting_key_file),
            admin_token_file: base.join(raw.admin_token_file),
            audit_log: base.join(raw.audit_log),
            audit_sync: raw.audit_sync,
            global_ttl: Duration::from_secs(raw.global_ttl_seconds),
            approval_window: Duration::from_secs(raw.approval_window_seconds),
            cache: CacheSettings {
                enabled: raw.cache.enabled,
                ttl: Duration::from_secs(raw.cache.ttl_seconds),
                capacity: raw.cache.capacity,
            },
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks limits and that every referenced file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.audience.is_empty() {
            return Err(ConfigError::Parse("audience must not be empty".into()));
        }
        if self.global_ttl.is_zero() {
            return Err(ConfigError::NotPositive {
                field: "global_ttl_seconds",
            });
        }
        if self.approval_window.is_zero() {
            return Err(ConfigError::NotPositive {
                field: "approval_window_seconds",
            });
        }
        if self.cache.enabled && (self.cache.ttl.is_zero() || self.cache.capacity == 0) {
            return Err(ConfigError::NotPositive {
                field: "cache.ttl_seconds and cache.capacity",
            });
        }
        let mut files = vec![
            ("policy", &self.policy),
            ("minting_key_file", &self.minting_key_file),
            ("admin_token_file", &self.admin_token_file),
        ];
        files.extend(self.trust_bundles.iter().map(|p| ("trust_bundles", p)));
        for (field, path) in files {
            if !path.is_file() {
                return Err(ConfigError::MissingFile {
                    field,
                    path: path.clone(),
                });
            }
        }
        let dir = self.audit_log.parent().unwrap_or(Path::new("."));
        if !dir.as_os_str().is_empty() && !dir.is_dir() {
            return Err(ConfigError::MissingAuditDir(dir.to_owned()));
        }
        Ok(())
    }

    pub fn settings(&self) -> BrokerSettings {
        BrokerSettings {
            global_ttl_cap: self.global_ttl,
            approval_window: self.approval_window,
            cache: self.cache,
            ..BrokerSettings::new(self.audience.clone())
        }
    }

    pub fn read_minting_key(&self) -> Result<MintingKey, ConfigError> {
        let text = read(&self.minting_key_file)?;
        MintingKey::from_base64(text.trim())
            .ok_or_else(|| ConfigError::InvalidMintingKey(self.minting_key_file.clone()))
    }

    pub fn read_admin_token(&self) -> Result<String, ConfigError> {
        let token = read(&self.admin_token_file)?.trim().to_owned();
        if token.is_empty() {
            return Err(ConfigError::EmptyAdminToken(self.admin_token_file.clone()));
        }
        Ok(token)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })
}
