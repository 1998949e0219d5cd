use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use clap::{Parser, Subcommand};
use credbroker_api::{serve, BrokerConfig, SystemClock};
use credbroker_core::identity::{LocalIssuer, SpiffeId};
use credbroker_core::minting::MintingKey;
use credbroker_core::Timestamp;
use rand::RngCore;

#[derive(Parser)]
#[command(
    name = "credbroker",
    version,
    about = "Just-in-time credential broker for CI/CD workloads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a fresh minting key (base64, 32 bytes).
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Create a workload signing key for a trust domain and print its bundle.
    WorkloadKey {
        #[arg(long)]
        trust_domain: String,
        #[arg(long, default_value = "k1")]
        key_id: String,
        /// Where to store the private seed (base64).
        #[arg(long)]
        seed_out: PathBuf,
        /// Where to store the trust bundle (TOML).
        #[arg(long)]
        bundle_out: PathBuf,
        #[arg(long, default_value_t = 365)]
        valid_days: u64,
    },
    /// Sign a workload identity token with a seed from `workload-key`.
    IssueToken {
        #[arg(long)]
        seed: PathBuf,
        #[arg(long, default_value = "k1")]
        key_id: String,
        #[arg(long)]
        subject: String,
        #[arg(long, default_value = "credbroker")]
        audience: String,
        #[arg(long, default_value_t = 600)]
        ttl_seconds: u64,
        /// Extra claims as key=value; repeatable.
        #[arg(long = "claim", value_parser = parse_claim)]
        claims: Vec<(String, String)>,
    },
}

fn parse_claim(text: &str) -> Result<(String, String), String> {
    text.split_once('=')
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected key=value, got {text:?}"))
}

fn write_secret(path: &PathBuf, contents: &str) -> std::io::Result<()> {
    let mut options = std::fs::OpenOptions::new();
    options.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    use std::io::Write;
    options.open(path)?.write_all(contents.as_bytes())
}

fn read_seed(path: &PathBuf) -> Result<[u8; 32], String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let raw = STANDARD
        .decode(text.trim())
        .map_err(|_| format!("{}: not base64", path.display()))?;
    raw.try_into()
        .map_err(|_| format!("{}: seed must be 32 bytes", path.display()))
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Serve { config } => {
            let config = BrokerConfig::from_file(&config).map_err(|e| e.to_string())?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime.block_on(async {
                let handle = serve(&config, Arc::new(SystemClock))
                    .await
                    .map_err(|e| e.to_string())?;
                eprintln!("listening on {}", handle.local_addr);
                tokio::signal::ctrl_c().await.map_err(|e| e.to_string())?;
                eprintln!("shutting down");
                handle.shutdown().await.map_err(|e| e.to_string())
            })
        }
        Command::Keygen { out } => write_secret(&out, &(MintingKey::generate().to_base64() + "\n"))
            .map_err(|e| format!("{}: {e}", out.display())),
        Command::WorkloadKey {
            trust_domain,
            key_id,
            seed_out,
            bundle_out,
            valid_days,
        } => {
            let mut seed = [0u8; 32];
            rand::rngs::OsRng.fill_bytes(&mut seed);
            let mut issuer = LocalIssuer::new(&trust_domain);
            let not_after = Timestamp::now() + Duration::from_secs(valid_days * 86_400);
            issuer.add_key(&key_id, seed, not_after);
            write_secret(&seed_out, &(STANDARD.encode(seed) + "\n"))
                .map_err(|e| format!("{}: {e}", seed_out.display()))?;
            std::fs::write(&bundle_out, issuer.bundle(true).to_toml())
                .map_err(|e| format!("{}: {e}", bundle_out.display()))
        }
        Command::IssueToken {
            seed,
            key_id,
            subject,
            audience,
            ttl_seconds,
            claims,
        } => {
            let subject = SpiffeId::parse(&subject).map_err(|e| e.to_string())?;
            let mut issuer = LocalIssuer::new(subject.trust_domain());
            issuer.add_key(&key_id, read_seed(&seed)?, Timestamp::from_unix(i64::MAX));
            let token = issuer
                .issue_token(
                    &key_id,
                    &subject,
                    &audience,
                    claims.into_iter().collect(),
                    Duration::from_secs(ttl_seconds),
                    Timestamp::now(),
                )
                .map_err(|e| e.to_string())?;
            println!("{}", token.encode());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
