use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use credbroker_core::audit::{
    check_head, verify_log_bytes, AuditLog, ChainHead, ChainStatus, FileStore,
};
use credbroker_sim::builtin::{all_builtin, builtin, builtin_names};
use credbroker_sim::{
    render_json, render_table, run_scenario, run_with_audit, RunOutput, Scenario,
};

#[derive(Parser)]
#[command(
    name = "simulate",
    version,
    about = "Compare CI/CD access models on a simulated timeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metrics.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write metrics and the event trace as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Persist the broker's audit log here (brokered scenarios only).
        #[arg(long)]
        audit_log: Option<PathBuf>,
    },
    /// Run every bundled scenario and print the comparison table.
    Compare {
        #[arg(long, required = true)]
        all_builtin: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Check an audit log's hash chain (and its head file, when present).
    VerifyAudit {
        #[arg(long)]
        log: PathBuf,
        /// Head file; defaults to `<log>.head` if that exists.
        #[arg(long)]
        head: Option<PathBuf>,
    },
}

fn load(reference: &str) -> Result<Scenario, String> {
    if let Some(found) = builtin(reference) {
        return found.map_err(|e| e.to_string());
    }
    let path = Path::new(reference);
    if !path.exists() {
        let names: Vec<_> = builtin_names().collect();
        return Err(format!(
            "{reference}: no such file or bundled scenario ({})",
            names.join(", ")
        ));
    }
    Scenario::from_file(path).map_err(|e| e.to_string())
}

fn verify_audit(log: &Path, head: Option<PathBuf>) -> Result<bool, String> {
    let bytes = std::fs::read(log).map_err(|e| format!("{}: {e}", log.display()))?;
    let (status, events) = verify_log_bytes(&bytes);
    if let ChainStatus::Broken { first_bad_seq } = status {
        println!("BROKEN: chain fails at seq {first_bad_seq}");
        return Ok(false);
    }
    let head_path = head.or_else(|| Some(FileStore::head_path_for(log)).filter(|p| p.exists()));
    if let Some(path) = head_path {
        let raw = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let head = ChainHead::parse(&raw)
            .ok_or_else(|| format!("{}: not a chain head", path.display()))?;
        if let Err(e) = check_head(&events, &head) {
            println!("BROKEN: {e}");
            return Ok(false);
        }
    }
    let last = events
        .last()
        .map_or_else(|| "-".to_owned(), |e| e.this_hash.to_hex());
    println!("ok: {} events, head {last}", events.len());
    Ok(true)
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            audit_log,
        } => {
            let scenario = load(&scenario)?;
            let output: RunOutput = match audit_log {
                Some(path) => {
                    let log = AuditLog::open(&path, false)
                        .map_err(|e| format!("{}: {e}", path.display()))?;
                    run_with_audit(&scenario, seed, log)
                }
                None => run_scenario(&scenario, seed),
            }
            .map_err(|e| e.to_string())?;
            print!(
                "{}",
                render_table(std::slice::from_ref(&output)).map_err(|e| e.to_string())?
            );
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&output).map_err(|e| e.to_string())?;
                std::fs::write(&path, text + "\n")
                    .map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(true)
        }
        Command::Compare { seed, json, .. } => {
            let runs = all_builtin()
                .iter()
                .map(|s| run_scenario(s, seed))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let text = if json {
                render_json(&runs)
            } else {
                render_table(&runs)
            }
            .map_err(|e| e.to_string())?;
            println!("{}", text.trim_end());
            Ok(true)
        }
        Command::VerifyAudit { log, head } => verify_audit(&log, head),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
