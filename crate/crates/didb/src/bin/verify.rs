//! Outside-machine verifier CLI. Exit code 0 on FOUND, 1 on NOT_FOUND,
//! 2 on any error.

use chrono::NaiveDate;
use clap::Parser;
use didb::client::{Client, ClientError, ClientOptions, NodeSource, VerifyStatus};
use didb::protocol::NodeDescriptor;
use didb::record::{DidbRecord, IdentityFields};
use serde_json::json;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "didb-verify", about = "Verify an identity document against the DIDB network")]
struct Cli {
    /// Directory server, host:port.
    #[arg(long)]
    directory: Option<String>,
    /// Explicit node address, host:port; may repeat.
    #[arg(long = "node")]
    nodes: Vec<String>,
    #[arg(long)]
    serial: Option<String>,
    #[arg(long)]
    name: Option<String>,
    /// Date of birth, YYYY-MM-DD.
    #[arg(long)]
    dob: Option<NaiveDate>,
    #[arg(long, default_value = "")]
    blood: String,
    #[arg(long, default_value = "")]
    place: String,
    /// Issue date, YYYY-MM-DD.
    #[arg(long)]
    issue: Option<NaiveDate>,
    /// Pre-hashed 46-character parameter; bypasses field entry.
    #[arg(long)]
    param: Option<String>,
    /// Emit a machine-readable result with the attempts log.
    #[arg(long)]
    json: bool,
    /// Maximum nodes to try; defaults to the list length.
    #[arg(long)]
    retries: Option<usize>,
}

fn build_record(cli: &Cli) -> anyhow::Result<DidbRecord> {
    if let Some(param) = &cli.param {
        return DidbRecord::parse(param).map_err(|e| anyhow::anyhow!("bad --param: {e}"));
    }
    let (serial, name, dob, issue) = match (&cli.serial, &cli.name, cli.dob, cli.issue) {
        (Some(s), Some(n), Some(d), Some(i)) => (s, n, d, i),
        _ => anyhow::bail!("provide --param or all of --serial --name --dob --issue"),
    };
    let fields = IdentityFields::new(serial, name, dob, &cli.blood, &cli.place, issue)?;
    Ok(didb::record::make_record(&fields)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "status": "ERROR", "error": e.to_string() }));
            } else {
                eprintln!("didb-verify: {e}");
            }
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let record = build_record(cli)?;
    let source = if !cli.nodes.is_empty() {
        let nodes = cli
            .nodes
            .iter()
            .map(|n| NodeDescriptor::parse(n).map_err(|e| anyhow::anyhow!("bad --node: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        NodeSource::Explicit(nodes)
    } else if let Some(d) = &cli.directory {
        NodeSource::Directory(NodeDescriptor::parse(d).map_err(|e| anyhow::anyhow!("{e}"))?)
    } else {
        anyhow::bail!("provide --directory or at least one --node");
    };

    let client = Client::new(
        source,
        ClientOptions {
            retry_budget: cli.retries,
            ..ClientOptions::default()
        },
    );
    match client.verify_record(&record) {
        Ok(outcome) => {
            let status = match outcome.status {
                VerifyStatus::Found => "FOUND",
                VerifyStatus::NotFound => "NOT_FOUND",
            };
            if cli.json {
                println!(
                    "{}",
                    json!({
                        "status": status,
                        "didb_version": outcome.didb_version,
                        "node": outcome.node.to_string(),
                        "attempts": outcome.attempts,
                    })
                );
            } else {
                println!(
                    "{status} (version {}, node {})",
                    outcome.didb_version, outcome.node
                );
            }
            Ok(match outcome.status {
                VerifyStatus::Found => ExitCode::SUCCESS,
                VerifyStatus::NotFound => ExitCode::from(1),
            })
        }
        Err(ClientError::AllNodesFailed(attempts)) => {
            if cli.json {
                println!(
                    "{}",
                    json!({ "status": "ERROR", "error": "all nodes failed", "attempts": attempts })
                );
            } else {
                eprintln!("didb-verify: all nodes failed");
                for a in &attempts {
                    eprintln!("  {}: {}", a.node, a.outcome);
                }
            }
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}
