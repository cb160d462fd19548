//! Multi-process integration harness CLI: runs one scenario against real
//! daemons on localhost ports and emits a JSON report.

use clap::{Parser, Subcommand};
use didb::simnet::{self, SimnetConfig};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "didb-sim", about = "DIDB desk-scale network scenarios")]
struct Cli {
    #[command(subcommand)]
    scenario: Scenario,
    /// Follower node count (the seed is additional).
    #[arg(long, global = true, default_value_t = 4)]
    nodes: usize,
    #[arg(long, global = true, default_value_t = 100_000)]
    records: u64,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Working directory for stores and logs; a temp dir by default.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[arg(long, global = true)]
    json_report: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 60)]
    timeout_secs: u64,
}

#[derive(Subcommand)]
enum Scenario {
    /// Seed + followers converge to identical manifests.
    Bootstrap,
    /// Publish an updated version; followers fetch only changed chunks.
    Update {
        /// Number of corrected records (1 crafts a same-chunk correction).
        #[arg(long, default_value_t = 1)]
        changed: usize,
    },
    /// Kill nodes mid-flight; clients must still get answers.
    Failover {
        #[arg(long, default_value_t = 0.5)]
        kill_fraction: f64,
        #[arg(long, default_value_t = 200)]
        probes: usize,
    },
    /// Node keeps answering with directory and peers gone.
    Offline {
        #[arg(long, default_value_t = 100)]
        probes: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let tmp;
    let workdir = match &cli.workdir {
        Some(dir) => dir.clone(),
        None => {
            tmp = match tempdir() {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("didb-sim: {e}");
                    return ExitCode::FAILURE;
                }
            };
            tmp.clone()
        }
    };
    let mut cfg = SimnetConfig::new(workdir);
    cfg.followers = cli.nodes;
    cfg.records = cli.records;
    cfg.seed = cli.seed;
    cfg.convergence_timeout = Duration::from_secs(cli.timeout_secs);

    let result: Result<serde_json::Value, simnet::SimError> = match cli.scenario {
        Scenario::Bootstrap => {
            simnet::scenario_bootstrap(&cfg).map(|r| serde_json::to_value(r).unwrap())
        }
        Scenario::Update { changed } => {
            simnet::scenario_update(&cfg, changed).map(|r| serde_json::to_value(r).unwrap())
        }
        Scenario::Failover {
            kill_fraction,
            probes,
        } => simnet::scenario_failover(&cfg, kill_fraction, probes)
            .map(|r| serde_json::to_value(r).unwrap()),
        Scenario::Offline { probes } => {
            simnet::scenario_offline(&cfg, probes).map(|r| serde_json::to_value(r).unwrap())
        }
    };

    match result {
        Ok(report) => {
            let text = serde_json::to_string_pretty(&report).unwrap();
            println!("{text}");
            if let Some(path) = &cli.json_report {
                if let Err(e) = std::fs::write(path, &text) {
                    eprintln!("didb-sim: cannot write report: {e}");
                    return ExitCode::FAILURE;
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("didb-sim: {e}");
            ExitCode::FAILURE
        }
    }
}

fn tempdir() -> std::io::Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!("didb-sim-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
