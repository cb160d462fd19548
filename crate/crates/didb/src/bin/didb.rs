//! Builder CLI: generate synthetic CIDB exports, build versioned DIDB
//! stores, diff manifests and validate stores on disk.

use clap::{Parser, Subcommand};
use didb::{builder, store};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "didb", about = "DIDB store builder and maintenance tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a versioned store from a CIDB CSV export.
    Build {
        #[arg(long)]
        cidb: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        version: u64,
        /// Write a machine-readable JSON build report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Diff against this previous store and print changed chunks.
        #[arg(long)]
        old: Option<PathBuf>,
    },
    /// Print chunk indices that differ between two stores.
    Diff {
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
    },
    /// Generate a deterministic synthetic CIDB export.
    Gen {
        #[arg(long)]
        count: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a store's checksums and sort invariants.
    Validate {
        dir: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn write_report(path: &Option<PathBuf>, report: &serde_json::Value) -> anyhow::Result<()> {
    if let Some(path) = path {
        std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    }
    Ok(())
}

fn run() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Build {
            cidb,
            out,
            version,
            report,
            old,
        } => {
            let old_manifest = match &old {
                Some(dir) => Some(store::read_manifest(dir)?.0),
                None => None,
            };
            let (manifest, build_report) = builder::build(&cidb, version, &out)?;
            let changed = old_manifest.map(|m| store::diff_manifests(&m, &manifest));
            println!(
                "built version {} with {} records in {} chunks",
                manifest.didb_version,
                manifest.total_records,
                manifest.descriptors.len()
            );
            for r in &build_report.rejected {
                eprintln!("rejected row {}: {}", r.row, r.reason);
            }
            if let Some(changed) = &changed {
                println!("changed chunks vs old store: {changed:?}");
            }
            write_report(
                &report,
                &json!({
                    "manifest_version": manifest.didb_version,
                    "chunks": manifest.descriptors.len(),
                    "report": build_report,
                    "changed_chunks": changed,
                }),
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Diff { old, new } => {
            let (old_manifest, _) = store::read_manifest(&old)?;
            let (new_manifest, _) = store::read_manifest(&new)?;
            let changed = store::diff_manifests(&old_manifest, &new_manifest);
            for idx in &changed {
                println!("{idx}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen { count, seed, out } => {
            builder::generate_synthetic_cidb(count, seed, &out)?;
            println!("wrote {count} rows to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { dir, report } => {
            let corrupt = store::validate_store(&dir)?;
            write_report(&report, &json!({ "corrupt_chunks": corrupt }))?;
            if corrupt.is_empty() {
                println!("store valid");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("corrupt chunks: {corrupt:?}");
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("didb: {e}");
            ExitCode::FAILURE
        }
    }
}
