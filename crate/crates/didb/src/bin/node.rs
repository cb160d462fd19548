//! Private-node daemon: local DIDB store, verification server, peer
//! sync and directory heartbeat.

use clap::Parser;
use didb::node::{self, NodeConfig};
use didb::protocol::NodeDescriptor;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "didb-node", about = "DIDB private-network node daemon")]
struct Cli {
    /// Node root; the active store lives under <store>/current.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Verification listener port (0 picks an ephemeral port).
    #[arg(long)]
    verify_port: Option<u16>,
    /// Sync listener port (0 picks an ephemeral port).
    #[arg(long)]
    sync_port: Option<u16>,
    /// Directory server to heartbeat against, host:port.
    #[arg(long)]
    directory: Option<String>,
    /// Seed peer to sync from, host:port; may repeat.
    #[arg(long = "peer")]
    peers: Vec<String>,
    /// Sync/heartbeat poll interval in seconds.
    #[arg(long)]
    interval: Option<f64>,
    /// Load key=value settings from a file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = NodeConfig::new(PathBuf::from("didb-store"));
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(store) = cli.store {
        cfg.store_root = store;
    }
    if let Some(p) = cli.verify_port {
        cfg.verify_port = p;
    }
    if let Some(p) = cli.sync_port {
        cfg.sync_port = p;
    }
    if let Some(d) = &cli.directory {
        cfg.directory = Some(NodeDescriptor::parse(d).map_err(|e| anyhow::anyhow!("{e}"))?);
    }
    for p in &cli.peers {
        cfg.peers
            .push(NodeDescriptor::parse(p).map_err(|e| anyhow::anyhow!("{e}"))?);
    }
    if let Some(secs) = cli.interval {
        cfg.poll_interval = std::time::Duration::from_secs_f64(secs);
    }

    let running = node::start(cfg)?;
    // Runs until the process is terminated.
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
        let _ = &running;
    }
}
