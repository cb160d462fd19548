//! Trusted directory server: relays live node addresses to clients.

use clap::Parser;
use serde_json::json;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "didb-directory", about = "DIDB trusted directory server")]
struct Cli {
    #[arg(long, default_value_t = 0)]
    port: u16,
    /// Seconds a registration stays live without a fresh heartbeat.
    #[arg(long, default_value_t = 30.0)]
    ttl: f64,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let running = didb::directory::serve(cli.port, Duration::from_secs_f64(cli.ttl))?;
    println!(
        "{}",
        json!({ "event": "listening", "port": running.addr().port() })
    );
    loop {
        std::thread::sleep(Duration::from_secs(3600));
        let _ = &running;
    }
}
