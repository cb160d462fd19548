//! Capacity calculator CLI.

use clap::Parser;
use didb::sizing::{self, GIB, MIB};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "didb-size", about = "DIDB capacity calculator")]
struct Cli {
    /// Identity count to size for.
    #[arg(long)]
    records: Option<u64>,
    /// Chunk size in MiB.
    #[arg(long, default_value_t = 4.9)]
    chunk_mb: f64,
    /// Full-sync transfer rate in MiB/s.
    #[arg(long, default_value_t = 1.0)]
    rate_mbps: f64,
    /// New identities per year, for growth projection.
    #[arg(long, default_value_t = 3_000_000)]
    yearly: u64,
    #[arg(long, default_value_t = 10)]
    years: u64,
    /// Fleet machine pool.
    #[arg(long, default_value_t = 27_440)]
    machines: u64,
    /// Fraction of machines participating as nodes.
    #[arg(long, default_value_t = 0.01)]
    fraction: f64,
    /// Requests per second each node can serve.
    #[arg(long, default_value_t = 100.0)]
    per_node: f64,
    /// Print the published worked examples with expected values.
    #[arg(long)]
    paper: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if cli.paper {
        let mut all_ok = true;
        println!("{:<48} {:>18} {:>18} {:>6}", "figure", "computed", "expected", "ok");
        for v in sizing::paper_values() {
            let ok = v.reproduces();
            all_ok &= ok;
            println!(
                "{:<48} {:>18} {:>18} {:>6}",
                v.label,
                format!("{:.11}", v.computed),
                v.printed_repr,
                if ok { "yes" } else { "NO" }
            );
        }
        return if all_ok {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        };
    }

    let Some(records) = cli.records else {
        eprintln!("didb-size: provide --records <n> or --paper");
        return ExitCode::FAILURE;
    };
    let bytes = sizing::didb_size_bytes(records);
    let chunk_bytes = cli.chunk_mb * MIB;
    let chunks = sizing::chunk_count(bytes as f64, chunk_bytes);
    let checksum_bytes = sizing::checksum_storage(chunks, 64);
    let sync_hours = sizing::sync_time_hours(bytes as f64, cli.rate_mbps * MIB);
    let (nodes, rps) = sizing::fleet_capacity(cli.machines, cli.fraction, cli.per_node);
    let growth = sizing::annual_growth_bytes(cli.yearly, cli.years);

    println!("records            {records}");
    println!(
        "store size         {bytes} bytes = {:.6} MiB = {:.6} GiB",
        bytes as f64 / MIB,
        bytes as f64 / GIB
    );
    println!("chunks             {chunks} x {:.1} MiB", cli.chunk_mb);
    println!(
        "checksum storage   {checksum_bytes} bytes = {:.6} MiB",
        checksum_bytes as f64 / MIB
    );
    println!(
        "full sync          {:.3} hours at {:.1} MiB/s",
        sync_hours, cli.rate_mbps
    );
    println!(
        "growth             {:.3} GiB over {} years at {} records/year",
        growth as f64 / GIB,
        cli.years,
        cli.yearly
    );
    println!(
        "fleet              {nodes} nodes ({} machines x {}) -> {rps} req/s",
        cli.machines, cli.fraction
    );
    ExitCode::SUCCESS
}
