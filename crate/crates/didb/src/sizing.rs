//! Capacity model: store size, growth, chunk counts, checksum overhead,
//! full-sync time and fleet throughput. Sizes are binary (1024-based)
//! throughout; that is what makes the published worked examples come out
//! to their printed decimals.

pub const RECORD_BYTES: u64 = 46;
pub const KIB: f64 = 1024.0;
pub const MIB: f64 = 1024.0 * 1024.0;
pub const GIB: f64 = 1024.0 * 1024.0 * 1024.0;

/// Total store bytes for `n` identities: exactly 46n.
pub fn didb_size_bytes(n: u64) -> u64 {
    n * RECORD_BYTES
}

pub fn bytes_to_mib(bytes: u64) -> f64 {
    bytes as f64 / MIB
}

pub fn bytes_to_gib(bytes: u64) -> f64 {
    bytes as f64 / GIB
}

/// Exact growth over `years` at `records_per_year` new identities.
pub fn annual_growth_bytes(records_per_year: u64, years: u64) -> u64 {
    didb_size_bytes(records_per_year) * years
}

/// Growth in GiB computed the way the worked example does: the yearly
/// figure is first rounded to a whole number of MiB, then multiplied
/// out. The exact product is slightly smaller; both are exposed.
pub fn annual_growth_rounded_chain_gib(records_per_year: u64, years: u64) -> f64 {
    let yearly_mib = bytes_to_mib(didb_size_bytes(records_per_year)).round();
    yearly_mib * years as f64 / KIB
}

/// Ceiling division of a byte total into fixed-size chunks.
pub fn chunk_count(total_bytes: f64, chunk_bytes: f64) -> u64 {
    assert!(chunk_bytes > 0.0, "chunk size must be positive");
    (total_bytes / chunk_bytes).ceil() as u64
}

/// Bytes needed to store one checksum per chunk file.
pub fn checksum_storage(files: u64, bytes_per_checksum: u64) -> u64 {
    files * bytes_per_checksum
}

/// Hours to move `total_bytes` at `bytes_per_second`.
pub fn sync_time_hours(total_bytes: f64, bytes_per_second: f64) -> f64 {
    assert!(bytes_per_second > 0.0, "transfer rate must be positive");
    total_bytes / bytes_per_second / 3600.0
}

/// Participating node count and aggregate request throughput.
pub fn fleet_capacity(
    machines: u64,
    participation_fraction: f64,
    requests_per_node_per_s: f64,
) -> (u64, f64) {
    assert!(
        (0.0..=1.0).contains(&participation_fraction),
        "fraction must be in [0, 1]"
    );
    let nodes = (machines as f64 * participation_fraction).round() as u64;
    (nodes, nodes as f64 * requests_per_node_per_s)
}

/// One published worked example: our computed value against the printed
/// figure it must reproduce.
#[derive(Debug, Clone)]
pub struct PaperValue {
    pub label: &'static str,
    pub computed: f64,
    pub printed: f64,
    pub printed_repr: &'static str,
}

impl PaperValue {
    /// Computed value rounded to the printed precision. The published
    /// figures carry a fixed number of decimals, so reproduction is
    /// judged after rounding to that many places.
    pub fn rounded(&self) -> f64 {
        match self.printed_repr.split_once('.') {
            Some((_, frac)) => {
                let scale = 10f64.powi(frac.len() as i32);
                (self.computed * scale).round() / scale
            }
            None => self.computed.round(),
        }
    }

    pub fn relative_error(&self) -> f64 {
        if self.printed == 0.0 {
            return self.rounded().abs();
        }
        ((self.rounded() - self.printed) / self.printed).abs()
    }

    pub fn reproduces(&self) -> bool {
        self.relative_error() < 1e-9
    }
}

/// The six published capacity figures, recomputed from first principles.
pub fn paper_values() -> Vec<PaperValue> {
    let national = 170_000_000u64;
    let yearly = 3_000_000u64;
    vec![
        PaperValue {
            label: "national store size (GiB, 170M identities)",
            computed: bytes_to_gib(didb_size_bytes(national)),
            printed: 7.28294253349,
            printed_repr: "7.28294253349",
        },
        PaperValue {
            label: "yearly growth (MiB, 3M identities/year)",
            computed: bytes_to_mib(didb_size_bytes(yearly)),
            printed: 131.607055664,
            printed_repr: "131.607055664",
        },
        PaperValue {
            label: "10-year growth (GiB, rounded yearly chain)",
            computed: annual_growth_rounded_chain_gib(yearly, 10),
            printed: 1.2890625,
            printed_repr: "1.2890625",
        },
        PaperValue {
            label: "chunk files (7.30 GiB at 4.9 MiB/chunk)",
            computed: chunk_count(7.30 * GIB, 4.9 * MIB) as f64,
            printed: 1526.0,
            printed_repr: "1526",
        },
        PaperValue {
            label: "checksum storage (MiB, 1526 files x 64 B)",
            computed: bytes_to_mib(checksum_storage(1526, 64)),
            printed: 0.09313964843,
            printed_repr: "0.09313964843",
        },
        PaperValue {
            label: "full sync time (h, 10 GiB at 1 MiB/s)",
            computed: sync_time_hours(10.0 * GIB, MIB),
            printed: 2.844,
            printed_repr: "2.844",
        },
        PaperValue {
            label: "participating nodes (27,440 machines at 1%)",
            computed: fleet_capacity(27_440, 0.01, 100.0).0 as f64,
            printed: 274.0,
            printed_repr: "274",
        },
        PaperValue {
            label: "fleet throughput (req/s, 274 nodes x 100)",
            computed: fleet_capacity(27_440, 0.01, 100.0).1,
            printed: 27_400.0,
            printed_repr: "27400",
        },
    ]
}
