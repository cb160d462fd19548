//! Desk-scale integration harness: real daemon processes on localhost
//! ports. A directory, one seed node and N followers are launched, then
//! the scenarios measure convergence, incremental-update transfer,
//! client failover and offline service against the processes' stdout
//! events and on-disk state.

use crate::builder;
use crate::client::{Client, ClientError, ClientOptions, NodeSource, VerifyStatus};
use crate::node::{CURRENT_DIR, PUBLISH_DIR};
use crate::protocol::NodeDescriptor;
use crate::record::{DidbRecord, RECORD_LEN};
use crate::store::{self, MANIFEST_FILE};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Build(#[from] builder::BuildError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("child process defect: {0}")]
    Child(String),
}

#[derive(Debug, Clone)]
pub struct SimnetConfig {
    pub node_bin: PathBuf,
    pub directory_bin: PathBuf,
    pub workdir: PathBuf,
    /// Follower count; the seed is additional.
    pub followers: usize,
    pub records: u64,
    pub seed: u64,
    pub poll_interval_secs: f64,
    pub convergence_timeout: Duration,
}

impl SimnetConfig {
    pub fn new(workdir: PathBuf) -> Self {
        Self {
            node_bin: sibling_binary("didb-node"),
            directory_bin: sibling_binary("didb-directory"),
            workdir,
            followers: 4,
            records: 100_000,
            seed: 42,
            poll_interval_secs: 1.0,
            convergence_timeout: Duration::from_secs(60),
        }
    }
}

/// Locate a companion binary next to the running executable.
pub fn sibling_binary(name: &str) -> PathBuf {
    let exe = std::env::current_exe().unwrap_or_default();
    let dir = exe.parent().map(Path::to_owned).unwrap_or_default();
    let direct = dir.join(name);
    if direct.exists() {
        return direct;
    }
    // Test executables live one level below the bin directory.
    dir.parent()
        .map(|p| p.join(name))
        .filter(|p| p.exists())
        .unwrap_or(direct)
}

// ------------------------------------------------------- child processes

struct ChildProc {
    child: Child,
    lines: Arc<Mutex<Vec<String>>>,
}

impl ChildProc {
    fn spawn(mut cmd: Command) -> Result<Self, SimError> {
        cmd.stdout(Stdio::piped()).stderr(Stdio::null());
        let mut child = cmd.spawn()?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| SimError::Child("no stdout".into()))?;
        let lines = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&lines);
        std::thread::spawn(move || {
            let reader = std::io::BufReader::new(stdout);
            for line in reader.lines().map_while(Result::ok) {
                sink.lock().unwrap().push(line);
            }
        });
        Ok(Self { child, lines })
    }

    fn events(&self) -> Vec<serde_json::Value> {
        self.lines
            .lock()
            .unwrap()
            .iter()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect()
    }

    fn wait_event<F>(&self, timeout: Duration, pred: F) -> Option<serde_json::Value>
    where
        F: Fn(&serde_json::Value) -> bool,
    {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(ev) = self.events().into_iter().find(|e| pred(e)) {
                return Some(ev);
            }
            if Instant::now() >= deadline {
                return None;
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ChildProc {
    fn drop(&mut self) {
        self.kill();
    }
}

struct NodeProc {
    proc: ChildProc,
    store_root: PathBuf,
    verify: NodeDescriptor,
    sync: NodeDescriptor,
}

fn spawn_directory(cfg: &SimnetConfig, ttl_secs: f64) -> Result<(ChildProc, NodeDescriptor), SimError> {
    let mut cmd = Command::new(&cfg.directory_bin);
    cmd.arg("--port").arg("0").arg("--ttl").arg(ttl_secs.to_string());
    let proc = ChildProc::spawn(cmd)?;
    let ev = proc
        .wait_event(Duration::from_secs(10), |e| e["event"] == "listening")
        .ok_or_else(|| SimError::Timeout("directory never reported listening".into()))?;
    let port = ev["port"].as_u64().unwrap_or(0) as u16;
    Ok((
        proc,
        NodeDescriptor {
            host: "127.0.0.1".into(),
            port,
        },
    ))
}

fn spawn_node(
    cfg: &SimnetConfig,
    store_root: &Path,
    directory: Option<&NodeDescriptor>,
    peers: &[NodeDescriptor],
) -> Result<NodeProc, SimError> {
    let mut cmd = Command::new(&cfg.node_bin);
    cmd.arg("--store")
        .arg(store_root)
        .arg("--verify-port")
        .arg("0")
        .arg("--sync-port")
        .arg("0")
        .arg("--interval")
        .arg(cfg.poll_interval_secs.to_string());
    if let Some(d) = directory {
        cmd.arg("--directory").arg(d.to_string());
    }
    for p in peers {
        cmd.arg("--peer").arg(p.to_string());
    }
    let proc = ChildProc::spawn(cmd)?;
    let ev = proc
        .wait_event(Duration::from_secs(10), |e| e["event"] == "listening")
        .ok_or_else(|| SimError::Timeout("node never reported listening".into()))?;
    let verify_port = ev["verify_port"].as_u64().unwrap_or(0) as u16;
    let sync_port = ev["sync_port"].as_u64().unwrap_or(0) as u16;
    Ok(NodeProc {
        proc,
        store_root: store_root.to_owned(),
        verify: NodeDescriptor {
            host: "127.0.0.1".into(),
            port: verify_port,
        },
        sync: NodeDescriptor {
            host: "127.0.0.1".into(),
            port: sync_port,
        },
    })
}

// --------------------------------------------------------------- cluster

struct Cluster {
    directory: ChildProc,
    directory_addr: NodeDescriptor,
    seed: NodeProc,
    followers: Vec<NodeProc>,
    records: Vec<DidbRecord>,
    manifest_bytes: Vec<u8>,
    csv_path: PathBuf,
    bootstrap: BootstrapReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct FollowerTransfer {
    pub fetched_chunks: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapReport {
    pub converged: bool,
    pub elapsed_secs: f64,
    pub store_bytes: u64,
    pub manifest_bytes: u64,
    pub followers: Vec<FollowerTransfer>,
}

fn wait_for_manifest(root: &Path, expected: &[u8], deadline: Instant) -> bool {
    let path = root.join(CURRENT_DIR).join(MANIFEST_FILE);
    while Instant::now() < deadline {
        if let Ok(bytes) = std::fs::read(&path) {
            if bytes == expected {
                return true;
            }
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    false
}

fn bootstrap(cfg: &SimnetConfig) -> Result<Cluster, SimError> {
    std::fs::create_dir_all(&cfg.workdir)?;
    let csv_path = cfg.workdir.join("cidb.csv");
    builder::generate_synthetic_cidb(cfg.records, cfg.seed, &csv_path)?;
    let seed_root = cfg.workdir.join("seed");
    let (manifest, _) = builder::build(&csv_path, 1, &seed_root.join(CURRENT_DIR))?;
    let (records, _) = builder::ingest(&csv_path)?;
    let manifest_bytes = manifest.encode().into_bytes();
    let store_bytes = manifest.total_records * RECORD_LEN as u64;

    let ttl = cfg.poll_interval_secs * 3.0;
    let (directory, directory_addr) = spawn_directory(cfg, ttl)?;
    let seed = spawn_node(cfg, &seed_root, Some(&directory_addr), &[])?;

    let started = Instant::now();
    let deadline = started + cfg.convergence_timeout;
    let mut followers = Vec::new();
    for i in 0..cfg.followers {
        let root = cfg.workdir.join(format!("follower-{i}"));
        std::fs::create_dir_all(&root)?;
        followers.push(spawn_node(
            cfg,
            &root,
            Some(&directory_addr),
            std::slice::from_ref(&seed.sync),
        )?);
    }

    let mut converged = true;
    for f in &followers {
        if !wait_for_manifest(&f.store_root, &manifest_bytes, deadline) {
            converged = false;
        }
    }
    let elapsed = started.elapsed();

    let transfers = followers
        .iter()
        .map(|f| {
            f.proc
                .events()
                .into_iter()
                .find(|e| e["event"] == "swap" && e["version"] == 1)
                .map(|e| FollowerTransfer {
                    fetched_chunks: e["fetched_chunks"].as_u64().unwrap_or(0),
                    bytes: e["bytes_this_sync"].as_u64().unwrap_or(0),
                })
                .unwrap_or(FollowerTransfer {
                    fetched_chunks: 0,
                    bytes: 0,
                })
        })
        .collect();

    let bootstrap = BootstrapReport {
        converged,
        elapsed_secs: elapsed.as_secs_f64(),
        store_bytes,
        manifest_bytes: manifest_bytes.len() as u64,
        followers: transfers,
    };
    Ok(Cluster {
        directory,
        directory_addr,
        seed,
        followers,
        records,
        manifest_bytes,
        csv_path,
        bootstrap,
    })
}

impl Cluster {
    fn all_verify_addrs(&self) -> Vec<NodeDescriptor> {
        let mut v = vec![self.seed.verify.clone()];
        v.extend(self.followers.iter().map(|f| f.verify.clone()));
        v
    }

    fn client_via_directory(&self) -> Client {
        Client::new(
            NodeSource::Directory(self.directory_addr.clone()),
            ClientOptions {
                attempt_timeout: Duration::from_millis(1500),
                list_cache_ttl: Duration::from_millis(0),
                ..ClientOptions::default()
            },
        )
    }

    /// Deterministic probe set: half present records, half absent ones
    /// derived by perturbing digests.
    fn probe_records(&self, count: usize, rng_seed: u64) -> Vec<(DidbRecord, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let present: std::collections::HashSet<String> =
            self.records.iter().map(|r| r.encode()).collect();
        let mut probes = Vec::with_capacity(count);
        for i in 0..count {
            let rec = &self.records[rng.gen_range(0..self.records.len())];
            if i % 2 == 0 {
                probes.push((rec.clone(), true));
            } else {
                let absent = perturb_digest(rec, &mut rng, &present);
                probes.push((absent, false));
            }
        }
        probes
    }
}

fn perturb_digest(
    rec: &DidbRecord,
    rng: &mut ChaCha8Rng,
    present: &std::collections::HashSet<String>,
) -> DidbRecord {
    loop {
        let mut text = rec.encode();
        let pos = 6 + rng.gen_range(0..40);
        let replacement = b"0123456789abcdef"[rng.gen_range(0..16)] as char;
        text.replace_range(pos..pos + 1, &replacement.to_string());
        if !present.contains(&text) {
            if let Ok(r) = DidbRecord::parse(&text) {
                return r;
            }
        }
    }
}

// ------------------------------------------------------------- scenarios

pub fn scenario_bootstrap(cfg: &SimnetConfig) -> Result<BootstrapReport, SimError> {
    let cluster = bootstrap(cfg)?;
    let report = cluster.bootstrap.clone();
    if !report.converged {
        return Err(SimError::Timeout("followers did not converge".into()));
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct UpdateReport {
    pub converged: bool,
    pub changed_chunks: Vec<usize>,
    pub per_follower_fetched: Vec<u64>,
}

/// Rebuild the seed store at version 2 with `changed_records` single-row
/// corrections and measure what each follower fetched. A correction is
/// crafted so the replacement record lands in the same chunk, matching
/// the in-place-correction update shape.
pub fn scenario_update(cfg: &SimnetConfig, changed_records: usize) -> Result<UpdateReport, SimError> {
    let cluster = bootstrap(cfg)?;
    if !cluster.bootstrap.converged {
        return Err(SimError::Timeout("bootstrap did not converge".into()));
    }

    let capacity = store::CHUNK_CAPACITY;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut csv_text = std::fs::read_to_string(&cluster.csv_path)?;

    if changed_records == 1 {
        // Correct one synthetic row by editing its place of birth, picking
        // a replacement whose record stays in the same chunk.
        let (line_no, old_line, new_line) =
            craft_same_chunk_correction(&csv_text, &cluster.records, capacity, &mut rng)
                .ok_or_else(|| SimError::Child("could not craft a same-chunk correction".into()))?;
        let mut lines: Vec<&str> = csv_text.lines().collect();
        debug_assert_eq!(lines[line_no], old_line);
        lines[line_no] = &new_line;
        csv_text = lines.join("\n");
        csv_text.push('\n');
    } else if changed_records > 1 {
        // Bulk corrections make no chunk-locality promise.
        let mut lines: Vec<String> = csv_text.lines().map(str::to_owned).collect();
        let picks = changed_records.min(lines.len() - 1);
        for line_no in rand::seq::index::sample(&mut rng, lines.len() - 1, picks) {
            let line = &lines[line_no + 1];
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() == 6 {
                lines[line_no + 1] = format!(
                    "{},{},{},{},{} Corrected,{}",
                    cols[0], cols[1], cols[2], cols[3], cols[4], cols[5]
                );
            }
        }
        csv_text = lines.join("\n");
        csv_text.push('\n');
    }
    let new_csv = cfg.workdir.join("cidb-v2.csv");
    std::fs::write(&new_csv, &csv_text)?;

    // Publish version 2 (same version when nothing changed: no-op).
    let new_version = if changed_records > 0 { 2 } else { 1 };
    let publish_dir = cluster.seed.store_root.join(PUBLISH_DIR);
    let (new_manifest, _) = builder::build(&new_csv, new_version, &publish_dir)?;
    let old_manifest = store::Manifest::parse(std::str::from_utf8(&cluster.manifest_bytes).unwrap())?;
    let changed_chunks = store::diff_manifests(&old_manifest, &new_manifest);
    let new_manifest_bytes = new_manifest.encode().into_bytes();

    if changed_records == 0 {
        // Same version: followers must not fetch anything. Give them a few
        // poll cycles to prove it.
        std::thread::sleep(Duration::from_secs_f64(cfg.poll_interval_secs * 3.0));
        let fetched: Vec<u64> = cluster
            .followers
            .iter()
            .map(|f| {
                f.proc
                    .events()
                    .into_iter()
                    .filter(|e| e["event"] == "swap" && e["version"] != 1)
                    .filter_map(|e| e["fetched_chunks"].as_u64())
                    .sum()
            })
            .collect();
        return Ok(UpdateReport {
            converged: true,
            changed_chunks,
            per_follower_fetched: fetched,
        });
    }

    let deadline = Instant::now() + cfg.convergence_timeout;
    let mut converged = true;
    for f in &cluster.followers {
        if !wait_for_manifest(&f.store_root, &new_manifest_bytes, deadline) {
            converged = false;
        }
    }
    let per_follower_fetched: Vec<u64> = cluster
        .followers
        .iter()
        .map(|f| {
            f.proc
                .events()
                .into_iter()
                .find(|e| e["event"] == "swap" && e["version"] == 2)
                .and_then(|e| e["fetched_chunks"].as_u64())
                .unwrap_or(u64::MAX)
        })
        .collect();

    Ok(UpdateReport {
        converged,
        changed_chunks,
        per_follower_fetched,
    })
}

/// Find a data row whose record, after editing the place field, still
/// sorts into the same chunk. Returns (0-based line index incl. header,
/// old line, new line).
fn craft_same_chunk_correction(
    csv_text: &str,
    sorted_records: &[DidbRecord],
    chunk_capacity: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, String, String)> {
    let lines: Vec<&str> = csv_text.lines().collect();
    let encodings: Vec<String> = sorted_records.iter().map(|r| r.encode()).collect();
    for _ in 0..200 {
        let line_no = rng.gen_range(1..lines.len());
        let line = lines[line_no];
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            continue;
        }
        let old_fields = row_fields(&cols)?;
        let old_rec = crate::record::make_record(&old_fields).ok()?;
        let old_pos = encodings.binary_search(&old_rec.encode()).ok()?;
        for alt in 0..50 {
            let mut fields = old_fields.clone();
            fields.place_of_birth = format!("{} Ward {alt}", fields.place_of_birth);
            let new_rec = crate::record::make_record(&fields).ok()?;
            let enc = new_rec.encode();
            if encodings.binary_search(&enc).is_ok() {
                continue;
            }
            let new_pos = encodings.partition_point(|e| e < &enc);
            // Insertion after removal: positions land in the same chunk.
            let same = old_pos / chunk_capacity == new_pos.saturating_sub(usize::from(new_pos > old_pos)) / chunk_capacity;
            if same {
                let new_line = format!(
                    "{},{},{},{},{},{}",
                    cols[0], cols[1], cols[2], cols[3], fields.place_of_birth, cols[5]
                );
                return Some((line_no, line.to_owned(), new_line));
            }
        }
    }
    None
}

fn row_fields(cols: &[&str]) -> Option<crate::record::IdentityFields> {
    use chrono::NaiveDate;
    let dob = NaiveDate::parse_from_str(cols[2], "%Y-%m-%d").ok()?;
    let issue = NaiveDate::parse_from_str(cols[5], "%Y-%m-%d").ok()?;
    crate::record::IdentityFields::new(cols[0], cols[1], dob, cols[3], cols[4], issue).ok()
}

#[derive(Debug, Clone, Serialize)]
pub struct FailoverReport {
    pub nodes_total: usize,
    pub nodes_killed: usize,
    pub probes: usize,
    pub successes: usize,
    pub correct_answers: usize,
    pub mean_attempts: f64,
    pub all_killed_probes: usize,
    pub all_killed_failures: usize,
}

/// Kill a fraction of the nodes, probe through the directory, then kill
/// the rest and confirm every probe reports total failure.
pub fn scenario_failover(
    cfg: &SimnetConfig,
    kill_fraction: f64,
    probes: usize,
) -> Result<FailoverReport, SimError> {
    let mut cluster = bootstrap(cfg)?;
    if !cluster.bootstrap.converged {
        return Err(SimError::Timeout("bootstrap did not converge".into()));
    }
    let all_addrs = cluster.all_verify_addrs();
    let total = all_addrs.len();
    let kill_count = ((total as f64) * kill_fraction).round() as usize;

    // Kill followers first, seed last; the directory still lists the dead
    // ones until their TTL lapses, which is exactly what forces failover.
    let mut killed = 0usize;
    for f in cluster.followers.iter_mut().rev() {
        if killed == kill_count {
            break;
        }
        f.proc.kill();
        killed += 1;
    }
    if killed < kill_count {
        cluster.seed.proc.kill();
    }

    let client = cluster.client_via_directory();
    let probe_set = cluster.probe_records(probes, cfg.seed ^ 0xfa11);
    let mut successes = 0usize;
    let mut correct = 0usize;
    let mut attempts_total = 0usize;
    for (rec, expected_present) in &probe_set {
        match client.verify_record(rec) {
            Ok(outcome) => {
                successes += 1;
                attempts_total += outcome.attempts.len();
                let got_present = outcome.status == VerifyStatus::Found;
                if got_present == *expected_present {
                    correct += 1;
                }
            }
            Err(_) => {}
        }
    }

    // Phase two: kill everything and probe the full explicit list.
    cluster.seed.proc.kill();
    for f in cluster.followers.iter_mut() {
        f.proc.kill();
    }
    let dead_client = Client::new(
        NodeSource::Explicit(all_addrs),
        ClientOptions {
            attempt_timeout: Duration::from_millis(500),
            ..ClientOptions::default()
        },
    );
    let all_killed_probes = 20usize.min(probe_set.len().max(1));
    let mut all_killed_failures = 0usize;
    for (rec, _) in probe_set.iter().take(all_killed_probes) {
        if matches!(
            dead_client.verify_record(rec),
            Err(ClientError::AllNodesFailed(_))
        ) {
            all_killed_failures += 1;
        }
    }

    Ok(FailoverReport {
        nodes_total: total,
        nodes_killed: kill_count,
        probes: probe_set.len(),
        successes,
        correct_answers: correct,
        mean_attempts: attempts_total as f64 / probe_set.len().max(1) as f64,
        all_killed_probes,
        all_killed_failures,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OfflineReport {
    pub probes: usize,
    pub answered: usize,
    pub correct: usize,
    pub after_restart_answered: usize,
    pub after_restart_probes: usize,
}

/// Stop the directory and every peer, then probe one surviving node
/// directly; restart it from disk with no network and probe again.
pub fn scenario_offline(cfg: &SimnetConfig, probes: usize) -> Result<OfflineReport, SimError> {
    let mut cfg = cfg.clone();
    cfg.followers = cfg.followers.max(1);
    let mut cluster = bootstrap(&cfg)?;
    if !cluster.bootstrap.converged {
        return Err(SimError::Timeout("bootstrap did not converge".into()));
    }

    // Isolate the first follower: everything else goes away.
    cluster.directory.kill();
    cluster.seed.proc.kill();
    for f in cluster.followers.iter_mut().skip(1) {
        f.proc.kill();
    }
    let survivor_addr = cluster.followers[0].verify.clone();
    let survivor_root = cluster.followers[0].store_root.clone();

    let client = Client::new(
        NodeSource::Explicit(vec![survivor_addr]),
        ClientOptions::default(),
    );
    let probe_set = cluster.probe_records(probes, cfg.seed ^ 0x0ff1);
    let mut answered = 0usize;
    let mut correct = 0usize;
    for (rec, expected_present) in &probe_set {
        if let Ok(outcome) = client.verify_record(rec) {
            answered += 1;
            if (outcome.status == VerifyStatus::Found) == *expected_present {
                correct += 1;
            }
        }
    }

    // Restart the survivor from its on-disk store, still with no network.
    cluster.followers[0].proc.kill();
    let restarted = spawn_node(&cfg, &survivor_root, None, &[])?;
    let restart_client = Client::new(
        NodeSource::Explicit(vec![restarted.verify.clone()]),
        ClientOptions::default(),
    );
    let after_restart_probes = probe_set.len().min(20);
    let mut after_restart_answered = 0usize;
    for (rec, expected_present) in probe_set.iter().take(after_restart_probes) {
        if let Ok(outcome) = restart_client.verify_record(rec) {
            if (outcome.status == VerifyStatus::Found) == *expected_present {
                after_restart_answered += 1;
            }
        }
    }

    Ok(OfflineReport {
        probes: probe_set.len(),
        answered,
        correct,
        after_restart_answered,
        after_restart_probes,
    })
}
