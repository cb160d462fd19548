//! Acceptance suite: one test per release criterion, each with pinned
//! tolerances. These are the checks a release must pass; everything else
//! in tests/ exists to localize failures faster.

use didb::builder::{self, BuildReport};
use didb::client::{Client, ClientOptions, NodeSource, VerifyStatus};
use didb::node::{self, NodeConfig, RunningNode, CURRENT_DIR, PUBLISH_DIR};
use didb::protocol::{
    DirectoryRequest, DirectoryResponse, NodeDescriptor, SyncRequest, SyncResponse,
    VerifyRequest, VerifyResponse,
};
use didb::record::{DidbRecord, RECORD_LEN};
use didb::simnet::{self, SimnetConfig};
use didb::sizing;
use didb::store::{validate_store, LoadedStore, Manifest};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

// ------------------------------------------------------- shared fixtures

struct MillionStore {
    _tmp: tempfile::TempDir,
    store: PathBuf,
    manifest: Manifest,
    report: BuildReport,
    build_secs: f64,
}

static MILLION: OnceLock<MillionStore> = OnceLock::new();

fn million() -> &'static MillionStore {
    MILLION.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let csv = tmp.path().join("cidb.csv");
        let store = tmp.path().join("store");
        let started = Instant::now();
        builder::generate_synthetic_cidb(1_000_000, 4242, &csv).unwrap();
        let (manifest, report) = builder::build(&csv, 1, &store).unwrap();
        let build_secs = started.elapsed().as_secs_f64();
        MillionStore {
            _tmp: tmp,
            store,
            manifest,
            report,
            build_secs,
        }
    })
}

fn copy_store(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst.join("chunks")).unwrap();
    std::fs::copy(src.join("MANIFEST"), dst.join("MANIFEST")).unwrap();
    for entry in std::fs::read_dir(src.join("chunks")).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dst.join("chunks").join(entry.file_name())).unwrap();
    }
}

fn sim_config(workdir: PathBuf) -> SimnetConfig {
    let mut cfg = SimnetConfig::new(workdir);
    cfg.node_bin = PathBuf::from(env!("CARGO_BIN_EXE_didb-node"));
    cfg.directory_bin = PathBuf::from(env!("CARGO_BIN_EXE_didb-directory"));
    cfg
}

fn start_quiet_node(root: &Path) -> RunningNode {
    let mut cfg = NodeConfig::new(root.to_path_buf());
    cfg.poll_interval = Duration::from_millis(200);
    cfg.quiet = true;
    node::start(cfg).unwrap()
}

fn perturb(rec: &DidbRecord, rng: &mut ChaCha8Rng) -> DidbRecord {
    let mut text = rec.encode();
    let pos = 6 + rng.gen_range(0..40);
    let replacement = b"0123456789abcdef"[rng.gen_range(0..16)] as char;
    text.replace_range(pos..pos + 1, &replacement.to_string());
    DidbRecord::parse(&text).unwrap()
}

// ------------------------------------------------------------- criteria

/// Criterion 1: the sizing calculator reproduces every published
/// capacity figure with relative error < 1e-9, in under a second.
#[test]
fn criterion_01_sizing_golden_suite() {
    let started = Instant::now();
    let values = sizing::paper_values();
    assert_eq!(values.len(), 8);
    for v in &values {
        assert!(
            v.reproduces(),
            "{}: computed {} vs printed {} (rel err {:.3e})",
            v.label,
            v.computed,
            v.printed,
            v.relative_error()
        );
        assert!(v.relative_error() < 1e-9, "{}", v.label);
    }
    // The CLI route must agree and stay fast.
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_didb-size"))
        .arg("--paper")
        .output()
        .unwrap();
    assert!(out.status.success(), "didb-size --paper failed");
    assert!(started.elapsed() < Duration::from_secs(1), "exceeded 1 s");
    println!("criterion 01 sizing golden suite: PASS");
}

/// Criterion 2: one million synthetic records build into exactly
/// 46 bytes per distinct record across 9 chunks, in under two minutes.
#[test]
fn criterion_02_size_law_on_million_records() {
    let m = million();
    assert!(m.build_secs < 120.0, "build took {:.1}s", m.build_secs);
    assert_eq!(m.report.rows_read, 1_000_000);
    assert!(m.report.rejected.is_empty());

    let distinct = m.report.records_written;
    let chunk_total: u64 = std::fs::read_dir(m.store.join("chunks"))
        .unwrap()
        .map(|e| e.unwrap().metadata().unwrap().len())
        .sum();
    assert_eq!(chunk_total, RECORD_LEN as u64 * distinct);
    assert_eq!(m.manifest.total_records, distinct);
    assert_eq!(m.manifest.descriptors.len(), 9);
    println!("criterion 02 size law: PASS");
}

/// Criterion 3: 2,000 probes through the full client → node network
/// path agree with an independent linear scan, 2,000/2,000.
#[test]
fn criterion_03_membership_oracle_equivalence() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("cidb.csv");
    let root = tmp.path().join("node");
    builder::generate_synthetic_cidb(10_000, 77, &csv).unwrap();
    builder::build(&csv, 1, &root.join(CURRENT_DIR)).unwrap();
    let oracle = LoadedStore::load(&root.join(CURRENT_DIR)).unwrap();
    let records: Vec<DidbRecord> = oracle.iter_records().collect();

    let node = start_quiet_node(&root);
    let client = Client::new(
        NodeSource::Explicit(vec![NodeDescriptor {
            host: "127.0.0.1".into(),
            port: node.verify_addr().port(),
        }]),
        ClientOptions {
            attempt_timeout: Duration::from_secs(2),
            ..ClientOptions::default()
        },
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0x07ac1e);
    let mut agreed = 0usize;
    for i in 0..2_000 {
        let probe = if i % 2 == 0 {
            records[rng.gen_range(0..records.len())].clone()
        } else {
            loop {
                let p = perturb(&records[rng.gen_range(0..records.len())], &mut rng);
                if !oracle.lookup_linear_scan(&p) {
                    break p;
                }
            }
        };
        let network = client.verify_record(&probe).unwrap().status == VerifyStatus::Found;
        let scan = oracle.lookup_linear_scan(&probe);
        if network == scan {
            agreed += 1;
        }
    }
    assert_eq!(agreed, 2_000, "network path diverged from the oracle");
    assert!(started.elapsed() < Duration::from_secs(60), "exceeded 1 min");
    println!("criterion 03 membership oracle equivalence: PASS");
}

/// Criterion 4: byte-identical output for repeated builds of the same
/// input and version.
#[test]
fn criterion_04_build_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("cidb.csv");
    builder::generate_synthetic_cidb(50_000, 123, &csv).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    builder::build(&csv, 3, &a).unwrap();
    builder::build(&csv, 3, &b).unwrap();

    assert_eq!(
        std::fs::read(a.join("MANIFEST")).unwrap(),
        std::fs::read(b.join("MANIFEST")).unwrap()
    );
    let mut names: Vec<_> = std::fs::read_dir(a.join("chunks"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(
            std::fs::read(a.join("chunks").join(&name)).unwrap(),
            std::fs::read(b.join("chunks").join(&name)).unwrap(),
            "chunk {name:?} differs"
        );
    }
    println!("criterion 04 build determinism: PASS");
}

/// Criterion 5: 100 random single-byte flips across a multi-chunk store
/// are each localized to exactly the corrupted chunk, 100/100.
#[test]
fn criterion_05_corruption_detection() {
    let m = million();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("store");
    copy_store(&m.store, &dir);
    assert!(validate_store(&dir).unwrap().is_empty());

    let chunk_count = m.manifest.descriptors.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0xf11b);
    let mut detected = 0usize;
    for _ in 0..100 {
        let chunk = rng.gen_range(0..chunk_count);
        let path = dir.join("chunks").join(format!("{chunk:06}.didb"));
        let mut bytes = std::fs::read(&path).unwrap();
        let offset = rng.gen_range(0..bytes.len());
        let flip = 1u8 << rng.gen_range(0..8);
        bytes[offset] ^= flip;
        std::fs::write(&path, &bytes).unwrap();

        if validate_store(&dir).unwrap() == vec![chunk] {
            detected += 1;
        }

        bytes[offset] ^= flip;
        std::fs::write(&path, &bytes).unwrap();
    }
    assert_eq!(detected, 100, "missed or mislocated corruptions");
    println!("criterion 05 corruption detection: PASS");
}

/// Criterion 6: four followers converge on 100,000 records within 60 s,
/// each transferring at most store + manifest + 1% framing overhead.
#[test]
fn criterion_06_sync_convergence_and_transfer_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = sim_config(tmp.path().join("net"));
    cfg.followers = 4;
    cfg.records = 100_000;
    cfg.convergence_timeout = Duration::from_secs(60);

    let report = simnet::scenario_bootstrap(&cfg).unwrap();
    assert!(report.converged);
    assert!(report.elapsed_secs < 60.0, "took {:.1}s", report.elapsed_secs);
    assert_eq!(report.followers.len(), 4);
    let bound = ((report.store_bytes + report.manifest_bytes) as f64 * 1.01) as u64;
    for (i, f) in report.followers.iter().enumerate() {
        assert!(f.bytes > 0, "follower {i} reported no transfer");
        assert!(
            f.bytes <= bound,
            "follower {i} moved {} bytes, bound {bound}",
            f.bytes
        );
    }
    println!("criterion 06 sync convergence: PASS");
}

/// Criterion 7: a single-record correction on a 9-chunk store costs each
/// follower at most 2 chunk fetches.
#[test]
fn criterion_07_incremental_update_frugality() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = sim_config(tmp.path().join("net"));
    cfg.followers = 2;
    cfg.records = 1_000_000;
    cfg.convergence_timeout = Duration::from_secs(120);

    let report = simnet::scenario_update(&cfg, 1).unwrap();
    assert!(report.converged);
    assert!(
        report.changed_chunks.len() <= 2,
        "correction touched chunks {:?}",
        report.changed_chunks
    );
    for (i, fetched) in report.per_follower_fetched.iter().enumerate() {
        assert!(
            *fetched <= 2,
            "follower {i} fetched {fetched} chunks for a one-record fix"
        );
    }
    println!("criterion 07 incremental update frugality: PASS");
}

/// Criterion 8: with half of four nodes killed every verification still
/// succeeds (200/200); with all killed every probe reports total failure.
#[test]
fn criterion_08_failover() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = sim_config(tmp.path().join("net"));
    cfg.followers = 3; // four nodes including the seed
    cfg.records = 20_000;

    let report = simnet::scenario_failover(&cfg, 0.5, 200).unwrap();
    assert_eq!(report.nodes_total, 4);
    assert_eq!(report.nodes_killed, 2);
    assert_eq!(report.successes, 200, "verifications failed under failover");
    assert_eq!(report.correct_answers, 200, "wrong answers under failover");
    assert_eq!(
        report.all_killed_failures, report.all_killed_probes,
        "a probe against a fully dead fleet did not fail cleanly"
    );
    println!("criterion 08 failover: PASS");
}

/// Criterion 9: a node with directory and peers gone answers 100/100
/// probes correctly, and still does after restarting from disk.
#[test]
fn criterion_09_offline_service() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = sim_config(tmp.path().join("net"));
    cfg.followers = 1;
    cfg.records = 20_000;

    let report = simnet::scenario_offline(&cfg, 100).unwrap();
    assert_eq!(report.answered, 100);
    assert_eq!(report.correct, 100);
    assert_eq!(report.after_restart_answered, report.after_restart_probes);
    println!("criterion 09 offline service: PASS");
}

/// Criterion 10: under continuous query load across an update, every one
/// of ≥10,000 responses carries exactly the old or the new version.
#[test]
fn criterion_10_atomic_swap_under_load() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("cidb.csv");
    let root = tmp.path().join("node");
    builder::generate_synthetic_cidb(5_000, 55, &csv).unwrap();
    builder::build(&csv, 1, &root.join(CURRENT_DIR)).unwrap();
    let records: Vec<DidbRecord> = LoadedStore::load(&root.join(CURRENT_DIR))
        .unwrap()
        .iter_records()
        .collect();
    let node = start_quiet_node(&root);
    let addr = node.verify_addr();

    let stop = Arc::new(AtomicBool::new(false));
    let responses = Arc::new(AtomicU64::new(0));
    let bad_versions = Arc::new(Mutex::new(Vec::<String>::new()));
    let seen_v2 = Arc::new(AtomicBool::new(false));

    let mut workers = Vec::new();
    for w in 0..4u64 {
        let stop = Arc::clone(&stop);
        let responses = Arc::clone(&responses);
        let bad = Arc::clone(&bad_versions);
        let seen_v2 = Arc::clone(&seen_v2);
        let records = records.clone();
        workers.push(std::thread::spawn(move || {
            use std::io::{BufRead, BufReader, Write};
            let stream = std::net::TcpStream::connect(addr).unwrap();
            stream.set_nodelay(true).unwrap();
            let mut writer = stream.try_clone().unwrap();
            let mut reader = BufReader::new(stream);
            let mut rng = ChaCha8Rng::seed_from_u64(w);
            let mut line = String::new();
            while !stop.load(Ordering::Relaxed) {
                let rec = &records[rng.gen_range(0..records.len())];
                let msg = format!("{}\n", VerifyRequest { parameter: rec.clone() }.encode());
                writer.write_all(msg.as_bytes()).unwrap();
                line.clear();
                reader.read_line(&mut line).unwrap();
                match VerifyResponse::decode(line.trim_end()) {
                    Ok(VerifyResponse::Found { didb_version })
                    | Ok(VerifyResponse::NotFound { didb_version }) => {
                        if didb_version == 2 {
                            seen_v2.store(true, Ordering::Relaxed);
                        } else if didb_version != 1 {
                            bad.lock().unwrap().push(line.clone());
                        }
                    }
                    other => bad.lock().unwrap().push(format!("{other:?}")),
                }
                responses.fetch_add(1, Ordering::Relaxed);
            }
        }));
    }

    // Let the load establish, then publish version 2 mid-flight.
    while responses.load(Ordering::Relaxed) < 2_000 {
        std::thread::sleep(Duration::from_millis(10));
    }
    let staged = tmp.path().join("v2");
    builder::build(&csv, 2, &staged).unwrap();
    std::fs::rename(&staged, root.join(PUBLISH_DIR)).unwrap();
    assert_eq!(node.wait_for_version(2, Duration::from_secs(10)), Some(2));

    // Keep querying past the swap until the response budget is met and
    // the new version has been observed under load.
    let deadline = Instant::now() + Duration::from_secs(30);
    while (responses.load(Ordering::Relaxed) < 10_000 || !seen_v2.load(Ordering::Relaxed))
        && Instant::now() < deadline
    {
        std::thread::sleep(Duration::from_millis(10));
    }
    stop.store(true, Ordering::Relaxed);
    for t in workers {
        t.join().unwrap();
    }

    let total = responses.load(Ordering::Relaxed);
    let bad = bad_versions.lock().unwrap();
    assert!(total >= 10_000, "only {total} responses collected");
    assert!(seen_v2.load(Ordering::Relaxed), "swap never observed under load");
    assert!(
        bad.is_empty(),
        "{} responses outside {{old, new}}: {:?}",
        bad.len(),
        &bad[..bad.len().min(5)]
    );
    println!("criterion 10 atomic swap under load: PASS ({total} responses)");
}

/// Criterion 11: 10,000 fuzzed lines/frames per decoder produce
/// structured errors only — no panic, no abort.
#[test]
fn criterion_11_protocol_robustness() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf522);
    let prefixes = [
        "", "VERIFY ", "FOUND ", "NOT_FOUND ", "ERR ", "HELLO ", "MANIFEST", "GET_CHUNK ",
        "CHUNK ", "REGISTER ", "LIST", "PING", "OK", "END",
    ];
    let fuzz_line = |rng: &mut ChaCha8Rng| -> String {
        let mut s = prefixes[rng.gen_range(0..prefixes.len())].to_owned();
        let len = rng.gen_range(0..80);
        for _ in 0..len {
            // Mostly ASCII with occasional arbitrary unicode.
            if rng.gen_bool(0.9) {
                s.push(rng.gen_range(0x20u8..0x7f) as char);
            } else {
                s.push(char::from_u32(rng.gen_range(0..0x10000)).unwrap_or('\u{fffd}'));
            }
        }
        s
    };

    let mut outcomes = 0u64;
    for _ in 0..10_000 {
        let line = fuzz_line(&mut rng);
        outcomes += u64::from(VerifyRequest::decode(&line).is_err());
        outcomes += u64::from(VerifyResponse::decode(&line).is_err());
        outcomes += u64::from(SyncRequest::decode(&line).is_err());
        outcomes += u64::from(DirectoryRequest::decode(&line).is_err());
    }

    // Framed decoders get raw byte streams, including headers that lie
    // about payload lengths.
    for _ in 0..10_000 {
        let mut bytes: Vec<u8> = (0..rng.gen_range(0..256)).map(|_| rng.gen()).collect();
        if rng.gen_bool(0.3) {
            let header = format!(
                "{} {}\n",
                ["MANIFEST", "CHUNK 0", "HELLO"][rng.gen_range(0..3)],
                rng.gen::<u64>()
            );
            bytes.splice(0..0, header.into_bytes());
        }
        let mut cursor = std::io::Cursor::new(bytes.clone());
        let _ = SyncResponse::read_from(&mut cursor);
        let mut cursor = std::io::Cursor::new(bytes);
        let _ = DirectoryResponse::read_from(&mut cursor);
    }
    assert!(outcomes > 0);
    println!("criterion 11 protocol robustness: PASS");
}
