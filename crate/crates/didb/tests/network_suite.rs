//! In-process network tests: node daemons with real TCP listeners on
//! ephemeral ports, covering convergence, incremental sync, the
//! checksum gate against a corrupt peer, verify-server behavior, and
//! the directory heartbeat path.

use didb::client::{Client, ClientError, ClientOptions, NodeSource, VerifyStatus};
use didb::node::{self, NodeConfig, RunningNode, CURRENT_DIR, PUBLISH_DIR};
use didb::protocol::NodeDescriptor;
use didb::record::DidbRecord;
use didb::store::{pack_chunks, write_store, MANIFEST_FILE};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::time::Duration;

fn random_records(count: usize, seed: u64) -> Vec<DidbRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = std::collections::BTreeSet::new();
    while set.len() < count {
        let prefix = format!("{:04}{:02}", rng.gen_range(1900..=2020), rng.gen_range(1..=12));
        let digest: String = (0..40)
            .map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap())
            .collect();
        set.insert(format!("{prefix}{digest}"));
    }
    set.iter().map(|s| DidbRecord::parse(s).unwrap()).collect()
}

fn absent_variant(rec: &DidbRecord, records: &[DidbRecord]) -> DidbRecord {
    let mut text = rec.encode();
    for flip in "0123456789abcdef".chars() {
        let candidate = format!("{}{}", &text[..45], flip);
        let cand = DidbRecord::parse(&candidate).unwrap();
        if records.binary_search(&cand).is_err() {
            return cand;
        }
    }
    text.replace_range(6..7, "f");
    DidbRecord::parse(&text).unwrap()
}

fn build_store(dir: &Path, records: &[DidbRecord], version: u64) {
    write_store(&pack_chunks(records).unwrap(), version, dir).unwrap();
}

fn start_node(root: &Path, peers: Vec<NodeDescriptor>, directory: Option<NodeDescriptor>) -> RunningNode {
    let mut cfg = NodeConfig::new(root.to_path_buf());
    cfg.peers = peers;
    cfg.directory = directory;
    cfg.poll_interval = Duration::from_millis(200);
    cfg.quiet = true;
    node::start(cfg).unwrap()
}

fn local(port: u16) -> NodeDescriptor {
    NodeDescriptor {
        host: "127.0.0.1".into(),
        port,
    }
}

fn explicit_client(node: &RunningNode, timeout_ms: u64) -> Client {
    Client::new(
        NodeSource::Explicit(vec![local(node.verify_addr().port())]),
        ClientOptions {
            attempt_timeout: Duration::from_millis(timeout_ms),
            ..ClientOptions::default()
        },
    )
}

#[test]
fn follower_converges_then_fetches_only_changed_chunks() {
    let tmp = tempfile::tempdir().unwrap();
    let seed_root = tmp.path().join("seed");
    let follower_root = tmp.path().join("follower");
    // Three chunks: two full plus a small tail, so a tail-only change
    // can be told apart from a full re-fetch.
    let records = random_records(2 * didb::store::CHUNK_CAPACITY + 10, 11);
    build_store(&seed_root.join(CURRENT_DIR), &records, 1);

    let seed = start_node(&seed_root, vec![], None);
    let follower = start_node(
        &follower_root,
        vec![local(seed.sync_addr().port())],
        None,
    );
    assert_eq!(follower.wait_for_version(1, Duration::from_secs(30)), Some(1));

    // Byte-identical manifests on disk.
    let seed_manifest = std::fs::read(seed_root.join(CURRENT_DIR).join(MANIFEST_FILE)).unwrap();
    let follower_manifest =
        std::fs::read(follower_root.join(CURRENT_DIR).join(MANIFEST_FILE)).unwrap();
    assert_eq!(seed_manifest, follower_manifest);
    let bytes_v1 = follower.sync_bytes();
    assert!(bytes_v1 > 0);

    // Publish v2 on the seed with one tail record changed; the follower
    // must fetch only the affected (small) chunk, not the whole store.
    let idx = records.len() - 5;
    let variant = absent_variant(&records[idx], &records);
    let mut altered = records.clone();
    altered[idx] = variant.clone();
    altered.sort();
    altered.dedup();
    let staged = tmp.path().join("v2");
    build_store(&staged, &altered, 2);
    std::fs::rename(&staged, seed_root.join(PUBLISH_DIR)).unwrap();

    assert_eq!(seed.wait_for_version(2, Duration::from_secs(30)), Some(2));
    assert_eq!(follower.wait_for_version(2, Duration::from_secs(30)), Some(2));
    let delta = follower.sync_bytes() - bytes_v1;
    // Tail chunk plus manifest traffic only, nowhere near a re-fetch of
    // the two full chunks.
    assert!(
        delta < bytes_v1 / 10,
        "incremental sync moved {delta} of {bytes_v1}"
    );

    // Both serve identical answers.
    let probe = variant;
    let c_seed = explicit_client(&seed, 1000);
    let c_follower = explicit_client(&follower, 1000);
    assert_eq!(c_seed.verify_record(&probe).unwrap().status, VerifyStatus::Found);
    assert_eq!(
        c_follower.verify_record(&probe).unwrap().status,
        VerifyStatus::Found
    );
    assert_eq!(
        c_follower.verify_record(&records[idx]).unwrap().status,
        VerifyStatus::NotFound
    );
}

#[test]
fn verify_server_states_and_bad_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("node");
    let node = start_node(&root, vec![], None);

    // No store yet: NOT_READY over the wire.
    let stream = std::net::TcpStream::connect(node.verify_addr()).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    let records = random_records(50, 12);
    writeln!(writer, "VERIFY {}", records[0]).unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    assert_eq!(line.trim_end(), "ERR NOT_READY");

    // Bad parameter shapes get ERR BAD_PARAM without dropping the
    // connection; valid traffic still works afterwards.
    for bad in [
        "VERIFY",
        "VERIFY tooshort",
        "VERIFY 18001XFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFF",
        &format!("VERIFY {} extra", records[0]),
        "HELLO 1",
    ] {
        writeln!(writer, "{bad}").unwrap();
        line.clear();
        reader.read_line(&mut line).unwrap();
        assert_eq!(line.trim_end(), "ERR BAD_PARAM", "for request {bad:?}");
    }

    // Publish a store and watch the same connection start answering.
    let staged = tmp.path().join("v1");
    build_store(&staged, &records, 1);
    std::fs::rename(&staged, root.join(PUBLISH_DIR)).unwrap();
    assert_eq!(node.wait_for_version(1, Duration::from_secs(10)), Some(1));

    writeln!(writer, "VERIFY {}", records[0]).unwrap();
    line.clear();
    reader.read_line(&mut line).unwrap();
    assert_eq!(line.trim_end(), "FOUND 1");

    let absent = absent_variant(&records[7], &records);
    writeln!(writer, "VERIFY {absent}").unwrap();
    line.clear();
    reader.read_line(&mut line).unwrap();
    assert_eq!(line.trim_end(), "NOT_FOUND 1");
}

/// A sync server that presents a valid manifest but corrupts every chunk
/// payload. A fetching node must reject the chunks and keep its version.
fn corrupt_peer(records: Vec<DidbRecord>) -> (NodeDescriptor, std::thread::JoinHandle<()>) {
    let chunks = pack_chunks(&records).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_store(&chunks, 9, tmp.path()).unwrap().encode();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let _keep = tmp;
        while let Ok((stream, _)) = listener.accept() {
            let mut writer = stream.try_clone().unwrap();
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            loop {
                line.clear();
                match reader.read_line(&mut line) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {}
                }
                let line = line.trim_end();
                if line.starts_with("HELLO") {
                    writer.write_all(b"HELLO 1\n").unwrap();
                } else if line == "MANIFEST" {
                    write!(writer, "MANIFEST {}\n", manifest.len()).unwrap();
                    writer.write_all(manifest.as_bytes()).unwrap();
                } else if let Some(rest) = line.strip_prefix("GET_CHUNK ") {
                    let index: usize = rest.parse().unwrap();
                    let mut bytes = chunks[index].to_bytes();
                    bytes[0] ^= 0x01;
                    write!(writer, "CHUNK {index} {}\n", bytes.len()).unwrap();
                    writer.write_all(&bytes).unwrap();
                } else {
                    break;
                }
                writer.flush().unwrap();
            }
        }
    });
    (local(addr.port()), handle)
}

#[test]
fn corrupt_peer_chunks_are_never_adopted() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("node");
    let records = random_records(300, 13);
    build_store(&root.join(CURRENT_DIR), &records, 1);

    let liar_records = random_records(300, 14);
    let (liar, _server) = corrupt_peer(liar_records);
    let node = start_node(&root, vec![liar], None);
    assert_eq!(node.version(), Some(1));

    // Give the sync loop several attempts against the corrupt peer; the
    // serving version must never advance and the on-disk store must stay
    // clean throughout.
    let deadline = std::time::Instant::now() + Duration::from_millis(1500);
    while std::time::Instant::now() < deadline {
        assert_eq!(node.version(), Some(1), "corrupt version was adopted");
        std::thread::sleep(Duration::from_millis(100));
    }
    assert!(didb::store::validate_store(&root.join(CURRENT_DIR))
        .unwrap()
        .is_empty());
}

#[test]
fn heartbeat_registers_with_directory_and_clients_find_it() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = didb::directory::serve(0, Duration::from_secs(5)).unwrap();
    let root = tmp.path().join("node");
    let records = random_records(200, 15);
    build_store(&root.join(CURRENT_DIR), &records, 1);
    let node = start_node(&root, vec![], Some(local(dir.addr().port())));

    // The heartbeat fires immediately on startup; poll for the listing.
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    let listed = loop {
        let list =
            didb::client::fetch_node_list(&local(dir.addr().port()), Duration::from_secs(1))
                .unwrap();
        if !list.is_empty() {
            break list;
        }
        assert!(std::time::Instant::now() < deadline, "node never registered");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(listed, vec![local(node.verify_addr().port())]);

    // End-to-end through the directory.
    let client = Client::new(
        NodeSource::Directory(local(dir.addr().port())),
        ClientOptions {
            attempt_timeout: Duration::from_millis(1000),
            list_cache_ttl: Duration::ZERO,
            ..ClientOptions::default()
        },
    );
    assert_eq!(
        client.verify_record(&records[0]).unwrap().status,
        VerifyStatus::Found
    );

    // Kill the node: the directory list goes stale but the client
    // surfaces the failure rather than a wrong answer.
    node.shutdown();
    match client.verify_record(&records[0]) {
        Err(ClientError::AllNodesFailed(attempts)) => assert!(!attempts.is_empty()),
        Ok(out) => panic!("expected failure, got {:?}", out.status),
        Err(other) => panic!("unexpected error {other}"),
    }
}

#[test]
fn stale_publish_is_discarded() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("node");
    let records = random_records(100, 16);
    build_store(&root.join(CURRENT_DIR), &records, 5);
    let node = start_node(&root, vec![], None);
    assert_eq!(node.version(), Some(5));

    // A publish with an older version must be ignored and cleaned up.
    let staged = tmp.path().join("old");
    build_store(&staged, &records, 3);
    std::fs::rename(&staged, root.join(PUBLISH_DIR)).unwrap();
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    while root.join(PUBLISH_DIR).exists() {
        assert!(std::time::Instant::now() < deadline, "stale publish not removed");
        std::thread::sleep(Duration::from_millis(50));
    }
    assert_eq!(node.version(), Some(5));
}
