//! On-disk DIDB store: globally sorted records packed into checksummed
//! chunk files, a MANIFEST as the validation root, and an in-memory
//! prefix index for membership lookups.

mod handle;
mod manifest;

pub use handle::StoreHandle;
pub use manifest::{ChunkDescriptor, Manifest, PrefixIndex, MANIFEST_FILE, MANIFEST_FORMAT_VERSION};

use crate::record::{BirthPrefix, DidbRecord, RECORD_LEN};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Records per chunk: floor(4.9 MiB / 46). A full chunk is 5,138,016 bytes.
pub const CHUNK_CAPACITY: usize = 111_696;
/// Byte size of a full chunk file.
pub const CHUNK_BYTES: usize = CHUNK_CAPACITY * RECORD_LEN;

pub const CHUNK_DIR: &str = "chunks";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("input records are not sorted ascending")]
    UnsortedInput,
    #[error("duplicate record in input")]
    DuplicateRecord,
    #[error("manifest file missing under {0}")]
    ManifestMissing(PathBuf),
    #[error("malformed manifest: {0}")]
    ManifestMalformed(String),
    #[error("no store loaded")]
    StoreNotLoaded,
    #[error("store failed validation: corrupt chunks {0:?}")]
    ValidationFailed(Vec<usize>),
    #[error("new version {new} is not greater than current version {current}")]
    StaleVersion { current: u64, new: u64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// A sorted run of records; the unit of replication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub index: usize,
    pub records: Vec<DidbRecord>,
}

impl Chunk {
    /// Raw file form: concatenated 46-byte encodings, no header.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * RECORD_LEN);
        for rec in &self.records {
            out.extend_from_slice(rec.encode().as_bytes());
        }
        out
    }

    pub fn descriptor(&self) -> ChunkDescriptor {
        ChunkDescriptor {
            index: self.index,
            first_prefix: self.records.first().unwrap().prefix().clone(),
            last_prefix: self.records.last().unwrap().prefix().clone(),
            record_count: self.records.len() as u64,
            checksum: sha256_hex(&self.to_bytes()),
        }
    }
}

/// Greedy fill: every chunk except the last holds exactly CHUNK_CAPACITY
/// records. Input must be sorted ascending with no duplicates.
pub fn pack_chunks(records: &[DidbRecord]) -> Result<Vec<Chunk>, StoreError> {
    for pair in records.windows(2) {
        match pair[0].cmp(&pair[1]) {
            std::cmp::Ordering::Less => {}
            std::cmp::Ordering::Equal => return Err(StoreError::DuplicateRecord),
            std::cmp::Ordering::Greater => return Err(StoreError::UnsortedInput),
        }
    }
    Ok(records
        .chunks(CHUNK_CAPACITY)
        .enumerate()
        .map(|(index, slice)| Chunk {
            index,
            records: slice.to_vec(),
        })
        .collect())
}

pub fn chunk_file_name(index: usize) -> String {
    format!("{index:06}.didb")
}

/// Write chunk files and MANIFEST under `dir`, atomically via a staging
/// directory that is renamed into place.
pub fn write_store(
    chunks: &[Chunk],
    didb_version: u64,
    dir: &Path,
) -> Result<Manifest, StoreError> {
    let descriptors: Vec<ChunkDescriptor> = chunks.iter().map(Chunk::descriptor).collect();
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        didb_version,
        total_records: descriptors.iter().map(|d| d.record_count).sum(),
        descriptors,
    };

    let parent = dir.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let staging = parent.join(format!(
        ".{}.staging-{}",
        dir.file_name().and_then(|n| n.to_str()).unwrap_or("store"),
        std::process::id()
    ));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    let chunk_dir = staging.join(CHUNK_DIR);
    fs::create_dir_all(&chunk_dir).map_err(io_err(&chunk_dir))?;

    for chunk in chunks {
        let path = chunk_dir.join(chunk_file_name(chunk.index));
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(&chunk.to_bytes()).map_err(io_err(&path))?;
    }
    let manifest_path = staging.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest.encode()).map_err(io_err(&manifest_path))?;

    // Replace any existing store only after the staging copy is complete.
    if dir.exists() {
        let doomed = parent.join(format!(
            ".{}.old-{}",
            dir.file_name().and_then(|n| n.to_str()).unwrap_or("store"),
            std::process::id()
        ));
        if doomed.exists() {
            fs::remove_dir_all(&doomed).map_err(io_err(&doomed))?;
        }
        fs::rename(dir, &doomed).map_err(io_err(dir))?;
        fs::rename(&staging, dir).map_err(io_err(dir))?;
        fs::remove_dir_all(&doomed).map_err(io_err(&doomed))?;
    } else {
        fs::rename(&staging, dir).map_err(io_err(dir))?;
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<(Manifest, Vec<u8>), StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(StoreError::ManifestMissing(dir.to_owned()))
        }
        Err(e) => return Err(io_err(&path)(e)),
    };
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| StoreError::ManifestMalformed("not UTF-8".into()))?;
    Ok((Manifest::parse(text)?, bytes))
}

pub fn read_chunk_bytes(dir: &Path, index: usize) -> Result<Vec<u8>, StoreError> {
    let path = dir.join(CHUNK_DIR).join(chunk_file_name(index));
    fs::read(&path).map_err(io_err(&path))
}

/// Empty list iff every chunk file hashes to its descriptor checksum and
/// the count and sort invariants hold, per chunk and across chunks.
pub fn validate_store(dir: &Path) -> Result<Vec<usize>, StoreError> {
    let (manifest, _) = read_manifest(dir)?;
    let mut corrupt = Vec::new();
    let mut prev_last: Option<Vec<u8>> = None;
    for d in &manifest.descriptors {
        match chunk_is_sound(dir, d, prev_last.as_deref()) {
            Some(last) => prev_last = Some(last),
            None => {
                corrupt.push(d.index);
                prev_last = None;
            }
        }
    }
    Ok(corrupt)
}

/// Returns the last record encoding on success, None on any defect.
fn chunk_is_sound(dir: &Path, d: &ChunkDescriptor, prev_last: Option<&[u8]>) -> Option<Vec<u8>> {
    let bytes = read_chunk_bytes(dir, d.index).ok()?;
    if sha256_hex(&bytes) != d.checksum {
        return None;
    }
    if bytes.len() % RECORD_LEN != 0 || (bytes.len() / RECORD_LEN) as u64 != d.record_count {
        return None;
    }
    let mut prev: Option<&[u8]> = prev_last;
    for rec in bytes.chunks_exact(RECORD_LEN) {
        if let Some(p) = prev {
            if p >= rec {
                return None;
            }
        }
        prev = Some(rec);
    }
    let first = &bytes[..RECORD_LEN];
    let last = &bytes[bytes.len() - RECORD_LEN..];
    if &first[..6] != d.first_prefix.as_str().as_bytes()
        || &last[..6] != d.last_prefix.as_str().as_bytes()
    {
        return None;
    }
    Some(last.to_vec())
}

/// Chunk indices of `new` that must be fetched by a peer holding `old`:
/// differing checksums at the same index, plus everything past old's end.
/// A function of checksums only.
pub fn diff_manifests(old: &Manifest, new: &Manifest) -> Vec<usize> {
    new.descriptors
        .iter()
        .filter(|d| {
            old.descriptors
                .get(d.index)
                .map_or(true, |o| o.checksum != d.checksum)
        })
        .map(|d| d.index)
        .collect()
}

/// A validated store resident in memory, ready to answer lookups.
#[derive(Debug)]
pub struct LoadedStore {
    root: PathBuf,
    manifest: Manifest,
    manifest_bytes: Vec<u8>,
    index: PrefixIndex,
    chunks: Vec<Vec<u8>>,
}

impl LoadedStore {
    /// Validate then load every chunk into memory.
    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let corrupt = validate_store(dir)?;
        if !corrupt.is_empty() {
            return Err(StoreError::ValidationFailed(corrupt));
        }
        let (manifest, manifest_bytes) = read_manifest(dir)?;
        let mut chunks = Vec::with_capacity(manifest.descriptors.len());
        for d in &manifest.descriptors {
            chunks.push(read_chunk_bytes(dir, d.index)?);
        }
        let index = PrefixIndex::build(&manifest);
        Ok(Self {
            root: dir.to_owned(),
            manifest,
            manifest_bytes,
            index,
            chunks,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Exact bytes of the MANIFEST file, as served to syncing peers.
    pub fn manifest_bytes(&self) -> &[u8] {
        &self.manifest_bytes
    }

    pub fn version(&self) -> u64 {
        self.manifest.didb_version
    }

    pub fn chunk_bytes(&self, index: usize) -> Option<&[u8]> {
        self.chunks.get(index).map(Vec::as_slice)
    }

    /// Membership test: candidate chunks come from the prefix index, then
    /// a binary search over the fixed-width records inside each.
    pub fn lookup(&self, record: &DidbRecord) -> bool {
        let needle = record.encode();
        let needle = needle.as_bytes();
        for chunk_idx in self.index.candidate_chunks(record.prefix()) {
            let data = &self.chunks[chunk_idx];
            let n = data.len() / RECORD_LEN;
            let (mut lo, mut hi) = (0usize, n);
            while lo < hi {
                let mid = (lo + hi) / 2;
                let rec = &data[mid * RECORD_LEN..(mid + 1) * RECORD_LEN];
                match rec.cmp(needle) {
                    std::cmp::Ordering::Equal => return true,
                    std::cmp::Ordering::Less => lo = mid + 1,
                    std::cmp::Ordering::Greater => hi = mid,
                }
            }
        }
        false
    }

    /// Linear scan over every chunk; the independent route used by tests
    /// and harnesses to cross-check `lookup`.
    pub fn lookup_linear_scan(&self, record: &DidbRecord) -> bool {
        let needle = record.encode();
        let needle = needle.as_bytes();
        self.chunks
            .iter()
            .flat_map(|data| data.chunks_exact(RECORD_LEN))
            .any(|rec| rec == needle)
    }

    pub fn iter_records(&self) -> impl Iterator<Item = DidbRecord> + '_ {
        self.chunks
            .iter()
            .flat_map(|data| data.chunks_exact(RECORD_LEN))
            .map(|raw| DidbRecord::parse(std::str::from_utf8(raw).unwrap()).unwrap())
    }
}

/// Prefix helper shared by lookups against raw chunk bytes.
pub fn record_prefix(raw: &[u8]) -> Option<BirthPrefix> {
    std::str::from_utf8(&raw[..6])
        .ok()
        .and_then(|s| BirthPrefix::parse(s).ok())
}
