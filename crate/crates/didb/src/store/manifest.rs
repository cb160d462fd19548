//! The MANIFEST file: a versioned list of chunk descriptors that serves as
//! both the sync root and the validation root. The textual grammar is
//! bit-exact because peers compare manifests byte for byte.

use crate::record::BirthPrefix;
use crate::store::StoreError;

pub const MANIFEST_FILE: &str = "MANIFEST";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Checksummed summary of one chunk file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkDescriptor {
    pub index: usize,
    pub first_prefix: BirthPrefix,
    pub last_prefix: BirthPrefix,
    pub record_count: u64,
    /// Full SHA-256 of the chunk file bytes, 64 lowercase hex characters.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub format_version: u32,
    pub didb_version: u64,
    pub total_records: u64,
    pub descriptors: Vec<ChunkDescriptor>,
}

impl Manifest {
    /// Serialize to the on-disk / on-wire text form (LF line endings).
    pub fn encode(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("DIDB-MANIFEST {}\n", self.format_version));
        out.push_str(&format!("version {}\n", self.didb_version));
        out.push_str(&format!("records {}\n", self.total_records));
        for d in &self.descriptors {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                d.index,
                d.first_prefix.as_str(),
                d.last_prefix.as_str(),
                d.record_count,
                d.checksum
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| malformed("empty manifest"))?;
        let format_version = header
            .strip_prefix("DIDB-MANIFEST ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed("bad header line"))?;
        let didb_version = field(lines.next(), "version")?;
        let total_records = field(lines.next(), "records")?;

        let mut descriptors = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 5 {
                return Err(malformed("descriptor line must have 5 fields"));
            }
            let index: usize = parts[0]
                .parse()
                .map_err(|_| malformed("bad chunk index"))?;
            let first_prefix = BirthPrefix::parse(parts[1])
                .map_err(|_| malformed("bad first prefix"))?;
            let last_prefix = BirthPrefix::parse(parts[2])
                .map_err(|_| malformed("bad last prefix"))?;
            let record_count: u64 = parts[3]
                .parse()
                .map_err(|_| malformed("bad record count"))?;
            let checksum = parts[4];
            if checksum.len() != 64
                || !checksum
                    .bytes()
                    .all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
            {
                return Err(malformed("bad checksum"));
            }
            descriptors.push(ChunkDescriptor {
                index,
                first_prefix,
                last_prefix,
                record_count,
                checksum: checksum.to_owned(),
            });
        }

        let manifest = Manifest {
            format_version,
            didb_version,
            total_records,
            descriptors,
        };
        manifest.check_invariants()?;
        Ok(manifest)
    }

    pub fn check_invariants(&self) -> Result<(), StoreError> {
        let sum: u64 = self.descriptors.iter().map(|d| d.record_count).sum();
        if sum != self.total_records {
            return Err(malformed("total_records does not match descriptor sum"));
        }
        for (i, d) in self.descriptors.iter().enumerate() {
            if d.index != i {
                return Err(malformed("chunk indices must be contiguous from 0"));
            }
            if d.first_prefix > d.last_prefix {
                return Err(malformed("descriptor prefix range inverted"));
            }
            if d.record_count == 0 {
                return Err(malformed("empty chunk descriptor"));
            }
            if i > 0 && self.descriptors[i - 1].last_prefix > d.first_prefix {
                return Err(malformed("descriptor prefix ranges out of order"));
            }
        }
        Ok(())
    }
}

fn field<T: std::str::FromStr>(line: Option<&str>, key: &str) -> Result<T, StoreError> {
    line.and_then(|l| l.strip_prefix(key))
        .and_then(|v| v.strip_prefix(' '))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed(&format!("missing or bad `{key}` line")))
}

fn malformed(why: &str) -> StoreError {
    StoreError::ManifestMalformed(why.to_owned())
}

/// Candidate chunk indices whose prefix range covers the given prefix.
///
/// Chunks are globally sorted, so the covering descriptors form a
/// contiguous run; the manifest alone determines it, no persistent index
/// is needed.
#[derive(Debug, Clone)]
pub struct PrefixIndex {
    ranges: Vec<(BirthPrefix, BirthPrefix)>,
}

impl PrefixIndex {
    pub fn build(manifest: &Manifest) -> Self {
        Self {
            ranges: manifest
                .descriptors
                .iter()
                .map(|d| (d.first_prefix.clone(), d.last_prefix.clone()))
                .collect(),
        }
    }

    pub fn candidate_chunks(&self, prefix: &BirthPrefix) -> std::ops::Range<usize> {
        let start = self.ranges.partition_point(|(_, last)| last < prefix);
        let end = self.ranges.partition_point(|(first, _)| first <= prefix);
        start..end.max(start)
    }
}
