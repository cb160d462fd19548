//! DIDB generation: ingest a CIDB export (CSV), hash every valid row into
//! a 46-character record, and write a versioned store. Updates are full
//! deterministic rebuilds; peers then fetch only the chunks whose
//! checksums changed.

use crate::record::{make_record, DidbRecord, IdentityFields};
use crate::store::{self, Manifest, StoreError};
use chrono::NaiveDate;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const CIDB_HEADER: &str = "serial,name,date_of_birth,blood_group,place_of_birth,issue_date";

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("cannot read input {0}: {1}")]
    InputUnreadable(PathBuf, String),
    #[error("no valid rows in input")]
    AllRowsInvalid,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectedRow {
    /// 1-based data row number (header not counted).
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct BuildReport {
    pub rows_read: u64,
    pub rows_accepted: u64,
    pub duplicates: u64,
    pub records_written: u64,
    pub rejected: Vec<RejectedRow>,
}

fn parse_date(text: &str, what: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d")
        .map_err(|_| format!("bad {what} `{}`", text.trim()))
}

fn parse_row(row: &csv::StringRecord) -> Result<IdentityFields, String> {
    if row.len() != 6 {
        return Err(format!("expected 6 columns, got {}", row.len()));
    }
    let dob = parse_date(&row[2], "date_of_birth")?;
    let issue = parse_date(&row[5], "issue_date")?;
    IdentityFields::new(&row[0], &row[1], dob, &row[3], &row[4], issue)
        .map_err(|e| e.to_string())
}

/// Read the CIDB export into sorted, deduplicated records plus a report
/// of rejected rows.
pub fn ingest(cidb: &Path) -> Result<(Vec<DidbRecord>, BuildReport), BuildError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(cidb)
        .map_err(|e| BuildError::InputUnreadable(cidb.to_owned(), e.to_string()))?;

    let mut report = BuildReport::default();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i as u64 + 1;
        report.rows_read += 1;
        let outcome = row
            .map_err(|e| e.to_string())
            .and_then(|r| parse_row(&r))
            .and_then(|fields| make_record(&fields).map_err(|e| e.to_string()));
        match outcome {
            Ok(rec) => {
                report.rows_accepted += 1;
                records.push(rec);
            }
            Err(reason) => report.rejected.push(RejectedRow { row: row_no, reason }),
        }
    }
    if report.rows_read > 0 && report.rows_accepted == 0 {
        return Err(BuildError::AllRowsInvalid);
    }

    records.sort();
    let before = records.len() as u64;
    records.dedup();
    report.duplicates = before - records.len() as u64;
    report.records_written = records.len() as u64;
    Ok((records, report))
}

/// Full build: CIDB export in, versioned store out.
pub fn build(
    cidb: &Path,
    didb_version: u64,
    out_dir: &Path,
) -> Result<(Manifest, BuildReport), BuildError> {
    let (records, report) = ingest(cidb)?;
    let chunks = store::pack_chunks(&records)?;
    let manifest = store::write_store(&chunks, didb_version, out_dir)?;
    Ok((manifest, report))
}

/// Rebuild at a new version and report which chunks a peer on the old
/// store would have to fetch.
pub fn rebuild_incremental(
    old_store: &Path,
    cidb: &Path,
    new_version: u64,
    out_dir: &Path,
) -> Result<(Manifest, BuildReport, Vec<usize>), BuildError> {
    let (old_manifest, _) = store::read_manifest(old_store)?;
    let (manifest, report) = build(cidb, new_version, out_dir)?;
    let changed = store::diff_manifests(&old_manifest, &manifest);
    Ok((manifest, report, changed))
}

const FIRST_NAMES: &[&str] = &[
    "Abdul", "Ayesha", "Farhan", "Fatema", "Hasan", "Jannat", "Kamal", "Laila", "Mahmud",
    "Nusrat", "Omar", "Rahim", "Rashida", "Salma", "Shakib", "Sultana", "Tanvir", "Taslima",
    "Yusuf", "Zahid",
];
const LAST_NAMES: &[&str] = &[
    "Ahmed", "Akter", "Alam", "Begum", "Chowdhury", "Das", "Haque", "Hossain", "Islam", "Karim",
    "Khan", "Khatun", "Mia", "Rahman", "Roy", "Sarkar", "Siddique", "Talukder", "Uddin", "Zaman",
];
const PLACES: &[&str] = &[
    "Dhaka", "Chattogram", "Khulna", "Rajshahi", "Sylhet", "Barishal", "Rangpur", "Mymensingh",
    "Cumilla", "Narayanganj",
];
const BLOOD_GROUPS: &[&str] = &["A+", "A-", "B+", "B-", "AB+", "AB-", "O+", "O-", ""];

/// Deterministic pseudo-random CIDB export: same seed, same file bytes.
pub fn generate_synthetic_cidb(count: u64, seed: u64, out: &Path) -> Result<(), BuildError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let file = std::fs::File::create(out)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{CIDB_HEADER}")?;
    for i in 0..count {
        let first = FIRST_NAMES[rng.gen_range(0..FIRST_NAMES.len())];
        let last = LAST_NAMES[rng.gen_range(0..LAST_NAMES.len())];
        let year = rng.gen_range(1900..=2020);
        let month = rng.gen_range(1..=12);
        let day = rng.gen_range(1..=28);
        let blood = BLOOD_GROUPS[rng.gen_range(0..BLOOD_GROUPS.len())];
        let place = PLACES[rng.gen_range(0..PLACES.len())];
        let issue_year = rng.gen_range(2008..=2023);
        let issue_month = rng.gen_range(1..=12);
        let issue_day = rng.gen_range(1..=28);
        writeln!(
            w,
            "S{i:09},{first} {last},{year:04}-{month:02}-{day:02},{blood},{place},{issue_year:04}-{issue_month:02}-{issue_day:02}"
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::RECORD_LEN;

    #[test]
    fn synthetic_generation_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a.csv");
        let b = tmp.path().join("b.csv");
        let c = tmp.path().join("c.csv");
        generate_synthetic_cidb(1000, 42, &a).unwrap();
        generate_synthetic_cidb(1000, 42, &b).unwrap();
        generate_synthetic_cidb(1000, 43, &c).unwrap();
        let (fa, fb, fc) = (
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap(),
            std::fs::read(&c).unwrap(),
        );
        assert_eq!(fa, fb);
        assert_ne!(fa, fc);
    }

    #[test]
    fn zero_rows_gives_header_only_file() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("empty.csv");
        generate_synthetic_cidb(0, 7, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CIDB_HEADER}\n"));
    }

    #[test]
    fn invalid_rows_are_skipped_with_row_numbers() {
        let tmp = tempfile::tempdir().unwrap();
        let csv_path = tmp.path().join("cidb.csv");
        std::fs::write(
            &csv_path,
            format!(
                "{CIDB_HEADER}\n\
                 S1,Alice Rahman,1980-12-05,B+,Dhaka,2016-10-02\n\
                 S2,Bob Khan,1985-13-01,O+,Khulna,2017-01-01\n\
                 S3,Carol Das,1990-06-15,,Sylhet,2018-03-09\n"
            ),
        )
        .unwrap();
        let out = tmp.path().join("store");
        let (manifest, report) = build(&csv_path, 1, &out).unwrap();
        assert_eq!(report.rows_read, 3);
        assert_eq!(report.rows_accepted, 2);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].row, 2);
        assert_eq!(manifest.total_records, 2);
    }

    #[test]
    fn duplicate_rows_collapse_to_one_record() {
        let tmp = tempfile::tempdir().unwrap();
        let csv_path = tmp.path().join("cidb.csv");
        std::fs::write(
            &csv_path,
            format!(
                "{CIDB_HEADER}\n\
                 S1,Alice Rahman,1980-12-05,B+,Dhaka,2016-10-02\n\
                 S1,Alice  Rahman ,1980-12-05,b+,Dhaka,2016-10-02\n"
            ),
        )
        .unwrap();
        let out = tmp.path().join("store");
        let (manifest, report) = build(&csv_path, 1, &out).unwrap();
        assert_eq!(report.duplicates, 1);
        assert_eq!(manifest.total_records, 1);
    }

    #[test]
    fn build_is_deterministic_and_lookup_finds_every_row() {
        let tmp = tempfile::tempdir().unwrap();
        let csv_path = tmp.path().join("cidb.csv");
        generate_synthetic_cidb(500, 11, &csv_path).unwrap();
        let out1 = tmp.path().join("s1");
        let out2 = tmp.path().join("s2");
        build(&csv_path, 3, &out1).unwrap();
        build(&csv_path, 3, &out2).unwrap();
        assert_eq!(
            std::fs::read(out1.join("MANIFEST")).unwrap(),
            std::fs::read(out2.join("MANIFEST")).unwrap()
        );
        assert_eq!(
            std::fs::read(out1.join("chunks/000000.didb")).unwrap(),
            std::fs::read(out2.join("chunks/000000.didb")).unwrap()
        );

        let loaded = crate::store::LoadedStore::load(&out1).unwrap();
        let (records, _) = ingest(&csv_path).unwrap();
        for rec in &records {
            assert!(loaded.lookup(rec));
        }
        // Size law.
        let bytes = std::fs::read(out1.join("chunks/000000.didb")).unwrap();
        assert_eq!(bytes.len(), records.len() * RECORD_LEN);
    }

    #[test]
    fn all_rows_invalid_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let csv_path = tmp.path().join("cidb.csv");
        std::fs::write(&csv_path, format!("{CIDB_HEADER}\nS1,Bad,junk,,X,junk\n")).unwrap();
        assert!(matches!(
            build(&csv_path, 1, &tmp.path().join("out")),
            Err(BuildError::AllRowsInvalid)
        ));
    }
}
