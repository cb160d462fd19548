//! The 46-character identity record: a 6-digit birth year-month prefix
//! followed by a 40-hex truncated SHA-256 of the canonicalized document
//! fields. Builder, node and client all share this module so that the
//! same input always produces the same bytes.

use chrono::{Datelike, NaiveDate};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// Length of the textual record encoding: 6 prefix digits + 40 hex digits.
pub const RECORD_LEN: usize = 46;

/// Field separator used when bundling document fields before hashing.
pub const FIELD_SEPARATOR: char = '|';

const MIN_YEAR: i32 = 1800;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("field `{0}` contains the reserved separator '|'")]
    FieldContainsSeparator(&'static str),
    #[error("field `{0}` is empty after trimming")]
    EmptyField(&'static str),
    #[error("invalid date: {0}")]
    InvalidDate(String),
    #[error("record text must be exactly 46 characters, got {0}")]
    BadLength(usize),
    #[error("bad birth prefix `{0}`")]
    BadPrefix(String),
    #[error("digest must be 40 lowercase hex characters")]
    BadDigestAlphabet,
}

/// The six document fields a verification covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityFields {
    pub serial: String,
    pub name: String,
    pub date_of_birth: NaiveDate,
    pub blood_group: String,
    pub place_of_birth: String,
    pub issue_date: NaiveDate,
}

impl IdentityFields {
    pub fn new(
        serial: &str,
        name: &str,
        date_of_birth: NaiveDate,
        blood_group: &str,
        place_of_birth: &str,
        issue_date: NaiveDate,
    ) -> Result<Self, RecordError> {
        let fields = Self {
            serial: serial.to_owned(),
            name: name.to_owned(),
            date_of_birth,
            blood_group: blood_group.to_owned(),
            place_of_birth: place_of_birth.to_owned(),
            issue_date,
        };
        fields.check()?;
        Ok(fields)
    }

    fn check(&self) -> Result<(), RecordError> {
        if self.serial.trim().is_empty() {
            return Err(RecordError::EmptyField("serial"));
        }
        if self.name.trim().is_empty() {
            return Err(RecordError::EmptyField("name"));
        }
        if self.date_of_birth.year() < MIN_YEAR {
            return Err(RecordError::InvalidDate(format!(
                "birth year {} below sanity floor {}",
                self.date_of_birth.year(),
                MIN_YEAR
            )));
        }
        Ok(())
    }
}

/// Normalize one field: NFC, trim, collapse internal whitespace runs.
fn normalize_field(raw: &str, name: &'static str) -> Result<String, RecordError> {
    if raw.contains(FIELD_SEPARATOR) {
        return Err(RecordError::FieldContainsSeparator(name));
    }
    let composed: String = raw.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    Ok(out)
}

/// Deterministic byte sequence fed to the hash. Name and blood group are
/// case-folded to uppercase; serial and place keep their case. Dates are
/// rendered YYYY-MM-DD and fields joined with `|` in a fixed order.
pub fn canonicalize(fields: &IdentityFields) -> Result<Vec<u8>, RecordError> {
    fields.check()?;
    let serial = normalize_field(&fields.serial, "serial")?;
    let name = normalize_field(&fields.name, "name")?.to_uppercase();
    let blood = normalize_field(&fields.blood_group, "blood_group")?.to_uppercase();
    let place = normalize_field(&fields.place_of_birth, "place_of_birth")?;
    let bundled = format!(
        "{serial}|{name}|{dob}|{blood}|{place}|{issue}",
        dob = fields.date_of_birth.format("%Y-%m-%d"),
        issue = fields.issue_date.format("%Y-%m-%d"),
    );
    Ok(bundled.into_bytes())
}

/// First 160 bits of a SHA-256 digest, as 40 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest40(String);

impl Digest40 {
    pub fn parse(text: &str) -> Result<Self, RecordError> {
        if text.len() != 40 || !text.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
        {
            return Err(RecordError::BadDigestAlphabet);
        }
        Ok(Self(text.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// SHA-256 in truncate mode: hash, keep the leading 20 bytes, hex-encode.
pub fn truncated_sha256(data: &[u8]) -> Digest40 {
    let digest = Sha256::digest(data);
    let mut hex = String::with_capacity(40);
    for byte in &digest[..20] {
        hex.push_str(&format!("{byte:02x}"));
    }
    Digest40(hex)
}

/// Six ASCII digits, yyyymm, year in [1800, 9999] and month in [01, 12].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BirthPrefix(String);

impl BirthPrefix {
    pub fn parse(text: &str) -> Result<Self, RecordError> {
        if text.len() != 6 || !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(RecordError::BadPrefix(text.to_owned()));
        }
        let year: u32 = text[..4].parse().unwrap();
        let month: u32 = text[4..].parse().unwrap();
        if !(MIN_YEAR as u32..=9999).contains(&year) || !(1..=12).contains(&month) {
            return Err(RecordError::BadPrefix(text.to_owned()));
        }
        Ok(Self(text.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Zero-padded yyyymm of the birth date.
pub fn derive_prefix(date_of_birth: NaiveDate) -> BirthPrefix {
    BirthPrefix(format!(
        "{:04}{:02}",
        date_of_birth.year(),
        date_of_birth.month()
    ))
}

/// One stored identity: prefix then digest, 46 ASCII characters total.
/// Ordering is lexicographic over the encoding, which coincides with
/// ordering by (prefix, digest).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DidbRecord {
    prefix: BirthPrefix,
    digest: Digest40,
}

impl DidbRecord {
    pub fn new(prefix: BirthPrefix, digest: Digest40) -> Self {
        Self { prefix, digest }
    }

    pub fn prefix(&self) -> &BirthPrefix {
        &self.prefix
    }

    pub fn digest(&self) -> &Digest40 {
        &self.digest
    }

    pub fn encode(&self) -> String {
        format!("{}{}", self.prefix.0, self.digest.0)
    }

    pub fn parse(text: &str) -> Result<Self, RecordError> {
        if text.len() != RECORD_LEN {
            return Err(RecordError::BadLength(text.len()));
        }
        // `get` rather than indexing: a 46-byte string may still split a
        // multi-byte character at position 6.
        let prefix = BirthPrefix::parse(
            text.get(..6)
                .ok_or_else(|| RecordError::BadPrefix(text.to_owned()))?,
        )?;
        let digest = Digest40::parse(text.get(6..).ok_or(RecordError::BadDigestAlphabet)?)?;
        Ok(Self { prefix, digest })
    }
}

impl std::fmt::Display for DidbRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.prefix.0, self.digest.0)
    }
}

/// Prefix + truncated hash of the canonicalized fields. The builder stores
/// this and the client sends the identical encoding as a query parameter.
pub fn make_record(fields: &IdentityFields) -> Result<DidbRecord, RecordError> {
    let bundled = canonicalize(fields)?;
    Ok(DidbRecord {
        prefix: derive_prefix(fields.date_of_birth),
        digest: truncated_sha256(&bundled),
    })
}
