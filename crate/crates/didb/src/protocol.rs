//! Wire codecs for the three conversations: verification (client to
//! node), sync (node to node) and directory (node or client to the
//! trusted server). Plain TCP, UTF-8, LF-terminated command lines;
//! binary payloads are length-prefixed. Codecs are pure and total:
//! any input either decodes or yields a structured error.

use crate::record::DidbRecord;
use std::fmt;
use std::io::{BufRead, Read, Write};

/// Sync protocol version spoken in HELLO.
pub const SYNC_PROTOCOL_VERSION: u32 = 1;

/// Upper bound on any length-prefixed payload a decoder will accept.
/// Chunks are at most CHUNK_BYTES; manifests are far smaller.
pub const MAX_PAYLOAD: u64 = 64 * 1024 * 1024;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("bad verification parameter: {0}")]
    BadParameter(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("declared payload length {declared} but got {delivered} bytes")]
    LengthMismatch { declared: u64, delivered: u64 },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}

fn malformed(line: &str) -> ProtocolError {
    ProtocolError::MalformedLine(line.chars().take(80).collect())
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyRequest {
    pub parameter: DidbRecord,
}

impl VerifyRequest {
    pub fn encode(&self) -> String {
        format!("VERIFY {}", self.parameter.encode())
    }

    pub fn decode(line: &str) -> Result<Self, ProtocolError> {
        let param = line
            .strip_prefix("VERIFY ")
            .ok_or_else(|| malformed(line))?;
        let parameter =
            DidbRecord::parse(param).map_err(|e| ProtocolError::BadParameter(e.to_string()))?;
        Ok(Self { parameter })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyErrorCode {
    BadParam,
    NotReady,
    Internal,
}

impl fmt::Display for VerifyErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BadParam => "BAD_PARAM",
            Self::NotReady => "NOT_READY",
            Self::Internal => "INTERNAL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyResponse {
    Found { didb_version: u64 },
    NotFound { didb_version: u64 },
    Err(VerifyErrorCode),
}

impl VerifyResponse {
    pub fn encode(&self) -> String {
        match self {
            Self::Found { didb_version } => format!("FOUND {didb_version}"),
            Self::NotFound { didb_version } => format!("NOT_FOUND {didb_version}"),
            Self::Err(code) => format!("ERR {code}"),
        }
    }

    pub fn decode(line: &str) -> Result<Self, ProtocolError> {
        if let Some(v) = line.strip_prefix("FOUND ") {
            let didb_version = v.parse().map_err(|_| malformed(line))?;
            return Ok(Self::Found { didb_version });
        }
        if let Some(v) = line.strip_prefix("NOT_FOUND ") {
            let didb_version = v.parse().map_err(|_| malformed(line))?;
            return Ok(Self::NotFound { didb_version });
        }
        match line.strip_prefix("ERR ") {
            Some("BAD_PARAM") => Ok(Self::Err(VerifyErrorCode::BadParam)),
            Some("NOT_READY") => Ok(Self::Err(VerifyErrorCode::NotReady)),
            Some("INTERNAL") => Ok(Self::Err(VerifyErrorCode::Internal)),
            _ => Err(malformed(line)),
        }
    }
}

// ------------------------------------------------------------------ sync

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncRequest {
    Hello(u32),
    Manifest,
    GetChunk(u64),
}

impl SyncRequest {
    pub fn encode(&self) -> String {
        match self {
            Self::Hello(v) => format!("HELLO {v}"),
            Self::Manifest => "MANIFEST".to_owned(),
            Self::GetChunk(i) => format!("GET_CHUNK {i}"),
        }
    }

    pub fn decode(line: &str) -> Result<Self, ProtocolError> {
        if let Some(v) = line.strip_prefix("HELLO ") {
            return v.parse().map(Self::Hello).map_err(|_| malformed(line));
        }
        if line == "MANIFEST" {
            return Ok(Self::Manifest);
        }
        if let Some(i) = line.strip_prefix("GET_CHUNK ") {
            return i.parse().map(Self::GetChunk).map_err(|_| malformed(line));
        }
        Err(malformed(line))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncResponse {
    Hello(u32),
    Manifest(Vec<u8>),
    Chunk { index: u64, bytes: Vec<u8> },
    ErrNoSuchChunk,
}

impl SyncResponse {
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        match self {
            Self::Hello(v) => writeln!(w, "HELLO {v}"),
            Self::Manifest(bytes) => {
                writeln!(w, "MANIFEST {}", bytes.len())?;
                w.write_all(bytes)
            }
            Self::Chunk { index, bytes } => {
                writeln!(w, "CHUNK {index} {}", bytes.len())?;
                w.write_all(bytes)
            }
            Self::ErrNoSuchChunk => writeln!(w, "ERR NO_SUCH_CHUNK"),
        }
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self, ProtocolError> {
        let line = read_line(r)?
            .ok_or_else(|| ProtocolError::MalformedFrame("unexpected end of stream".into()))?;
        if let Some(v) = line.strip_prefix("HELLO ") {
            return v
                .parse()
                .map(Self::Hello)
                .map_err(|_| ProtocolError::MalformedFrame(line.clone()));
        }
        if let Some(len) = line.strip_prefix("MANIFEST ") {
            let len: u64 = len
                .parse()
                .map_err(|_| ProtocolError::MalformedFrame(line.clone()))?;
            return Ok(Self::Manifest(read_payload(r, len)?));
        }
        if let Some(rest) = line.strip_prefix("CHUNK ") {
            let mut parts = rest.splitn(2, ' ');
            let index: u64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ProtocolError::MalformedFrame(line.clone()))?;
            let len: u64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ProtocolError::MalformedFrame(line.clone()))?;
            return Ok(Self::Chunk {
                index,
                bytes: read_payload(r, len)?,
            });
        }
        if line == "ERR NO_SUCH_CHUNK" {
            return Ok(Self::ErrNoSuchChunk);
        }
        Err(ProtocolError::MalformedFrame(
            line.chars().take(80).collect(),
        ))
    }
}

fn read_payload<R: Read>(r: &mut R, declared: u64) -> Result<Vec<u8>, ProtocolError> {
    if declared > MAX_PAYLOAD {
        return Err(ProtocolError::MalformedFrame(format!(
            "payload length {declared} exceeds limit"
        )));
    }
    let mut bytes = vec![0u8; declared as usize];
    let mut filled = 0usize;
    while filled < bytes.len() {
        match r.read(&mut bytes[filled..]) {
            Ok(0) => {
                return Err(ProtocolError::LengthMismatch {
                    declared,
                    delivered: filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(bytes)
}

// ------------------------------------------------------------- directory

/// Address entry relayed by the directory service.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize)]
pub struct NodeDescriptor {
    pub host: String,
    pub port: u16,
}

impl fmt::Display for NodeDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl NodeDescriptor {
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let (host, port) = text.rsplit_once(':').ok_or_else(|| malformed(text))?;
        let port: u16 = port.parse().map_err(|_| malformed(text))?;
        if host.is_empty() || port == 0 {
            return Err(malformed(text));
        }
        Ok(Self {
            host: host.to_owned(),
            port,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DirectoryRequest {
    Register { port: u16 },
    List,
    Ping,
}

impl DirectoryRequest {
    pub fn encode(&self) -> String {
        match self {
            Self::Register { port } => format!("REGISTER {port}"),
            Self::List => "LIST".to_owned(),
            Self::Ping => "PING".to_owned(),
        }
    }

    pub fn decode(line: &str) -> Result<Self, ProtocolError> {
        if let Some(p) = line.strip_prefix("REGISTER ") {
            let port: u16 = p.parse().map_err(|_| malformed(line))?;
            if port == 0 {
                return Err(malformed(line));
            }
            return Ok(Self::Register { port });
        }
        match line {
            "LIST" => Ok(Self::List),
            "PING" => Ok(Self::Ping),
            _ => Err(malformed(line)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DirectoryResponse {
    Ok,
    Pong,
    List(Vec<NodeDescriptor>),
    ErrBadRequest,
}

impl DirectoryResponse {
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        match self {
            Self::Ok => writeln!(w, "OK"),
            Self::Pong => writeln!(w, "PONG"),
            Self::List(nodes) => {
                for n in nodes {
                    writeln!(w, "{n}")?;
                }
                writeln!(w, "END")
            }
            Self::ErrBadRequest => writeln!(w, "ERR BAD_REQUEST"),
        }
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self, ProtocolError> {
        let first = read_line(r)?
            .ok_or_else(|| ProtocolError::MalformedLine("unexpected end of stream".into()))?;
        match first.as_str() {
            "OK" => return Ok(Self::Ok),
            "PONG" => return Ok(Self::Pong),
            "END" => return Ok(Self::List(Vec::new())),
            "ERR BAD_REQUEST" => return Ok(Self::ErrBadRequest),
            _ => {}
        }
        let mut nodes = vec![NodeDescriptor::parse(&first)?];
        loop {
            let line = read_line(r)?
                .ok_or_else(|| ProtocolError::MalformedLine("LIST without END".into()))?;
            if line == "END" {
                return Ok(Self::List(nodes));
            }
            nodes.push(NodeDescriptor::parse(&line)?);
        }
    }
}

/// Read one LF-terminated line, stripping the terminator (and a CR, if a
/// foreign client sent CRLF). None at end of stream.
pub fn read_line<R: BufRead>(r: &mut R) -> std::io::Result<Option<String>> {
    let mut buf = Vec::new();
    let n = r.read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
    if buf.last() == Some(&b'\r') {
        buf.pop();
    }
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "non-UTF-8 line"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PARAM: &str = "198012aaf4c61ddcc5e8a2dabede0f3b482cd9aea9434d";

    #[test]
    fn verify_round_trip() {
        let req = VerifyRequest {
            parameter: DidbRecord::parse(PARAM).unwrap(),
        };
        assert_eq!(req.encode(), format!("VERIFY {PARAM}"));
        assert_eq!(VerifyRequest::decode(&req.encode()).unwrap(), req);

        for resp in [
            VerifyResponse::Found { didb_version: 7 },
            VerifyResponse::NotFound { didb_version: 7 },
            VerifyResponse::Err(VerifyErrorCode::NotReady),
        ] {
            assert_eq!(VerifyResponse::decode(&resp.encode()).unwrap(), resp);
        }
        assert_eq!(
            VerifyResponse::decode("FOUND 7").unwrap(),
            VerifyResponse::Found { didb_version: 7 }
        );
    }

    #[test]
    fn verify_rejects_bad_parameter() {
        assert!(matches!(
            VerifyRequest::decode("VERIFY tooshort"),
            Err(ProtocolError::BadParameter(_))
        ));
        assert!(matches!(
            VerifyRequest::decode("VRFY x"),
            Err(ProtocolError::MalformedLine(_))
        ));
    }

    #[test]
    fn sync_frames_round_trip() {
        for req in [
            SyncRequest::Hello(1),
            SyncRequest::Manifest,
            SyncRequest::GetChunk(3),
        ] {
            assert_eq!(SyncRequest::decode(&req.encode()).unwrap(), req);
        }

        let chunk = SyncResponse::Chunk {
            index: 3,
            bytes: vec![b'x'; 92],
        };
        let mut wire = Vec::new();
        chunk.write_to(&mut wire).unwrap();
        let mut reader = std::io::Cursor::new(wire);
        assert_eq!(SyncResponse::read_from(&mut reader).unwrap(), chunk);
    }

    #[test]
    fn sync_length_mismatch() {
        let wire = b"CHUNK 3 100\nshort".to_vec();
        let mut reader = std::io::Cursor::new(wire);
        assert_eq!(
            SyncResponse::read_from(&mut reader),
            Err(ProtocolError::LengthMismatch {
                declared: 100,
                delivered: 5
            })
        );
    }

    #[test]
    fn directory_round_trip() {
        let list = DirectoryResponse::List(vec![
            NodeDescriptor::parse("10.0.0.1:9001").unwrap(),
            NodeDescriptor::parse("10.0.0.2:9002").unwrap(),
        ]);
        let mut wire = Vec::new();
        list.write_to(&mut wire).unwrap();
        assert_eq!(
            String::from_utf8(wire.clone()).unwrap(),
            "10.0.0.1:9001\n10.0.0.2:9002\nEND\n"
        );
        let mut reader = std::io::Cursor::new(wire);
        assert_eq!(DirectoryResponse::read_from(&mut reader).unwrap(), list);

        let mut empty = std::io::Cursor::new(b"END\n".to_vec());
        assert_eq!(
            DirectoryResponse::read_from(&mut empty).unwrap(),
            DirectoryResponse::List(Vec::new())
        );
        assert_eq!(
            DirectoryRequest::decode("REGISTER 9001").unwrap(),
            DirectoryRequest::Register { port: 9001 }
        );
    }

    #[test]
    fn decoders_never_accept_unproducible_lines() {
        for line in ["", "VERIFY", "FOUND", "FOUND x", "REGISTER 0", "LIST 1", "GET_CHUNK -1"] {
            assert!(VerifyRequest::decode(line).is_err() || line.starts_with("VERIFY "));
            assert!(VerifyResponse::decode(line).is_err());
            assert!(DirectoryRequest::decode(line).is_err() || line == "LIST");
            assert!(SyncRequest::decode(line).is_err());
        }
    }
}
