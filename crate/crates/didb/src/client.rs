//! Outside-machine verifier: hashes the document fields into the
//! 46-character parameter, obtains the node list from the directory (or
//! an explicit list), and queries nodes in randomized order with
//! failover. Raw field values never cross the network, only the
//! parameter does.

use crate::protocol::{
    self, DirectoryRequest, DirectoryResponse, NodeDescriptor, VerifyRequest, VerifyResponse,
};
use crate::record::{make_record, DidbRecord, IdentityFields, RecordError};
use rand::seq::SliceRandom;
use serde::Serialize;
use std::io::{BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::{Duration, Instant};

pub const DEFAULT_ATTEMPT_TIMEOUT: Duration = Duration::from_secs(2);
pub const DEFAULT_LIST_CACHE_TTL: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("directory unreachable: {0}")]
    DirectoryUnreachable(String),
    #[error("directory returned an empty node list")]
    EmptyNodeList,
    #[error("all nodes failed after {} attempts", .0.len())]
    AllNodesFailed(Vec<Attempt>),
}

/// One tried node and how it went; surfaced in reports and `--json`.
#[derive(Debug, Clone, Serialize)]
pub struct Attempt {
    pub node: String,
    pub outcome: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerifyStatus {
    Found,
    NotFound,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub status: VerifyStatus,
    pub didb_version: u64,
    pub node: NodeDescriptor,
    pub attempts: Vec<Attempt>,
}

/// Where the verifier learns node addresses.
#[derive(Debug, Clone)]
pub enum NodeSource {
    Directory(NodeDescriptor),
    Explicit(Vec<NodeDescriptor>),
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub attempt_timeout: Duration,
    /// Maximum nodes tried per verification; None means the list length.
    pub retry_budget: Option<usize>,
    pub list_cache_ttl: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            attempt_timeout: DEFAULT_ATTEMPT_TIMEOUT,
            retry_budget: None,
            list_cache_ttl: DEFAULT_LIST_CACHE_TTL,
        }
    }
}

/// The parameter sent on the wire: identical to the builder's record
/// encoding, bit for bit.
pub fn build_parameter(fields: &IdentityFields) -> Result<String, RecordError> {
    Ok(make_record(fields)?.encode())
}

pub struct Client {
    source: NodeSource,
    opts: ClientOptions,
    cached_list: Mutex<Option<(Instant, Vec<NodeDescriptor>)>>,
}

impl Client {
    pub fn new(source: NodeSource, opts: ClientOptions) -> Self {
        Self {
            source,
            opts,
            cached_list: Mutex::new(None),
        }
    }

    pub fn verify_fields(&self, fields: &IdentityFields) -> Result<VerifyOutcome, ClientError> {
        let record = make_record(fields)?;
        self.verify_record(&record)
    }

    /// Query with failover: randomized node order, advancing on any
    /// connection failure, timeout or ERR until the budget is exhausted.
    pub fn verify_record(&self, record: &DidbRecord) -> Result<VerifyOutcome, ClientError> {
        let mut nodes = self.node_list()?;
        if nodes.is_empty() {
            return Err(ClientError::EmptyNodeList);
        }
        nodes.shuffle(&mut rand::thread_rng());
        let budget = self.opts.retry_budget.unwrap_or(nodes.len()).max(1);

        let mut attempts = Vec::new();
        for node in nodes.into_iter().take(budget) {
            match self.ask_node(&node, record) {
                Ok(VerifyResponse::Found { didb_version }) => {
                    attempts.push(Attempt {
                        node: node.to_string(),
                        outcome: "FOUND".into(),
                    });
                    return Ok(VerifyOutcome {
                        status: VerifyStatus::Found,
                        didb_version,
                        node,
                        attempts,
                    });
                }
                Ok(VerifyResponse::NotFound { didb_version }) => {
                    attempts.push(Attempt {
                        node: node.to_string(),
                        outcome: "NOT_FOUND".into(),
                    });
                    return Ok(VerifyOutcome {
                        status: VerifyStatus::NotFound,
                        didb_version,
                        node,
                        attempts,
                    });
                }
                Ok(VerifyResponse::Err(code)) => attempts.push(Attempt {
                    node: node.to_string(),
                    outcome: format!("ERR {code}"),
                }),
                Err(e) => attempts.push(Attempt {
                    node: node.to_string(),
                    outcome: e,
                }),
            }
        }
        Err(ClientError::AllNodesFailed(attempts))
    }

    fn ask_node(&self, node: &NodeDescriptor, record: &DidbRecord) -> Result<VerifyResponse, String> {
        let stream = connect(node, self.opts.attempt_timeout).map_err(|e| e.to_string())?;
        let mut writer = stream.try_clone().map_err(|e| e.to_string())?;
        let req = VerifyRequest {
            parameter: record.clone(),
        };
        writeln!(writer, "{}", req.encode()).map_err(|e| e.to_string())?;
        let mut reader = BufReader::new(stream);
        let line = protocol::read_line(&mut reader)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| "connection closed".to_owned())?;
        VerifyResponse::decode(&line).map_err(|e| e.to_string())
    }

    fn node_list(&self) -> Result<Vec<NodeDescriptor>, ClientError> {
        match &self.source {
            NodeSource::Explicit(nodes) => Ok(nodes.clone()),
            NodeSource::Directory(directory) => {
                let mut cache = self.cached_list.lock().unwrap();
                if let Some((at, list)) = cache.as_ref() {
                    if at.elapsed() <= self.opts.list_cache_ttl {
                        return Ok(list.clone());
                    }
                }
                let list = fetch_node_list(directory, self.opts.attempt_timeout)
                    .map_err(ClientError::DirectoryUnreachable)?;
                *cache = Some((Instant::now(), list.clone()));
                Ok(list)
            }
        }
    }
}

fn connect(node: &NodeDescriptor, timeout: Duration) -> std::io::Result<TcpStream> {
    let addrs: Vec<SocketAddr> = (node.host.as_str(), node.port).to_socket_addrs()?.collect();
    let addr = addrs.first().ok_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::NotFound, "address does not resolve")
    })?;
    let stream = TcpStream::connect_timeout(addr, timeout)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    Ok(stream)
}

pub fn fetch_node_list(
    directory: &NodeDescriptor,
    timeout: Duration,
) -> Result<Vec<NodeDescriptor>, String> {
    let stream = connect(directory, timeout).map_err(|e| e.to_string())?;
    let mut writer = stream.try_clone().map_err(|e| e.to_string())?;
    writeln!(writer, "{}", DirectoryRequest::List.encode()).map_err(|e| e.to_string())?;
    let mut reader = BufReader::new(stream);
    match DirectoryResponse::read_from(&mut reader) {
        Ok(DirectoryResponse::List(nodes)) => Ok(nodes),
        Ok(other) => Err(format!("unexpected directory response: {other:?}")),
        Err(e) => Err(e.to_string()),
    }
}
