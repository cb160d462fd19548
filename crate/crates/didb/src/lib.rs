//! Distributable identity database (DIDB): a compact, hash-only replica
//! of a central identity store, chunked and checksummed for peer
//! replication, served over a small line protocol and queried by outside
//! clients with failover.
//!
//! The crate splits along the system's seams:
//!
//! - [`record`] — canonical field bundling, truncated hashing, and the
//!   46-character record shared by every component
//! - [`store`] — sorted chunk files, manifest, validation, atomic swap
//! - [`builder`] — CIDB export ingestion and versioned store builds
//! - [`protocol`] — wire codecs for verification, sync and directory
//! - [`node`] — the daemon: serve + sync + heartbeat
//! - [`directory`] — trusted address-relay server with TTL expiry
//! - [`client`] — outside verifier with randomized failover
//! - [`sizing`] — capacity arithmetic and its golden figures
//! - [`simnet`] — multi-process localhost integration harness

pub mod builder;
pub mod client;
pub mod directory;
pub mod node;
pub mod protocol;
pub mod record;
pub mod simnet;
pub mod sizing;
pub mod store;
