//! Shared handle to the active store version. Readers clone an `Arc` to
//! the loaded snapshot, so a concurrent swap never tears an in-flight
//! lookup: each lookup is answered entirely from one version.

use crate::record::DidbRecord;
use crate::store::{LoadedStore, StoreError};
use std::path::Path;
use std::sync::{Arc, RwLock};

#[derive(Debug, Default)]
pub struct StoreHandle {
    active: RwLock<Option<Arc<LoadedStore>>>,
}

impl StoreHandle {
    /// Handle with no store; lookups fail with StoreNotLoaded until a
    /// version is swapped in.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let store = LoadedStore::load(dir)?;
        Ok(Self {
            active: RwLock::new(Some(Arc::new(store))),
        })
    }

    /// Snapshot of the currently serving version, if any.
    pub fn current(&self) -> Option<Arc<LoadedStore>> {
        self.active.read().unwrap().clone()
    }

    pub fn version(&self) -> Option<u64> {
        self.current().map(|s| s.version())
    }

    /// Validate and load the store under `dir`, then atomically make it
    /// the serving version. The new didb_version must be strictly greater
    /// than the current one; on any failure the old version keeps serving.
    pub fn swap_version(&self, dir: &Path) -> Result<u64, StoreError> {
        let store = LoadedStore::load(dir)?;
        let new_version = store.version();
        let mut guard = self.active.write().unwrap();
        if let Some(current) = guard.as_ref() {
            if new_version <= current.version() {
                return Err(StoreError::StaleVersion {
                    current: current.version(),
                    new: new_version,
                });
            }
        }
        *guard = Some(Arc::new(store));
        Ok(new_version)
    }

    /// Membership plus the didb_version that answered it.
    pub fn lookup(&self, record: &DidbRecord) -> Result<(bool, u64), StoreError> {
        let store = self.current().ok_or(StoreError::StoreNotLoaded)?;
        Ok((store.lookup(record), store.version()))
    }
}
