//! Durable content-addressed origin store organized into roots.
//!
//! Objects are immutable and written with put-if-absent. Each root carries a
//! lifecycle state; reads from an expired root still succeed but raise an
//! alarm that blocks further deletions until an operator acknowledges it.

mod backend;

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{BackendPut, DirBackend, MemoryBackend, ObjectBackend};

use crate::crypto::ChunkHash;
use crate::stats::ecdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RootId(pub u64);

impl fmt::Display for RootId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "root-{:06}", self.0)
    }
}

impl std::str::FromStr for RootId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("root-").unwrap_or(s);
        digits.parse().map(RootId).map_err(|_| format!("invalid root id {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RootState {
    Active,
    Retired,
    Expired,
    Deleted,
}

impl fmt::Display for RootState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RootState::Active => "active",
            RootState::Retired => "retired",
            RootState::Expired => "expired",
            RootState::Deleted => "deleted",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{root} is {state}; cannot {op}")]
pub struct LifecycleError {
    pub root: RootId,
    pub state: RootState,
    pub op: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Root {
    pub id: RootId,
    pub state: RootState,
    pub created_at: u64,
    pub retired_at: Option<u64>,
    pub expired_at: Option<u64>,
    pub migration_complete: bool,
}

impl Root {
    pub fn new(id: RootId, now: u64) -> Self {
        Root { id, state: RootState::Active, created_at: now, retired_at: None, expired_at: None, migration_complete: false }
    }

    fn refuse(&self, op: &'static str) -> LifecycleError {
        LifecycleError { root: self.id, state: self.state, op }
    }

    pub fn retire(&mut self, now: u64) -> Result<(), LifecycleError> {
        if self.state != RootState::Active {
            return Err(self.refuse("retire"));
        }
        self.state = RootState::Retired;
        self.retired_at = Some(now);
        Ok(())
    }

    pub fn set_migration_complete(&mut self) -> Result<(), LifecycleError> {
        if self.state != RootState::Retired {
            return Err(self.refuse("mark migration complete"));
        }
        self.migration_complete = true;
        Ok(())
    }

    pub fn expire(&mut self, now: u64) -> Result<(), LifecycleError> {
        if self.state != RootState::Retired || !self.migration_complete {
            return Err(self.refuse("expire"));
        }
        self.state = RootState::Expired;
        self.expired_at = Some(now);
        Ok(())
    }

    pub fn mark_deleted(&mut self) -> Result<(), LifecycleError> {
        if self.state != RootState::Expired {
            return Err(self.refuse("delete"));
        }
        self.state = RootState::Deleted;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Chunk,
    Manifest,
}

impl ObjectKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            ObjectKind::Chunk => "chunks",
            ObjectKind::Manifest => "manifests",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Stored,
    AlreadyPresent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlarmCause {
    ExpiredRead,
    NameCollision,
    ContentMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub root: RootId,
    pub kind: ObjectKind,
    pub name: ChunkHash,
    pub time: u64,
    pub cause: AlarmCause,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmLog {
    pub events: Vec<AlarmEvent>,
}

impl AlarmLog {
    pub fn deletions_blocked(&self) -> bool {
        !self.events.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum OriginError {
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error("unknown root {0}")]
    UnknownRoot(RootId),
    #[error("{kind:?} {name} not found in {root}")]
    NotFound { root: RootId, kind: ObjectKind, name: ChunkHash },
    #[error("{root}: {name} already stored with different bytes")]
    NameCollision { root: RootId, name: ChunkHash },
    #[error("{root}: stored bytes for {name} do not hash to their name")]
    ContentMismatch { root: RootId, name: ChunkHash },
    #[error("storage I/O: {0}")]
    Io(#[from] io::Error),
}

/// Serializable part of the store: root table, alarm log and logical clock.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StoreMetadata {
    pub roots: Vec<Root>,
    pub alarms: AlarmLog,
    pub clock: u64,
}

pub struct OriginStore {
    backend: Box<dyn ObjectBackend>,
    roots: RwLock<BTreeMap<RootId, Root>>,
    alarms: Mutex<AlarmLog>,
    clock: AtomicU64,
    verify_reads: bool,
}

impl OriginStore {
    pub fn new(backend: Box<dyn ObjectBackend>) -> Self {
        OriginStore {
            backend,
            roots: RwLock::new(BTreeMap::new()),
            alarms: Mutex::new(AlarmLog::default()),
            clock: AtomicU64::new(0),
            verify_reads: false,
        }
    }

    pub fn in_memory() -> Self {
        Self::new(Box::new(MemoryBackend::new()))
    }

    pub fn open_dir(path: &Path) -> io::Result<Self> {
        Ok(Self::new(Box::new(DirBackend::open(path)?)))
    }

    /// Re-hash every object on read and reject mismatches.
    pub fn with_verified_reads(mut self, on: bool) -> Self {
        self.verify_reads = on;
        self
    }

    pub fn backend(&self) -> &dyn ObjectBackend {
        &*self.backend
    }

    pub fn metadata(&self) -> StoreMetadata {
        StoreMetadata {
            roots: self.roots.read().values().cloned().collect(),
            alarms: self.alarms.lock().clone(),
            clock: self.now(),
        }
    }

    pub fn restore_metadata(&self, meta: StoreMetadata) {
        *self.roots.write() = meta.roots.into_iter().map(|r| (r.id, r)).collect();
        *self.alarms.lock() = meta.alarms;
        self.clock.store(meta.clock, Ordering::SeqCst);
    }

    pub fn now(&self) -> u64 {
        self.clock.load(Ordering::SeqCst)
    }

    pub fn advance_clock(&self, by: u64) -> u64 {
        self.clock.fetch_add(by, Ordering::SeqCst) + by
    }

    pub fn create_root(&self) -> RootId {
        let mut roots = self.roots.write();
        let id = RootId(roots.keys().next_back().map_or(1, |r| r.0 + 1));
        roots.insert(id, Root::new(id, self.now()));
        id
    }

    pub fn root(&self, id: RootId) -> Option<Root> {
        self.roots.read().get(&id).cloned()
    }

    pub fn roots(&self) -> Vec<Root> {
        self.roots.read().values().cloned().collect()
    }

    /// Applies a lifecycle transition to a root under the table lock.
    pub fn update_root<T>(
        &self,
        id: RootId,
        f: impl FnOnce(&mut Root) -> Result<T, LifecycleError>,
    ) -> Result<T, OriginError> {
        let mut roots = self.roots.write();
        let root = roots.get_mut(&id).ok_or(OriginError::UnknownRoot(id))?;
        Ok(f(root)?)
    }

    fn state_of(&self, id: RootId) -> Result<RootState, OriginError> {
        self.roots.read().get(&id).map(|r| r.state).ok_or(OriginError::UnknownRoot(id))
    }

    fn raise(&self, root: RootId, kind: ObjectKind, name: ChunkHash, cause: AlarmCause) {
        self.alarms.lock().events.push(AlarmEvent { root, kind, name, time: self.now(), cause });
    }

    fn put_checked(&self, root: RootId, kind: ObjectKind, name: &ChunkHash, bytes: &[u8]) -> Result<PutOutcome, OriginError> {
        match self.backend.put_if_absent(root, kind, name, bytes)? {
            BackendPut::Stored => Ok(PutOutcome::Stored),
            BackendPut::Present { same_bytes: true } => Ok(PutOutcome::AlreadyPresent),
            BackendPut::Present { same_bytes: false } => {
                self.raise(root, kind, *name, AlarmCause::NameCollision);
                Err(OriginError::NameCollision { root, name: *name })
            }
        }
    }

    /// Upload-path write: only active roots accept new data.
    pub fn put_if_absent(&self, root: RootId, kind: ObjectKind, name: &ChunkHash, bytes: &[u8]) -> Result<PutOutcome, OriginError> {
        let state = self.state_of(root)?;
        if state != RootState::Active {
            return Err(LifecycleError { root, state, op: "accept uploads" }.into());
        }
        self.put_checked(root, kind, name, bytes)
    }

    /// Migration-path write: active or retired targets.
    pub fn put_migrated(&self, root: RootId, kind: ObjectKind, name: &ChunkHash, bytes: &[u8]) -> Result<PutOutcome, OriginError> {
        let state = self.state_of(root)?;
        if !matches!(state, RootState::Active | RootState::Retired) {
            return Err(LifecycleError { root, state, op: "accept migrated data" }.into());
        }
        self.put_checked(root, kind, name, bytes)
    }

    pub fn get(&self, root: RootId, kind: ObjectKind, name: &ChunkHash) -> Result<Arc<[u8]>, OriginError> {
        let state = self.state_of(root)?;
        let not_found = || OriginError::NotFound { root, kind, name: *name };
        if state == RootState::Deleted {
            return Err(not_found());
        }
        let bytes = self.backend.get(root, kind, name)?.ok_or_else(not_found)?;
        if state == RootState::Expired {
            self.raise(root, kind, *name, AlarmCause::ExpiredRead);
        }
        if self.verify_reads && ChunkHash::of(&bytes) != *name {
            self.raise(root, kind, *name, AlarmCause::ContentMismatch);
            return Err(OriginError::ContentMismatch { root, name: *name });
        }
        Ok(bytes)
    }

    /// Existence check that never raises alarms.
    pub fn contains(&self, root: RootId, kind: ObjectKind, name: &ChunkHash) -> Result<bool, OriginError> {
        if self.state_of(root)? == RootState::Deleted {
            return Ok(false);
        }
        Ok(self.backend.contains(root, kind, name)?)
    }

    pub fn list(&self, root: RootId, kind: ObjectKind) -> Result<Vec<ChunkHash>, OriginError> {
        if self.state_of(root)? == RootState::Deleted {
            return Ok(Vec::new());
        }
        Ok(self.backend.list(root, kind)?)
    }

    pub fn alarm_log(&self) -> AlarmLog {
        self.alarms.lock().clone()
    }

    pub fn deletions_blocked(&self) -> bool {
        self.alarms.lock().deletions_blocked()
    }

    /// Operator acknowledgement: clears the log and unblocks deletion.
    pub fn acknowledge_alarms(&self) -> usize {
        std::mem::take(&mut self.alarms.lock().events).len()
    }

    /// Removes all objects of a root. Lifecycle checks belong to the caller.
    pub(crate) fn purge_root(&self, root: RootId) -> Result<usize, OriginError> {
        Ok(self.backend.remove_root(root)?)
    }
}

/// Per-upload deduplication outcome, in upload order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DedupStats {
    /// Fraction of non-zero chunks in each upload that were not stored before.
    pub unique_fraction: Vec<f64>,
    /// Fraction of uploads that introduced no new chunk at all.
    pub fraction_zero_unique: f64,
    /// Mean and median unique fraction over uploads with at least one new chunk.
    pub mean_unique_nontrivial: Option<f64>,
    pub median_unique_nontrivial: Option<f64>,
    /// eCDF of unique fraction among uploads with at least one new chunk.
    pub ecdf: Vec<(f64, f64)>,
}

/// Replays uploads (non-zero chunk names, in order) against an initially
/// empty namespace.
pub fn dedup_stats(uploads: &[Vec<ChunkHash>]) -> DedupStats {
    let mut seen = std::collections::HashSet::new();
    let mut unique_fraction = Vec::with_capacity(uploads.len());
    for names in uploads {
        let fresh = names.iter().filter(|n| seen.insert(**n)).count();
        unique_fraction.push(if names.is_empty() { 0.0 } else { fresh as f64 / names.len() as f64 });
    }
    let zero = unique_fraction.iter().filter(|&&f| f == 0.0).count();
    let mut nontrivial: Vec<f64> = unique_fraction.iter().copied().filter(|&f| f > 0.0).collect();
    nontrivial.sort_by(f64::total_cmp);
    let mean = (!nontrivial.is_empty()).then(|| nontrivial.iter().sum::<f64>() / nontrivial.len() as f64);
    let median = crate::stats::percentile_sorted(&nontrivial, 0.5);
    DedupStats {
        fraction_zero_unique: if uploads.is_empty() { 0.0 } else { zero as f64 / uploads.len() as f64 },
        mean_unique_nontrivial: mean,
        median_unique_nontrivial: median,
        ecdf: ecdf(&nontrivial),
        unique_fraction,
    }
}
