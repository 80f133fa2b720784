//! Generational garbage collection over origin roots.
//!
//! New data always lands in an active root. Rotation retires the active
//! root(s); live manifests are then copied forward (chunks first, manifest
//! last) either when they are read or by an explicit sweep. A retired root
//! with no live manifest left behind can expire, and after a quiet period
//! without alarms it is deleted.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{ChunkHash, SealedManifest};
use crate::origin::{LifecycleError, ObjectKind, OriginError, OriginStore, RootId, RootState};

/// Which manifests are still referenced by a live function.
pub trait ReferenceView {
    fn is_live(&self, manifest: &ChunkHash) -> bool;
}

impl<F: Fn(&ChunkHash) -> bool> ReferenceView for F {
    fn is_live(&self, manifest: &ChunkHash) -> bool {
        self(manifest)
    }
}

/// Explicit set of live manifest ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveSet(pub BTreeSet<ChunkHash>);

impl ReferenceView for LiveSet {
    fn is_live(&self, manifest: &ChunkHash) -> bool {
        self.0.contains(manifest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcConfig {
    /// Number of simultaneously active roots.
    pub active_roots: usize,
    /// Logical time an expired root must stay quiet before deletion.
    pub quiet_period: u64,
    pub rotation_period: u64,
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig { active_roots: 1, quiet_period: 100, rotation_period: 100 }
    }
}

#[derive(Debug, Error)]
pub enum GcError {
    #[error(transparent)]
    Origin(#[from] OriginError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error("no active root")]
    NoActiveRoot,
    #[error("manifest {0} not found in any readable root")]
    ManifestNotFound(ChunkHash),
    #[error("manifest {manifest} in {root} cannot be parsed")]
    BadManifest { root: RootId, manifest: ChunkHash },
    #[error("migration of {manifest} from {root} aborted: chunk {chunk} missing or corrupt")]
    MissingChunk { root: RootId, manifest: ChunkHash, chunk: ChunkHash },
    #[error("{root} still holds {} live manifest(s) not yet migrated: {}", .offenders.len(), list(.offenders))]
    LiveManifests { root: RootId, offenders: Vec<ChunkHash> },
    #[error("deletion of {0} refused: un-acknowledged alarms")]
    AlarmsPending(RootId),
    #[error("deletion of {root} refused: quiet period has {remaining} ticks left")]
    QuietPeriod { root: RootId, remaining: u64 },
    #[error("injected crash during migration of {0}")]
    InjectedCrash(ChunkHash),
    #[error("invalid GC configuration: {0}")]
    Config(&'static str),
}

fn list(names: &[ChunkHash]) -> String {
    names.iter().map(ChunkHash::to_hex).collect::<Vec<_>>().join(", ")
}

/// A manifest located for reading, with the root that serves its chunks.
#[derive(Debug, Clone)]
pub struct LocatedManifest {
    pub root: RootId,
    pub bytes: Arc<[u8]>,
    pub migrated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SweepReport {
    pub migrated: Vec<(RootId, ChunkHash)>,
    pub completed_roots: Vec<RootId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClosureViolation {
    pub root: RootId,
    pub manifest: ChunkHash,
    pub missing: ChunkHash,
}

pub struct Gc {
    store: Arc<OriginStore>,
    config: GcConfig,
    /// Serializes GC operations against each other.
    exec: Mutex<()>,
    crash_after_chunks: AtomicBool,
}

impl Gc {
    pub fn new(store: Arc<OriginStore>, config: GcConfig) -> Result<Self, GcError> {
        if config.active_roots == 0 {
            return Err(GcError::Config("active_roots must be at least 1"));
        }
        Ok(Gc { store, config, exec: Mutex::new(()), crash_after_chunks: AtomicBool::new(false) })
    }

    pub fn store(&self) -> &Arc<OriginStore> {
        &self.store
    }

    pub fn config(&self) -> GcConfig {
        self.config
    }

    /// Creates the initial active roots if none exist.
    pub fn bootstrap(&self) -> Vec<RootId> {
        let _g = self.exec.lock();
        let mut active = self.active_roots();
        while active.len() < self.config.active_roots {
            active.push(self.store.create_root());
        }
        active
    }

    pub fn active_roots(&self) -> Vec<RootId> {
        self.roots_in(RootState::Active)
    }

    fn roots_in(&self, state: RootState) -> Vec<RootId> {
        self.store.roots().into_iter().filter(|r| r.state == state).map(|r| r.id).collect()
    }

    /// Picks the active root for new data by hashing a routing key.
    pub fn assign_root(&self, routing_key: &[u8]) -> Result<RootId, GcError> {
        let active = self.active_roots();
        if active.is_empty() {
            return Err(GcError::NoActiveRoot);
        }
        let h = ChunkHash::of(routing_key);
        let v = u64::from_le_bytes(h.0[..8].try_into().unwrap());
        Ok(active[(v % active.len() as u64) as usize])
    }

    /// Retires every active root and creates fresh ones. Roots retired with
    /// no manifests are immediately marked migration-complete.
    pub fn rotate_root(&self) -> Result<Vec<RootId>, GcError> {
        let _g = self.exec.lock();
        let old = self.active_roots();
        if old.is_empty() {
            return Err(GcError::NoActiveRoot);
        }
        let fresh: Vec<RootId> = (0..self.config.active_roots).map(|_| self.store.create_root()).collect();
        let now = self.store.now();
        for id in old {
            let empty = self.store.list(id, ObjectKind::Manifest)?.is_empty();
            self.store.update_root(id, |r| {
                r.retire(now)?;
                if empty {
                    r.set_migration_complete()?;
                }
                Ok(())
            })?;
        }
        Ok(fresh)
    }

    /// Arms a one-shot fault: the next migration stops after copying chunks
    /// and before copying the manifest.
    pub fn inject_crash_after_chunks(&self) {
        self.crash_after_chunks.store(true, Ordering::SeqCst);
    }

    /// Copies a manifest and all its chunks from a retired root into `to`.
    pub fn migrate_manifest(&self, manifest: &ChunkHash, from: RootId, to: RootId) -> Result<(), GcError> {
        let _g = self.exec.lock();
        self.migrate_locked(manifest, from, to)
    }

    fn migrate_locked(&self, manifest: &ChunkHash, from: RootId, to: RootId) -> Result<(), GcError> {
        let state = self.store.root(from).ok_or(OriginError::UnknownRoot(from))?.state;
        if state != RootState::Retired {
            return Err(LifecycleError { root: from, state, op: "migrate out of" }.into());
        }
        let bytes = self.store.get(from, ObjectKind::Manifest, manifest)?;
        let sealed = SealedManifest::from_bytes(&bytes)
            .map_err(|_| GcError::BadManifest { root: from, manifest: *manifest })?;
        let names: BTreeSet<ChunkHash> = sealed.chunk_names().into_iter().collect();
        for name in &names {
            let missing = || GcError::MissingChunk { root: from, manifest: *manifest, chunk: *name };
            let chunk = match self.store.get(from, ObjectKind::Chunk, name) {
                Ok(c) => c,
                Err(OriginError::NotFound { .. }) => return Err(missing()),
                Err(e) => return Err(e.into()),
            };
            if ChunkHash::of(&chunk) != *name {
                return Err(missing());
            }
            self.store.put_migrated(to, ObjectKind::Chunk, name, &chunk)?;
        }
        if self.crash_after_chunks.swap(false, Ordering::SeqCst) {
            return Err(GcError::InjectedCrash(*manifest));
        }
        self.store.put_migrated(to, ObjectKind::Manifest, manifest, &bytes)?;
        Ok(())
    }

    fn target_for(&self, manifest: &ChunkHash) -> Result<RootId, GcError> {
        self.assign_root(&manifest.0)
    }

    fn in_active_root(&self, manifest: &ChunkHash) -> Result<Option<RootId>, GcError> {
        for id in self.active_roots() {
            if self.store.contains(id, ObjectKind::Manifest, manifest)? {
                return Ok(Some(id));
            }
        }
        Ok(None)
    }

    /// Finds a manifest for a reader. Active roots are searched first; a live
    /// manifest found only in a retired root is migrated on access. Expired
    /// roots are read last and raise an alarm.
    pub fn read_manifest(&self, manifest: &ChunkHash, refs: &dyn ReferenceView) -> Result<LocatedManifest, GcError> {
        let mut roots = self.store.roots();
        roots.reverse();
        for state in [RootState::Active, RootState::Retired, RootState::Expired] {
            for root in roots.iter().filter(|r| r.state == state) {
                if !self.store.contains(root.id, ObjectKind::Manifest, manifest)? {
                    continue;
                }
                if state == RootState::Retired && refs.is_live(manifest) {
                    let _g = self.exec.lock();
                    let to = self.target_for(manifest)?;
                    match self.migrate_locked(manifest, root.id, to) {
                        Ok(()) => {
                            let bytes = self.store.get(to, ObjectKind::Manifest, manifest)?;
                            return Ok(LocatedManifest { root: to, bytes, migrated: true });
                        }
                        // The retired copy is still complete; serve it.
                        Err(GcError::InjectedCrash(_)) | Err(GcError::MissingChunk { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
                let bytes = self.store.get(root.id, ObjectKind::Manifest, manifest)?;
                return Ok(LocatedManifest { root: root.id, bytes, migrated: false });
            }
        }
        Err(GcError::ManifestNotFound(*manifest))
    }

    /// Live manifests in `root` that have no copy in any active root.
    pub fn pending_live_manifests(&self, root: RootId, refs: &dyn ReferenceView) -> Result<Vec<ChunkHash>, GcError> {
        let mut out = Vec::new();
        for m in self.store.list(root, ObjectKind::Manifest)? {
            if refs.is_live(&m) && self.in_active_root(&m)?.is_none() {
                out.push(m);
            }
        }
        Ok(out)
    }

    /// Background migration: moves every pending live manifest out of every
    /// retired root, then marks roots with nothing pending as complete.
    pub fn sweep(&self, refs: &dyn ReferenceView) -> Result<SweepReport, GcError> {
        let _g = self.exec.lock();
        let mut report = SweepReport::default();
        for root in self.roots_in(RootState::Retired) {
            for m in self.pending_live_manifests(root, refs)? {
                let to = self.target_for(&m)?;
                self.migrate_locked(&m, root, to)?;
                report.migrated.push((root, m));
            }
            let done = self.store.root(root).is_some_and(|r| r.migration_complete);
            if !done {
                self.store.update_root(root, |r| r.set_migration_complete())?;
                report.completed_roots.push(root);
            }
        }
        Ok(report)
    }

    /// Moves a retired root to expired, refusing while live manifests remain.
    pub fn expire_root(&self, root: RootId, refs: &dyn ReferenceView) -> Result<(), GcError> {
        let _g = self.exec.lock();
        let state = self.store.root(root).ok_or(OriginError::UnknownRoot(root))?.state;
        if state != RootState::Retired {
            return Err(LifecycleError { root, state, op: "expire" }.into());
        }
        let offenders = self.pending_live_manifests(root, refs)?;
        if !offenders.is_empty() {
            return Err(GcError::LiveManifests { root, offenders });
        }
        let now = self.store.now();
        self.store.update_root(root, |r| {
            if !r.migration_complete {
                r.set_migration_complete()?;
            }
            r.expire(now)
        })?;
        Ok(())
    }

    /// Removes an expired root's objects once it has been quiet long enough
    /// and no alarm is outstanding. Returns the number of objects removed.
    pub fn delete_root(&self, root: RootId) -> Result<usize, GcError> {
        let _g = self.exec.lock();
        let r = self.store.root(root).ok_or(OriginError::UnknownRoot(root))?;
        if r.state != RootState::Expired {
            return Err(LifecycleError { root, state: r.state, op: "delete" }.into());
        }
        if self.store.deletions_blocked() {
            return Err(GcError::AlarmsPending(root));
        }
        let since = self.store.now().saturating_sub(r.expired_at.unwrap_or(0));
        if since < self.config.quiet_period {
            return Err(GcError::QuietPeriod { root, remaining: self.config.quiet_period - since });
        }
        let removed = self.store.purge_root(root)?;
        self.store.update_root(root, |r| r.mark_deleted())?;
        Ok(removed)
    }

    /// Scans every non-deleted root: each manifest's chunks must be present
    /// in the same root.
    pub fn check_closure(&self) -> Result<Vec<ClosureViolation>, GcError> {
        let mut out = Vec::new();
        for root in self.store.roots().into_iter().filter(|r| r.state != RootState::Deleted) {
            let chunks: BTreeSet<ChunkHash> = self.store.list(root.id, ObjectKind::Chunk)?.into_iter().collect();
            for m in self.store.list(root.id, ObjectKind::Manifest)? {
                let bytes = self
                    .store
                    .backend()
                    .get(root.id, ObjectKind::Manifest, &m)
                    .map_err(OriginError::from)?
                    .ok_or(GcError::ManifestNotFound(m))?;
                let sealed = SealedManifest::from_bytes(&bytes)
                    .map_err(|_| GcError::BadManifest { root: root.id, manifest: m })?;
                for name in sealed.chunk_names() {
                    if !chunks.contains(&name) {
                        out.push(ClosureViolation { root: root.id, manifest: m, missing: name });
                    }
                }
            }
        }
        Ok(out)
    }
}
