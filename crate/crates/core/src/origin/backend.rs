use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use super::{ObjectKind, RootId};
use crate::crypto::ChunkHash;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendPut {
    Stored,
    /// An object already exists under the name; `same_bytes` compares content.
    Present { same_bytes: bool },
}

/// Object storage keyed by `(root, kind, name)` with put-if-absent writes.
pub trait ObjectBackend: Send + Sync {
    fn put_if_absent(&self, root: RootId, kind: ObjectKind, name: &ChunkHash, bytes: &[u8]) -> io::Result<BackendPut>;
    fn get(&self, root: RootId, kind: ObjectKind, name: &ChunkHash) -> io::Result<Option<Arc<[u8]>>>;
    fn contains(&self, root: RootId, kind: ObjectKind, name: &ChunkHash) -> io::Result<bool> {
        Ok(self.get(root, kind, name)?.is_some())
    }
    fn list(&self, root: RootId, kind: ObjectKind) -> io::Result<Vec<ChunkHash>>;
    /// Removes every object of the root; returns how many were removed.
    fn remove_root(&self, root: RootId) -> io::Result<usize>;
    /// Test hook: overwrites an object in place, bypassing immutability.
    fn tamper(&self, root: RootId, kind: ObjectKind, name: &ChunkHash, bytes: &[u8]) -> io::Result<()>;
}

type Namespace = BTreeMap<ChunkHash, Arc<[u8]>>;

#[derive(Default)]
pub struct MemoryBackend {
    objects: RwLock<HashMap<(RootId, ObjectKind), Namespace>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ObjectBackend for MemoryBackend {
    fn put_if_absent(&self, root: RootId, kind: ObjectKind, name: &ChunkHash, bytes: &[u8]) -> io::Result<BackendPut> {
        let mut objects = self.objects.write();
        let ns = objects.entry((root, kind)).or_default();
        if let Some(existing) = ns.get(name) {
            return Ok(BackendPut::Present { same_bytes: &existing[..] == bytes });
        }
        ns.insert(*name, Arc::from(bytes));
        Ok(BackendPut::Stored)
    }

    fn get(&self, root: RootId, kind: ObjectKind, name: &ChunkHash) -> io::Result<Option<Arc<[u8]>>> {
        Ok(self.objects.read().get(&(root, kind)).and_then(|ns| ns.get(name).cloned()))
    }

    fn contains(&self, root: RootId, kind: ObjectKind, name: &ChunkHash) -> io::Result<bool> {
        Ok(self.objects.read().get(&(root, kind)).is_some_and(|ns| ns.contains_key(name)))
    }

    fn list(&self, root: RootId, kind: ObjectKind) -> io::Result<Vec<ChunkHash>> {
        Ok(self.objects.read().get(&(root, kind)).map(|ns| ns.keys().copied().collect()).unwrap_or_default())
    }

    fn remove_root(&self, root: RootId) -> io::Result<usize> {
        let mut objects = self.objects.write();
        let mut removed = 0;
        for kind in [ObjectKind::Chunk, ObjectKind::Manifest] {
            removed += objects.remove(&(root, kind)).map_or(0, |ns| ns.len());
        }
        Ok(removed)
    }

    fn tamper(&self, root: RootId, kind: ObjectKind, name: &ChunkHash, bytes: &[u8]) -> io::Result<()> {
        self.objects.write().entry((root, kind)).or_default().insert(*name, Arc::from(bytes));
        Ok(())
    }
}

/// `<store>/<root_id>/{chunks,manifests}/<hex-name>`.
pub struct DirBackend {
    base: PathBuf,
    tmp_seq: AtomicU64,
}

impl DirBackend {
    pub fn open(base: impl Into<PathBuf>) -> io::Result<Self> {
        let base = base.into();
        fs::create_dir_all(&base)?;
        Ok(DirBackend { base, tmp_seq: AtomicU64::new(0) })
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    fn dir(&self, root: RootId, kind: ObjectKind) -> PathBuf {
        self.base.join(root.to_string()).join(kind.dir_name())
    }

    fn path(&self, root: RootId, kind: ObjectKind, name: &ChunkHash) -> PathBuf {
        self.dir(root, kind).join(name.to_hex())
    }
}

impl ObjectBackend for DirBackend {
    fn put_if_absent(&self, root: RootId, kind: ObjectKind, name: &ChunkHash, bytes: &[u8]) -> io::Result<BackendPut> {
        let dir = self.dir(root, kind);
        fs::create_dir_all(&dir)?;
        let target = dir.join(name.to_hex());
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            self.tmp_seq.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        // hard_link fails atomically if the target exists, which gives
        // put-if-absent across processes without a lock.
        let linked = fs::hard_link(&tmp, &target);
        fs::remove_file(&tmp)?;
        match linked {
            Ok(()) => Ok(BackendPut::Stored),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                let existing = fs::read(&target)?;
                Ok(BackendPut::Present { same_bytes: existing == bytes })
            }
            Err(e) => Err(e),
        }
    }

    fn get(&self, root: RootId, kind: ObjectKind, name: &ChunkHash) -> io::Result<Option<Arc<[u8]>>> {
        match fs::read(self.path(root, kind, name)) {
            Ok(b) => Ok(Some(Arc::from(b))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn contains(&self, root: RootId, kind: ObjectKind, name: &ChunkHash) -> io::Result<bool> {
        Ok(self.path(root, kind, name).is_file())
    }

    fn list(&self, root: RootId, kind: ObjectKind) -> io::Result<Vec<ChunkHash>> {
        let dir = self.dir(root, kind);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut names = Vec::new();
        for entry in entries {
            let entry = entry?;
            if let Some(name) = entry.file_name().to_str().and_then(|s| s.parse().ok()) {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    }

    fn remove_root(&self, root: RootId) -> io::Result<usize> {
        let removed = self.list(root, ObjectKind::Chunk)?.len() + self.list(root, ObjectKind::Manifest)?.len();
        match fs::remove_dir_all(self.base.join(root.to_string())) {
            Ok(()) => Ok(removed),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(e),
        }
    }

    fn tamper(&self, root: RootId, kind: ObjectKind, name: &ChunkHash, bytes: &[u8]) -> io::Result<()> {
        let dir = self.dir(root, kind);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(name.to_hex()), bytes)
    }
}
