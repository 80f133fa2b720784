//! On-disk store: objects under `objects/`, root table and CLI bookkeeping in
//! `meta.json`, customer keys in the keyfile.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use lazyblock_core::crypto::{ChunkHash, CustomerKey, KeyProvider, KeyRing};
use lazyblock_core::gc::{Gc, LiveSet};
use lazyblock_core::origin::{OriginStore, RootId, StoreMetadata};
use serde::{Deserialize, Serialize};

use crate::config::StoreConfig;
use crate::exit::Invalid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadRecord {
    pub manifest: ChunkHash,
    pub root: RootId,
    pub data_chunks: usize,
    pub new_chunks: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Meta {
    pub store: StoreMetadata,
    /// Manifests still referenced by some function.
    pub live: LiveSet,
    pub uploads: Vec<UploadRecord>,
}

pub struct Store {
    pub dir: PathBuf,
    pub config: StoreConfig,
    pub origin: Arc<OriginStore>,
    pub gc: Gc,
    pub live: LiveSet,
    pub uploads: Vec<UploadRecord>,
    _lock: File,
}

impl Store {
    fn meta_path(dir: &Path) -> PathBuf {
        dir.join("meta.json")
    }

    /// Opens an initialized store, holding its advisory lock until dropped.
    /// `wait` blocks for the lock; otherwise a held lock is an error.
    pub fn open(dir: &Path, config: StoreConfig, wait: bool) -> Result<Self> {
        let meta_path = Self::meta_path(dir);
        if !meta_path.exists() {
            return Err(Invalid(format!("{} is not an initialized store (run `lazyblock init`)", dir.display())).into());
        }
        let lock = File::options().create(true).truncate(false).write(true).open(dir.join("lock"))?;
        if wait {
            lock.lock()?;
        } else if lock.try_lock().is_err() {
            bail!("store {} is locked by another process", dir.display());
        }
        let meta: Meta = serde_json::from_slice(&fs::read(&meta_path)?)
            .with_context(|| format!("parsing {}", meta_path.display()))?;
        let origin = Arc::new(OriginStore::open_dir(&dir.join("objects"))?);
        origin.restore_metadata(meta.store);
        let gc = Gc::new(origin.clone(), config.gc)?;
        Ok(Store { dir: dir.to_path_buf(), config, origin, gc, live: meta.live, uploads: meta.uploads, _lock: lock })
    }

    /// Creates the directory layout, the first active roots and, if absent,
    /// a keyfile holding `key` for the configured key id.
    pub fn init(dir: &Path, config: StoreConfig, key: [u8; 32]) -> Result<Self> {
        fs::create_dir_all(dir.join("objects"))?;
        if !dir.join("config.toml").exists() {
            fs::write(dir.join("config.toml"), config.to_toml())?;
        }
        let keyfile = config.keyfile_in(dir);
        if !keyfile.exists() {
            let mut ring = KeyRing::new();
            ring.insert(CustomerKey { key_id: config.key_id.clone(), key });
            fs::write(&keyfile, ring.to_text())?;
        }
        if !Self::meta_path(dir).exists() {
            fs::write(Self::meta_path(dir), serde_json::to_vec_pretty(&Meta::default())?)?;
        }
        let store = Self::open(dir, config, true)?;
        store.gc.bootstrap();
        store.save()?;
        Ok(store)
    }

    /// Writes `meta.json` atomically.
    pub fn save(&self) -> Result<()> {
        let meta = Meta { store: self.origin.metadata(), live: self.live.clone(), uploads: self.uploads.clone() };
        let tmp = self.dir.join("meta.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&meta)?)?;
        fs::rename(&tmp, Self::meta_path(&self.dir))?;
        Ok(())
    }

    pub fn customer_key(&self, key_id: Option<&str>) -> Result<CustomerKey> {
        let path = self.config.keyfile_in(&self.dir);
        let text = fs::read_to_string(&path).with_context(|| format!("reading keyfile {}", path.display()))?;
        let ring = KeyRing::parse(&text).map_err(|e| Invalid(format!("keyfile {}: {e}", path.display())))?;
        let id = key_id.unwrap_or(&self.config.key_id);
        ring.customer_key(id).ok_or_else(|| Invalid(format!("key id `{id}` not in {}", path.display())).into())
    }
}
