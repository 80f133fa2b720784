use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lazyblock_core::crypto::{ChunkHash, Salt};
use lazyblock_core::erasure::{MAX_DATA_STRIPES, MIN_DATA_STRIPES};
use lazyblock_core::flattener::{DEFAULT_CHUNK_SIZE, PAGE_SIZE};
use lazyblock_core::gc::GcConfig;
use lazyblock_core::upload::SaltPolicy;
use serde::{Deserialize, Serialize};

use crate::exit::Invalid;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SaltConfig {
    PerRoot,
    /// Hex-encoded salt shared by every root.
    Static { value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub chunk_size: usize,
    pub salt: SaltConfig,
    pub key_id: String,
    /// Relative paths are resolved against the store directory.
    pub keyfile: PathBuf,
    pub erasure_k: usize,
    pub l1_bytes: u64,
    pub l2_nodes: u32,
    pub l2_node_bytes: u64,
    pub lru_k: usize,
    pub gc: GcConfig,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            chunk_size: DEFAULT_CHUNK_SIZE,
            salt: SaltConfig::PerRoot,
            key_id: "default".into(),
            keyfile: "keys".into(),
            erasure_k: 4,
            l1_bytes: 64 << 20,
            l2_nodes: 5,
            l2_node_bytes: 256 << 20,
            lru_k: 2,
            gc: GcConfig::default(),
        }
    }
}

impl StoreConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: StoreConfig = toml::from_str(text).map_err(|e| Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `--config` wins; otherwise `<store>/config.toml` if present; otherwise defaults.
    pub fn load(explicit: Option<&Path>, store: Option<&Path>) -> Result<Self> {
        let path = match (explicit, store) {
            (Some(p), _) => Some(p.to_path_buf()),
            (None, Some(s)) if s.join("config.toml").exists() => Some(s.join("config.toml")),
            _ => None,
        };
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in {}", p.display()))
            }
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        let bad = |field: &str, msg: String| Err(Invalid(format!("config field `{field}`: {msg}")));
        if self.chunk_size == 0 || self.chunk_size % PAGE_SIZE != 0 {
            return bad("chunk_size", format!("{} is not a positive multiple of {PAGE_SIZE}", self.chunk_size));
        }
        if !(MIN_DATA_STRIPES..=MAX_DATA_STRIPES).contains(&self.erasure_k) {
            return bad("erasure_k", format!("must be in {MIN_DATA_STRIPES}..={MAX_DATA_STRIPES}"));
        }
        if (self.l2_nodes as usize) < self.erasure_k + 1 {
            return bad("l2_nodes", format!("need at least erasure_k + 1 = {} nodes", self.erasure_k + 1));
        }
        if self.lru_k == 0 {
            return bad("lru_k", "must be at least 1".into());
        }
        if self.key_id.is_empty() || self.key_id.contains(char::is_whitespace) {
            return bad("key_id", "must be a non-empty word".into());
        }
        if self.gc.active_roots == 0 {
            return bad("gc.active_roots", "must be at least 1".into());
        }
        if let Err(e) = self.salt_policy() {
            return bad("salt.value", e.to_string());
        }
        Ok(())
    }

    pub fn salt_policy(&self) -> Result<SaltPolicy, Invalid> {
        match &self.salt {
            SaltConfig::PerRoot => Ok(SaltPolicy::PerRoot),
            SaltConfig::Static { value } => {
                let bytes = hex::decode(value).map_err(|e| Invalid(format!("salt is not hex: {e}")))?;
                Ok(SaltPolicy::Static(Salt::new(bytes).map_err(|e| Invalid(e.to_string()))?))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        ChunkHash::of(serde_json::to_string(self).expect("config serializes").as_bytes()).to_hex()
    }

    pub fn keyfile_in(&self, store: &Path) -> PathBuf {
        store.join(&self.keyfile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_hash_is_stable() {
        let c = StoreConfig::default();
        let back = StoreConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.lru_k = 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = StoreConfig::parse("chunk_size = 8192\n[salt]\npolicy = \"static\"\nvalue = \"abcd\"\n").unwrap();
        assert_eq!(c.chunk_size, 8192);
        assert_eq!(c.salt_policy().unwrap(), SaltPolicy::Static(Salt::new(vec![0xab, 0xcd]).unwrap()));
        assert_eq!(c.lru_k, 2);
    }

    #[test]
    fn bad_values_name_the_field() {
        let e = StoreConfig::parse("chunk_size = 1000").unwrap_err().to_string();
        assert!(e.contains("chunk_size"), "{e}");
        let e = StoreConfig::parse("l2_nodes = 3").unwrap_err().to_string();
        assert!(e.contains("l2_nodes"), "{e}");
        let e = StoreConfig::parse("typo = 1").unwrap_err().to_string();
        assert!(e.contains("typo"), "{e}");
        let e = StoreConfig::parse("[salt]\npolicy = \"static\"\nvalue = \"zz\"").unwrap_err().to_string();
        assert!(e.contains("salt"), "{e}");
    }
}
