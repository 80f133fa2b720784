//! Convergent chunk encryption and manifest sealing.
//!
//! A chunk's key is derived from its own plaintext and a salt, so identical
//! chunks under the same salt encrypt to identical ciphertexts and share a
//! name. Nothing about chunk bytes depends on the customer key; that key only
//! seals the per-image key table inside the manifest.

mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use aes::cipher::{KeyIvInit, StreamCipher};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use manifest::{
    list_chunk_names, open_manifest, seal_manifest, ChunkRecord, ManifestEntry, ManifestHeader,
    OpenedManifest, SealedManifest, MANIFEST_MAGIC, MANIFEST_VERSION,
};

type Aes256Ctr = ctr::Ctr128BE<aes::Aes256>;

const KEY_DOMAIN: &[u8] = b"cekv1";
pub const MAX_SALT_LEN: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("salt is {0} bytes, limit is {MAX_SALT_LEN}")]
    SaltTooLong(usize),
    #[error("chunk is {actual} bytes, expected {expected}")]
    WrongLength { expected: usize, actual: usize },
    #[error("chunk {chunk_index}: ciphertext hash mismatch (expected {expected}, got {actual})")]
    Integrity { chunk_index: u64, expected: ChunkHash, actual: ChunkHash },
    #[error("manifest authentication failed")]
    Authentication,
    #[error("malformed manifest: {0}")]
    MalformedManifest(&'static str),
    #[error("manifest entry {0} is inconsistent: {1}")]
    BadEntry(usize, &'static str),
}

/// Non-secret value mixed into key derivation to partition deduplication.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Salt(Vec<u8>);

impl Salt {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, CryptoError> {
        let bytes = bytes.into();
        if bytes.len() > MAX_SALT_LEN {
            return Err(CryptoError::SaltTooLong(bytes.len()));
        }
        Ok(Salt(bytes))
    }

    pub fn empty() -> Self {
        Salt(Vec::new())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Salt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Salt({})", String::from_utf8_lossy(&self.0))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChunkKey(pub [u8; 32]);

impl fmt::Debug for ChunkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ChunkKey(..)")
    }
}

/// SHA-256 of a chunk ciphertext. Its lowercase hex form is the chunk name.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ChunkHash(pub [u8; 32]);

impl ChunkHash {
    pub fn of(bytes: &[u8]) -> Self {
        ChunkHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for ChunkHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ChunkHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChunkHash({}..)", &self.to_hex()[..12])
    }
}

impl serde::Serialize for ChunkHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for ChunkHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for ChunkHash {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(ChunkHash(out))
    }
}

/// Per-tenant key that seals manifest key tables.
#[derive(Clone, PartialEq, Eq)]
pub struct CustomerKey {
    pub key_id: String,
    pub key: [u8; 32],
}

impl fmt::Debug for CustomerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomerKey").field("key_id", &self.key_id).finish_non_exhaustive()
    }
}

pub trait KeyProvider {
    fn customer_key(&self, key_id: &str) -> Option<CustomerKey>;
}

/// In-memory key provider. The text form is one `key_id hex64` pair per line;
/// blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default)]
pub struct KeyRing {
    keys: BTreeMap<String, CustomerKey>,
}

impl KeyRing {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: CustomerKey) {
        self.keys.insert(key.key_id.clone(), key);
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut ring = KeyRing::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(id), Some(hexkey), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(format!("line {}: expected `<key-id> <64 hex digits>`", lineno + 1));
            };
            let mut key = [0u8; 32];
            hex::decode_to_slice(hexkey, &mut key).map_err(|e| format!("line {}: {e}", lineno + 1))?;
            ring.insert(CustomerKey { key_id: id.to_owned(), key });
        }
        Ok(ring)
    }

    pub fn to_text(&self) -> String {
        self.keys.values().map(|k| format!("{} {}\n", k.key_id, hex::encode(k.key))).collect()
    }
}

impl KeyProvider for KeyRing {
    fn customer_key(&self, key_id: &str) -> Option<CustomerKey> {
        self.keys.get(key_id).cloned()
    }
}

/// `SHA-256("cekv1" || u16le(len(salt)) || salt || plaintext)`.
pub fn derive_key(plaintext: &[u8], salt: &Salt) -> ChunkKey {
    let mut h = Sha256::new();
    h.update(KEY_DOMAIN);
    h.update((salt.0.len() as u16).to_le_bytes());
    h.update(&salt.0);
    h.update(plaintext);
    ChunkKey(h.finalize().into())
}

fn apply_keystream(buf: &mut [u8], key: &ChunkKey) {
    let mut cipher = Aes256Ctr::new(&key.0.into(), &[0u8; 16].into());
    cipher.apply_keystream(buf);
}

/// AES-256-CTR with an all-zero IV. Returns the ciphertext and its SHA-256.
pub fn encrypt_chunk(
    plaintext: &[u8],
    key: &ChunkKey,
    chunk_size: usize,
) -> Result<(Vec<u8>, ChunkHash), CryptoError> {
    if plaintext.len() != chunk_size {
        return Err(CryptoError::WrongLength { expected: chunk_size, actual: plaintext.len() });
    }
    let mut buf = plaintext.to_vec();
    apply_keystream(&mut buf, key);
    let hash = ChunkHash::of(&buf);
    Ok((buf, hash))
}

/// Checks the ciphertext against its authenticated hash, then decrypts.
pub fn decrypt_chunk(
    ciphertext: &[u8],
    key: &ChunkKey,
    expected: &ChunkHash,
    chunk_index: u64,
) -> Result<Vec<u8>, CryptoError> {
    let actual = ChunkHash::of(ciphertext);
    if actual != *expected {
        return Err(CryptoError::Integrity { chunk_index, expected: *expected, actual });
    }
    let mut buf = ciphertext.to_vec();
    apply_keystream(&mut buf, key);
    Ok(buf)
}

/// Derive, encrypt and name in one step.
pub fn convergent_encrypt(
    plaintext: &[u8],
    salt: &Salt,
) -> (ChunkKey, Vec<u8>, ChunkHash) {
    let key = derive_key(plaintext, salt);
    let mut buf = plaintext.to_vec();
    apply_keystream(&mut buf, &key);
    let hash = ChunkHash::of(&buf);
    (key, buf, hash)
}
