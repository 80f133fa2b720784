//! Image upload: chunk, convergent-encrypt, put-if-absent, seal.

use std::io::{self, Read};

use rand::CryptoRng;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::{
    convergent_encrypt, seal_manifest, ChunkHash, CryptoError, CustomerKey, ManifestEntry, Salt, SealedManifest,
};
use crate::flattener::{check_chunk_size, ChunkReader, FlattenError};
use crate::origin::{ObjectKind, OriginError, OriginStore, PutOutcome, RootId};

#[derive(Debug, Error)]
pub enum UploadError {
    #[error(transparent)]
    Flatten(#[from] FlattenError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Origin(#[from] OriginError),
    #[error("reading image: {0}")]
    Io(#[from] io::Error),
    #[error("chunk size {0} does not fit the manifest's 32-bit field")]
    ChunkSizeTooLarge(usize),
}

/// How the dedup salt is chosen for new chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SaltPolicy {
    Static(Salt),
    /// Salt is derived from the active root id, so chunks never dedup
    /// across root generations.
    PerRoot,
}

impl SaltPolicy {
    pub fn salt_for(&self, root: RootId) -> Salt {
        match self {
            SaltPolicy::Static(s) => s.clone(),
            SaltPolicy::PerRoot => {
                let mut bytes = b"root:".to_vec();
                bytes.extend_from_slice(&root.0.to_le_bytes());
                Salt::new(bytes).expect("13-byte salt")
            }
        }
    }
}

/// Accumulates manifest entries one chunk at a time so arbitrarily large
/// images can be processed in constant memory (besides the chunk table).
pub struct ManifestBuilder {
    salt: Salt,
    chunk_size: usize,
    image_length: u64,
    entries: Vec<ManifestEntry>,
}

impl ManifestBuilder {
    pub fn new(salt: Salt, chunk_size: usize) -> Result<Self, UploadError> {
        check_chunk_size(chunk_size)?;
        if u32::try_from(chunk_size).is_err() {
            return Err(UploadError::ChunkSizeTooLarge(chunk_size));
        }
        Ok(ManifestBuilder { salt, chunk_size, image_length: 0, entries: Vec::new() })
    }

    /// Adds the next chunk. `None` marks an all-zero chunk. Returns the
    /// ciphertext and name for data chunks.
    pub fn push(&mut self, plaintext: Option<&[u8]>) -> Result<Option<(Vec<u8>, ChunkHash)>, UploadError> {
        let out = match plaintext {
            None => {
                self.entries.push(ManifestEntry::zero());
                None
            }
            Some(p) => {
                if p.len() != self.chunk_size {
                    return Err(CryptoError::WrongLength { expected: self.chunk_size, actual: p.len() }.into());
                }
                let (key, ct, name) = convergent_encrypt(p, &self.salt);
                self.entries.push(ManifestEntry::data(name, key));
                Some((ct, name))
            }
        };
        self.image_length += self.chunk_size as u64;
        Ok(out)
    }

    /// Overrides the image length, which otherwise counts padded chunks.
    pub fn set_image_length(&mut self, len: u64) {
        self.image_length = len;
    }

    pub fn chunk_count(&self) -> usize {
        self.entries.len()
    }

    pub fn finish<R: CryptoRng + ?Sized>(self, customer: &CustomerKey, rng: &mut R) -> Result<SealedManifest, UploadError> {
        Ok(seal_manifest(&self.entries, self.image_length, self.chunk_size as u32, self.salt, customer, rng)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UploadReport {
    pub root: RootId,
    pub manifest_id: ChunkHash,
    pub image_length: u64,
    pub chunk_count: usize,
    pub zero_chunks: usize,
    pub data_chunks: usize,
    /// Data chunks that were not already present in the root.
    pub new_chunks: usize,
    pub unique_fraction: f64,
    pub manifest_bytes: usize,
    /// Non-zero chunk names in offset order.
    #[serde(skip)]
    pub chunk_names: Vec<ChunkHash>,
}

struct Counting<R> {
    inner: R,
    count: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count += n as u64;
        Ok(n)
    }
}

/// Streams an image into `root`: every data chunk is put before the
/// manifest, so a stored manifest always has its chunks.
pub fn upload_reader<R: Read, G: CryptoRng + ?Sized>(
    store: &OriginStore,
    root: RootId,
    image: R,
    chunk_size: usize,
    salt: Salt,
    customer: &CustomerKey,
    rng: &mut G,
) -> Result<UploadReport, UploadError> {
    let mut builder = ManifestBuilder::new(salt, chunk_size)?;
    let mut counting = Counting { inner: image, count: 0 };
    let mut new_chunks = 0;
    let mut chunk_names = Vec::new();
    for chunk in ChunkReader::new(&mut counting, chunk_size)? {
        let chunk = chunk?;
        if let Some((ct, name)) = builder.push(chunk.plaintext.as_deref())? {
            if store.put_if_absent(root, ObjectKind::Chunk, &name, &ct)? == PutOutcome::Stored {
                new_chunks += 1;
            }
            chunk_names.push(name);
        }
    }
    let image_length = counting.count;
    builder.set_image_length(image_length);
    let chunk_count = builder.chunk_count();
    let sealed = builder.finish(customer, rng)?;
    let bytes = sealed.to_bytes();
    let manifest_id = ChunkHash::of(&bytes);
    store.put_if_absent(root, ObjectKind::Manifest, &manifest_id, &bytes)?;
    let data_chunks = chunk_names.len();
    Ok(UploadReport {
        root,
        manifest_id,
        image_length,
        chunk_count,
        zero_chunks: chunk_count - data_chunks,
        data_chunks,
        new_chunks,
        unique_fraction: if data_chunks == 0 { 0.0 } else { new_chunks as f64 / data_chunks as f64 },
        manifest_bytes: bytes.len(),
        chunk_names,
    })
}

pub fn upload_image<G: CryptoRng + ?Sized>(
    store: &OriginStore,
    root: RootId,
    image: &[u8],
    chunk_size: usize,
    salt: Salt,
    customer: &CustomerKey,
    rng: &mut G,
) -> Result<UploadReport, UploadError> {
    upload_reader(store, root, image, chunk_size, salt, customer, rng)
}
