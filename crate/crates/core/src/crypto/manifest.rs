//! Sealed manifest: plaintext chunk table, AES-256-GCM encrypted key table.
//!
//! Wire format (little-endian):
//!
//! ```text
//! "CMFT" | u32 version | u64 image_length | u32 chunk_size
//! | u16 salt_len | salt | 12-byte nonce
//! | u32 record_count | records: 32-byte hash, u8 flags (bit0 = zero chunk)
//! | u32 key_table_len | key_table ciphertext | 16-byte tag
//! ```
//!
//! Everything from the magic through the last record is the GCM associated
//! data, so the chunk table can be listed without a key but not altered.

use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes256Gcm, KeyInit, Nonce, Tag};
use rand::CryptoRng;

use super::{ChunkHash, ChunkKey, CryptoError, CustomerKey, Salt, MAX_SALT_LEN};

pub const MANIFEST_MAGIC: &[u8; 4] = b"CMFT";
pub const MANIFEST_VERSION: u32 = 1;

const RECORD_LEN: usize = 33;
const FLAG_ZERO: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestHeader {
    pub image_length: u64,
    pub chunk_size: u32,
    pub salt: Salt,
    pub nonce: [u8; 12],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkRecord {
    /// All zero bytes for zero chunks.
    pub hash: ChunkHash,
    pub is_zero: bool,
}

/// Input to [`seal_manifest`]: one per chunk in offset order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub hash: ChunkHash,
    pub is_zero: bool,
    /// `None` exactly when the chunk is a zero chunk.
    pub key: Option<ChunkKey>,
}

impl ManifestEntry {
    pub fn zero() -> Self {
        ManifestEntry { hash: ChunkHash::default(), is_zero: true, key: None }
    }

    pub fn data(hash: ChunkHash, key: ChunkKey) -> Self {
        ManifestEntry { hash, is_zero: false, key: Some(key) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedManifest {
    pub header: ManifestHeader,
    pub records: Vec<ChunkRecord>,
    pub key_table_ciphertext: Vec<u8>,
    pub tag: [u8; 16],
}

/// A manifest whose key table has been authenticated and decrypted.
#[derive(Debug, Clone)]
pub struct OpenedManifest {
    pub header: ManifestHeader,
    pub records: Vec<ChunkRecord>,
    /// Parallel to `records`; `None` for zero chunks.
    pub keys: Vec<Option<ChunkKey>>,
}

impl OpenedManifest {
    pub fn chunk_count(&self) -> usize {
        self.records.len()
    }

    pub fn chunk_size(&self) -> usize {
        self.header.chunk_size as usize
    }

    pub fn image_length(&self) -> u64 {
        self.header.image_length
    }

    pub fn entry(&self, index: usize) -> ManifestEntry {
        let r = self.records[index];
        ManifestEntry { hash: r.hash, is_zero: r.is_zero, key: self.keys[index] }
    }
}

impl SealedManifest {
    fn write_aad(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MANIFEST_MAGIC);
        out.extend_from_slice(&MANIFEST_VERSION.to_le_bytes());
        out.extend_from_slice(&self.header.image_length.to_le_bytes());
        out.extend_from_slice(&self.header.chunk_size.to_le_bytes());
        out.extend_from_slice(&(self.header.salt.as_bytes().len() as u16).to_le_bytes());
        out.extend_from_slice(self.header.salt.as_bytes());
        out.extend_from_slice(&self.header.nonce);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.hash.0);
            out.push(if r.is_zero { FLAG_ZERO } else { 0 });
        }
    }

    fn aad(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_aad(&mut out);
        out
    }

    pub fn serialized_len(&self) -> usize {
        4 + 4 + 8 + 4 + 2 + self.header.salt.as_bytes().len() + 12 + 4
            + self.records.len() * RECORD_LEN
            + 4 + self.key_table_ciphertext.len() + 16
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_aad(&mut out);
        out.extend_from_slice(&(self.key_table_ciphertext.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.key_table_ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MANIFEST_MAGIC {
            return Err(CryptoError::MalformedManifest("bad magic"));
        }
        if r.u32()? != MANIFEST_VERSION {
            return Err(CryptoError::MalformedManifest("unsupported version"));
        }
        let image_length = r.u64()?;
        let chunk_size = r.u32()?;
        let salt_len = r.u16()? as usize;
        if salt_len > MAX_SALT_LEN {
            return Err(CryptoError::MalformedManifest("salt too long"));
        }
        let salt = Salt::new(r.take(salt_len)?.to_vec())?;
        let nonce: [u8; 12] = r.take(12)?.try_into().unwrap();
        let count = r.u32()? as usize;
        if count.checked_mul(RECORD_LEN).is_none_or(|n| n > bytes.len()) {
            return Err(CryptoError::MalformedManifest("record count exceeds input"));
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let hash = ChunkHash(r.take(32)?.try_into().unwrap());
            let flags = r.take(1)?[0];
            if flags & !FLAG_ZERO != 0 {
                return Err(CryptoError::MalformedManifest("unknown record flags"));
            }
            records.push(ChunkRecord { hash, is_zero: flags & FLAG_ZERO != 0 });
        }
        let kt_len = r.u32()? as usize;
        let key_table_ciphertext = r.take(kt_len)?.to_vec();
        let tag: [u8; 16] = r.take(16)?.try_into().unwrap();
        if r.pos != bytes.len() {
            return Err(CryptoError::MalformedManifest("trailing bytes"));
        }
        Ok(SealedManifest {
            header: ManifestHeader { image_length, chunk_size, salt, nonce },
            records,
            key_table_ciphertext,
            tag,
        })
    }

    /// Names of the non-zero chunks in offset order. Needs no key and performs
    /// no authentication.
    pub fn chunk_names(&self) -> Vec<ChunkHash> {
        self.records.iter().filter(|r| !r.is_zero).map(|r| r.hash).collect()
    }

    /// Manifest identity: SHA-256 of the serialized form.
    pub fn id(&self) -> ChunkHash {
        ChunkHash::of(&self.to_bytes())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CryptoError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CryptoError::MalformedManifest("truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, CryptoError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CryptoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CryptoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Seals a chunk table. Zero chunks contribute no key-table entry.
pub fn seal_manifest<R: CryptoRng + ?Sized>(
    entries: &[ManifestEntry],
    image_length: u64,
    chunk_size: u32,
    salt: Salt,
    customer: &CustomerKey,
    rng: &mut R,
) -> Result<SealedManifest, CryptoError> {
    let mut records = Vec::with_capacity(entries.len());
    let mut key_table = Vec::with_capacity(entries.len() * 32);
    for (i, e) in entries.iter().enumerate() {
        match (e.is_zero, e.key) {
            (true, None) => records.push(ChunkRecord { hash: ChunkHash::default(), is_zero: true }),
            (false, Some(k)) => {
                records.push(ChunkRecord { hash: e.hash, is_zero: false });
                key_table.extend_from_slice(&k.0);
            }
            (true, Some(_)) => return Err(CryptoError::BadEntry(i, "zero chunk carries a key")),
            (false, None) => return Err(CryptoError::BadEntry(i, "data chunk has no key")),
        }
    }
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let mut sealed = SealedManifest {
        header: ManifestHeader { image_length, chunk_size, salt, nonce },
        records,
        key_table_ciphertext: Vec::new(),
        tag: [0; 16],
    };
    let aad = sealed.aad();
    let cipher = Aes256Gcm::new(&customer.key.into());
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(&nonce), &aad, &mut key_table)
        .expect("key table within GCM length limits");
    sealed.key_table_ciphertext = key_table;
    sealed.tag = tag.into();
    Ok(sealed)
}

/// Authenticates the whole manifest and decrypts its key table.
pub fn open_manifest(sealed: &SealedManifest, customer: &CustomerKey) -> Result<OpenedManifest, CryptoError> {
    let aad = sealed.aad();
    let mut key_table = sealed.key_table_ciphertext.clone();
    let cipher = Aes256Gcm::new(&customer.key.into());
    cipher
        .decrypt_in_place_detached(
            Nonce::from_slice(&sealed.header.nonce),
            &aad,
            &mut key_table,
            Tag::from_slice(&sealed.tag),
        )
        .map_err(|_| CryptoError::Authentication)?;

    let data_chunks = sealed.records.iter().filter(|r| !r.is_zero).count();
    if key_table.len() != data_chunks * 32 {
        return Err(CryptoError::MalformedManifest("key table size does not match chunk table"));
    }
    let mut keys_iter = key_table.chunks_exact(32);
    let keys = sealed
        .records
        .iter()
        .map(|r| (!r.is_zero).then(|| ChunkKey(keys_iter.next().unwrap().try_into().unwrap())))
        .collect();
    Ok(OpenedManifest { header: sealed.header.clone(), records: sealed.records.clone(), keys })
}

/// Parses a serialized manifest and lists its non-zero chunk names.
pub fn list_chunk_names(bytes: &[u8]) -> Result<Vec<ChunkHash>, CryptoError> {
    Ok(SealedManifest::from_bytes(bytes)?.chunk_names())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::convergent_encrypt;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn customer(byte: u8) -> CustomerKey {
        CustomerKey { key_id: format!("k{byte}"), key: [byte; 32] }
    }

    fn sample_entries(n: usize) -> Vec<ManifestEntry> {
        (0..n)
            .map(|i| {
                if i % 3 == 2 {
                    ManifestEntry::zero()
                } else {
                    let (key, _, hash) = convergent_encrypt(&vec![i as u8 + 1; 64], &Salt::empty());
                    ManifestEntry::data(hash, key)
                }
            })
            .collect()
    }

    fn seal(entries: &[ManifestEntry], key: &CustomerKey) -> SealedManifest {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        seal_manifest(entries, 64 * entries.len() as u64, 64, Salt::new("s").unwrap(), key, &mut rng).unwrap()
    }

    #[test]
    fn seal_open_roundtrip_restores_keys() {
        let entries = sample_entries(10);
        let sealed = seal(&entries, &customer(1));
        let bytes = sealed.to_bytes();
        assert_eq!(bytes.len(), sealed.serialized_len());
        let parsed = SealedManifest::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, sealed);
        let opened = open_manifest(&parsed, &customer(1)).unwrap();
        for (i, e) in entries.iter().enumerate() {
            assert_eq!(opened.entry(i), if e.is_zero { ManifestEntry::zero() } else { *e });
        }
    }

    #[test]
    fn wrong_customer_key_fails() {
        let sealed = seal(&sample_entries(4), &customer(1));
        assert_eq!(open_manifest(&sealed, &customer(2)).unwrap_err(), CryptoError::Authentication);
    }

    #[test]
    fn reordered_records_fail_authentication() {
        let mut sealed = seal(&sample_entries(4), &customer(1));
        sealed.records.swap(0, 1);
        assert_eq!(open_manifest(&sealed, &customer(1)).unwrap_err(), CryptoError::Authentication);
    }

    #[test]
    fn chunk_names_need_no_key() {
        let entries = sample_entries(6);
        let sealed = seal(&entries, &customer(1));
        let names = list_chunk_names(&sealed.to_bytes()).unwrap();
        let expected: Vec<_> = entries.iter().filter(|e| !e.is_zero).map(|e| e.hash).collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn empty_and_all_zero_manifests_list_nothing() {
        assert!(seal(&[], &customer(1)).chunk_names().is_empty());
        let zeros = vec![ManifestEntry::zero(); 5];
        let sealed = seal(&zeros, &customer(1));
        assert!(list_chunk_names(&sealed.to_bytes()).unwrap().is_empty());
        assert!(sealed.key_table_ciphertext.is_empty());
        assert!(open_manifest(&sealed, &customer(1)).unwrap().keys.iter().all(Option::is_none));
    }

    #[test]
    fn inconsistent_entries_are_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let bad = [ManifestEntry { hash: ChunkHash::default(), is_zero: false, key: None }];
        assert!(matches!(
            seal_manifest(&bad, 64, 64, Salt::empty(), &customer(1), &mut rng),
            Err(CryptoError::BadEntry(0, _))
        ));
    }

    #[test]
    fn malformed_input_is_a_parse_error() {
        assert!(matches!(list_chunk_names(b"CMFT"), Err(CryptoError::MalformedManifest(_))));
        let mut bytes = seal(&sample_entries(2), &customer(1)).to_bytes();
        bytes.push(0);
        assert!(matches!(SealedManifest::from_bytes(&bytes), Err(CryptoError::MalformedManifest(_))));
    }

    #[test]
    fn nonce_comes_from_injected_rng() {
        let a = seal(&sample_entries(3), &customer(1));
        let b = seal(&sample_entries(3), &customer(1));
        assert_eq!(a.to_bytes(), b.to_bytes());
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let c = seal_manifest(&sample_entries(3), 192, 64, Salt::new("s").unwrap(), &customer(1), &mut rng).unwrap();
        assert_ne!(a.header.nonce, c.header.nonce);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn any_bit_flip_is_detected(bit in any::<usize>()) {
            let sealed = seal(&sample_entries(5), &customer(3));
            let mut bytes = sealed.to_bytes();
            let bit = bit % (bytes.len() * 8);
            bytes[bit / 8] ^= 1 << (bit % 8);
            let outcome = SealedManifest::from_bytes(&bytes).and_then(|m| open_manifest(&m, &customer(3)));
            prop_assert!(outcome.is_err());
        }
    }
}
