//! Canonical flat image format.
//!
//! ```text
//! "FIMG" | u32 version | u64 entry count
//! directory table, one record per tree entry in path order:
//!     u16 path length | path bytes | u8 kind | u16 mode | u64 mtime (always 0)
//!     | u64 content offset | u64 content length
//! zero padding to the next page
//! content region: file and symlink contents in path order, each page aligned
//! zero padding to a page multiple
//! ```
//!
//! All integers are little-endian.

use super::tree::{FileTree, NodeKind};
use super::{FlattenError, PAGE_SIZE};

pub const IMAGE_MAGIC: &[u8; 4] = b"FIMG";
pub const IMAGE_VERSION: u32 = 1;

const HEADER_LEN: usize = 16;
const RECORD_FIXED_LEN: usize = 2 + 1 + 2 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatImage {
    bytes: Vec<u8>,
    entry_count: u64,
}

impl FlatImage {
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn entry_count(&self) -> u64 {
        self.entry_count
    }

    /// Wraps bytes read back from an image file after checking the header.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, FlattenError> {
        let entries = parse_image(&bytes)?;
        Ok(FlatImage { entry_count: entries.len() as u64, bytes })
    }
}

impl AsRef<[u8]> for FlatImage {
    fn as_ref(&self) -> &[u8] {
        &self.bytes
    }
}

/// A decoded directory-table record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageEntry {
    pub path: String,
    pub kind: NodeKind,
    pub mode: u16,
    pub mtime: u64,
    pub offset: u64,
    pub len: u64,
}

fn align_up(n: usize) -> usize {
    n.div_ceil(PAGE_SIZE) * PAGE_SIZE
}

/// Serializes a tree. Output depends only on tree content.
pub fn serialize_image(tree: &FileTree) -> FlatImage {
    let table_len: usize = tree.iter().map(|(p, _)| RECORD_FIXED_LEN + p.len()).sum();
    let content_start = align_up(HEADER_LEN + table_len);

    let mut offsets = Vec::with_capacity(tree.len());
    let mut cursor = content_start;
    for (_, node) in tree.iter() {
        if node.content.is_empty() {
            offsets.push(0u64);
        } else {
            offsets.push(cursor as u64);
            cursor = align_up(cursor + node.content.len());
        }
    }
    let total = align_up(cursor.max(HEADER_LEN));

    let mut bytes = Vec::with_capacity(total);
    bytes.extend_from_slice(IMAGE_MAGIC);
    bytes.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(tree.len() as u64).to_le_bytes());
    for ((path, node), offset) in tree.iter().zip(&offsets) {
        bytes.extend_from_slice(&(path.len() as u16).to_le_bytes());
        bytes.extend_from_slice(path.as_bytes());
        bytes.push(node.kind.code());
        bytes.extend_from_slice(&node.mode.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        bytes.extend_from_slice(&offset.to_le_bytes());
        bytes.extend_from_slice(&(node.content.len() as u64).to_le_bytes());
    }
    bytes.resize(content_start.min(total), 0);
    for ((_, node), offset) in tree.iter().zip(&offsets) {
        if node.content.is_empty() {
            continue;
        }
        bytes.resize(*offset as usize, 0);
        bytes.extend_from_slice(&node.content);
    }
    bytes.resize(total, 0);

    FlatImage { bytes, entry_count: tree.len() as u64 }
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], FlattenError> {
    let end = pos.checked_add(n).filter(|&e| e <= buf.len()).ok_or(FlattenError::MalformedImage("truncated"))?;
    let out = &buf[*pos..end];
    *pos = end;
    Ok(out)
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes(b.try_into().unwrap())
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().unwrap())
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().unwrap())
}

/// Decodes the directory table of an image.
pub fn parse_image(bytes: &[u8]) -> Result<Vec<ImageEntry>, FlattenError> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4)? != IMAGE_MAGIC {
        return Err(FlattenError::MalformedImage("bad magic"));
    }
    if le_u32(take(bytes, &mut pos, 4)?) != IMAGE_VERSION {
        return Err(FlattenError::MalformedImage("unsupported version"));
    }
    let count = le_u64(take(bytes, &mut pos, 8)?);
    let mut entries = Vec::new();
    for _ in 0..count {
        let plen = le_u16(take(bytes, &mut pos, 2)?) as usize;
        let path = std::str::from_utf8(take(bytes, &mut pos, plen)?)
            .map_err(|_| FlattenError::MalformedImage("path is not UTF-8"))?
            .to_owned();
        let kind = NodeKind::from_code(take(bytes, &mut pos, 1)?[0])
            .ok_or(FlattenError::MalformedImage("unknown entry kind"))?;
        let mode = le_u16(take(bytes, &mut pos, 2)?);
        let mtime = le_u64(take(bytes, &mut pos, 8)?);
        let offset = le_u64(take(bytes, &mut pos, 8)?);
        let len = le_u64(take(bytes, &mut pos, 8)?);
        if offset.checked_add(len).is_none_or(|end| end > bytes.len() as u64) {
            return Err(FlattenError::MalformedImage("content out of bounds"));
        }
        entries.push(ImageEntry { path, kind, mode, mtime, offset, len });
    }
    Ok(entries)
}
