//! Layer flattening: ordered layers → canonical file tree → flat image → chunks.
//!
//! Every step is a pure function of its input. Two layer stacks with the same
//! content produce byte-identical images, which is what lets identical base
//! layers deduplicate at chunk granularity further down the pipeline.

mod chunk;
mod image;
mod tar_import;
mod tree;

pub use chunk::{chunk_image, ChunkReader, PlainChunk, PlainChunkList, DEFAULT_CHUNK_SIZE};
pub(crate) use chunk::check_chunk_size;
pub use image::{parse_image, serialize_image, FlatImage, ImageEntry, IMAGE_MAGIC, IMAGE_VERSION};
pub use tar_import::{import_tar, import_tar_file};
pub use tree::{apply_layers, normalize_path, FileTree, Node};

use thiserror::Error;

/// Page size used for image alignment, chunk sizing and the COW bitmap.
pub const PAGE_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntryKind {
    File,
    Dir,
    Symlink,
    /// Removes the entry at `path` (and its subtree) from lower layers.
    Whiteout,
    /// Clears the children of the directory at `path` but keeps the directory.
    OpaqueWhiteout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerEntry {
    pub path: String,
    pub kind: EntryKind,
    pub mode: u16,
    /// File bytes, or the link target for symlinks. Empty otherwise.
    pub content: Vec<u8>,
}

impl LayerEntry {
    pub fn file(path: impl Into<String>, mode: u16, content: impl Into<Vec<u8>>) -> Self {
        LayerEntry { path: path.into(), kind: EntryKind::File, mode, content: content.into() }
    }

    pub fn dir(path: impl Into<String>, mode: u16) -> Self {
        LayerEntry { path: path.into(), kind: EntryKind::Dir, mode, content: Vec::new() }
    }

    pub fn symlink(path: impl Into<String>, target: impl Into<String>) -> Self {
        LayerEntry {
            path: path.into(),
            kind: EntryKind::Symlink,
            mode: 0o777,
            content: target.into().into_bytes(),
        }
    }

    pub fn whiteout(path: impl Into<String>) -> Self {
        LayerEntry { path: path.into(), kind: EntryKind::Whiteout, mode: 0, content: Vec::new() }
    }

    pub fn opaque(dir: impl Into<String>) -> Self {
        LayerEntry { path: dir.into(), kind: EntryKind::OpaqueWhiteout, mode: 0, content: Vec::new() }
    }
}

/// One container layer, entries in archive order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerArchive {
    pub entries: Vec<LayerEntry>,
}

impl LayerArchive {
    pub fn new(entries: Vec<LayerEntry>) -> Self {
        LayerArchive { entries }
    }
}

#[derive(Debug, Error)]
pub enum FlattenError {
    #[error("layer {layer}: malformed path {path:?}: {reason}")]
    MalformedPath { layer: usize, path: String, reason: &'static str },
    #[error("layer {layer}: tar entry has a non UTF-8 path")]
    InvalidEncoding { layer: usize },
    #[error("layer {layer}: unsupported tar entry type for {path:?}")]
    UnsupportedEntry { layer: usize, path: String },
    #[error("chunk size {0} is not a positive multiple of {PAGE_SIZE}")]
    BadChunkSize(usize),
    #[error("malformed image: {0}")]
    MalformedImage(&'static str),
    #[error("layer {layer}: {source}")]
    Io {
        layer: usize,
        #[source]
        source: std::io::Error,
    },
}
