//! Writable block-device view over an immutable, manifest-backed image.
//!
//! Reads of clean pages come from the chunk that contains them (zero chunks
//! are synthesized without a fetch); writes land in a page-granular overlay.
//! Partial-page writes to a clean page first copy the page from the base.

mod overlay;

use std::collections::BTreeSet;
use std::io;
use std::sync::Arc;

use thiserror::Error;

pub use overlay::OverlayState;

use crate::cache::{FetchError, FetchTiming, LatencySource, Tier, TieredCache};
use crate::crypto::{ManifestEntry, OpenedManifest};
use crate::flattener::PAGE_SIZE;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("range {offset}+{len} exceeds device length {device_len}")]
    OutOfRange { offset: u64, len: u64, device_len: u64 },
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error("overlay I/O: {0}")]
    Io(#[from] io::Error),
}

/// Supplies decrypted, verified chunk plaintexts.
pub trait ChunkFetcher {
    fn fetch(&mut self, index: u64, entry: &ManifestEntry) -> Result<Arc<[u8]>, BlockError>;
}

impl<F: FnMut(u64, &ManifestEntry) -> Result<Arc<[u8]>, BlockError>> ChunkFetcher for F {
    fn fetch(&mut self, index: u64, entry: &ManifestEntry) -> Result<Arc<[u8]>, BlockError> {
        self(index, entry)
    }
}

/// One fetch as seen by a device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FetchRecord {
    pub chunk: u64,
    pub tier: Tier,
    pub timing: FetchTiming,
}

/// Fetches through a tiered cache, recording tier and timing per fetch.
pub struct CacheFetcher<'c, L> {
    pub cache: &'c TieredCache,
    pub latency: L,
    pub log: Vec<FetchRecord>,
}

impl<'c, L: LatencySource> CacheFetcher<'c, L> {
    pub fn new(cache: &'c TieredCache, latency: L) -> Self {
        CacheFetcher { cache, latency, log: Vec::new() }
    }
}

impl<L: LatencySource> ChunkFetcher for CacheFetcher<'_, L> {
    fn fetch(&mut self, index: u64, entry: &ManifestEntry) -> Result<Arc<[u8]>, BlockError> {
        let r = self.cache.fetch_chunk(index, entry, &mut self.latency)?;
        self.log.push(FetchRecord { chunk: index, tier: r.source, timing: r.timing });
        Ok(r.plaintext)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceStats {
    pub fetches: u64,
    pub fetched_chunks: BTreeSet<u64>,
    /// Base pages materialized for read-modify-write.
    pub rmw_pages: u64,
}

pub struct DeviceView<F> {
    manifest: OpenedManifest,
    fetcher: F,
    overlay: OverlayState,
    stats: DeviceStats,
}

impl<F: ChunkFetcher> DeviceView<F> {
    pub fn new(manifest: OpenedManifest, fetcher: F) -> Self {
        let pages = manifest.image_length().div_ceil(PAGE_SIZE as u64);
        let overlay = OverlayState::new(PAGE_SIZE, pages);
        Self::with_overlay(manifest, fetcher, overlay)
    }

    pub fn with_overlay(manifest: OpenedManifest, fetcher: F, overlay: OverlayState) -> Self {
        assert_eq!(manifest.chunk_size() % overlay.page_size(), 0, "pages must tile chunks");
        DeviceView { manifest, fetcher, overlay, stats: DeviceStats::default() }
    }

    pub fn len(&self) -> u64 {
        self.manifest.image_length()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> &DeviceStats {
        &self.stats
    }

    pub fn overlay(&self) -> &OverlayState {
        &self.overlay
    }

    pub fn fetcher(&self) -> &F {
        &self.fetcher
    }

    pub fn fetcher_mut(&mut self) -> &mut F {
        &mut self.fetcher
    }

    fn check(&self, offset: u64, len: u64) -> Result<(), BlockError> {
        match offset.checked_add(len) {
            Some(end) if end <= self.len() => Ok(()),
            _ => Err(BlockError::OutOfRange { offset, len, device_len: self.len() }),
        }
    }

    fn chunk(&mut self, index: u64) -> Result<Option<Arc<[u8]>>, BlockError> {
        let entry = self.manifest.entry(index as usize);
        if entry.is_zero {
            return Ok(None);
        }
        self.stats.fetches += 1;
        self.stats.fetched_chunks.insert(index);
        Ok(Some(self.fetcher.fetch(index, &entry)?))
    }

    /// Copies base bytes for `page` into `out`, reusing `cur` when the
    /// containing chunk is already in hand.
    fn base_page(&mut self, page: u64, out: &mut [u8], cur: &mut Option<(u64, Option<Arc<[u8]>>)>) -> Result<(), BlockError> {
        let ps = self.overlay.page_size() as u64;
        let cs = self.manifest.chunk_size() as u64;
        let chunk = page * ps / cs;
        if cur.as_ref().is_none_or(|(c, _)| *c != chunk) {
            *cur = Some((chunk, self.chunk(chunk)?));
        }
        let within = (page * ps % cs) as usize;
        match &cur.as_ref().unwrap().1 {
            Some(bytes) => out.copy_from_slice(&bytes[within..within + ps as usize]),
            None => out.fill(0),
        }
        Ok(())
    }

    pub fn read(&mut self, offset: u64, len: usize) -> Result<Vec<u8>, BlockError> {
        self.check(offset, len as u64)?;
        let ps = self.overlay.page_size() as u64;
        let mut out = vec![0u8; len];
        let mut page_buf = vec![0u8; ps as usize];
        let mut cur = None;
        let end = offset + len as u64;
        let mut pos = offset;
        while pos < end {
            let page = pos / ps;
            let in_page = (pos % ps) as usize;
            let n = ((ps as usize) - in_page).min((end - pos) as usize);
            if self.overlay.is_dirty(page) {
                self.overlay.read_page(page, &mut page_buf)?;
            } else {
                self.base_page(page, &mut page_buf, &mut cur)?;
            }
            let o = (pos - offset) as usize;
            out[o..o + n].copy_from_slice(&page_buf[in_page..in_page + n]);
            pos += n as u64;
        }
        Ok(out)
    }

    pub fn write(&mut self, offset: u64, data: &[u8]) -> Result<(), BlockError> {
        self.check(offset, data.len() as u64)?;
        let ps = self.overlay.page_size() as u64;
        let mut page_buf = vec![0u8; ps as usize];
        let mut cur = None;
        let end = offset + data.len() as u64;
        let mut pos = offset;
        while pos < end {
            let page = pos / ps;
            let in_page = (pos % ps) as usize;
            let n = ((ps as usize) - in_page).min((end - pos) as usize);
            let src = &data[(pos - offset) as usize..(pos - offset) as usize + n];
            if n == ps as usize {
                self.overlay.write_page(page, src)?;
            } else {
                if self.overlay.is_dirty(page) {
                    self.overlay.read_page(page, &mut page_buf)?;
                } else {
                    self.base_page(page, &mut page_buf, &mut cur)?;
                    self.stats.rmw_pages += 1;
                }
                page_buf[in_page..in_page + n].copy_from_slice(src);
                self.overlay.write_page(page, &page_buf)?;
            }
            pos += n as u64;
        }
        Ok(())
    }
}
