use std::collections::HashMap;
use std::fs::File;
use std::io;
use std::os::unix::fs::FileExt;

enum PageStore {
    Memory(HashMap<u64, Box<[u8]>>),
    /// Pages live in a scratch file; the map gives each page's slot.
    File { file: File, slots: HashMap<u64, u64> },
}

/// Per-device page overlay: dirty bitmap plus the dirty pages themselves.
pub struct OverlayState {
    page_size: usize,
    dirty: Vec<u64>,
    store: PageStore,
}

impl OverlayState {
    pub fn new(page_size: usize, pages: u64) -> Self {
        assert!(page_size > 0);
        OverlayState { page_size, dirty: vec![0; pages.div_ceil(64) as usize], store: PageStore::Memory(HashMap::new()) }
    }

    /// Overlay whose page bytes spill to `file` instead of memory.
    pub fn with_spill(page_size: usize, pages: u64, file: File) -> Self {
        let mut o = Self::new(page_size, pages);
        o.store = PageStore::File { file, slots: HashMap::new() };
        o
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn is_dirty(&self, page: u64) -> bool {
        self.dirty.get((page / 64) as usize).is_some_and(|w| w & (1 << (page % 64)) != 0)
    }

    pub fn dirty_pages(&self) -> u64 {
        self.dirty.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn page_count(&self) -> usize {
        match &self.store {
            PageStore::Memory(m) => m.len(),
            PageStore::File { slots, .. } => slots.len(),
        }
    }

    /// Copies a dirty page into `out`. Panics if the page is clean.
    pub fn read_page(&self, page: u64, out: &mut [u8]) -> io::Result<()> {
        assert!(self.is_dirty(page), "page {page} is clean");
        match &self.store {
            PageStore::Memory(m) => out.copy_from_slice(&m[&page]),
            PageStore::File { file, slots } => file.read_exact_at(out, slots[&page] * self.page_size as u64)?,
        }
        Ok(())
    }

    /// Stores a full page and sets its dirty bit.
    pub fn write_page(&mut self, page: u64, bytes: &[u8]) -> io::Result<()> {
        assert_eq!(bytes.len(), self.page_size);
        match &mut self.store {
            PageStore::Memory(m) => {
                m.insert(page, bytes.into());
            }
            PageStore::File { file, slots } => {
                let next = slots.len() as u64;
                let slot = *slots.entry(page).or_insert(next);
                file.write_all_at(bytes, slot * self.page_size as u64)?;
            }
        }
        let word = (page / 64) as usize;
        if word >= self.dirty.len() {
            self.dirty.resize(word + 1, 0);
        }
        self.dirty[word] |= 1 << (page % 64);
        debug_assert_eq!(self.dirty_pages() as usize, self.page_count());
        Ok(())
    }
}
