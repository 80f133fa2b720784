use std::io::{self, Read};

use super::{FlattenError, PAGE_SIZE};

pub const DEFAULT_CHUNK_SIZE: usize = 512 * 1024;

/// One fixed-size slice of an image. All-zero chunks keep no plaintext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainChunk {
    pub index: u64,
    pub is_zero: bool,
    pub plaintext: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainChunkList {
    pub chunk_size: usize,
    pub image_length: u64,
    pub chunks: Vec<PlainChunk>,
}

impl PlainChunkList {
    /// Concatenates the chunks (expanding zero chunks) and drops the padding.
    pub fn reassemble(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.chunks.len() * self.chunk_size);
        for chunk in &self.chunks {
            match &chunk.plaintext {
                Some(p) => out.extend_from_slice(p),
                None => out.resize(out.len() + self.chunk_size, 0),
            }
        }
        out.truncate(self.image_length as usize);
        out
    }

    pub fn stored_plaintexts(&self) -> usize {
        self.chunks.iter().filter(|c| c.plaintext.is_some()).count()
    }
}

pub(crate) fn is_all_zero(buf: &[u8]) -> bool {
    let words = buf.chunks_exact(64);
    let tail = words.remainder();
    words.into_iter().all(|w| w.iter().fold(0u8, |acc, &b| acc | b) == 0) && tail.iter().all(|&b| b == 0)
}

pub(crate) fn check_chunk_size(chunk_size: usize) -> Result<(), FlattenError> {
    if chunk_size == 0 || chunk_size % PAGE_SIZE != 0 {
        return Err(FlattenError::BadChunkSize(chunk_size));
    }
    Ok(())
}

/// Streams fixed-size chunks out of a reader, zero-padding the last one.
pub struct ChunkReader<R> {
    inner: R,
    chunk_size: usize,
    next_index: u64,
    done: bool,
}

impl<R: Read> ChunkReader<R> {
    pub fn new(inner: R, chunk_size: usize) -> Result<Self, FlattenError> {
        check_chunk_size(chunk_size)?;
        Ok(ChunkReader { inner, chunk_size, next_index: 0, done: false })
    }

    fn fill(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(filled)
    }
}

impl<R: Read> Iterator for ChunkReader<R> {
    type Item = io::Result<PlainChunk>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut buf = vec![0u8; self.chunk_size];
        let filled = match self.fill(&mut buf) {
            Ok(n) => n,
            Err(e) => {
                self.done = true;
                return Some(Err(e));
            }
        };
        if filled < self.chunk_size {
            self.done = true;
            if filled == 0 {
                return None;
            }
        }
        let index = self.next_index;
        self.next_index += 1;
        let is_zero = is_all_zero(&buf);
        Some(Ok(PlainChunk { index, is_zero, plaintext: (!is_zero).then_some(buf) }))
    }
}

/// Splits an image into `ceil(len / chunk_size)` chunks.
pub fn chunk_image(image: &[u8], chunk_size: usize) -> Result<PlainChunkList, FlattenError> {
    let chunks = ChunkReader::new(image, chunk_size)?
        .collect::<io::Result<Vec<_>>>()
        .expect("reading from a slice cannot fail");
    Ok(PlainChunkList { chunk_size, image_length: image.len() as u64, chunks })
}
