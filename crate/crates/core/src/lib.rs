//! Deduplicating, convergent-encrypted chunk storage with an erasure-coded
//! tiered cache and copy-on-write block device views.
//!
//! The pipeline, end to end:
//!
//! 1. [`flattener`] turns ordered container layers into a deterministic flat
//!    image and splits it into fixed-size chunks.
//! 2. [`crypto`] encrypts each chunk under a key derived from its own content
//!    (plus a salt), names it by the hash of its ciphertext, and seals the
//!    per-image key table into a manifest.
//! 3. [`origin`] stores chunks and manifests in root namespaces that [`gc`]
//!    rotates, migrates and eventually deletes.
//! 4. [`cache`] serves chunks through a per-worker LRU-k cache and a
//!    distributed stripe cache built on [`erasure`].
//! 5. [`blockdev`] exposes an image as a writable device with a page-granular
//!    overlay over the immutable chunks.

pub mod blockdev;
pub mod cache;
pub mod crypto;
pub mod erasure;
pub mod flattener;
pub mod gc;
pub mod stats;
pub mod origin;
pub mod upload;
