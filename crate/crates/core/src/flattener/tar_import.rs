//! POSIX tar importer with OCI whiteout naming.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use tar::EntryType;

use super::{normalize_path, EntryKind, FlattenError, LayerArchive, LayerEntry};

const WHITEOUT_PREFIX: &str = ".wh.";
const OPAQUE_MARKER: &str = ".wh..wh..opq";

fn split_parent(path: &str) -> (&str, &str) {
    match path.rfind('/') {
        Some(i) => (&path[..i], &path[i + 1..]),
        None => ("", path),
    }
}

/// Reads one uncompressed tar layer. `layer` is only used for error context.
pub fn import_tar<R: Read>(reader: R, layer: usize) -> Result<LayerArchive, FlattenError> {
    let io_err = |source| FlattenError::Io { layer, source };
    let mut archive = tar::Archive::new(reader);
    let mut entries = Vec::new();
    // Hardlink targets resolved against earlier entries of the same layer.
    let mut contents: HashMap<String, Vec<u8>> = HashMap::new();

    for raw in archive.entries().map_err(io_err)? {
        let mut entry = raw.map_err(io_err)?;
        let path = std::str::from_utf8(&entry.path_bytes())
            .map_err(|_| FlattenError::InvalidEncoding { layer })?
            .to_owned();
        let mode = (entry.header().mode().map_err(io_err)? & 0o7777) as u16;
        let (parent, name) = split_parent(path.trim_end_matches('/'));

        if name == OPAQUE_MARKER {
            let dir = if parent.is_empty() { "/".to_owned() } else { parent.to_owned() };
            entries.push(LayerEntry { path: dir, kind: EntryKind::OpaqueWhiteout, mode: 0, content: Vec::new() });
            continue;
        }
        if let Some(target) = name.strip_prefix(WHITEOUT_PREFIX) {
            entries.push(LayerEntry::whiteout(format!("{parent}/{target}")));
            continue;
        }

        let entry_type = entry.header().entry_type();
        let layer_entry = match entry_type {
            EntryType::Regular | EntryType::Continuous => {
                let mut content = Vec::with_capacity(entry.size() as usize);
                entry.read_to_end(&mut content).map_err(io_err)?;
                if let Ok(norm) = normalize_path(&path) {
                    contents.insert(norm, content.clone());
                }
                LayerEntry { path, kind: EntryKind::File, mode, content }
            }
            EntryType::Directory => LayerEntry::dir(path, mode),
            EntryType::Symlink => {
                let target = entry
                    .link_name_bytes()
                    .map(|b| String::from_utf8_lossy(&b).into_owned())
                    .unwrap_or_default();
                LayerEntry { path, kind: EntryKind::Symlink, mode, content: target.into_bytes() }
            }
            EntryType::Link => {
                let target = entry
                    .link_name_bytes()
                    .and_then(|b| std::str::from_utf8(&b).ok().and_then(|s| normalize_path(s).ok()));
                match target.and_then(|t| contents.get(&t).cloned()) {
                    Some(content) => LayerEntry { path, kind: EntryKind::File, mode, content },
                    None => return Err(FlattenError::UnsupportedEntry { layer, path }),
                }
            }
            // Extended headers are folded into the following entry by the tar crate.
            EntryType::XGlobalHeader | EntryType::XHeader | EntryType::GNULongName | EntryType::GNULongLink => {
                continue
            }
            _ => return Err(FlattenError::UnsupportedEntry { layer, path }),
        };
        entries.push(layer_entry);
    }
    Ok(LayerArchive::new(entries))
}

pub fn import_tar_file(path: &Path, layer: usize) -> Result<LayerArchive, FlattenError> {
    let file = File::open(path).map_err(|source| FlattenError::Io { layer, source })?;
    import_tar(BufReader::new(file), layer)
}
