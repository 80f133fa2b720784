use std::collections::BTreeMap;

use super::{EntryKind, FlattenError, LayerArchive};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    File,
    Dir,
    Symlink,
}

impl NodeKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            NodeKind::File => 0,
            NodeKind::Dir => 1,
            NodeKind::Symlink => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NodeKind::File),
            1 => Some(NodeKind::Dir),
            2 => Some(NodeKind::Symlink),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub kind: NodeKind,
    pub mode: u16,
    pub content: Vec<u8>,
}

const IMPLICIT_DIR_MODE: u16 = 0o755;

/// Path-keyed file tree. Iteration is lexicographic by path bytes, so it does
/// not depend on the order entries were inserted in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileTree {
    nodes: BTreeMap<String, Node>,
}

impl FileTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&Node> {
        self.nodes.get(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.nodes.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Node)> {
        self.nodes.iter().map(|(p, n)| (p.as_str(), n))
    }

    /// Inserts `node` at a normalized path, creating missing parent
    /// directories. Replacing a directory with a non-directory drops its
    /// subtree; replacing a directory with a directory keeps the children.
    pub fn insert(&mut self, path: &str, node: Node) {
        debug_assert!(path.starts_with('/') && path != "/");
        self.ensure_parents(path);
        if node.kind != NodeKind::Dir {
            self.remove_subtree(path);
        }
        self.nodes.insert(path.to_owned(), node);
    }

    /// Removes `path` and everything below it.
    pub fn remove_subtree(&mut self, path: &str) {
        self.nodes.remove(path);
        self.clear_children(path);
    }

    /// Removes everything below `path`, keeping `path` itself.
    pub fn clear_children(&mut self, path: &str) {
        let prefix = if path == "/" { "/".to_owned() } else { format!("{path}/") };
        let doomed: Vec<String> =
            self.nodes.range(prefix.clone()..).take_while(|(k, _)| k.starts_with(&prefix)).map(|(k, _)| k.clone()).collect();
        for key in doomed {
            self.nodes.remove(&key);
        }
    }

    fn ensure_parents(&mut self, path: &str) {
        let mut end = 0;
        while let Some(pos) = path[end + 1..].find('/') {
            end += 1 + pos;
            let parent = &path[..end];
            match self.nodes.get(parent) {
                Some(n) if n.kind == NodeKind::Dir => {}
                _ => {
                    self.nodes.insert(
                        parent.to_owned(),
                        Node { kind: NodeKind::Dir, mode: IMPLICIT_DIR_MODE, content: Vec::new() },
                    );
                }
            }
        }
    }
}

/// Normalizes a layer path to the canonical `/a/b` form.
///
/// Leading `/`, `./` and repeated separators are accepted and collapsed; `..`
/// components are rejected since they could escape the image root. The root
/// itself normalizes to `/`.
pub fn normalize_path(raw: &str) -> Result<String, &'static str> {
    if raw.is_empty() {
        return Err("empty path");
    }
    if raw.contains('\0') {
        return Err("embedded NUL");
    }
    let mut out = String::with_capacity(raw.len() + 1);
    for component in raw.split('/') {
        match component {
            "" | "." => continue,
            ".." => return Err("parent directory traversal"),
            c => {
                out.push('/');
                out.push_str(c);
            }
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    Ok(out)
}

/// Applies layers in order. Later layers override earlier entries at the same
/// path; whiteouts remove the target and its subtree.
pub fn apply_layers(layers: &[LayerArchive]) -> Result<FileTree, FlattenError> {
    let mut tree = FileTree::new();
    for (layer_idx, layer) in layers.iter().enumerate() {
        for entry in &layer.entries {
            let path = normalize_path(&entry.path).map_err(|reason| FlattenError::MalformedPath {
                layer: layer_idx,
                path: entry.path.clone(),
                reason,
            })?;
            let is_root = path == "/";
            match entry.kind {
                EntryKind::Whiteout => {
                    if is_root {
                        return Err(FlattenError::MalformedPath {
                            layer: layer_idx,
                            path: entry.path.clone(),
                            reason: "whiteout of the image root",
                        });
                    }
                    tree.remove_subtree(&path);
                }
                EntryKind::OpaqueWhiteout => tree.clear_children(&path),
                // The root directory always exists implicitly.
                EntryKind::Dir if is_root => {}
                kind => {
                    if is_root {
                        return Err(FlattenError::MalformedPath {
                            layer: layer_idx,
                            path: entry.path.clone(),
                            reason: "non-directory at the image root",
                        });
                    }
                    let kind = match kind {
                        EntryKind::File => NodeKind::File,
                        EntryKind::Dir => NodeKind::Dir,
                        _ => NodeKind::Symlink,
                    };
                    let content = if kind == NodeKind::Dir { Vec::new() } else { entry.content.clone() };
                    tree.insert(&path, Node { kind, mode: entry.mode, content });
                }
            }
        }
    }
    Ok(tree)
}
