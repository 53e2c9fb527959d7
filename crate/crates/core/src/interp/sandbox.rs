use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Root directory that `@open` is confined to.
#[derive(Debug, Clone)]
pub struct Sandbox {
    root: PathBuf,
}

/// Result of lexically resolving a requested path against the sandbox root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolved {
    /// Normalized path relative to the root; starts with `..` when it escapes.
    pub relative: String,
    pub allowed: bool,
}

impl Sandbox {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Purely lexical: `..` is folded without consulting the filesystem, and
    /// absolute paths are only allowed when they land under the root.
    pub fn resolve(&self, requested: &str) -> Resolved {
        let req = Path::new(requested);
        let mut parts: Vec<String> = Vec::new();
        let mut escape = 0usize;

        let rel_source: PathBuf = if req.is_absolute() {
            match req.strip_prefix(&self.root) {
                Ok(rest) => rest.to_path_buf(),
                Err(_) => {
                    let normalized = normalize_absolute(req);
                    match normalized.strip_prefix(normalize_absolute(&self.root)) {
                        Ok(rest) => rest.to_path_buf(),
                        Err(_) => {
                            return Resolved {
                                relative: normalized.display().to_string(),
                                allowed: false,
                            }
                        }
                    }
                }
            }
        } else {
            req.to_path_buf()
        };

        for c in rel_source.components() {
            match c {
                Component::CurDir => {}
                Component::ParentDir => {
                    if parts.pop().is_none() {
                        escape += 1;
                    }
                }
                Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
                Component::RootDir | Component::Prefix(_) => {}
            }
        }
        let mut segs: Vec<String> = std::iter::repeat_n("..".to_string(), escape).collect();
        segs.extend(parts);
        Resolved {
            relative: segs.join("/"),
            allowed: escape == 0,
        }
    }

    pub fn host_path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }
}

fn normalize_absolute(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confines_relative_paths() {
        let sb = Sandbox::new("/sb");
        assert_eq!(
            sb.resolve("fixtures/./a.txt"),
            Resolved {
                relative: "fixtures/a.txt".into(),
                allowed: true
            }
        );
        assert!(sb.resolve("a/../b").allowed);
        let esc = sb.resolve("../../etc/secret");
        assert!(!esc.allowed);
        assert_eq!(esc.relative, "../../etc/secret");
        assert!(!sb.resolve("a/../../b").allowed);
    }

    #[test]
    fn absolute_paths() {
        let sb = Sandbox::new("/sb");
        assert!(!sb.resolve("/etc/passwd").allowed);
        assert!(sb.resolve("/sb/x").allowed);
        assert!(!sb.resolve("/sb/../etc").allowed);
    }
}
