//! Mapping contract locators (`/data/eeg_train`, `/schema/...`) to files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResourceKind {
    /// CSV dataset.
    Dataset,
    /// JSON schema document.
    Schema,
    /// Builtin JSON model file.
    Model,
}

impl ResourceKind {
    fn extension(self) -> &'static str {
        match self {
            ResourceKind::Dataset => "csv",
            ResourceKind::Schema | ResourceKind::Model => "json",
        }
    }
}

pub trait ResourceResolver {
    /// Returns the file backing `locator`, or `None` when it does not exist.
    fn resolve(&self, locator: &str, kind: ResourceKind) -> Option<PathBuf>;
}

/// Resolves locators below a root directory. `/data/eeg_train` maps to
/// `<root>/data/eeg_train`, falling back to `<root>/data/eeg_train.csv`
/// (`.json` for schemas and models).
#[derive(Debug, Clone)]
pub struct FsResolver {
    root: PathBuf,
}

impl FsResolver {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FsResolver { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ResourceResolver for FsResolver {
    fn resolve(&self, locator: &str, kind: ResourceKind) -> Option<PathBuf> {
        let rel = locator.trim_start_matches('/');
        if rel.is_empty() || rel.split('/').any(|c| c == "..") {
            return None;
        }
        let exact = self.root.join(rel);
        if exact.is_file() {
            return Some(exact);
        }
        let with_ext = self.root.join(format!("{rel}.{}", kind.extension()));
        with_ext.is_file().then_some(with_ext)
    }
}

/// Fixed locator table, mostly for tests.
#[derive(Debug, Clone, Default)]
pub struct MapResolver {
    entries: BTreeMap<String, PathBuf>,
}

impl MapResolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, locator: impl Into<String>, path: impl Into<PathBuf>) -> &mut Self {
        self.entries.insert(locator.into(), path.into());
        self
    }

    pub fn remove(&mut self, locator: &str) -> &mut Self {
        self.entries.remove(locator);
        self
    }
}

impl ResourceResolver for MapResolver {
    fn resolve(&self, locator: &str, _kind: ResourceKind) -> Option<PathBuf> {
        self.entries.get(locator).cloned()
    }
}
