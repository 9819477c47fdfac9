//! Persistent anchor-set store: one JSON document, rewritten atomically on
//! every mutation.
//!
//! ```json
//! { "schema_version": 1, "store_version": 3,
//!   "sets": [ { "name": "smiling_woman", "tags": ["smiling", "woman"],
//!               "members": ["100 uniform_cube 0.1 ..."],
//!               "created_at": "2026-01-01T00:00:00Z" } ] }
//! ```
//!
//! `store_version` increases with each write. A writer whose in-memory
//! version no longer matches the file refuses to write, which catches a
//! second process mutating the same store.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arithmetic::AnchorSet;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::latent::{LatentSpace, LatentVector};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreDoc {
    schema_version: u32,
    store_version: u64,
    sets: Vec<StoredSet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredSet {
    name: String,
    tags: Vec<String>,
    members: Vec<String>,
    created_at: String,
}

impl StoredSet {
    fn decode(&self) -> Result<AnchorSet> {
        let members = self
            .members
            .iter()
            .map(|m| LatentVector::from_line(m))
            .collect::<Result<Vec<_>>>()?;
        AnchorSet::new(self.name.clone(), &self.tags, members)
    }
}

/// Listing entry; members are not decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSummary {
    pub name: String,
    pub tags: Vec<String>,
    pub size: usize,
    pub dim: usize,
    pub space: LatentSpace,
    pub created_at: String,
}

#[derive(Debug)]
pub struct AnchorStore {
    path: PathBuf,
    doc: StoreDoc,
}

impl AnchorStore {
    /// Open `path`, or start an empty store if the file does not exist yet.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let doc = read_doc(&path)?.unwrap_or(StoreDoc {
            schema_version: SCHEMA_VERSION,
            store_version: 0,
            sets: Vec::new(),
        });
        Ok(Self { path, doc })
    }

    /// Open an existing store; a missing file is a resolution error.
    pub fn open_existing(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        match read_doc(&path)? {
            Some(doc) => Ok(Self { path, doc }),
            None => Err(Error::Resolution(format!(
                "anchor store {}",
                path.display()
            ))),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn version(&self) -> u64 {
        self.doc.store_version
    }

    /// Re-read the file, picking up changes from other writers.
    pub fn reload(&mut self) -> Result<()> {
        if let Some(doc) = read_doc(&self.path)? {
            self.doc = doc;
        }
        Ok(())
    }

    pub fn put(&mut self, set: &AnchorSet, overwrite: bool) -> Result<()> {
        let existing = self.doc.sets.iter().position(|s| s.name == set.name());
        if existing.is_some() && !overwrite {
            return Err(Error::Conflict(format!("anchor set `{}`", set.name())));
        }
        let stored = StoredSet {
            name: set.name().to_string(),
            tags: set.tags().iter().cloned().collect(),
            members: set.members().iter().map(LatentVector::to_line).collect(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let mut next = self.doc.clone();
        match existing {
            Some(i) => next.sets[i] = stored,
            None => next.sets.push(stored),
        }
        self.commit(next)
    }

    pub fn get(&self, name: &str) -> Result<AnchorSet> {
        self.doc
            .sets
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::NotFound(format!("anchor set `{name}`")))?
            .decode()
    }

    /// Sets carrying every tag in `tags` (all-of); empty filter lists all.
    pub fn list<S: AsRef<str>>(&self, tags: &[S]) -> Vec<AnchorSummary> {
        let wanted: Vec<String> = tags
            .iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        self.doc
            .sets
            .iter()
            .filter(|s| wanted.iter().all(|t| s.tags.contains(t)))
            .map(|s| {
                let head = s.members.first().map(|m| {
                    let mut f = m.split_whitespace();
                    let dim = f.next().and_then(|d| d.parse().ok()).unwrap_or(0);
                    let space = f.next().and_then(|sp| sp.parse().ok()).unwrap_or_default();
                    (dim, space)
                });
                let (dim, space) = head.unwrap_or_default();
                AnchorSummary {
                    name: s.name.clone(),
                    tags: s.tags.clone(),
                    size: s.members.len(),
                    dim,
                    space,
                    created_at: s.created_at.clone(),
                }
            })
            .collect()
    }

    pub fn delete(&mut self, name: &str) -> Result<()> {
        let i = self
            .doc
            .sets
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::NotFound(format!("anchor set `{name}`")))?;
        let mut next = self.doc.clone();
        next.sets.remove(i);
        self.commit(next)
    }

    fn commit(&mut self, mut next: StoreDoc) -> Result<()> {
        let on_disk = read_doc(&self.path)?.map_or(0, |d| d.store_version);
        if on_disk != self.doc.store_version {
            return Err(Error::Conflict(format!(
                "store {} was modified by another writer (version {on_disk}, expected {})",
                self.path.display(),
                self.doc.store_version
            )));
        }
        next.store_version = self.doc.store_version + 1;
        let mut json = serde_json::to_vec_pretty(&next).expect("store serializes");
        json.push(b'\n');
        write_atomic(&self.path, &json)?;
        self.doc = next;
        Ok(())
    }
}

fn read_doc(path: &Path) -> Result<Option<StoreDoc>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let doc: StoreDoc = serde_json::from_str(&text).map_err(|e| {
        Error::Format(format!(
            "anchor store {} at byte offset {}: {e}",
            path.display(),
            byte_offset(&text, e.line(), e.column())
        ))
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "anchor store {} has schema_version {}, expected {SCHEMA_VERSION}",
            path.display(),
            doc.schema_version
        )));
    }
    for (i, s) in doc.sets.iter().enumerate() {
        s.decode().map_err(|e| {
            Error::Format(format!(
                "anchor store {} set {i} (`{}`): {e}",
                path.display(),
                s.name
            ))
        })?;
    }
    Ok(Some(doc))
}

/// Byte offset for serde_json's 1-based line / column position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    line_start + column.saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arithmetic::average_anchors;
    use crate::latent::sample_latents;

    fn set(name: &str, tags: &[&str], seed: u64) -> AnchorSet {
        let zs = sample_latents(LatentSpace::UniformCube, 100, 3, seed).unwrap();
        AnchorSet::new(name, tags, zs).unwrap()
    }

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("store.json");
        let s = set("smiling_woman", &["smiling", "woman"], 1);
        let mut store = AnchorStore::open(&p).unwrap();
        store.put(&s, false).unwrap();

        let reopened = AnchorStore::open(&p).unwrap();
        let back = reopened.get("smiling_woman").unwrap();
        assert_eq!(back, s);
        assert_eq!(average_anchors(&back), average_anchors(&s));
    }

    #[test]
    fn duplicate_without_overwrite_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("store.json");
        let mut store = AnchorStore::open(&p).unwrap();
        store.put(&set("a", &["x"], 1), false).unwrap();
        let before = std::fs::read(&p).unwrap();
        let err = store.put(&set("a", &["y"], 2), false).unwrap_err();
        assert!(matches!(err, Error::Conflict(_)));
        assert_eq!(std::fs::read(&p).unwrap(), before);

        store.put(&set("a", &["y"], 2), true).unwrap();
        assert!(store.get("a").unwrap().has_all_tags(&["y"]));
    }

    #[test]
    fn list_filters_with_all_of() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = AnchorStore::open(dir.path().join("s.json")).unwrap();
        assert!(store.list::<&str>(&[]).is_empty());
        store
            .put(&set("sw", &["smiling", "woman"], 1), false)
            .unwrap();
        store
            .put(&set("nw", &["neutral", "woman"], 2), false)
            .unwrap();
        store
            .put(&set("sm", &["smiling", "man"], 3), false)
            .unwrap();
        let hits = store.list(&["smiling", "woman"]);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].name, "sw");
        assert_eq!(hits[0].size, 3);
        assert_eq!(hits[0].dim, 100);
        assert_eq!(store.list(&["WOMAN"]).len(), 2);
        assert_eq!(store.list::<&str>(&[]).len(), 3);
    }

    #[test]
    fn delete_then_get_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = AnchorStore::open(dir.path().join("s.json")).unwrap();
        store.put(&set("a", &[], 1), false).unwrap();
        store.delete("a").unwrap();
        assert!(matches!(store.get("a"), Err(Error::NotFound(_))));
        assert!(matches!(store.delete("a"), Err(Error::NotFound(_))));
    }

    #[test]
    fn corrupt_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, "{\"schema_version\": 1,\n \"store_version\": x}").unwrap();
        let err = AnchorStore::open(&p).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("byte offset 40"), "{err}");
    }

    #[test]
    fn concurrent_writer_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let mut first = AnchorStore::open(&p).unwrap();
        let mut second = AnchorStore::open(&p).unwrap();
        first.put(&set("a", &[], 1), false).unwrap();
        let err = second.put(&set("b", &[], 2), false).unwrap_err();
        assert!(matches!(err, Error::Conflict(_)));
        second.reload().unwrap();
        second.put(&set("b", &[], 2), false).unwrap();
        assert_eq!(second.version(), 2);
    }

    #[test]
    fn missing_store_for_readers() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            AnchorStore::open_existing(dir.path().join("nope.json")),
            Err(Error::Resolution(_))
        ));
    }
}
