//! Immutable run snapshots.
//!
//! Each snapshot is a directory `snapshots/NNNNNN/` holding its artifacts
//! and a `manifest.json` with a SHA-256 per file. New snapshots are built
//! in a hidden staging directory and published with a single rename, so a
//! crash before the rename leaves earlier snapshots untouched.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST: &str = "manifest.json";
const STAGING_PREFIX: &str = ".staging-";

static STAGING_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot {0} does not exist")]
    NotFound(u64),
    #[error("snapshot {id} failed integrity check on {file}: {reason}")]
    Integrity { id: u64, file: String, reason: String },
    #[error("invalid artifact name {0:?}")]
    BadName(String),
    #[error("snapshot I/O error at {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("snapshot manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SnapshotError + '_ {
    move |source| SnapshotError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub snapshot_id: u64,
    pub timestamp: String,
    pub config_hash: String,
    pub parent_snapshot_id: Option<u64>,
    /// Pipeline step that produced the snapshot.
    pub stage: String,
    /// Relative path to hex SHA-256.
    pub files: BTreeMap<String, String>,
}

/// A verified, published snapshot.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub manifest: SnapshotManifest,
    pub dir: PathBuf,
}

impl Snapshot {
    pub fn id(&self) -> u64 {
        self.manifest.snapshot_id
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.files.contains_key(name) || self.manifest.files.keys().any(|f| f.starts_with(&format!("{name}/")))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotStore {
    root: PathBuf,
}

fn sha256_file(path: &Path) -> Result<String, SnapshotError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Regular files below `dir`, as sorted `/`-separated relative paths.
fn walk(dir: &Path) -> Result<Vec<String>, SnapshotError> {
    fn visit(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), SnapshotError> {
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let path = entry.path();
            if path.is_dir() {
                visit(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("below base");
                let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                out.push(parts.join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    visit(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

fn check_name(name: &str) -> Result<(), SnapshotError> {
    let ok = !name.is_empty()
        && name != MANIFEST
        && !name.starts_with('/')
        && name.split('/').all(|p| !p.is_empty() && p != "." && p != "..");
    if ok {
        Ok(())
    } else {
        Err(SnapshotError::BadName(name.to_string()))
    }
}

impl SnapshotStore {
    /// Opens (creating if needed) the store under `run_dir/snapshots`.
    pub fn open(run_dir: &Path) -> Result<Self, SnapshotError> {
        let root = run_dir.join("snapshots");
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(SnapshotStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir_of(&self, id: u64) -> PathBuf {
        self.root.join(format!("{id:06}"))
    }

    /// Published snapshot ids in increasing order.
    pub fn list(&self) -> Result<Vec<u64>, SnapshotError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.bytes().all(|b| b.is_ascii_digit()) && !name.is_empty() {
                if let Ok(id) = name.parse() {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn latest(&self) -> Result<Option<u64>, SnapshotError> {
        Ok(self.list()?.last().copied())
    }

    /// Loads a snapshot and checks every file against its manifest hash.
    pub fn read(&self, id: u64) -> Result<Snapshot, SnapshotError> {
        let dir = self.dir_of(id);
        if !dir.is_dir() {
            return Err(SnapshotError::NotFound(id));
        }
        let manifest_path = dir.join(MANIFEST);
        let integrity = |file: &str, reason: String| SnapshotError::Integrity {
            id,
            file: file.to_string(),
            reason,
        };
        let text = fs::read_to_string(&manifest_path).map_err(|e| integrity(MANIFEST, e.to_string()))?;
        let manifest: SnapshotManifest =
            serde_json::from_str(&text).map_err(|e| integrity(MANIFEST, e.to_string()))?;
        if manifest.snapshot_id != id {
            return Err(integrity(MANIFEST, format!("manifest claims id {}", manifest.snapshot_id)));
        }
        for (file, expected) in &manifest.files {
            let actual = sha256_file(&dir.join(file)).map_err(|e| integrity(file, e.to_string()))?;
            if &actual != expected {
                return Err(integrity(file, format!("hash {actual} does not match {expected}")));
            }
        }
        let present: Vec<String> = walk(&dir)?.into_iter().filter(|f| f != MANIFEST).collect();
        if let Some(extra) = present.iter().find(|f| !manifest.files.contains_key(*f)) {
            return Err(integrity(extra, "file not listed in manifest".into()));
        }
        Ok(Snapshot { manifest, dir })
    }

    /// Reads one artifact's bytes from a verified snapshot.
    pub fn read_file(&self, id: u64, name: &str) -> Result<Vec<u8>, SnapshotError> {
        check_name(name)?;
        let snap = self.read(id)?;
        let path = snap.path(name);
        fs::read(&path).map_err(io_err(&path))
    }

    /// Starts a new snapshot. With `inherit`, the parent's artifacts are
    /// copied in first so the stage only writes what it changes.
    pub fn begin(&self, parent: Option<&Snapshot>, inherit: bool, stage: &str) -> Result<StagedSnapshot, SnapshotError> {
        let n = STAGING_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = self.root.join(format!("{STAGING_PREFIX}{}-{n}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let staged = StagedSnapshot {
            store: self.clone(),
            dir,
            parent: parent.map(Snapshot::id),
            stage: stage.to_string(),
            finished: false,
        };
        if let (Some(parent), true) = (parent, inherit) {
            for file in parent.manifest.files.keys() {
                let from = parent.dir.join(file);
                let to = staged.dir.join(file);
                if let Some(p) = to.parent() {
                    fs::create_dir_all(p).map_err(io_err(p))?;
                }
                fs::copy(&from, &to).map_err(io_err(&from))?;
            }
        }
        Ok(staged)
    }
}

/// A snapshot under construction. Dropping it without `commit` discards it.
#[derive(Debug)]
pub struct StagedSnapshot {
    store: SnapshotStore,
    dir: PathBuf,
    parent: Option<u64>,
    stage: String,
    finished: bool,
}

impl StagedSnapshot {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn parent(&self) -> Option<u64> {
        self.parent
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.dir.join(name).exists()
    }

    pub fn write_file(&self, name: &str, bytes: &[u8]) -> Result<(), SnapshotError> {
        check_name(name)?;
        let path = self.dir.join(name);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).map_err(io_err(p))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))
    }

    /// Removes an artifact (file or directory) if present.
    pub fn remove(&self, name: &str) -> Result<(), SnapshotError> {
        check_name(name)?;
        let path = self.dir.join(name);
        if path.is_dir() {
            fs::remove_dir_all(&path).map_err(io_err(&path))
        } else if path.exists() {
            fs::remove_file(&path).map_err(io_err(&path))
        } else {
            Ok(())
        }
    }

    /// Hashes the staged files, writes the manifest and publishes the
    /// directory under the next free id with one rename.
    pub fn commit(mut self, config_hash: &str) -> Result<Snapshot, SnapshotError> {
        let mut files = BTreeMap::new();
        for file in walk(&self.dir)? {
            if file == MANIFEST {
                continue;
            }
            files.insert(file.clone(), sha256_file(&self.dir.join(&file))?);
        }
        let mut id = self.store.latest()?.map_or(1, |l| l + 1);
        loop {
            let manifest = SnapshotManifest {
                snapshot_id: id,
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                config_hash: config_hash.to_string(),
                parent_snapshot_id: self.parent,
                stage: self.stage.clone(),
                files: files.clone(),
            };
            let manifest_path = self.dir.join(MANIFEST);
            fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?).map_err(io_err(&manifest_path))?;
            let target = self.store.dir_of(id);
            if target.exists() {
                id += 1;
                continue;
            }
            match fs::rename(&self.dir, &target) {
                Ok(()) => {
                    self.finished = true;
                    return Ok(Snapshot { manifest, dir: target });
                }
                // another writer won this id between the check and the rename
                Err(_) if target.exists() => id += 1,
                Err(e) => return Err(io_err(&target)(e)),
            }
        }
    }

    /// Leaves the staging directory on disk, as a crash would.
    pub fn abandon(mut self) {
        self.finished = true;
    }
}

impl Drop for StagedSnapshot {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (tempfile::TempDir, SnapshotStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        (dir, store)
    }

    fn write_one(store: &SnapshotStore, parent: Option<&Snapshot>, body: &[u8]) -> Snapshot {
        let staged = store.begin(parent, true, "test").unwrap();
        staged.write_file("a.txt", body).unwrap();
        staged.write_file("sub/b.bin", &[0, 1, 2]).unwrap();
        staged.commit("cfg").unwrap()
    }

    #[test]
    fn ids_are_monotonic() {
        let (_d, store) = store();
        assert_eq!(store.latest().unwrap(), None);
        let s1 = write_one(&store, None, b"one");
        let s2 = write_one(&store, Some(&s1), b"two");
        write_one(&store, Some(&s2), b"three");
        assert_eq!(store.list().unwrap(), [1, 2, 3]);
        assert_eq!(store.read(3).unwrap().manifest.parent_snapshot_id, Some(2));
    }

    #[test]
    fn round_trip_bytes() {
        let (_d, store) = store();
        let body: Vec<u8> = (0..=255u8).cycle().take(5000).collect();
        let s = write_one(&store, None, &body);
        assert_eq!(store.read_file(s.id(), "a.txt").unwrap(), body);
        assert_eq!(store.read_file(s.id(), "sub/b.bin").unwrap(), [0, 1, 2]);
        assert!(store.read(s.id()).unwrap().has("sub"));
    }

    #[test]
    fn inherit_copies_parent() {
        let (_d, store) = store();
        let s1 = write_one(&store, None, b"one");
        let staged = store.begin(Some(&s1), true, "child").unwrap();
        staged.write_file("c.txt", b"c").unwrap();
        staged.remove("sub").unwrap();
        let s2 = staged.commit("cfg").unwrap();
        let files: Vec<&String> = s2.manifest.files.keys().collect();
        assert_eq!(files, ["a.txt", "c.txt"]);
        let fresh = store.begin(Some(&s2), false, "fresh").unwrap();
        assert!(!fresh.has("a.txt"));
    }

    #[test]
    fn tampering_is_detected() {
        let (_d, store) = store();
        let s = write_one(&store, None, b"one");
        fs::write(s.path("a.txt"), b"evil").unwrap();
        assert!(matches!(store.read(s.id()), Err(SnapshotError::Integrity { file, .. }) if file == "a.txt"));
        let s2 = write_one(&store, None, b"two");
        fs::write(s2.path("extra"), b"x").unwrap();
        assert!(matches!(store.read(s2.id()), Err(SnapshotError::Integrity { .. })));
        assert!(matches!(store.read(99), Err(SnapshotError::NotFound(99))));
    }

    #[test]
    fn crash_before_rename_keeps_previous() {
        let (_d, store) = store();
        let s1 = write_one(&store, None, b"one");
        let staged = store.begin(Some(&s1), true, "crash").unwrap();
        staged.write_file("a.txt", b"half-written").unwrap();
        staged.abandon();
        assert_eq!(store.list().unwrap(), [1]);
        assert_eq!(store.read_file(1, "a.txt").unwrap(), b"one");
        let s2 = write_one(&store, Some(&s1), b"two");
        assert_eq!(s2.id(), 2);
    }

    #[test]
    fn dropped_stage_is_cleaned() {
        let (_d, store) = store();
        let staged = store.begin(None, false, "x").unwrap();
        let dir = staged.dir().to_path_buf();
        drop(staged);
        assert!(!dir.exists());
    }

    #[test]
    fn rejects_escaping_names() {
        let (_d, store) = store();
        let staged = store.begin(None, false, "x").unwrap();
        for bad in ["../x", "/abs", "", "manifest.json", "a//b"] {
            assert!(staged.write_file(bad, b"").is_err(), "{bad}");
        }
    }
}
