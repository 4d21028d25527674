//! Write-once, content-addressed object files under `objects/<xx>/<digest>`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Name of the digest recorded in the `FORMAT` file.
pub const HASH_ALGORITHM: &str = "sha256";

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn is_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Counters exposed for tests and diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreStats {
    /// Calls to `put`, including ones that found the object already present.
    pub object_writes: u64,
    pub object_reads: u64,
    /// Reads of table row payloads, as opposed to metadata objects.
    pub payload_reads: u64,
}

pub(crate) struct ObjectStore {
    dir: PathBuf,
    tmp: PathBuf,
    writes: AtomicU64,
    reads: AtomicU64,
    payload_reads: AtomicU64,
    tmp_seq: AtomicU64,
}

impl ObjectStore {
    pub fn new(dir: PathBuf, tmp: PathBuf) -> Self {
        ObjectStore {
            dir,
            tmp,
            writes: AtomicU64::new(0),
            reads: AtomicU64::new(0),
            payload_reads: AtomicU64::new(0),
            tmp_seq: AtomicU64::new(0),
        }
    }

    fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(&id[..2]).join(id)
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            object_writes: self.writes.load(Ordering::SeqCst),
            object_reads: self.reads.load(Ordering::SeqCst),
            payload_reads: self.payload_reads.load(Ordering::SeqCst),
        }
    }

    pub fn note_payload_read(&self) {
        self.payload_reads.fetch_add(1, Ordering::SeqCst);
    }

    /// Stores `bytes` and returns its digest. Identical content written
    /// concurrently converges on the same file.
    pub fn put(&self, bytes: &[u8]) -> Result<String> {
        self.writes.fetch_add(1, Ordering::SeqCst);
        let id = digest_hex(bytes);
        let path = self.path_of(&id);
        if self.verify_existing(&path, &id) {
            return Ok(id);
        }
        let parent = path.parent().expect("object path has a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        let tmp = self.tmp.join(format!(
            "obj-{}-{}",
            std::process::id(),
            self.tmp_seq.fetch_add(1, Ordering::SeqCst)
        ));
        write_file(&tmp, bytes)?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(format!("publishing object {id}"), e))?;
        Ok(id)
    }

    fn verify_existing(&self, path: &Path, id: &str) -> bool {
        match fs::read(path) {
            Ok(bytes) => digest_hex(&bytes) == id,
            Err(_) => false,
        }
    }

    /// Reads an object. Files whose content does not hash to their name
    /// (torn or tampered writes) are reported as absent.
    pub fn get(&self, id: &str) -> Result<Option<Vec<u8>>> {
        if !is_digest(id) {
            return Ok(None);
        }
        self.reads.fetch_add(1, Ordering::SeqCst);
        match fs::read(self.path_of(id)) {
            Ok(bytes) if digest_hex(&bytes) == id => Ok(Some(bytes)),
            Ok(_) => Ok(None),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(format!("reading object {id}"), e)),
        }
    }

    /// Ids of stored objects starting with `prefix` (at least two hex chars).
    pub fn ids_with_prefix(&self, prefix: &str) -> Result<Vec<String>> {
        if prefix.len() < 2 || !prefix.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Ok(Vec::new());
        }
        let dir = self.dir.join(&prefix[..2]);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(format!("listing {}", dir.display()), e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io("listing objects", e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with(prefix) && is_digest(&name) {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
