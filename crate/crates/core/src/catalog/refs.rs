//! Named refs: branch files under `refs/branches/` and tag files under
//! `refs/tags/`. Each file is a single newline-terminated line.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::objects::CommitId;
use super::store::{is_digest, write_file};
use crate::error::{Error, Result};

pub const MAIN: &str = "main";

/// Visibility class of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchClass {
    Normal,
    /// Sandbox of a pipeline run in progress.
    Transactional,
    /// Retained sandbox of a failed run; read-only.
    Aborted,
}

impl BranchClass {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchClass::Normal => "normal",
            BranchClass::Transactional => "transactional",
            BranchClass::Aborted => "aborted",
        }
    }
}

impl fmt::Display for BranchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BranchClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" => Ok(BranchClass::Normal),
            "transactional" => Ok(BranchClass::Transactional),
            "aborted" => Ok(BranchClass::Aborted),
            _ => Err(format!("unknown branch class `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub name: String,
    pub head: CommitId,
    pub class: BranchClass,
    pub created_from: CommitId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub name: String,
    pub target: CommitId,
}

/// A user-facing reference: `name` (branch), `tag:name` or `commit:<hex>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Ref {
    Branch(String),
    Tag(String),
    Commit(String),
}

impl Ref {
    pub fn branch(name: impl Into<String>) -> Self {
        Ref::Branch(name.into())
    }

    pub fn commit(id: &CommitId) -> Self {
        Ref::Commit(id.0.clone())
    }
}

impl FromStr for Ref {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(t) = s.strip_prefix("tag:") {
            validate_name(t)?;
            Ok(Ref::Tag(t.to_string()))
        } else if let Some(c) = s.strip_prefix("commit:") {
            if c.is_empty() || !c.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Error::UnknownRef(s.to_string()));
            }
            Ok(Ref::Commit(c.to_ascii_lowercase()))
        } else {
            validate_name(s)?;
            Ok(Ref::Branch(s.to_string()))
        }
    }
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ref::Branch(b) => f.write_str(b),
            Ref::Tag(t) => write!(f, "tag:{t}"),
            Ref::Commit(c) => write!(f, "commit:{c}"),
        }
    }
}

/// Branch and tag names: `[a-zA-Z0-9_\-./]+`, with `/`-separated
/// components that are neither empty nor `.`/`..`.
pub fn validate_name(name: &str) -> Result<()> {
    let bad = |reason: &str| {
        Err(Error::InvalidName {
            name: name.to_string(),
            reason: reason.to_string(),
        })
    };
    if name.is_empty() {
        return bad("empty name");
    }
    if !name
        .bytes()
        .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b'/'))
    {
        return bad("allowed characters are letters, digits, `_`, `-`, `.` and `/`");
    }
    if name
        .split('/')
        .any(|part| part.is_empty() || part == "." || part == "..")
    {
        return bad("empty, `.` or `..` path component");
    }
    Ok(())
}

pub(crate) struct RefFiles {
    branches: PathBuf,
    tags: PathBuf,
    tmp: PathBuf,
    seq: AtomicU64,
}

impl RefFiles {
    pub fn new(root: &Path) -> Self {
        RefFiles {
            branches: root.join("refs").join("branches"),
            tags: root.join("refs").join("tags"),
            tmp: root.join("tmp"),
            seq: AtomicU64::new(0),
        }
    }

    pub fn create_dirs(&self) -> Result<()> {
        for d in [&self.branches, &self.tags] {
            fs::create_dir_all(d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
        }
        Ok(())
    }

    fn branch_path(&self, name: &str) -> PathBuf {
        self.branches.join(name)
    }

    pub fn read_branch(&self, name: &str) -> Result<Option<Branch>> {
        let path = self.branch_path(name);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if matches!(e.kind(), io::ErrorKind::NotFound | io::ErrorKind::NotADirectory) => return Ok(None),
            // a directory of nested branch names
            Err(_) if path.is_dir() => return Ok(None),
            Err(e) => return Err(Error::io(format!("reading branch `{name}`"), e)),
        };
        parse_branch_line(name, &text).map(Some)
    }

    /// Atomically replaces (or creates) the branch file.
    pub fn write_branch(&self, b: &Branch) -> Result<()> {
        let path = self.branch_path(&b.name);
        if path.is_dir() {
            return Err(Error::InvalidName {
                name: b.name.clone(),
                reason: "conflicts with existing branches nested under it".into(),
            });
        }
        let parent = path.parent().expect("branch path has a parent");
        if let Err(e) = fs::create_dir_all(parent) {
            return Err(if parent.exists() || e.kind() == io::ErrorKind::NotADirectory {
                Error::InvalidName {
                    name: b.name.clone(),
                    reason: "a prefix of this name is already a branch".into(),
                }
            } else {
                Error::io(format!("creating {}", parent.display()), e)
            });
        }
        let line = format!("{} {} {}\n", b.class, b.head, b.created_from);
        let tmp = self.tmp.join(format!(
            "ref-{}-{}",
            std::process::id(),
            self.seq.fetch_add(1, Ordering::SeqCst)
        ));
        write_file(&tmp, line.as_bytes())?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(format!("updating branch `{}`", b.name), e))
    }

    pub fn remove_branch(&self, name: &str) -> Result<()> {
        let path = self.branch_path(name);
        fs::remove_file(&path).map_err(|e| Error::io(format!("deleting branch `{name}`"), e))?;
        // prune now-empty namespace directories such as `txn/`
        let mut dir = path.parent();
        while let Some(d) = dir {
            if d == self.branches || fs::remove_dir(d).is_err() {
                break;
            }
            dir = d.parent();
        }
        Ok(())
    }

    pub fn list_branches(&self) -> Result<Vec<Branch>> {
        let mut out = Vec::new();
        let mut stack = vec![self.branches.clone()];
        while let Some(dir) = stack.pop() {
            let entries = fs::read_dir(&dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
            for entry in entries {
                let entry = entry.map_err(|e| Error::io("listing branches", e))?;
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let rel = path
                    .strip_prefix(&self.branches)
                    .expect("listed path under branches dir");
                let name = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                if let Some(b) = self.read_branch(&name)? {
                    out.push(b);
                }
            }
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    pub fn read_tag(&self, name: &str) -> Result<Option<Tag>> {
        match fs::read_to_string(self.tags.join(name)) {
            Ok(text) => {
                let id = text.trim_end_matches('\n');
                if !is_digest(id) || text.lines().count() != 1 {
                    return Err(Error::Corrupt(format!("tag file `{name}` is malformed")));
                }
                Ok(Some(Tag {
                    name: name.to_string(),
                    target: CommitId(id.to_string()),
                }))
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::NotFound | io::ErrorKind::NotADirectory) => Ok(None),
            Err(_) if self.tags.join(name).is_dir() => Ok(None),
            Err(e) => Err(Error::io(format!("reading tag `{name}`"), e)),
        }
    }

    /// Creates a tag file; fails if it exists.
    pub fn create_tag(&self, tag: &Tag) -> Result<()> {
        let path = self.tags.join(&tag.name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|_| Error::InvalidName {
                name: tag.name.clone(),
                reason: "a prefix of this name is already a tag".into(),
            })?;
        }
        let mut f = match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Err(Error::TagExists(tag.name.clone())),
            Err(e) => return Err(Error::io(format!("creating tag `{}`", tag.name), e)),
        };
        use std::io::Write;
        f.write_all(format!("{}\n", tag.target).as_bytes())
            .map_err(|e| Error::io(format!("writing tag `{}`", tag.name), e))
    }

    pub fn list_tags(&self) -> Result<Vec<Tag>> {
        let mut out = Vec::new();
        let mut stack = vec![self.tags.clone()];
        while let Some(dir) = stack.pop() {
            let entries = fs::read_dir(&dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
            for entry in entries {
                let path = entry.map_err(|e| Error::io("listing tags", e))?.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let name = path
                    .strip_prefix(&self.tags)
                    .expect("listed path under tags dir")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                if let Some(t) = self.read_tag(&name)? {
                    out.push(t);
                }
            }
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }
}

fn parse_branch_line(name: &str, text: &str) -> Result<Branch> {
    let corrupt = || Error::Corrupt(format!("branch file `{name}` is malformed"));
    let line = text.strip_suffix('\n').ok_or_else(corrupt)?;
    let mut parts = line.split(' ');
    let (Some(class), Some(head), Some(from), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(corrupt());
    };
    if !is_digest(head) || !is_digest(from) {
        return Err(corrupt());
    }
    Ok(Branch {
        name: name.to_string(),
        head: CommitId(head.to_string()),
        class: class.parse().map_err(|_| corrupt())?,
        created_from: CommitId(from.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_validated() {
        for ok in ["main", "feature/x-1", "txn/r000001-ab12", "v1.0", "a_b"] {
            validate_name(ok).unwrap();
        }
        for bad in ["", "a b", "a//b", "/a", "a/", "../x", "a:b", "ü"] {
            assert!(validate_name(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn refs_parse_by_prefix() {
        assert_eq!("main".parse::<Ref>().unwrap(), Ref::Branch("main".into()));
        assert_eq!("tag:v1".parse::<Ref>().unwrap(), Ref::Tag("v1".into()));
        assert_eq!(
            "commit:DEADbeef".parse::<Ref>().unwrap(),
            Ref::Commit("deadbeef".into())
        );
        assert!("commit:xyz".parse::<Ref>().is_err());
    }

    #[test]
    fn branch_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("tmp")).unwrap();
        let refs = RefFiles::new(dir.path());
        refs.create_dirs().unwrap();
        let b = Branch {
            name: "txn/r1".into(),
            head: CommitId("a".repeat(64)),
            class: BranchClass::Transactional,
            created_from: CommitId("b".repeat(64)),
        };
        refs.write_branch(&b).unwrap();
        assert_eq!(refs.read_branch("txn/r1").unwrap(), Some(b.clone()));
        assert_eq!(refs.list_branches().unwrap(), vec![b]);
        assert_eq!(refs.read_branch("txn").unwrap(), None);
        refs.remove_branch("txn/r1").unwrap();
        assert!(!dir.path().join("refs/branches/txn").exists());
    }
}
