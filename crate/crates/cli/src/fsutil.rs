//! Atomic output helpers and content hashing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tempfile::{NamedTempFile, TempDir};

use crate::error::CliError;

pub fn require(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Fails early when the directory that will receive `dest` does not exist.
pub fn check_output(dest: &Path) -> Result<(), CliError> {
    let parent = parent_of(dest);
    if parent.is_dir() {
        Ok(())
    } else {
        Err(CliError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", parent.display()),
        )))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files written next to their destinations and moved into place together
/// by [`PendingFiles::commit`]; dropping without commit leaves nothing behind.
#[derive(Default)]
pub struct PendingFiles {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl PendingFiles {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, dest: &Path, bytes: &[u8]) -> Result<(), CliError> {
        let mut tmp = NamedTempFile::new_in(parent_of(dest))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        self.files.push((tmp, dest.to_path_buf()));
        Ok(())
    }

    pub fn commit(self) -> Result<(), CliError> {
        for (tmp, dest) in self.files {
            tmp.persist(&dest).map_err(|e| CliError::Io(e.error))?;
        }
        Ok(())
    }
}

pub fn write_atomic(dest: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut pending = PendingFiles::new();
    pending.add(dest, bytes)?;
    pending.commit()
}

/// A directory built in a hidden sibling of `dest` and swapped in on commit.
pub struct StagedDir {
    tmp: TempDir,
    dest: PathBuf,
}

impl StagedDir {
    pub fn new(dest: &Path) -> Result<Self, CliError> {
        let parent = parent_of(dest);
        fs::create_dir_all(parent)?;
        let tmp = tempfile::Builder::new().prefix(".evrecon-staging").tempdir_in(parent)?;
        Ok(Self { tmp, dest: dest.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    pub fn commit(self) -> Result<(), CliError> {
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest)?;
        }
        let staged = self.tmp.keep();
        fs::rename(&staged, &self.dest)?;
        Ok(())
    }
}

/// Relative paths of every regular file under `root`, sorted, with `/`
/// separators.
pub fn list_files(root: &Path) -> Result<Vec<String>, CliError> {
    fn walk(dir: &Path, prefix: &str, out: &mut Vec<String>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            let rel = if prefix.is_empty() { name } else { format!("{prefix}/{name}") };
            if entry.file_type()?.is_dir() {
                walk(&entry.path(), &rel, out)?;
            } else {
                out.push(rel);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, "", &mut out)?;
    out.sort();
    Ok(out)
}
