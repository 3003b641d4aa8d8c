//! Atomic output emission.
//!
//! Output files are first written into a staging directory inside the
//! output directory and renamed into place only after every file of the
//! command has been produced. A run that fails partway therefore leaves
//! no new files in the output directory, and a file that is present is
//! never truncated.

use std::fs;
use std::path::{Path, PathBuf};

use flipaudit_core::{Error, Result};

pub struct Emitter {
    out_dir: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl Emitter {
    pub fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
        let staging = out_dir.join(format!(".staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)
                .map_err(|e| Error::io(staging.display().to_string(), e))?;
        }
        fs::create_dir(&staging).map_err(|e| Error::io(staging.display().to_string(), e))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            staging,
            files: Vec::new(),
            committed: false,
        })
    }

    /// Staging-area path that will become `out_dir/name` on commit, for
    /// writers that take a path instead of bytes.
    pub fn stage_path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.staging.join(name)
    }

    pub fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.stage_path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Rename every staged file into the output directory (clobbering
    /// any previous version) and remove the staging area.
    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut published = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let from = self.staging.join(name);
            let to = self.out_dir.join(name);
            fs::rename(&from, &to).map_err(|e| Error::io(to.display().to_string(), e))?;
            published.push(to);
        }
        self.committed = true;
        fs::remove_dir_all(&self.staging)
            .map_err(|e| Error::io(self.staging.display().to_string(), e))?;
        Ok(published)
    }
}

impl Drop for Emitter {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_publishes_everything_at_once() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut emitter = Emitter::new(&out).unwrap();
        emitter.write_file("a.csv", b"x,y\n1,2\n").unwrap();
        emitter.write_file("b.json", b"{}").unwrap();
        // Nothing is visible before commit.
        assert!(!out.join("a.csv").exists());
        assert!(!out.join("b.json").exists());
        let published = emitter.commit().unwrap();
        assert_eq!(published.len(), 2);
        assert_eq!(fs::read(out.join("a.csv")).unwrap(), b"x,y\n1,2\n");
        assert_eq!(fs::read(out.join("b.json")).unwrap(), b"{}");
        // Staging area is gone.
        assert_eq!(fs::read_dir(&out).unwrap().count(), 2);
    }

    #[test]
    fn dropping_without_commit_leaves_no_trace() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        {
            let mut emitter = Emitter::new(&out).unwrap();
            emitter.write_file("a.csv", b"partial").unwrap();
            let staged = emitter.stage_path("direct.bin");
            fs::write(staged, b"streamed").unwrap();
        }
        assert_eq!(
            fs::read_dir(&out).unwrap().count(),
            0,
            "aborted run must leave the output directory empty"
        );
    }

    #[test]
    fn commit_overwrites_previous_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut first = Emitter::new(&out).unwrap();
        first.write_file("a.csv", b"old").unwrap();
        first.commit().unwrap();
        let mut second = Emitter::new(&out).unwrap();
        second.write_file("a.csv", b"new").unwrap();
        second.commit().unwrap();
        assert_eq!(fs::read(out.join("a.csv")).unwrap(), b"new");
    }
}
