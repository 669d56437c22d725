//! Verb output directories are built under `OUT_DIR/.<verb>.partial` and
//! renamed to `OUT_DIR/<verb>` only on success.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct Stage {
    tmp: PathBuf,
    dest: PathBuf,
    committed: bool,
}

impl Stage {
    pub fn new(out_dir: &Path, verb: &str) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let tmp = out_dir.join(format!(".{verb}.partial"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).with_context(|| format!("removing stale {}", tmp.display()))?;
        }
        fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Self {
            tmp,
            dest: out_dir.join(verb),
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    /// Replaces any previous output of this verb with the staged one.
    pub fn commit(mut self) -> Result<PathBuf> {
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest).with_context(|| format!("removing {}", self.dest.display()))?;
        }
        fs::rename(&self.tmp, &self.dest)
            .with_context(|| format!("moving {} to {}", self.tmp.display(), self.dest.display()))?;
        self.committed = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}
