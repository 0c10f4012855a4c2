//! Output directories that only appear under their final name once every
//! file has been written.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct Bundle {
    target: PathBuf,
    staging: PathBuf,
}

impl Bundle {
    /// Starts writing into `<target>.partial`, clearing any stale staging
    /// directory from an earlier failed run.
    pub fn create(target: &Path) -> Result<Self> {
        let staging = partial_path(target);
        if staging.exists() {
            fs::remove_dir_all(&staging).with_context(|| format!("removing {}", staging.display()))?;
        }
        fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
        })
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.staging.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    /// Replaces the target directory with the staged one.
    pub fn finish(self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).with_context(|| format!("removing {}", self.target.display()))?;
        }
        fs::rename(&self.staging, &self.target)
            .with_context(|| format!("renaming {} to {}", self.staging.display(), self.target.display()))?;
        Ok(self.target)
    }
}

pub fn partial_path(target: &Path) -> PathBuf {
    let mut name = target.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    target.with_file_name(name)
}
