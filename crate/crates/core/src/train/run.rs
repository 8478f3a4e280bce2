//! Run directory layout:
//!
//! ```text
//! config.toml    effective configuration
//! metrics.csv    one row per epoch (epoch,lr,train_loss,val_loss)
//! best.ckpt      parameters with the lowest validation loss
//! last.ckpt      latest parameters plus optimizer state, for resuming
//! report.toml    final summary
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::{Checkpoint, EpochRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory if needed.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn best(&self) -> PathBuf {
        self.file("best.ckpt")
    }

    pub fn last(&self) -> PathBuf {
        self.file("last.ckpt")
    }

    pub fn write_config<T: Serialize>(&self, config: &T) -> Result<()> {
        let text = toml::to_string(config).map_err(|e| Error::config(format!("cannot encode config: {e}")))?;
        fs::write(self.file("config.toml"), text)?;
        Ok(())
    }

    /// Rewrites the whole metrics file from `history`.
    pub fn write_metrics(&self, history: &[EpochRecord]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.file("metrics.csv"))?;
        for r in history {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_checkpoint(&self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        ckpt.save(&self.file(name))
    }

    pub fn write_report<T: Serialize>(&self, report: &T) -> Result<()> {
        let text = toml::to_string(report).map_err(|e| Error::config(format!("cannot encode report: {e}")))?;
        fs::write(self.file("report.toml"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_are_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path().join("run")).unwrap();
        let row = |e| EpochRecord { epoch: e, lr: 0.5, train_loss: 1.25, val_loss: 2.0 };
        run.write_metrics(&[row(0)]).unwrap();
        run.write_metrics(&[row(0), row(1)]).unwrap();
        let text = fs::read_to_string(run.file("metrics.csv")).unwrap();
        assert_eq!(text, "epoch,lr,train_loss,val_loss\n0,0.5,1.25,2.0\n1,0.5,1.25,2.0\n");
    }
}
