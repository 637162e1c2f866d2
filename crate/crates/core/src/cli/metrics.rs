//! Line-delimited JSON metrics, one record per iteration.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::IterationMetrics;

pub struct MetricsSink {
    path: PathBuf,
    file: File,
}

impl MetricsSink {
    /// Open `path`, creating parent directories. Existing contents are kept
    /// when `append` is set and truncated otherwise.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsSink { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record and flush it.
    pub fn write(&mut self, row: &IterationMetrics) -> Result<()> {
        let mut line = serde_json::to_string(row).map_err(|e| Error::Contract(format!("metrics encoding: {e}")))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::Contract(format!("{} line {}: {e}", path.display(), n + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Plot-ready CSV with one row per iteration; missing values are empty.
pub fn to_csv(rows: &[IterationMetrics]) -> String {
    let mut out = String::from(
        "iteration,episodes,return_mean,return_std,kl,entropy_estimate,ppo_loss,entropy_loss,compression_loss,value_loss,lr,compression,grad_norm\n",
    );
    for r in rows {
        let fields = [
            r.iteration.to_string(),
            r.episodes.to_string(),
            cell(r.return_mean),
            cell(r.return_std),
            cell(r.kl),
            r.entropy_estimate.to_string(),
            cell(r.ppo_loss),
            cell(r.entropy_loss),
            cell(r.compression_loss),
            cell(r.value_loss),
            r.lr.to_string(),
            r.compression.to_string(),
            cell(r.grad_norm),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
