//! Training metrics log: a CSV with a version comment line, one row per
//! iteration. Floats are written with Rust's shortest round-trip formatting,
//! so parsing a row back yields bit-identical values and resumed runs can be
//! compared to unbroken ones column by column.

use crate::ppo::TrainMetrics;
use crate::{Error, Result};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

pub const METRICS_MAGIC: &str = "# quadnav-metrics v1";
pub const METRICS_HEADER: &str = "iteration,env_steps,mean_episodic_return,mean_reward_per_step,\
mean_episode_length,goal_rate,policy_loss,value_loss,entropy,clip_fraction,approx_kl,wall_clock_s";

pub struct MetricsWriter {
    file: File,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<MetricsWriter> {
        let mut file = File::create(path)?;
        writeln!(file, "{METRICS_MAGIC}")?;
        writeln!(file, "{METRICS_HEADER}")?;
        file.flush()?;
        Ok(MetricsWriter { file, path: path.to_path_buf() })
    }

    /// Reopens an existing log for a resumed run, dropping any rows past
    /// `keep_iteration` so the continuation appends where the checkpoint
    /// left off. A missing file is recreated from scratch.
    pub fn resume(path: &Path, keep_iteration: u64) -> Result<MetricsWriter> {
        if !path.exists() {
            return MetricsWriter::create(path);
        }
        let reader = BufReader::new(File::open(path)?);
        let mut kept = String::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if idx < 2 || line.starts_with('#') {
                kept.push_str(&line);
                kept.push('\n');
                continue;
            }
            let iter: u64 = line
                .split(',')
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Config(format!("malformed metrics row: {line}")))?;
            if iter <= keep_iteration {
                kept.push_str(&line);
                kept.push('\n');
            }
        }
        crate::checkpoint::write_atomic(path, kept.as_bytes())?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(MetricsWriter { file, path: path.to_path_buf() })
    }

    pub fn append(&mut self, m: &TrainMetrics) -> Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            m.iteration,
            m.env_steps,
            m.mean_episodic_return,
            m.mean_reward_per_step,
            m.mean_episode_length,
            m.goal_rate,
            m.policy_loss,
            m.value_loss,
            m.entropy,
            m.clip_fraction,
            m.approx_kl,
            m.wall_clock_s
        )?;
        self.file.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads any of the project's CSV files: comment lines (leading '#') are
/// skipped, the first remaining line is the header, fields stay as strings
/// so callers can copy values through without reformatting.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let reader = BufReader::new(
        File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
    );
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
        match header {
            None => header = Some(fields),
            Some(_) => rows.push(fields),
        }
    }
    let header =
        header.ok_or_else(|| Error::Config(format!("{}: no header row", path.display())))?;
    Ok((header, rows))
}
