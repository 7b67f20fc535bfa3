use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Stage, TrainMode};
use crate::colearn::LossBreakdown;
use crate::error::{Error, Result};

/// Validation metrics recorded once per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub single_accuracy: Option<f64>,
    pub mixed_accuracy: Option<f64>,
    pub sdr: Option<f64>,
    pub sir: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Start {
        stage: Stage,
        mode: TrainMode,
        seed: u64,
        config_hash: String,
        first_step: u64,
        first_epoch: usize,
    },
    Step {
        stage: Stage,
        epoch: usize,
        step: u64,
        lr: f64,
        wall_clock_s: f64,
        #[serde(flatten)]
        losses: LossBreakdown,
    },
    Epoch {
        stage: Stage,
        epoch: usize,
        step: u64,
        wall_clock_s: f64,
        #[serde(flatten)]
        losses: LossBreakdown,
        val: Option<ValMetrics>,
        selection_metric: Option<f64>,
        best_epoch: Option<usize>,
    },
    End {
        stage: Stage,
        step: u64,
        wall_clock_s: f64,
        best_epoch: Option<usize>,
        best_metric: Option<f64>,
        /// Mean loss terms of the final epoch.
        #[serde(flatten)]
        losses: LossBreakdown,
    },
}

impl LogRecord {
    pub fn step(&self) -> Option<u64> {
        match self {
            LogRecord::Step { step, .. } => Some(*step),
            _ => None,
        }
    }
}

/// Append-only run log, mirrored to a JSON-lines file when one is attached.
pub struct RunLog {
    pub records: Vec<LogRecord>,
    sink: Option<(PathBuf, BufWriter<File>)>,
    started: Instant,
}

impl Default for RunLog {
    fn default() -> Self {
        RunLog::in_memory()
    }
}

impl RunLog {
    pub fn in_memory() -> Self {
        RunLog {
            records: Vec::new(),
            sink: None,
            started: Instant::now(),
        }
    }

    /// Opens `path` for appending; existing records are kept.
    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RunLog {
            records: Vec::new(),
            sink: Some((path.to_path_buf(), BufWriter::new(file))),
            started: Instant::now(),
        })
    }

    pub fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn push(&mut self, rec: LogRecord) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            let line = serde_json::to_string(&rec)?;
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.clone(), e))?;
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Vec<LogRecord>> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        BufReader::new(f)
            .lines()
            .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
            .map(|l| {
                let l = l.map_err(|e| Error::io(path, e))?;
                Ok(serde_json::from_str(&l)?)
            })
            .collect()
    }
}
