//! Line-delimited JSON records emitted once per training epoch.
//!
//! Every field except `wall_seconds` is deterministic for a fixed seed, so
//! two runs of the same command can be compared record-by-record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One epoch of training: schedule position, mean loss, and test metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Zero-based epoch index.
    pub epoch: usize,
    /// Learning rate the epoch ran at.
    pub lr: f32,
    /// Mean per-sample training loss.
    pub train_loss: f32,
    /// Overall accuracy on the test split.
    pub test_oa: f64,
    /// Class-mean accuracy on the test split.
    pub test_macc: f64,
    /// Wall-clock duration of the epoch (train + eval); not deterministic.
    pub wall_seconds: f64,
}

/// Appends records to an optional JSONL file while echoing a one-line
/// summary to stdout.
pub struct RecordWriter {
    file: Option<BufWriter<File>>,
}

impl RecordWriter {
    /// Creates (truncates) `path` if given; `None` logs to stdout only.
    pub fn create(path: Option<&Path>) -> std::io::Result<Self> {
        let file = match path {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        };
        Ok(RecordWriter { file })
    }

    /// Writes one record and echoes it human-readably.
    pub fn append(&mut self, rec: &EpochRecord) -> anyhow::Result<()> {
        println!(
            "epoch {:>4}  lr {:.5}  loss {:.5}  test OA {:.4}  mAcc {:.4}  {:.2}s",
            rec.epoch, rec.lr, rec.train_loss, rec.test_oa, rec.test_macc, rec.wall_seconds
        );
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, rec)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        Ok(())
    }
}

/// Reads a JSONL metrics log back, one record per non-empty line.
pub fn read_records(path: &Path) -> anyhow::Result<Vec<EpochRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
