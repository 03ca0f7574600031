//! On-disk layout of a run directory.
//!
//! | file              | content                                   |
//! |-------------------|-------------------------------------------|
//! | `events.jsonl`    | the event log, one event per line         |
//! | `metrics.jsonl`   | metadata, epochs, retrievals, trust, forgery |
//! | `summary.csv`     | one-row summary                           |
//! | `edges.csv`       | final graph as `a,b,type_a,type_b`        |
//! | `log_digest.txt`  | hex SHA3-256 of `events.jsonl`            |

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::engine::Simulation;
use super::events::EventLog;
use super::metrics::MetricsReport;
use super::SimError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunFiles {
    pub events: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub edges: PathBuf,
    pub digest: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path) -> Self {
        RunFiles {
            events: dir.join("events.jsonl"),
            metrics: dir.join("metrics.jsonl"),
            summary: dir.join("summary.csv"),
            edges: dir.join("edges.csv"),
            digest: dir.join("log_digest.txt"),
        }
    }
}

pub fn write_run(dir: impl AsRef<Path>, sim: &Simulation) -> Result<RunFiles, SimError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = RunFiles::in_dir(dir);
    let mut w = BufWriter::new(File::create(&files.events)?);
    sim.log.write_jsonl(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(&files.metrics)?);
    sim.metrics.write_jsonl(&mut w)?;
    w.flush()?;
    sim.metrics.write_summary_csv(File::create(&files.summary)?)?;
    let mut w = BufWriter::new(File::create(&files.edges)?);
    sim.graph.write_edge_list(&mut w)?;
    w.flush()?;
    fs::write(&files.digest, format!("{}\n", sim.log.digest()))?;
    Ok(files)
}

/// Reads a run directory back and checks the log against its recorded digest.
pub fn load_run(dir: impl AsRef<Path>) -> Result<(EventLog, MetricsReport), SimError> {
    let files = RunFiles::in_dir(dir.as_ref());
    let log = EventLog::read_jsonl(BufReader::new(File::open(&files.events)?))?;
    let metrics = MetricsReport::read_jsonl(BufReader::new(File::open(&files.metrics)?))?;
    let recorded = fs::read_to_string(&files.digest)?;
    let actual = log.digest().to_hex();
    if recorded.trim() != actual || metrics.metadata.log_digest != actual {
        return Err(SimError::Io(format!("{}: event log does not match its digest", files.events.display())));
    }
    Ok((log, metrics))
}
