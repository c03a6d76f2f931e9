//! Crash-safe persistence for the master: an append-only ndjson record log
//! plus periodic snapshot compaction. Recovery replays the snapshot and then
//! any log entries appended after it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scheduler::SchedulerSnapshot;
use crate::prober::ProbeRecord;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt entry at line {line}: {source}")]
    Corrupt {
        line: usize,
        source: serde_json::Error,
    },
    #[error("snapshot is corrupt: {0}")]
    CorruptSnapshot(serde_json::Error),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub task_id: u64,
    pub worker_id: String,
    pub records: Vec<ProbeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotFile {
    last_seq: u64,
    scheduler: SchedulerSnapshot,
}

/// Append-only record log with snapshot compaction. Every append is flushed
/// before the caller acks the worker, so an acked report is never lost.
pub struct RecordLog {
    log_path: PathBuf,
    snapshot_path: PathBuf,
    file: File,
    next_seq: u64,
}

pub struct Recovered {
    pub log: RecordLog,
    pub snapshot: Option<SchedulerSnapshot>,
    pub entries: Vec<LogEntry>,
}

impl RecordLog {
    pub fn create(dir: &Path) -> Result<RecordLog, LogError> {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join("records.log");
        let snapshot_path = dir.join("scheduler.snapshot");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        Ok(RecordLog {
            log_path,
            snapshot_path,
            file,
            next_seq: 1,
        })
    }

    /// Loads snapshot + surviving log entries from `dir`. Entries already
    /// covered by the snapshot were compacted away; what remains is replayed.
    pub fn recover(dir: &Path) -> Result<Recovered, LogError> {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join("records.log");
        let snapshot_path = dir.join("scheduler.snapshot");

        let snapshot = match std::fs::read(&snapshot_path) {
            Ok(bytes) => {
                let parsed: SnapshotFile =
                    serde_json::from_slice(&bytes).map_err(LogError::CorruptSnapshot)?;
                Some(parsed)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let snapshot_seq = snapshot.as_ref().map(|s| s.last_seq).unwrap_or(0);

        let mut entries = Vec::new();
        let mut max_seq = snapshot_seq;
        match File::open(&log_path) {
            Ok(f) => {
                for (i, line) in BufReader::new(f).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: LogEntry = serde_json::from_str(&line)
                        .map_err(|source| LogError::Corrupt { line: i + 1, source })?;
                    max_seq = max_seq.max(entry.seq);
                    if entry.seq > snapshot_seq {
                        entries.push(entry);
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        Ok(Recovered {
            log: RecordLog {
                log_path,
                snapshot_path,
                file,
                next_seq: max_seq + 1,
            },
            snapshot: snapshot.map(|s| s.scheduler),
            entries,
        })
    }

    /// Appends and flushes one entry; returns its sequence number.
    pub fn append(
        &mut self,
        task_id: u64,
        worker_id: &str,
        records: &[ProbeRecord],
    ) -> Result<u64, LogError> {
        let seq = self.next_seq;
        let entry = LogEntry {
            seq,
            task_id,
            worker_id: worker_id.to_string(),
            records: records.to_vec(),
        };
        let mut line = serde_json::to_vec(&entry).expect("log entries always serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.next_seq += 1;
        Ok(seq)
    }

    /// Writes a snapshot atomically (tmp + rename) and truncates the log:
    /// everything up to `next_seq - 1` is now captured by the snapshot.
    pub fn compact(&mut self, scheduler: &SchedulerSnapshot) -> Result<(), LogError> {
        let snap = SnapshotFile {
            last_seq: self.next_seq - 1,
            scheduler: scheduler.clone(),
        };
        let tmp = self.snapshot_path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(&snap).expect("snapshot serializes"))?;
            f.sync_data()?;
        }
        std::fs::rename(&tmp, &self.snapshot_path)?;
        self.file = File::create(&self.log_path)?; // truncate
        Ok(())
    }
}
