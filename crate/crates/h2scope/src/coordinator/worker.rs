//! Worker runtime: pulls tasks from the master, probes the hosts with
//! bounded parallelism, and reports results. Fault-injection quirks let
//! tests model crashed and duplicate-happy workers.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpStream;
use tokio::sync::Semaphore;

use super::wire::{self, Message, Payload, WireError};
use crate::prober::ProbeRecord;

#[derive(Debug, Clone)]
pub struct WorkerQuirks {
    /// Send each report this many times (duplicate injection). Zero with
    /// `swallow_reports` unset is normalized to one.
    pub report_copies: usize,
    /// Complete tasks but never report them (a crashed/silent worker).
    pub swallow_reports: bool,
    /// Stop asking for work after this many tasks.
    pub max_tasks: Option<usize>,
}

impl Default for WorkerQuirks {
    fn default() -> Self {
        WorkerQuirks {
            report_copies: 1,
            swallow_reports: false,
            max_tasks: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub worker_id: String,
    /// Self-reported health sent with every Hello.
    pub free_memory_mb: u64,
    pub cpu_load_pct: f64,
    /// Concurrent probes within one task.
    pub concurrency: usize,
    /// Backoff between Hellos when the master has nothing yet.
    pub poll_interval: Duration,
    pub quirks: WorkerQuirks,
}

impl WorkerConfig {
    pub fn new(worker_id: impl Into<String>) -> WorkerConfig {
        let (free_memory_mb, cpu_load_pct) = detect_health();
        WorkerConfig {
            worker_id: worker_id.into(),
            free_memory_mb,
            cpu_load_pct,
            concurrency: 10,
            poll_interval: Duration::from_millis(200),
            quirks: WorkerQuirks::default(),
        }
    }
}

#[derive(Debug, Default)]
pub struct WorkerStats {
    pub tasks_completed: usize,
    pub reports_sent: usize,
    pub reports_accepted: usize,
}

/// Best-effort health self-report from /proc; defaults keep a worker
/// eligible on platforms where /proc is unavailable.
pub fn detect_health() -> (u64, f64) {
    let free_memory_mb = std::fs::read_to_string("/proc/meminfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("MemAvailable:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|kb| kb.parse::<u64>().ok())
                .map(|kb| kb / 1024)
        })
        .unwrap_or(1024);
    let cpu_load_pct = std::fs::read_to_string("/proc/loadavg")
        .ok()
        .and_then(|text| {
            text.split_whitespace()
                .next()
                .and_then(|l| l.parse::<f64>().ok())
        })
        .map(|load1| {
            let cores = std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1) as f64;
            (load1 / cores * 100.0).min(100.0)
        })
        .unwrap_or(0.0);
    (free_memory_mb, cpu_load_pct)
}

/// Connects to the master at `addr` and works until told the run is done.
/// `probe` produces one record per host; it must not panic.
pub async fn run_worker<P, Fut>(
    addr: SocketAddr,
    cfg: WorkerConfig,
    probe: P,
) -> Result<WorkerStats, WireError>
where
    P: Fn(String) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = ProbeRecord> + Send + 'static,
{
    let probe = Arc::new(probe);
    let mut stream = TcpStream::connect(addr).await?;
    let mut stats = WorkerStats::default();
    loop {
        if cfg
            .quirks
            .max_tasks
            .is_some_and(|max| stats.tasks_completed >= max)
        {
            // Modeling a worker that stops participating: no Bye, no close
            // handshake, just silence.
            return Ok(stats);
        }
        let hello = Message::new(
            &cfg.worker_id,
            Payload::Hello {
                free_memory_mb: cfg.free_memory_mb,
                cpu_load_pct: cfg.cpu_load_pct,
            },
        );
        match wire::write_message(&mut stream, &hello).await {
            Ok(()) => {}
            // The master tearing the connection down after completion is a
            // normal end of the run.
            Err(WireError::Io(_)) => return Ok(stats),
            Err(e) => return Err(e),
        }
        match wire::read_message(&mut stream).await {
            Ok(msg) => match msg.payload {
                Payload::Task { task_id, hosts } => {
                    let records = probe_all(&probe, hosts, cfg.concurrency).await;
                    stats.tasks_completed += 1;
                    if cfg.quirks.swallow_reports {
                        continue;
                    }
                    let copies = cfg.quirks.report_copies.max(1);
                    for _ in 0..copies {
                        let report = Message::new(
                            &cfg.worker_id,
                            Payload::Report {
                                task_id,
                                records: records.clone(),
                            },
                        );
                        match wire::write_message(&mut stream, &report).await {
                            Ok(()) => {}
                            Err(WireError::Io(_)) => return Ok(stats),
                            Err(e) => return Err(e),
                        }
                        stats.reports_sent += 1;
                        match wire::read_message(&mut stream).await {
                            Ok(Message {
                                payload: Payload::Ack { accepted, .. },
                                ..
                            }) => {
                                if accepted {
                                    stats.reports_accepted += 1;
                                }
                            }
                            Ok(_) => {}
                            Err(WireError::Io(_)) => return Ok(stats),
                            Err(e) => return Err(e),
                        }
                    }
                }
                Payload::NoTask { done: true } => {
                    let _ = wire::write_message(
                        &mut stream,
                        &Message::new(&cfg.worker_id, Payload::Bye),
                    )
                    .await;
                    return Ok(stats);
                }
                Payload::NoTask { done: false } => {
                    tokio::time::sleep(cfg.poll_interval).await;
                }
                Payload::Bye => return Ok(stats),
                Payload::Hello { .. } | Payload::Report { .. } | Payload::Ack { .. } => {
                    return Ok(stats)
                }
            },
            // Master closing the socket after completion is a normal end.
            Err(WireError::Io(_)) => return Ok(stats),
            Err(e) => return Err(e),
        }
    }
}

async fn probe_all<P, Fut>(probe: &Arc<P>, hosts: Vec<String>, concurrency: usize) -> Vec<ProbeRecord>
where
    P: Fn(String) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = ProbeRecord> + Send + 'static,
{
    let semaphore = Arc::new(Semaphore::new(concurrency.max(1)));
    let mut join = tokio::task::JoinSet::new();
    for (idx, host) in hosts.into_iter().enumerate() {
        let probe = probe.clone();
        let semaphore = semaphore.clone();
        join.spawn(async move {
            let _permit = semaphore.acquire().await.expect("semaphore open");
            (idx, probe(host).await)
        });
    }
    let mut out = Vec::new();
    while let Some(res) = join.join_next().await {
        out.push(res.expect("probe futures never panic"));
    }
    out.sort_by_key(|(idx, _)| *idx);
    out.into_iter().map(|(_, r)| r).collect()
}
