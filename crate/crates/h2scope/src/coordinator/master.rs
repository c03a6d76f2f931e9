//! Master runtime: owns the scheduler and the record log, serves workers
//! over the wire protocol, and runs the periodic straggler pass.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{Mutex, Notify};

use super::log::{LogError, RecordLog};
use super::scheduler::{ReportOutcome, Scheduler, SchedulerConfig, SchedulerError, WorkerHealth};
use super::wire::{self, Message, Payload, WireError};
use crate::prober::ProbeRecord;

#[derive(Debug, Clone)]
pub struct MasterConfig {
    pub scheduler: SchedulerConfig,
    /// Directory for the record log and snapshots.
    pub data_dir: PathBuf,
    /// How often the straggler pass runs.
    pub reassign_interval: Duration,
    /// Snapshot-compact the log after this many accepted reports.
    pub compact_every: u64,
}

impl Default for MasterConfig {
    fn default() -> Self {
        MasterConfig {
            scheduler: SchedulerConfig::default(),
            data_dir: PathBuf::from("h2scope-master"),
            reassign_interval: Duration::from_millis(100),
            compact_every: 64,
        }
    }
}

#[derive(Debug)]
pub struct MasterOutcome {
    /// Every accepted probe record, first writer wins.
    pub records: Vec<ProbeRecord>,
    pub tasks_completed: usize,
    pub reassignments: u64,
    /// Mean task completion time once at least one task finished.
    pub mean_completion: Option<Duration>,
}

struct MasterState {
    scheduler: Scheduler,
    log: RecordLog,
    records: Vec<ProbeRecord>,
    reassignments: u64,
    accepted_since_compact: u64,
}

/// Runs a measurement campaign over `hosts` on an already-bound listener and
/// returns once every task has been completed and persisted.
pub async fn run_master(
    listener: TcpListener,
    hosts: Vec<String>,
    cfg: MasterConfig,
) -> Result<MasterOutcome, MasterError> {
    let scheduler = Scheduler::new(&hosts, cfg.scheduler.clone())?;
    let log = RecordLog::create(&cfg.data_dir)?;
    let state = Arc::new(Mutex::new(MasterState {
        scheduler,
        log,
        records: Vec::new(),
        reassignments: 0,
        accepted_since_compact: 0,
    }));
    let done = Arc::new(Notify::new());

    let mut ticker = tokio::time::interval(cfg.reassign_interval);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut connections = tokio::task::JoinSet::new();
    loop {
        {
            let st = state.lock().await;
            if st.scheduler.is_complete() {
                break;
            }
        }
        tokio::select! {
            accepted = listener.accept() => {
                let (stream, _) = accepted?;
                let state = state.clone();
                let done = done.clone();
                let compact_every = cfg.compact_every;
                connections.spawn(async move {
                    let _ = serve_worker(stream, state, done, compact_every).await;
                });
            }
            _ = ticker.tick() => {
                let mut st = state.lock().await;
                let reissued = st.scheduler.reassign_stragglers(Instant::now());
                st.reassignments += reissued.len() as u64;
            }
            _ = done.notified() => {}
        }
    }
    // Let in-flight connections finish their final exchanges.
    connections.abort_all();
    while connections.join_next().await.is_some() {}

    let mut st = state.lock().await;
    let snapshot = st.scheduler.to_snapshot();
    st.log.compact(&snapshot)?;
    let (_, _, completed_hosts) = st.scheduler.host_counts();
    debug_assert_eq!(completed_hosts, st.scheduler.total_hosts());
    Ok(MasterOutcome {
        records: std::mem::take(&mut st.records),
        tasks_completed: snapshot.completed.len(),
        reassignments: st.reassignments,
        mean_completion: st.scheduler.mean_completion(),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum MasterError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Log(#[from] LogError),
}

async fn serve_worker(
    mut stream: TcpStream,
    state: Arc<Mutex<MasterState>>,
    done: Arc<Notify>,
    compact_every: u64,
) -> Result<(), WireError> {
    loop {
        let msg = match wire::read_message(&mut stream).await {
            Ok(m) => m,
            Err(WireError::Io(_)) => return Ok(()), // worker went away
            Err(e) => return Err(e),
        };
        let worker_id = msg.worker_id.clone();
        match msg.payload {
            Payload::Hello {
                free_memory_mb,
                cpu_load_pct,
            } => {
                let health = WorkerHealth {
                    worker_id: worker_id.clone(),
                    free_memory_mb,
                    cpu_load_pct,
                    reachable: true,
                };
                let mut st = state.lock().await;
                let reply = match st.scheduler.next_task(&health, Instant::now()) {
                    Some(assignment) => Payload::Task {
                        task_id: assignment.task_id,
                        hosts: assignment.hosts.as_ref().clone(),
                    },
                    None => Payload::NoTask {
                        done: st.scheduler.is_complete(),
                    },
                };
                drop(st);
                wire::write_message(&mut stream, &Message::new("master", reply)).await?;
            }
            Payload::Report { task_id, records } => {
                let covered: Vec<String> = records.iter().map(|r| r.host.clone()).collect();
                let mut st = state.lock().await;
                let outcome =
                    st.scheduler
                        .handle_report(task_id, &worker_id, &covered, Instant::now());
                let accepted = match outcome {
                    Ok(ReportOutcome::Persisted) => {
                        // Persist before acking so an acked report survives
                        // a master crash.
                        if st.log.append(task_id, &worker_id, &records).is_err() {
                            false
                        } else {
                            st.records.extend(records);
                            st.accepted_since_compact += 1;
                            if st.accepted_since_compact >= compact_every {
                                let snap = st.scheduler.to_snapshot();
                                let _ = st.log.compact(&snap);
                                st.accepted_since_compact = 0;
                            }
                            true
                        }
                    }
                    // Acknowledge so the worker stops retrying, but discard.
                    Ok(ReportOutcome::DuplicateDiscarded) => true,
                    Err(_) => false,
                };
                let complete = st.scheduler.is_complete();
                drop(st);
                wire::write_message(
                    &mut stream,
                    &Message::new("master", Payload::Ack { task_id, accepted }),
                )
                .await?;
                if complete {
                    done.notify_waiters();
                }
            }
            Payload::Bye => return Ok(()),
            // Workers never send master-side payloads; drop the connection.
            Payload::Task { .. } | Payload::NoTask { .. } | Payload::Ack { .. } => return Ok(()),
        }
    }
}
