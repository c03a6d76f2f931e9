//! Master-side scheduling state machine: chunking, pull-based dispatch,
//! adaptive straggler timeout, and first-writer-wins deduplication.
//!
//! All mutations are applied in a total order by the caller (the master
//! serializes them behind one lock); this module holds no synchronization
//! of its own and no clock — `Instant`s come in from outside, which also
//! makes simulated-time tests trivial.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TaskId = u64;

/// The serializable part of a task: what goes on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub hosts: Vec<String>,
}

/// A task handed to a specific worker at a specific time.
#[derive(Debug, Clone)]
pub struct TaskAssignment {
    pub task_id: TaskId,
    pub hosts: Arc<Vec<String>>,
    pub issued_at: Instant,
    pub worker_id: String,
}

/// Self-reported worker health; the master trusts it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerHealth {
    pub worker_id: String,
    pub free_memory_mb: u64,
    pub cpu_load_pct: f64,
    pub reachable: bool,
}

impl WorkerHealth {
    /// Reliability gate: enough memory, low load, reachable.
    pub fn eligible(&self) -> bool {
        self.free_memory_mb >= 500 && self.cpu_load_pct < 30.0 && self.reachable
    }
}

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    pub chunk_size: usize,
    /// T before any completion exists.
    pub bootstrap_timeout: Duration,
    /// Floor on T, preventing reassignment storms after anomalously fast
    /// early tasks.
    pub timeout_floor: Duration,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            chunk_size: 100,
            bootstrap_timeout: Duration::from_secs(300),
            timeout_floor: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("empty target list")]
    EmptyInput,
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("report from worker {worker_id} was never assigned task {task_id}")]
    UnassignedWorker { task_id: TaskId, worker_id: String },
    #[error("report does not cover the task's hosts exactly")]
    IncompleteCoverage,
}

/// What the master should do with a report.
#[derive(Debug, PartialEq, Eq)]
pub enum ReportOutcome {
    /// First report for the task: persist its records.
    Persisted,
    /// The task was already completed; acknowledge and discard.
    DuplicateDiscarded,
}

#[derive(Debug, Clone)]
struct Assignment {
    worker_id: String,
    issued_at: Instant,
    superseded: bool,
}

#[derive(Debug)]
struct InFlight {
    spec: TaskSpec,
    assignments: Vec<Assignment>,
}

/// Serializable scheduler state for snapshot compaction. In-flight tasks are
/// folded back into pending: after a crash their workers are gone anyway.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchedulerSnapshot {
    pub pending: Vec<TaskSpec>,
    pub completed: Vec<TaskId>,
    pub completed_hosts: usize,
    pub duration_us: Vec<u64>,
    pub total_hosts: usize,
}

pub struct Scheduler {
    cfg: SchedulerConfig,
    pending: VecDeque<TaskSpec>,
    /// Tasks superseded by the straggler pass, awaiting reissue. Reissue
    /// beats fresh pending work so stragglers cannot starve.
    reassign_queue: VecDeque<TaskId>,
    in_flight: HashMap<TaskId, InFlight>,
    completed: HashMap<TaskId, usize>, // task -> host count
    durations: Vec<Duration>,
    total_hosts: usize,
}

/// Splits a deduplicated host list into order-preserving chunks of at most
/// `chunk_size`; all but possibly the last are full.
pub fn chunk_targets(hosts: &[String], chunk_size: usize) -> Result<Vec<TaskSpec>, SchedulerError> {
    if hosts.is_empty() {
        return Err(SchedulerError::EmptyInput);
    }
    assert!(chunk_size >= 1);
    Ok(hosts
        .chunks(chunk_size)
        .enumerate()
        .map(|(i, chunk)| TaskSpec {
            task_id: i as TaskId + 1,
            hosts: chunk.to_vec(),
        })
        .collect())
}

impl Scheduler {
    pub fn new(hosts: &[String], cfg: SchedulerConfig) -> Result<Scheduler, SchedulerError> {
        let chunks = chunk_targets(hosts, cfg.chunk_size)?;
        Ok(Scheduler {
            cfg,
            pending: chunks.into(),
            reassign_queue: VecDeque::new(),
            in_flight: HashMap::new(),
            completed: HashMap::new(),
            durations: Vec::new(),
            total_hosts: hosts.len(),
        })
    }

    /// The adaptive straggler timeout T: mean completion time, floored, or
    /// the bootstrap value before any completion exists.
    pub fn timeout(&self) -> Duration {
        if self.durations.is_empty() {
            return self.cfg.bootstrap_timeout;
        }
        let sum: Duration = self.durations.iter().sum();
        let mean = sum / self.durations.len() as u32;
        mean.max(self.cfg.timeout_floor)
    }

    /// Mean completion time with no floor applied (reporting only).
    pub fn mean_completion(&self) -> Option<Duration> {
        if self.durations.is_empty() {
            return None;
        }
        Some(self.durations.iter().sum::<Duration>() / self.durations.len() as u32)
    }

    /// Pull-based dispatch: an eligible worker gets the next task, reissues
    /// first. Ineligible workers get nothing.
    pub fn next_task(&mut self, health: &WorkerHealth, now: Instant) -> Option<TaskAssignment> {
        if !health.eligible() {
            return None;
        }
        // Reissue superseded stragglers before fresh work.
        while let Some(task_id) = self.reassign_queue.pop_front() {
            if let Some(entry) = self.in_flight.get_mut(&task_id) {
                entry.assignments.push(Assignment {
                    worker_id: health.worker_id.clone(),
                    issued_at: now,
                    superseded: false,
                });
                return Some(TaskAssignment {
                    task_id,
                    hosts: Arc::new(entry.spec.hosts.clone()),
                    issued_at: now,
                    worker_id: health.worker_id.clone(),
                });
            }
        }
        let spec = self.pending.pop_front()?;
        let assignment = TaskAssignment {
            task_id: spec.task_id,
            hosts: Arc::new(spec.hosts.clone()),
            issued_at: now,
            worker_id: health.worker_id.clone(),
        };
        self.in_flight.insert(
            spec.task_id,
            InFlight {
                spec,
                assignments: vec![Assignment {
                    worker_id: health.worker_id.clone(),
                    issued_at: now,
                    superseded: false,
                }],
            },
        );
        Some(assignment)
    }

    /// Applies a worker report. First writer wins: duplicates for completed
    /// tasks are acknowledged but discarded; reports that do not cover the
    /// task's hosts exactly are rejected and the task stays in flight.
    pub fn handle_report(
        &mut self,
        task_id: TaskId,
        worker_id: &str,
        covered_hosts: &[String],
        now: Instant,
    ) -> Result<ReportOutcome, SchedulerError> {
        if self.completed.contains_key(&task_id) {
            return Ok(ReportOutcome::DuplicateDiscarded);
        }
        let entry = self
            .in_flight
            .get(&task_id)
            .ok_or(SchedulerError::UnknownTask(task_id))?;
        let assignment = entry
            .assignments
            .iter()
            .rev()
            .find(|a| a.worker_id == worker_id)
            .ok_or_else(|| SchedulerError::UnassignedWorker {
                task_id,
                worker_id: worker_id.to_string(),
            })?;
        let expected: HashSet<&str> = entry.spec.hosts.iter().map(|h| h.as_str()).collect();
        let got: HashSet<&str> = covered_hosts.iter().map(|h| h.as_str()).collect();
        if expected != got {
            return Err(SchedulerError::IncompleteCoverage);
        }
        let duration = now.saturating_duration_since(assignment.issued_at);
        let entry = self.in_flight.remove(&task_id).expect("checked above");
        self.completed.insert(task_id, entry.spec.hosts.len());
        self.reassign_queue.retain(|t| *t != task_id);
        self.durations.push(duration);
        Ok(ReportOutcome::Persisted)
    }

    /// Supersedes every in-flight assignment older than T and queues the
    /// task for reissue. Late reports from superseded workers remain
    /// acceptable under first-writer-wins.
    pub fn reassign_stragglers(&mut self, now: Instant) -> Vec<TaskSpec> {
        let timeout = self.timeout();
        let mut reissued = Vec::new();
        for (task_id, entry) in self.in_flight.iter_mut() {
            let all_overdue = entry
                .assignments
                .iter()
                .all(|a| a.superseded || now.saturating_duration_since(a.issued_at) > timeout);
            if all_overdue && !self.reassign_queue.contains(task_id) {
                for a in entry.assignments.iter_mut() {
                    a.superseded = true;
                }
                self.reassign_queue.push_back(*task_id);
                reissued.push(entry.spec.clone());
            }
        }
        reissued
    }

    pub fn is_complete(&self) -> bool {
        self.pending.is_empty() && self.in_flight.is_empty()
    }

    /// Host counts per task set; their sum always equals the input size.
    pub fn host_counts(&self) -> (usize, usize, usize) {
        let pending: usize = self.pending.iter().map(|t| t.hosts.len()).sum();
        let in_flight: usize = self.in_flight.values().map(|t| t.spec.hosts.len()).sum();
        let completed: usize = self.completed.values().sum();
        (pending, in_flight, completed)
    }

    pub fn total_hosts(&self) -> usize {
        self.total_hosts
    }

    pub fn to_snapshot(&self) -> SchedulerSnapshot {
        let mut pending: Vec<TaskSpec> = self.pending.iter().cloned().collect();
        // In-flight work is not durable across a crash; fold it into pending.
        pending.extend(self.in_flight.values().map(|e| e.spec.clone()));
        SchedulerSnapshot {
            pending,
            completed: self.completed.keys().copied().collect(),
            completed_hosts: self.completed.values().sum(),
            duration_us: self.durations.iter().map(|d| d.as_micros() as u64).collect(),
            total_hosts: self.total_hosts,
        }
    }

    pub fn from_snapshot(snapshot: SchedulerSnapshot, cfg: SchedulerConfig) -> Scheduler {
        // Completed host counts per task are not retained individually in
        // the snapshot; distribute the aggregate so the conservation
        // invariant keeps holding.
        let completed_tasks = snapshot.completed.len().max(1);
        let per_task = snapshot.completed_hosts / completed_tasks;
        let mut completed: HashMap<TaskId, usize> =
            snapshot.completed.iter().map(|t| (*t, per_task)).collect();
        let remainder = snapshot.completed_hosts - per_task * completed.len();
        if let Some(first) = snapshot.completed.first() {
            *completed.get_mut(first).expect("just inserted") += remainder;
        }
        Scheduler {
            cfg,
            pending: snapshot.pending.into(),
            reassign_queue: VecDeque::new(),
            in_flight: HashMap::new(),
            completed,
            durations: snapshot
                .duration_us
                .into_iter()
                .map(Duration::from_micros)
                .collect(),
            total_hosts: snapshot.total_hosts,
        }
    }
}
