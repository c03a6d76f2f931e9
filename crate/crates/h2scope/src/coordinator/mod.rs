//! Master/worker coordination for large measurement campaigns: chunked task
//! distribution, health-gated pull scheduling, adaptive straggler
//! reassignment, first-writer-wins deduplication, and a crash-safe record
//! log on the master.

pub mod log;
pub mod master;
pub mod scheduler;
pub mod wire;
pub mod worker;

pub use log::{LogEntry, RecordLog};
pub use master::{run_master, MasterConfig, MasterError, MasterOutcome};
pub use scheduler::{
    chunk_targets, Scheduler, SchedulerConfig, SchedulerError, TaskSpec, WorkerHealth,
};
pub use wire::{Message, Payload, WireError, WIRE_PROTOCOL_VERSION};
pub use worker::{run_worker, WorkerConfig, WorkerQuirks, WorkerStats};
