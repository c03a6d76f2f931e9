//! Master/worker coordination over real sockets with synthetic probing.

use std::net::SocketAddr;
use std::time::Duration;

use h2scope::coordinator::{
    run_master, run_worker, MasterConfig, SchedulerConfig, WorkerConfig, WorkerQuirks,
};
use h2scope::prober::ProbeRecord;

fn hosts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("host{i}.test")).collect()
}

async fn fake_probe(host: String) -> ProbeRecord {
    // Tiny jitter so task durations are not all identical.
    tokio::time::sleep(Duration::from_millis(1)).await;
    ProbeRecord::empty_for_test(&host)
}

fn test_master_cfg(dir: &std::path::Path, chunk_size: usize) -> MasterConfig {
    MasterConfig {
        scheduler: SchedulerConfig {
            chunk_size,
            bootstrap_timeout: Duration::from_secs(2),
            timeout_floor: Duration::from_millis(500),
        },
        data_dir: dir.to_path_buf(),
        reassign_interval: Duration::from_millis(50),
        compact_every: 4,
    }
}

fn worker_cfg(id: &str, quirks: WorkerQuirks) -> WorkerConfig {
    WorkerConfig {
        free_memory_mb: 2048,
        cpu_load_pct: 5.0,
        poll_interval: Duration::from_millis(50),
        quirks,
        ..WorkerConfig::new(id)
    }
}

#[tokio::test]
async fn full_campaign_with_healthy_workers() {
    let dir = tempfile::tempdir().unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let targets = hosts(1000);
    let master = tokio::spawn(run_master(listener, targets.clone(), test_master_cfg(dir.path(), 100)));

    let mut workers = Vec::new();
    for i in 0..5 {
        workers.push(tokio::spawn(run_worker(
            addr,
            worker_cfg(&format!("w{i}"), WorkerQuirks::default()),
            fake_probe,
        )));
    }
    let outcome = master.await.unwrap().unwrap();
    assert_eq!(outcome.tasks_completed, 10);
    assert_eq!(outcome.records.len(), 1000);
    let mut seen: Vec<&str> = outcome.records.iter().map(|r| r.host.as_str()).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 1000, "exactly one record per host");
    for w in workers {
        let _ = w.await;
    }
}

#[tokio::test]
async fn silent_and_duplicating_workers_cannot_corrupt_results() {
    let dir = tempfile::tempdir().unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let targets = hosts(300);
    let master = tokio::spawn(run_master(listener, targets.clone(), test_master_cfg(dir.path(), 50)));

    // One worker takes a task and never reports (a crash), one reports every
    // task twice, three behave.
    let mut workers = Vec::new();
    workers.push(tokio::spawn(run_worker(
        addr,
        worker_cfg(
            "silent",
            WorkerQuirks {
                swallow_reports: true,
                max_tasks: Some(1),
                ..WorkerQuirks::default()
            },
        ),
        fake_probe,
    )));
    workers.push(tokio::spawn(run_worker(
        addr,
        worker_cfg(
            "duper",
            WorkerQuirks {
                report_copies: 2,
                ..WorkerQuirks::default()
            },
        ),
        fake_probe,
    )));
    for i in 0..3 {
        workers.push(tokio::spawn(run_worker(
            addr,
            worker_cfg(&format!("w{i}"), WorkerQuirks::default()),
            fake_probe,
        )));
    }

    let outcome = master.await.unwrap().unwrap();
    assert_eq!(outcome.records.len(), 300);
    let mut seen: Vec<&str> = outcome.records.iter().map(|r| r.host.as_str()).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 300);
    // the silent worker's task must have been reassigned after the timeout
    assert!(outcome.reassignments >= 1);
    for w in workers {
        let _ = w.await;
    }
}

#[tokio::test]
async fn overloaded_worker_is_never_scheduled() {
    let dir = tempfile::tempdir().unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let master = tokio::spawn(run_master(listener, hosts(100), test_master_cfg(dir.path(), 50)));

    let overloaded = tokio::spawn(run_worker(
        addr,
        WorkerConfig {
            cpu_load_pct: 45.0,
            ..worker_cfg("busy", WorkerQuirks::default())
        },
        fake_probe,
    ));
    // give the overloaded worker a head start asking for work
    tokio::time::sleep(Duration::from_millis(150)).await;
    let healthy = tokio::spawn(run_worker(
        addr,
        worker_cfg("ok", WorkerQuirks::default()),
        fake_probe,
    ));

    let outcome = master.await.unwrap().unwrap();
    assert_eq!(outcome.records.len(), 100);
    let healthy_stats = healthy.await.unwrap().unwrap();
    assert_eq!(healthy_stats.tasks_completed, 2);
    overloaded.abort();
    let _ = overloaded.await;
}

#[tokio::test]
async fn master_log_survives_for_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let master = tokio::spawn(run_master(listener, hosts(20), test_master_cfg(dir.path(), 10)));
    let worker = tokio::spawn(run_worker(
        addr,
        worker_cfg("w0", WorkerQuirks::default()),
        fake_probe,
    ));
    let outcome = master.await.unwrap().unwrap();
    assert_eq!(outcome.records.len(), 20);
    let _ = worker.await;

    let recovered = h2scope::coordinator::RecordLog::recover(dir.path()).unwrap();
    let snapshot = recovered.snapshot.expect("final compaction writes a snapshot");
    assert_eq!(snapshot.completed_hosts, 20);
    assert!(snapshot.pending.is_empty());
    // everything was compacted into the snapshot
    assert!(recovered.entries.is_empty());
}
