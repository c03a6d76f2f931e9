//! End-to-end acceptance gate. Each test covers one acceptance criterion and
//! prints a single PASS/FAIL line (visible with `--nocapture`; a FAIL also
//! fails the test).

use std::collections::HashMap;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use h2scope::analyzer::{compute_metrics, cosine_similarity, stability_report, MetricVector};
use h2scope::bench::{run_matrix, NetworkScenario, ShimDriver};
use h2scope::coordinator::{
    chunk_targets, run_master, run_worker, MasterConfig, Scheduler, SchedulerConfig, TaskSpec,
    WorkerConfig, WorkerHealth, WorkerQuirks,
};
use h2scope::fetcher::{fetch_page, FetchConfig};
use h2scope::fixtures::{CannedResponse, DomainContent, PageFixture, ShimConfig, TlsFixture};
use h2scope::prober::{probe_host, ProbeConfig, ProbeRecord};
use h2scope::protocol::{HttpVersion, ProtocolId};
use h2scope::report::adoption_series;
use h2scope::tlsutil::FixtureIdentity;
use h2scope::verifier::{verify_many, VerifyConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn verdict(n: u32, ok: bool, what: &str) -> bool {
    let status = if ok { "PASS" } else { "FAIL" };
    eprintln!("criterion {n:02}: {status} - {what}");
    ok
}

fn fast_probe_cfg(addr: std::net::SocketAddr) -> ProbeConfig {
    ProbeConfig {
        connect_timeout: Duration::from_secs(2),
        handshake_timeout: Duration::from_secs(2),
        retries: 0,
        cleartext_port: None,
        resolve_override: Some(addr),
        ..ProbeConfig::default()
    }
}

fn root_route(body: &str) -> HashMap<String, CannedResponse> {
    HashMap::from([("/".to_string(), CannedResponse::ok(body.to_string()))])
}

#[tokio::test]
async fn criterion_01_announcement_recovery() {
    let identity = FixtureIdentity::generate();
    let cases: Vec<Vec<&str>> = vec![vec!["h2", "http/1.1"], vec!["http/1.1"], vec!["h2-17"]];
    let started = Instant::now();
    let mut ok = true;
    for announce in &cases {
        let fixture = TlsFixture::spawn(&identity, announce, root_route("ok"))
            .await
            .unwrap();
        let record = probe_host("localhost", fixture.addr.port(), &fast_probe_cfg(fixture.addr)).await;
        let expected: Vec<ProtocolId> = announce
            .iter()
            .map(|t| ProtocolId::new(*t).unwrap())
            .collect();
        ok &= record.error.is_none() && record.announced == expected;
    }
    let within_budget = started.elapsed() < Duration::from_secs(5);
    ok &= within_budget;
    assert!(verdict(
        1,
        ok,
        "announced protocol lists recovered exactly, in order, within 5s"
    ));
}

#[tokio::test]
async fn criterion_02_announce_serve_gap() {
    let identity = FixtureIdentity::generate();
    // one host that really serves h2, 19 that announce h2 but 301 onto an
    // h1-only host
    let h1_target = TlsFixture::spawn(&identity, &["http/1.1"], root_route("h1 landing"))
        .await
        .unwrap();
    let mut fixtures = Vec::new();
    let serving = TlsFixture::spawn(&identity, &["h2", "http/1.1"], root_route("served over h2"))
        .await
        .unwrap();
    let mut resolve: HashMap<String, std::net::SocketAddr> = HashMap::new();
    resolve.insert("h0.fixture.test".into(), serving.addr);
    resolve.insert("h1target.fixture.test".into(), h1_target.addr);
    for i in 1..20 {
        let fixture = TlsFixture::spawn(
            &identity,
            &["h2", "http/1.1"],
            HashMap::from([(
                "/".to_string(),
                CannedResponse::redirect(301, "https://h1target.fixture.test/"),
            )]),
        )
        .await
        .unwrap();
        resolve.insert(format!("h{i}.fixture.test"), fixture.addr);
        fixtures.push(fixture);
    }

    let hosts: Vec<String> = (0..20).map(|i| format!("h{i}.fixture.test")).collect();
    let mut probes = Vec::new();
    for host in &hosts {
        probes.push(probe_host(host, 443, &fast_probe_cfg(resolve[host])).await);
    }
    let verify_cfg = VerifyConfig {
        connect_timeout: Duration::from_secs(2),
        request_timeout: Duration::from_secs(5),
        resolve: resolve.clone(),
        ..VerifyConfig::default()
    };
    let verdicts = verify_many(&hosts, &verify_cfg).await;

    let date: NaiveDate = "2015-02-01".parse().unwrap();
    let series = adoption_series(&[(date, probes)], &[(date, verdicts)]).unwrap();
    let h2_point = series.iter().find(|p| p.token == "h2").unwrap();
    let ratio = h2_point.serving_count as f64 / h2_point.announced_count as f64;
    let ok = h2_point.announced_count == 20 && h2_point.serving_count == 1 && ratio == 0.05;
    assert!(verdict(
        2,
        ok,
        "1 of 20 announcing hosts actually serves h2 (serving/announced = 0.05)"
    ));
}

#[tokio::test]
async fn criterion_03_connection_accounting() {
    let domains = 4usize;
    let per_domain = 5usize; // 20 embedded objects >= 2 * domains
    let fixture = PageFixture::sharded(domains, per_domain, 1500, 0, ShimConfig::unshaped())
        .await
        .unwrap();
    let cfg = FetchConfig {
        resolve: fixture.resolve.clone(),
        ..FetchConfig::default()
    };
    let objects_total = domains * per_domain + 1;
    let h1_upper = (objects_total).min(6 * domains);
    let mut ok = true;
    for _ in 0..20 {
        let h2 = fetch_page(&fixture.root_url, HttpVersion::H2, &cfg).await.unwrap();
        let h1 = fetch_page(&fixture.root_url, HttpVersion::H1, &cfg).await.unwrap();
        ok &= h2.connections.len() == domains;
        ok &= h1.connections.len() >= domains && h1.connections.len() <= h1_upper;
        ok &= h2.connections.len() <= h1.connections.len();
    }
    assert!(verdict(
        3,
        ok,
        "h2 opens exactly one connection per domain and never more than h1 (20 runs)"
    ));
}

#[tokio::test]
async fn criterion_04_inline_ratio() {
    // html of exactly `total` bytes with `inline` bytes of style content
    async fn load_ratio(total: usize, inline: usize) -> f64 {
        let html = if inline == 0 {
            let skeleton = "<html><head></head><body></body></html>";
            let pad = total - skeleton.len();
            format!("<html><head></head><body>{}</body></html>", "y".repeat(pad))
        } else {
            let skeleton = "<html><head><style></style></head><body></body></html>";
            let pad = total - skeleton.len() - inline;
            format!(
                "<html><head><style>{}</style></head><body>{}</body></html>",
                "x".repeat(inline),
                "y".repeat(pad)
            )
        };
        assert_eq!(html.len(), total);
        let fixture = PageFixture::spawn_with(
            &["inline.fixture.test".to_string()],
            ShimConfig::unshaped(),
            |_| {
                let mut content = DomainContent::new();
                content.insert("/".into(), ("text/html".into(), html.into()));
                vec![content]
            },
        )
        .await
        .unwrap();
        let cfg = FetchConfig {
            resolve: fixture.resolve.clone(),
            ..FetchConfig::default()
        };
        let snapshot = fetch_page(&fixture.root_url, HttpVersion::H2, &cfg).await.unwrap();
        compute_metrics(&snapshot).unwrap().inline_ratio
    }

    let total = 2000usize;
    let mut ok = true;
    for f in [0.0f64, 0.5, 0.8, 0.95] {
        let inline = (f * total as f64).round() as usize;
        let got = load_ratio(total, inline).await;
        ok &= (got - f).abs() < 1e-9;
    }
    assert!(verdict(
        4,
        ok,
        "measured inline ratio matches constructed fractions {0, 0.5, 0.8, 0.95} within 1e-9"
    ));
}

#[test]
fn criterion_05_similarity_math() {
    // independent oracle: normalize first, then dot
    fn oracle(u: &[f64], v: &[f64]) -> Option<f64> {
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            return None;
        }
        Some(
            u.iter()
                .zip(v)
                .map(|(a, b)| (a / nu) * (b / nv))
                .sum::<f64>()
                .clamp(-1.0, 1.0),
        )
    }

    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut ok = true;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=16);
        let u: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1e6)).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1e6)).collect();
        match (cosine_similarity(&u, &v), oracle(&u, &v)) {
            (Ok(got), Some(expected)) => ok &= (got - expected).abs() < 1e-9,
            (Err(_), None) => {}
            _ => ok = false,
        }
    }

    // identical measurement epochs are perfectly stable
    let week: Vec<MetricVector> = (0..8)
        .map(|i| MetricVector {
            schema_version: 1,
            site: format!("s{i}.test"),
            protocol: HttpVersion::H2,
            object_count: 10 + i,
            distinct_domains: 1 + i % 4,
            distinct_registrable: 1 + i % 3,
            mean_objects_per_domain: (10 + i) as f64 / (1 + i % 4) as f64,
            inline_ratio: 0.1 * i as f64,
            connection_count: 1 + i,
            total_bytes: 1000 * (i + 1),
            protocol_consistency: 1.0,
        })
        .collect();
    let stability = stability_report(&week, &week).unwrap();
    ok &= stability.similarity.values().all(|s| *s == 1.0);

    assert!(verdict(
        5,
        ok,
        "cosine similarity matches a brute-force oracle on 1000 random pairs; identical weeks score exactly 1.0"
    ));
}

#[tokio::test]
async fn criterion_06_added_latency_shows_in_plt() {
    let started = Instant::now();
    let base = ShimConfig::shaped(10);
    let fixture = PageFixture::sharded(3, 4, 2000, 0, base.clone()).await.unwrap();
    let cfg = FetchConfig {
        resolve: fixture.resolve.clone(),
        ..FetchConfig::default()
    };
    let driver = ShimDriver::new(fixture.shim.clone(), base);
    let scenarios = vec![
        NetworkScenario {
            label: "baseline".into(),
            bandwidth_kbps: None,
            extra_delay_ms: 0,
            loss_pct: 0.0,
            setup_hook: None,
            teardown_hook: None,
        },
        NetworkScenario {
            label: "rtt+100ms".into(),
            bandwidth_kbps: None,
            extra_delay_ms: 100,
            loss_pct: 0.0,
            setup_hook: None,
            teardown_hook: None,
        },
    ];
    let root = fixture.root_url.clone();
    let results = run_matrix(
        &[root.to_string()],
        &scenarios,
        &[HttpVersion::H1, HttpVersion::H2],
        3,
        &driver,
        |_site, protocol| {
            let cfg = cfg.clone();
            let root = root.clone();
            async move {
                fetch_page(&root, protocol, &cfg)
                    .await
                    .map(|s| s.plt_us)
                    .map_err(|e| e.to_string())
            }
        },
    )
    .await
    .unwrap();

    let mean = |scenario: &str, protocol: HttpVersion| -> f64 {
        results
            .iter()
            .find(|r| r.scenario == scenario && r.protocol == protocol)
            .and_then(|r| r.mean_plt_us())
            .unwrap_or(f64::NAN)
    };
    let mut ok = true;
    for protocol in [HttpVersion::H1, HttpVersion::H2] {
        let delta_us = mean("rtt+100ms", protocol) - mean("baseline", protocol);
        ok &= delta_us >= 100_000.0;
    }
    ok &= started.elapsed() < Duration::from_secs(120);
    assert!(verdict(
        6,
        ok,
        "adding 100ms of path latency raises mean PLT by at least 100ms for both protocols"
    ));
}

#[tokio::test]
async fn criterion_07_h2_wins_on_constrained_lossy_link() {
    let base = ShimConfig::shaped(5);
    let fixture = PageFixture::sharded(4, 5, 3000, 0, base.clone()).await.unwrap();
    fixture.shim.set_config(ShimConfig {
        bandwidth_kbps: Some(1000),
        loss_pct: 2.0,
        ..base
    });
    let cfg = FetchConfig {
        resolve: fixture.resolve.clone(),
        ..FetchConfig::default()
    };
    let mut h2_wins = 0;
    for _ in 0..10 {
        let h2 = fetch_page(&fixture.root_url, HttpVersion::H2, &cfg).await.unwrap();
        let h1 = fetch_page(&fixture.root_url, HttpVersion::H1, &cfg).await.unwrap();
        if h2.plt_us < h1.plt_us {
            h2_wins += 1;
        }
    }
    assert!(verdict(
        7,
        h2_wins >= 8,
        "h2 beats h1 on a 1Mbps / 2% loss path in at least 8 of 10 trials"
    ));
}

#[tokio::test]
async fn criterion_08_faulty_cluster_yields_one_record_per_host() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let hosts: Vec<String> = (0..1000).map(|i| format!("host{i}.test")).collect();
    let master_cfg = MasterConfig {
        scheduler: SchedulerConfig {
            chunk_size: 100,
            bootstrap_timeout: Duration::from_secs(2),
            timeout_floor: Duration::from_millis(500),
        },
        data_dir: dir.path().to_path_buf(),
        reassign_interval: Duration::from_millis(50),
        compact_every: 16,
    };
    let master = tokio::spawn(run_master(listener, hosts, master_cfg));

    async fn fake_probe(host: String) -> ProbeRecord {
        tokio::time::sleep(Duration::from_millis(1)).await;
        ProbeRecord::empty_for_test(&host)
    }
    let worker_cfg = |id: &str, quirks: WorkerQuirks| WorkerConfig {
        free_memory_mb: 2048,
        cpu_load_pct: 5.0,
        poll_interval: Duration::from_millis(50),
        quirks,
        ..WorkerConfig::new(id)
    };

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
    for w in workers {
        let _ = w.await;
    }
    let mut seen: Vec<&str> = outcome.records.iter().map(|r| r.host.as_str()).collect();
    seen.sort_unstable();
    seen.dedup();
    let ok = outcome.records.len() == 1000
        && seen.len() == 1000
        && outcome.reassignments >= 1
        && started.elapsed() < Duration::from_secs(60);
    assert!(verdict(
        8,
        ok,
        "cluster with a silent and a duplicating worker still yields exactly one record per host, with reassignment after T"
    ));
}

#[test]
fn criterion_09_scheduling_rules() {
    let mut ok = true;

    // 250 hosts chunk into 100/100/50
    let hosts: Vec<String> = (0..250).map(|i| format!("h{i}.test")).collect();
    let chunks: Vec<TaskSpec> = chunk_targets(&hosts, 100).unwrap();
    let sizes: Vec<usize> = chunks.iter().map(|c| c.hosts.len()).collect();
    ok &= sizes == vec![100, 100, 50];

    // a worker at 45% CPU is never scheduled; 500 hosts give the five tasks
    // the convergence check below consumes
    let cfg = SchedulerConfig::default();
    let many: Vec<String> = (0..500).map(|i| format!("h{i}.test")).collect();
    let mut scheduler = Scheduler::new(&many, cfg.clone()).unwrap();
    let now = Instant::now();
    let overloaded = WorkerHealth {
        worker_id: "busy".into(),
        free_memory_mb: 4096,
        cpu_load_pct: 45.0,
        reachable: true,
    };
    ok &= scheduler.next_task(&overloaded, now).is_none();

    // with constant task duration d, T equals d within five completions
    let d = Duration::from_secs(60);
    let mut clock = now;
    for i in 0..5 {
        let healthy = WorkerHealth {
            worker_id: format!("w{i}"),
            free_memory_mb: 4096,
            cpu_load_pct: 5.0,
            reachable: true,
        };
        let task = scheduler.next_task(&healthy, clock).unwrap();
        clock += d;
        scheduler
            .handle_report(task.task_id, &format!("w{i}"), &task.hosts, clock)
            .unwrap();
        ok &= scheduler.timeout() == d;
    }

    assert!(verdict(
        9,
        ok,
        "chunking is 100/100/50 for 250 hosts, overloaded workers get nothing, and T converges to the task duration"
    ));
}

#[tokio::test]
async fn criterion_10_live_smoke_probe() {
    if std::env::var("H2SCOPE_LIVE").is_err() {
        assert!(verdict(
            10,
            true,
            "live probe skipped (set H2SCOPE_LIVE=1 to probe real sites); informational only"
        ));
        return;
    }
    let sites = [
        "www.google.com",
        "www.cloudflare.com",
        "www.wikipedia.org",
        "www.github.com",
        "www.amazon.com",
    ];
    let cfg = ProbeConfig {
        connect_timeout: Duration::from_secs(5),
        handshake_timeout: Duration::from_secs(5),
        retries: 0,
        cleartext_port: None,
        ..ProbeConfig::default()
    };
    for site in sites {
        let record = probe_host(site, 443, &cfg).await;
        match record.error {
            None => eprintln!(
                "live: {site} announced {:?}",
                record
                    .announced
                    .iter()
                    .map(|t| t.as_str())
                    .collect::<Vec<_>>()
            ),
            Some(e) => eprintln!("live: {site} probe failed ({e:?}); not counted against the suite"),
        }
    }
    assert!(verdict(
        10,
        true,
        "live probe of 5 public sites completed; failures are warnings only"
    ));
}
