//! Command-line surface.
//!
//! Exit codes: 0 on full success, 1 when the run finished but some targets
//! failed (partial results were still written), 2 on fatal errors.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use url::Url;

use crate::analyzer;
use crate::bench::{self, NetworkScenario, ShellDriver};
use crate::coordinator::{self, MasterConfig, SchedulerConfig, WorkerConfig};
use crate::fetcher::{fetch_page, FetchConfig, PageSnapshot};
use crate::fixtures::{PageFixture, ShimConfig};
use crate::prober::{probe_host, ProbeConfig, ProbeRecord};
use crate::protocol::HttpVersion;
use crate::report::{adoption_series, export_reports, ReportBundle};
use crate::verifier::{verify_many, VerdictRecord, VerifyConfig};

#[derive(Parser)]
#[command(name = "h2scope", version, about = "HTTP/2 adoption and performance measurement")]
pub struct Cli {
    /// Output file or directory (command-dependent); "-" or absent = stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// trace, debug, info, warn, error
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    /// Validate the schema_version of every record read from input files.
    #[arg(long, global = true)]
    schema_check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discover announced protocols, h2c upgrade, and QUIC advertisement.
    Probe(ProbeArgs),
    /// Check whether announcing hosts actually serve over HTTP/2.
    Verify(VerifyArgs),
    /// Download a full page over one protocol and record the accounting.
    Fetch(FetchArgs),
    /// Derive composition metrics and stability from page snapshots.
    Analyze(AnalyzeArgs),
    /// Run the PLT matrix across network scenarios.
    Bench(BenchArgs),
    /// Fold probe/verdict/bench records into adoption and PLT reports.
    Report(ReportArgs),
    /// Run the campaign master.
    Master(MasterArgs),
    /// Run a probing worker against a master.
    Worker(WorkerArgs),
    /// Spawn a local multi-domain page fixture and print its coordinates.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct ProbeArgs {
    /// Hostnames; use --input for files.
    hosts: Vec<String>,
    /// File with one hostname per line, or "rank,domain" CSV rows.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 443)]
    port: u16,
    /// Skip the cleartext h2c-upgrade check.
    #[arg(long)]
    no_cleartext: bool,
    /// Also probe the www.-prefixed variant when the bare name has no TLS
    /// endpoint.
    #[arg(long)]
    www_fallback: bool,
}

#[derive(Args)]
struct VerifyArgs {
    hosts: Vec<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    parallel: usize,
}

#[derive(Args)]
struct FetchArgs {
    url: Url,
    #[arg(long, default_value = "h2")]
    protocol: HttpVersion,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Page snapshots, ndjson.
    input: PathBuf,
    /// A second snapshot set to compute week-over-week stability against.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Root URLs to measure.
    sites: Vec<Url>,
    /// TOML file with [[scenario]] tables; defaults to the standard set.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Probe records, ndjson; dates come from record timestamps.
    #[arg(long)]
    probes: Vec<PathBuf>,
    /// Verdict records, ndjson.
    #[arg(long)]
    verdicts: Vec<PathBuf>,
    /// Bench results, ndjson.
    #[arg(long)]
    bench: Option<PathBuf>,
}

#[derive(Args)]
struct MasterArgs {
    #[arg(long, default_value = "127.0.0.1:7600")]
    listen: SocketAddr,
    /// Target list: hostnames or "rank,domain" CSV rows.
    #[arg(long)]
    hosts: PathBuf,
    #[arg(long, default_value = "h2scope-master")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    chunk_size: usize,
}

#[derive(Args)]
struct WorkerArgs {
    #[arg(long)]
    master: SocketAddr,
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value_t = 10)]
    concurrency: usize,
}

#[derive(Args)]
struct FixturesArgs {
    #[arg(long, default_value_t = 4)]
    domains: usize,
    #[arg(long, default_value_t = 5)]
    objects_per_domain: usize,
    #[arg(long, default_value_t = 4000)]
    object_size: usize,
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("h2scope: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(partial_failures) => {
            if partial_failures {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("h2scope: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Returns Ok(true) when the command completed with partial failures.
async fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    let out = cli.out.clone();
    let schema_check = cli.schema_check;
    match cli.command {
        Command::Probe(args) => cmd_probe(args, out).await,
        Command::Verify(args) => cmd_verify(args, out).await,
        Command::Fetch(args) => cmd_fetch(args, out).await,
        Command::Analyze(args) => cmd_analyze(args, out, schema_check).await,
        Command::Bench(args) => cmd_bench(args, out).await,
        Command::Report(args) => cmd_report(args, out, schema_check).await,
        Command::Master(args) => cmd_master(args).await,
        Command::Worker(args) => cmd_worker(args).await,
        Command::Fixtures(args) => cmd_fixtures(args).await,
    }
}

/// Reads targets from explicit args plus an optional file of hostnames or
/// "rank,domain" CSV rows. Order kept, duplicates removed.
fn load_targets(hosts: &[String], input: Option<&Path>) -> anyhow::Result<Vec<String>> {
    let mut targets: Vec<String> = hosts.to_vec();
    if let Some(path) = input {
        let file = std::fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            // Ranked CSV rows look like "1,example.com".
            let host = match line.split_once(',') {
                Some((rank, domain)) if rank.chars().all(|c| c.is_ascii_digit()) => domain,
                _ => line,
            };
            targets.push(host.trim().to_string());
        }
    }
    let mut seen = std::collections::HashSet::new();
    targets.retain(|h| seen.insert(h.clone()));
    if targets.is_empty() {
        bail!("no target hosts given");
    }
    Ok(targets)
}

fn write_ndjson<T: Serialize>(out: Option<&Path>, records: &[T]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    match out {
        Some(path) if path.as_os_str() != "-" => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, buf)?;
        }
        _ => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn read_ndjson<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = std::fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(record);
    }
    Ok(out)
}

fn check_schema_versions(versions: impl IntoIterator<Item = u32>) -> anyhow::Result<()> {
    for v in versions {
        if v != crate::SCHEMA_VERSION {
            bail!(
                "schema_version {v} does not match supported version {}",
                crate::SCHEMA_VERSION
            );
        }
    }
    Ok(())
}

async fn cmd_probe(args: ProbeArgs, out: Option<PathBuf>) -> anyhow::Result<bool> {
    let targets = load_targets(&args.hosts, args.input.as_deref())?;
    let cfg = ProbeConfig {
        cleartext_port: if args.no_cleartext { None } else { Some(80) },
        ..ProbeConfig::default()
    };
    let mut records = Vec::with_capacity(targets.len());
    for host in &targets {
        let mut record = probe_host(host, args.port, &cfg).await;
        if args.www_fallback
            && record.error == Some(crate::prober::ProbeErrorClass::NoTlsEndpoint)
            && !host.starts_with("www.")
        {
            let www = format!("www.{host}");
            let www_record = probe_host(&www, args.port, &cfg).await;
            if www_record.error.is_none() {
                record = www_record;
            }
        }
        records.push(record);
    }
    let partial = records.iter().any(|r| r.error.is_some());
    write_ndjson(out.as_deref(), &records)?;
    Ok(partial)
}

async fn cmd_verify(args: VerifyArgs, out: Option<PathBuf>) -> anyhow::Result<bool> {
    let targets = load_targets(&args.hosts, args.input.as_deref())?;
    let cfg = VerifyConfig {
        parallel: args.parallel,
        ..VerifyConfig::default()
    };
    let verdicts = verify_many(&targets, &cfg).await;
    let partial = verdicts
        .iter()
        .any(|v| v.classification == crate::verifier::Classification::NetworkError);
    write_ndjson(out.as_deref(), &verdicts)?;
    Ok(partial)
}

async fn cmd_fetch(args: FetchArgs, out: Option<PathBuf>) -> anyhow::Result<bool> {
    let cfg = FetchConfig::default();
    let mut snapshots = Vec::new();
    let mut failures = 0usize;
    for _ in 0..args.repetitions.max(1) {
        match fetch_page(&args.url, args.protocol, &cfg).await {
            Ok(snapshot) => snapshots.push(snapshot),
            Err(e) => {
                tracing::warn!("fetch failed: {e}");
                failures += 1;
            }
        }
    }
    if snapshots.is_empty() {
        bail!("every repetition failed for {}", args.url);
    }
    let partial = failures > 0 || snapshots.iter().any(|s| !s.fetch_errors.is_empty());
    write_ndjson(out.as_deref(), &snapshots)?;
    Ok(partial)
}

async fn cmd_analyze(
    args: AnalyzeArgs,
    out: Option<PathBuf>,
    schema_check: bool,
) -> anyhow::Result<bool> {
    let snapshots: Vec<PageSnapshot> = read_ndjson(&args.input)?;
    if schema_check {
        check_schema_versions(snapshots.iter().map(|s| s.schema_version))?;
    }
    let mut vectors = Vec::new();
    let mut failures = 0usize;
    for s in &snapshots {
        match analyzer::compute_metrics(s) {
            Ok(v) => vectors.push(v),
            Err(e) => {
                tracing::warn!("{}: {e}", s.root_url);
                failures += 1;
            }
        }
    }
    write_ndjson(out.as_deref(), &vectors)?;
    if let Some(baseline_path) = &args.baseline {
        let baseline_snapshots: Vec<PageSnapshot> = read_ndjson(baseline_path)?;
        if schema_check {
            check_schema_versions(baseline_snapshots.iter().map(|s| s.schema_version))?;
        }
        let baseline: Vec<_> = baseline_snapshots
            .iter()
            .filter_map(|s| analyzer::compute_metrics(s).ok())
            .collect();
        let stability = analyzer::stability_report(&baseline, &vectors)?;
        eprintln!("{}", serde_json::to_string_pretty(&stability)?);
    }
    Ok(failures > 0)
}

async fn cmd_bench(args: BenchArgs, out: Option<PathBuf>) -> anyhow::Result<bool> {
    if args.sites.is_empty() {
        bail!("no sites given");
    }
    let scenarios: Vec<NetworkScenario> = match &args.scenarios {
        Some(path) => {
            #[derive(serde::Deserialize)]
            struct File {
                scenario: Vec<NetworkScenario>,
            }
            let text = std::fs::read_to_string(path)?;
            let parsed: File = toml::from_str(&text)?;
            parsed.scenario
        }
        None => bench::standard_scenarios(),
    };
    let cfg = FetchConfig::default();
    let sites: Vec<String> = args.sites.iter().map(|u| u.to_string()).collect();
    let results = bench::run_matrix(
        &sites,
        &scenarios,
        &[HttpVersion::H1, HttpVersion::H2],
        args.repetitions.max(1),
        &ShellDriver,
        |site, protocol| {
            let cfg = cfg.clone();
            async move {
                let url = Url::parse(&site).map_err(|e| e.to_string())?;
                let snapshot = fetch_page(&url, protocol, &cfg)
                    .await
                    .map_err(|e| e.to_string())?;
                Ok(snapshot.plt_us)
            }
        },
    )
    .await?;
    let partial = results.iter().any(|r| r.failures > 0);
    write_ndjson(out.as_deref(), &results)?;
    Ok(partial)
}

async fn cmd_report(
    args: ReportArgs,
    out: Option<PathBuf>,
    schema_check: bool,
) -> anyhow::Result<bool> {
    let mut probes_by_date: HashMap<NaiveDate, Vec<ProbeRecord>> = HashMap::new();
    for path in &args.probes {
        for record in read_ndjson::<ProbeRecord>(path)? {
            if schema_check {
                check_schema_versions([record.schema_version])?;
            }
            probes_by_date
                .entry(record.timestamp.date_naive())
                .or_default()
                .push(record);
        }
    }
    let mut verdicts_by_date: HashMap<NaiveDate, Vec<VerdictRecord>> = HashMap::new();
    for path in &args.verdicts {
        for record in read_ndjson::<VerdictRecord>(path)? {
            if schema_check {
                check_schema_versions([record.schema_version])?;
            }
            verdicts_by_date
                .entry(record.timestamp.date_naive())
                .or_default()
                .push(record);
        }
    }
    let probes: Vec<_> = probes_by_date.into_iter().collect();
    let verdicts: Vec<_> = verdicts_by_date.into_iter().collect();
    let adoption = adoption_series(&probes, &verdicts)?;

    let plt_comparison = match &args.bench {
        Some(path) => {
            let results: Vec<bench::BenchResult> = read_ndjson(path)?;
            if schema_check {
                check_schema_versions(results.iter().map(|r| r.schema_version))?;
            }
            match bench::compare(&results) {
                Ok(cmp) => Some(cmp),
                Err(bench::BenchError::NoPairedResults) => None,
                Err(e) => return Err(e.into()),
            }
        }
        None => None,
    };

    let bundle = ReportBundle {
        adoption,
        plt_comparison,
        metric_summaries: Vec::new(),
    };
    let dir = out.unwrap_or_else(|| PathBuf::from("reports"));
    let written = export_reports(&dir, &bundle)?;
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(false)
}

async fn cmd_master(args: MasterArgs) -> anyhow::Result<bool> {
    let targets = load_targets(&[], Some(&args.hosts))?;
    let listener = tokio::net::TcpListener::bind(args.listen).await?;
    eprintln!("master listening on {}", listener.local_addr()?);
    let cfg = MasterConfig {
        scheduler: SchedulerConfig {
            chunk_size: args.chunk_size,
            ..SchedulerConfig::default()
        },
        data_dir: args.data_dir.clone(),
        ..MasterConfig::default()
    };
    let outcome = coordinator::run_master(listener, targets, cfg).await?;
    write_ndjson(Some(&args.data_dir.join("probes.ndjson")), &outcome.records)?;
    eprintln!(
        "completed {} tasks ({} records, {} reassignments)",
        outcome.tasks_completed,
        outcome.records.len(),
        outcome.reassignments
    );
    Ok(false)
}

async fn cmd_worker(args: WorkerArgs) -> anyhow::Result<bool> {
    let worker_id = args
        .id
        .unwrap_or_else(|| format!("worker-{}", uuid::Uuid::new_v4()));
    let cfg = WorkerConfig {
        concurrency: args.concurrency,
        ..WorkerConfig::new(worker_id)
    };
    let probe_cfg = ProbeConfig::default();
    let stats = coordinator::run_worker(args.master, cfg, move |host| {
        let probe_cfg = probe_cfg.clone();
        async move { probe_host(&host, 443, &probe_cfg).await }
    })
    .await?;
    eprintln!(
        "worker done: {} tasks, {} reports accepted",
        stats.tasks_completed, stats.reports_accepted
    );
    Ok(false)
}

async fn cmd_fixtures(args: FixturesArgs) -> anyhow::Result<bool> {
    let fixture = PageFixture::sharded(
        args.domains,
        args.objects_per_domain,
        args.object_size,
        0,
        ShimConfig::unshaped(),
    )
    .await?;
    println!("root: {}", fixture.root_url);
    for (host, addr) in &fixture.resolve {
        println!("resolve: {host} -> {addr}");
    }
    println!("serving until interrupted");
    tokio::signal::ctrl_c().await?;
    Ok(false)
}
