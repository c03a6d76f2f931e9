//! Page-load-time benchmarking: a site x scenario x protocol matrix with
//! balanced scenario setup/teardown, plus pairwise H1-vs-H2 comparison.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use futures::future::BoxFuture;
use futures::FutureExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixtures::{NetShim, ShimConfig};
use crate::protocol::HttpVersion;

/// One emulated network condition. `setup_hook`/`teardown_hook` are shell
/// commands for drivers that shape a real interface; the fixture driver
/// ignores them and reconfigures the in-process shim instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkScenario {
    pub label: String,
    #[serde(default)]
    pub bandwidth_kbps: Option<u32>,
    #[serde(default)]
    pub extra_delay_ms: u64,
    #[serde(default)]
    pub loss_pct: f64,
    #[serde(default)]
    pub setup_hook: Option<String>,
    #[serde(default)]
    pub teardown_hook: Option<String>,
}

impl NetworkScenario {
    fn plain(label: &str) -> NetworkScenario {
        NetworkScenario {
            label: label.to_string(),
            bandwidth_kbps: None,
            extra_delay_ms: 0,
            loss_pct: 0.0,
            setup_hook: None,
            teardown_hook: None,
        }
    }
}

/// The standard scenario set: unshaped baseline, a 1 Mbps link, +100 ms of
/// added latency, light loss, and a constrained lossy link.
pub fn standard_scenarios() -> Vec<NetworkScenario> {
    vec![
        NetworkScenario::plain("baseline"),
        NetworkScenario {
            bandwidth_kbps: Some(1000),
            ..NetworkScenario::plain("1mbps")
        },
        NetworkScenario {
            extra_delay_ms: 100,
            ..NetworkScenario::plain("rtt+100ms")
        },
        NetworkScenario {
            loss_pct: 0.5,
            ..NetworkScenario::plain("loss0.5pct")
        },
        NetworkScenario {
            bandwidth_kbps: Some(1000),
            loss_pct: 2.0,
            ..NetworkScenario::plain("1mbps+loss2pct")
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    #[serde(default = "crate::default_schema_version")]
    pub schema_version: u32,
    pub site: String,
    pub scenario: String,
    pub protocol: HttpVersion,
    /// One sample per successful repetition, microseconds.
    pub plt_samples_us: Vec<u64>,
    pub failures: u32,
}

impl BenchResult {
    pub fn mean_plt_us(&self) -> Option<f64> {
        if self.plt_samples_us.is_empty() {
            return None;
        }
        Some(self.plt_samples_us.iter().sum::<u64>() as f64 / self.plt_samples_us.len() as f64)
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("another benchmark run owns the network configuration")]
    AlreadyRunning,
    #[error("scenario hook failed: {0}")]
    HookFailed(String),
    #[error("no (site, scenario) pair has samples for both protocols")]
    NoPairedResults,
    #[error("empty {0} list")]
    EmptyInput(&'static str),
}

/// Applies and clears scenarios. Implementations must make `clear` safe to
/// call after a failed `apply`.
pub trait ScenarioDriver: Send + Sync {
    fn apply<'a>(&'a self, scenario: &'a NetworkScenario) -> BoxFuture<'a, Result<(), BenchError>>;
    fn clear<'a>(&'a self, scenario: &'a NetworkScenario) -> BoxFuture<'a, Result<(), BenchError>>;
}

/// Shapes a real interface by running the scenario's shell hooks.
pub struct ShellDriver;

impl ScenarioDriver for ShellDriver {
    fn apply<'a>(&'a self, scenario: &'a NetworkScenario) -> BoxFuture<'a, Result<(), BenchError>> {
        async move { run_hook(scenario.setup_hook.as_deref()).await }.boxed()
    }

    fn clear<'a>(&'a self, scenario: &'a NetworkScenario) -> BoxFuture<'a, Result<(), BenchError>> {
        async move { run_hook(scenario.teardown_hook.as_deref()).await }.boxed()
    }
}

async fn run_hook(hook: Option<&str>) -> Result<(), BenchError> {
    let Some(cmd) = hook else { return Ok(()) };
    let status = tokio::process::Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .status()
        .await
        .map_err(|e| BenchError::HookFailed(format!("{cmd}: {e}")))?;
    if status.success() {
        Ok(())
    } else {
        Err(BenchError::HookFailed(format!("{cmd}: exit {status}")))
    }
}

/// Reconfigures an in-process fixture shim instead of touching the OS.
pub struct ShimDriver {
    shim: Arc<NetShim>,
    /// Path properties (RTT, handshake cost) kept across scenarios.
    base: ShimConfig,
}

impl ShimDriver {
    pub fn new(shim: Arc<NetShim>, base: ShimConfig) -> ShimDriver {
        ShimDriver { shim, base }
    }
}

impl ScenarioDriver for ShimDriver {
    fn apply<'a>(&'a self, scenario: &'a NetworkScenario) -> BoxFuture<'a, Result<(), BenchError>> {
        async move {
            self.shim.set_config(ShimConfig {
                bandwidth_kbps: scenario.bandwidth_kbps,
                extra_delay_ms: scenario.extra_delay_ms,
                loss_pct: scenario.loss_pct,
                ..self.base.clone()
            });
            Ok(())
        }
        .boxed()
    }

    fn clear<'a>(&'a self, _scenario: &'a NetworkScenario) -> BoxFuture<'a, Result<(), BenchError>> {
        async move {
            self.shim.set_config(self.base.clone());
            Ok(())
        }
        .boxed()
    }
}

/// The whole process shares one network configuration, so only one matrix
/// run may shape it at a time.
static MATRIX_RUNNING: AtomicBool = AtomicBool::new(false);

struct MatrixGuard;

impl MatrixGuard {
    fn acquire() -> Result<MatrixGuard, BenchError> {
        MATRIX_RUNNING
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .map_err(|_| BenchError::AlreadyRunning)?;
        Ok(MatrixGuard)
    }
}

impl Drop for MatrixGuard {
    fn drop(&mut self) {
        MATRIX_RUNNING.store(false, Ordering::SeqCst);
    }
}

/// Runs the full matrix, scenario-major so each network condition is set up
/// exactly once. Within every repetition the protocols alternate, so drift
/// over time hits both equally. Failed loads are counted, never raised.
pub async fn run_matrix<M, Fut>(
    sites: &[String],
    scenarios: &[NetworkScenario],
    protocols: &[HttpVersion],
    repetitions: usize,
    driver: &dyn ScenarioDriver,
    measure: M,
) -> Result<Vec<BenchResult>, BenchError>
where
    M: Fn(String, HttpVersion) -> Fut,
    Fut: std::future::Future<Output = Result<u64, String>>,
{
    if sites.is_empty() {
        return Err(BenchError::EmptyInput("site"));
    }
    if scenarios.is_empty() {
        return Err(BenchError::EmptyInput("scenario"));
    }
    if protocols.is_empty() {
        return Err(BenchError::EmptyInput("protocol"));
    }
    let _guard = MatrixGuard::acquire()?;

    let mut results: Vec<BenchResult> = Vec::new();
    for scenario in scenarios {
        driver.apply(scenario).await?;
        let mut cells: Vec<BenchResult> = sites
            .iter()
            .flat_map(|site| {
                protocols.iter().map(|p| BenchResult {
                    schema_version: crate::SCHEMA_VERSION,
                    site: site.clone(),
                    scenario: scenario.label.clone(),
                    protocol: *p,
                    plt_samples_us: Vec::new(),
                    failures: 0,
                })
            })
            .collect();
        for (s, site) in sites.iter().enumerate() {
            for _rep in 0..repetitions {
                for (p, protocol) in protocols.iter().enumerate() {
                    let cell = &mut cells[s * protocols.len() + p];
                    match measure(site.clone(), *protocol).await {
                        Ok(plt_us) => cell.plt_samples_us.push(plt_us),
                        Err(_) => cell.failures += 1,
                    }
                }
            }
        }
        // Teardown runs even if every load failed; only a broken hook stops
        // the matrix.
        driver.clear(scenario).await?;
        results.extend(cells);
    }
    Ok(results)
}

/// Mean-PLT difference for one (site, scenario) cell, positive when H2 wins.
#[derive(Debug, Clone, Serialize)]
pub struct PltDelta {
    pub site: String,
    pub scenario: String,
    pub mean_h1_us: f64,
    pub mean_h2_us: f64,
    /// mean(H1) - mean(H2): positive means H2 loaded faster.
    pub delta_us: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub deltas: Vec<PltDelta>,
    /// Empirical CDF over all deltas: (delta_us, fraction of cells <= it).
    pub cdf: Vec<(f64, f64)>,
}

/// Pairs up H1 and H2 results per (site, scenario) and summarizes the PLT
/// differences. Input order does not matter.
pub fn compare(results: &[BenchResult]) -> Result<Comparison, BenchError> {
    use std::collections::BTreeMap;
    let mut by_cell: BTreeMap<(String, String), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in results {
        let Some(mean) = r.mean_plt_us() else { continue };
        let entry = by_cell
            .entry((r.site.clone(), r.scenario.clone()))
            .or_default();
        match r.protocol {
            HttpVersion::H1 => entry.0 = Some(mean),
            HttpVersion::H2 => entry.1 = Some(mean),
        }
    }
    let deltas: Vec<PltDelta> = by_cell
        .into_iter()
        .filter_map(|((site, scenario), pair)| match pair {
            (Some(h1), Some(h2)) => Some(PltDelta {
                site,
                scenario,
                mean_h1_us: h1,
                mean_h2_us: h2,
                delta_us: h1 - h2,
            }),
            _ => None,
        })
        .collect();
    if deltas.is_empty() {
        return Err(BenchError::NoPairedResults);
    }
    let mut sorted: Vec<f64> = deltas.iter().map(|d| d.delta_us).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut cdf = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        // one point per distinct value, at its last occurrence
        if i + 1 == sorted.len() || sorted[i + 1] != *v {
            cdf.push((*v, (i + 1) as f64 / n));
        }
    }
    Ok(Comparison { deltas, cdf })
}
