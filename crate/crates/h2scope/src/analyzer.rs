//! Composition and delivery metrics derived from page snapshots, plus the
//! cosine-similarity stability check across weeks and protocols.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fetcher::types::PageSnapshot;
use crate::protocol::HttpVersion;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyzerError {
    #[error("snapshot has no fetched objects")]
    DegenerateSnapshot,
    #[error("unknown metric: {0}")]
    UnknownMetric(String),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity undefined for zero vector")]
    ZeroVector,
    #[error("no sites present in both inputs")]
    EmptyIntersection,
    #[error("no vectors to summarize")]
    EmptyInput,
}

/// Per-site metrics for one page load. `distinct_domains` counts full
/// hostnames; `distinct_registrable` groups shard hosts under their
/// public-suffix-plus-one label. Both are emitted because "domain"
/// granularity is ambiguous in the wild.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    #[serde(default = "crate::default_schema_version")]
    pub schema_version: u32,
    pub site: String,
    pub protocol: HttpVersion,
    pub object_count: u64,
    pub distinct_domains: u64,
    pub distinct_registrable: u64,
    pub mean_objects_per_domain: f64,
    /// inline_css_js_bytes / html_bytes, clamped to [0, 1] domain by input.
    pub inline_ratio: f64,
    pub connection_count: u64,
    pub total_bytes: u64,
    /// Fraction of objects delivered over the session's selected protocol.
    pub protocol_consistency: f64,
}

/// Names accepted by [`summarize`] and the CDF exporter.
pub const METRIC_NAMES: &[&str] = &[
    "objects",
    "domains",
    "registrable_domains",
    "mean_objects_per_domain",
    "inline_ratio",
    "connections",
    "total_bytes",
    "protocol_consistency",
];

impl MetricVector {
    pub fn metric(&self, name: &str) -> Result<f64, AnalyzerError> {
        Ok(match name {
            "objects" => self.object_count as f64,
            "domains" => self.distinct_domains as f64,
            "registrable_domains" => self.distinct_registrable as f64,
            "mean_objects_per_domain" => self.mean_objects_per_domain,
            "inline_ratio" => self.inline_ratio,
            "connections" => self.connection_count as f64,
            "total_bytes" => self.total_bytes as f64,
            "protocol_consistency" => self.protocol_consistency,
            other => return Err(AnalyzerError::UnknownMetric(other.to_string())),
        })
    }
}

/// Registrable domain (public-suffix-plus-one) of a hostname, falling back
/// to the hostname itself for IPs and unlisted names.
pub fn registrable_domain(host: &str) -> String {
    psl::domain_str(host).unwrap_or(host).to_string()
}

/// Derives a [`MetricVector`] from one snapshot. The root object counts.
pub fn compute_metrics(snapshot: &PageSnapshot) -> Result<MetricVector, AnalyzerError> {
    if snapshot.objects.is_empty() {
        return Err(AnalyzerError::DegenerateSnapshot);
    }
    let hosts: HashSet<&str> = snapshot.objects.iter().map(|o| o.domain.as_str()).collect();
    let registrable: HashSet<String> = hosts.iter().map(|h| registrable_domain(h)).collect();
    let object_count = snapshot.objects.len() as u64;
    let distinct_domains = hosts.len() as u64;
    let on_protocol = snapshot
        .objects
        .iter()
        .filter(|o| o.protocol == snapshot.protocol)
        .count() as u64;
    let inline_ratio = if snapshot.html_bytes == 0 {
        0.0
    } else {
        snapshot.inline_css_js_bytes as f64 / snapshot.html_bytes as f64
    };
    Ok(MetricVector {
        schema_version: snapshot.schema_version,
        site: snapshot
            .root_url
            .host_str()
            .unwrap_or_default()
            .to_string(),
        protocol: snapshot.protocol,
        object_count,
        distinct_domains,
        distinct_registrable: registrable.len() as u64,
        mean_objects_per_domain: object_count as f64 / distinct_domains as f64,
        inline_ratio,
        connection_count: snapshot.connections.len() as u64,
        total_bytes: snapshot.total_bytes,
        protocol_consistency: on_protocol as f64 / object_count as f64,
    })
}

/// Distribution summary for one metric across sites.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub metric: String,
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    /// Nearest-rank 90th percentile.
    pub p90: f64,
    pub max: f64,
    /// (value, cumulative fraction) at every distinct value; terminal
    /// fraction is exactly 1.0.
    pub cdf_points: Vec<(f64, f64)>,
}

/// Summarizes the named metric over a set of vectors.
pub fn summarize(
    vectors: &[MetricVector],
    metric: &str,
) -> Result<DistributionSummary, AnalyzerError> {
    if vectors.is_empty() {
        return Err(AnalyzerError::EmptyInput);
    }
    let mut values = vectors
        .iter()
        .map(|v| v.metric(metric))
        .collect::<Result<Vec<f64>, _>>()?;
    values.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    let mean = values.iter().sum::<f64>() / n as f64;
    let p90 = values[nearest_rank(n, 0.90)];
    let max = values[n - 1];

    let mut cdf_points = Vec::new();
    let mut below = 0usize;
    let mut i = 0;
    while i < n {
        let v = values[i];
        let mut j = i;
        while j < n && values[j] == v {
            j += 1;
        }
        below = j;
        cdf_points.push((v, below as f64 / n as f64));
        i = j;
    }
    debug_assert_eq!(below, n);

    Ok(DistributionSummary {
        metric: metric.to_string(),
        count: n,
        median,
        mean,
        p90,
        max,
        cdf_points,
    })
}

/// Nearest-rank index (0-based) for percentile `p` over `n` sorted values.
fn nearest_rank(n: usize, p: f64) -> usize {
    let rank = (p * n as f64).ceil() as usize;
    rank.clamp(1, n) - 1
}

/// dot(u, v) / (|u| * |v|), in [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, AnalyzerError> {
    if u.len() != v.len() {
        return Err(AnalyzerError::DimensionMismatch(u.len(), v.len()));
    }
    if u.is_empty() {
        return Err(AnalyzerError::DimensionMismatch(0, 0));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(AnalyzerError::ZeroVector);
    }
    // Identical inputs are exactly self-similar; don't let rounding in the
    // norm product turn 1.0 into 0.999....
    if u == v {
        return Ok(1.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Per-metric cosine similarity between two measurement epochs, joined on
/// site. Only sites present in both inputs are compared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Number of sites present in both inputs.
    pub joined_sites: usize,
    pub similarity: BTreeMap<String, f64>,
}

pub fn stability_report(
    week_a: &[MetricVector],
    week_b: &[MetricVector],
) -> Result<StabilityReport, AnalyzerError> {
    let by_site_a: BTreeMap<&str, &MetricVector> =
        week_a.iter().map(|v| (v.site.as_str(), v)).collect();
    let by_site_b: BTreeMap<&str, &MetricVector> =
        week_b.iter().map(|v| (v.site.as_str(), v)).collect();
    let joined: Vec<&str> = by_site_a
        .keys()
        .filter(|s| by_site_b.contains_key(**s))
        .copied()
        .collect();
    if joined.is_empty() {
        return Err(AnalyzerError::EmptyIntersection);
    }
    let mut similarity = BTreeMap::new();
    for metric in METRIC_NAMES {
        let u: Vec<f64> = joined
            .iter()
            .map(|s| by_site_a[s].metric(metric))
            .collect::<Result<_, _>>()?;
        let v: Vec<f64> = joined
            .iter()
            .map(|s| by_site_b[s].metric(metric))
            .collect::<Result<_, _>>()?;
        let sim = match cosine_similarity(&u, &v) {
            Ok(s) => s,
            // All-zero metric on either side (e.g. nobody inlines): treat a
            // zero/zero pair as perfectly stable, otherwise skip the metric.
            Err(AnalyzerError::ZeroVector) => {
                if u.iter().all(|x| *x == 0.0) && v.iter().all(|x| *x == 0.0) {
                    1.0
                } else {
                    continue;
                }
            }
            Err(e) => return Err(e),
        };
        similarity.insert(metric.to_string(), sim);
    }
    Ok(StabilityReport {
        joined_sites: joined.len(),
        similarity,
    })
}
