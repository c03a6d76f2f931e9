//! Reporting: adoption time series over repeated probe sweeps, organization
//! attribution for serving hosts, and deterministic CSV/JSON exports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::DistributionSummary;
use crate::bench::Comparison;
use crate::prober::ProbeRecord;
use crate::verifier::VerdictRecord;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("record schema version {got} does not match {expected}")]
    SchemaMismatch { got: u32, expected: u32 },
    #[error("no attribution source for {0}: no certificate subject and no registrable domain")]
    NoAttributionSource(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One point of the adoption time series: on `date`, how many hosts
/// announced `token` and how many of those actually served over h2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdoptionPoint {
    pub date: NaiveDate,
    pub token: String,
    pub announced_count: u64,
    pub serving_count: u64,
}

/// Synthetic token aggregating every h2 draft and the final protocol.
pub const H2_FAMILY: &str = "h2-family";

/// Folds dated probe and verdict sweeps into a per-(date, token) series.
///
/// `announced_count` counts distinct hosts announcing the token that day;
/// `serving_count` counts the subset of those hosts with a same-day verdict
/// of actually serving h2 — so serving never exceeds announced. The fold is
/// order-independent and the output is sorted by (date, token).
pub fn adoption_series(
    probes: &[(NaiveDate, Vec<ProbeRecord>)],
    verdicts: &[(NaiveDate, Vec<VerdictRecord>)],
) -> Result<Vec<AdoptionPoint>, ReportError> {
    for (_, records) in probes {
        for r in records {
            check_schema(r.schema_version)?;
        }
    }
    for (_, records) in verdicts {
        for v in records {
            check_schema(v.schema_version)?;
        }
    }

    let mut serving: BTreeMap<NaiveDate, BTreeSet<&str>> = BTreeMap::new();
    for (date, records) in verdicts {
        let day = serving.entry(*date).or_default();
        day.extend(records.iter().filter(|v| v.serves_h2).map(|v| v.host.as_str()));
    }

    // (date, token) -> set of announcing hosts
    let mut announced: BTreeMap<(NaiveDate, String), BTreeSet<&str>> = BTreeMap::new();
    for (date, records) in probes {
        for r in records {
            let mut tokens: BTreeSet<String> =
                r.announced.iter().map(|t| t.as_str().to_string()).collect();
            if r.announced.iter().any(|t| t.is_h2_family()) {
                tokens.insert(H2_FAMILY.to_string());
            }
            for token in tokens {
                announced
                    .entry((*date, token))
                    .or_default()
                    .insert(r.host.as_str());
            }
        }
    }

    let empty = BTreeSet::new();
    Ok(announced
        .into_iter()
        .map(|((date, token), hosts)| {
            let served = serving.get(&date).unwrap_or(&empty);
            let serving_count = hosts.iter().filter(|h| served.contains(*h)).count() as u64;
            AdoptionPoint {
                date,
                token,
                announced_count: hosts.len() as u64,
                serving_count,
            }
        })
        .collect())
}

fn check_schema(got: u32) -> Result<(), ReportError> {
    if got != crate::SCHEMA_VERSION {
        return Err(ReportError::SchemaMismatch {
            got,
            expected: crate::SCHEMA_VERSION,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttributionSource {
    CertSubject,
    RegistrableDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrgAttribution {
    pub site: String,
    pub organization: String,
    pub source: AttributionSource,
}

/// Attributes a serving site to an organization: the certificate subject
/// organization when present, else the site's registrable domain.
pub fn attribute_org(site: &str, cert_org: Option<&str>) -> Result<OrgAttribution, ReportError> {
    if let Some(org) = cert_org.map(str::trim).filter(|o| !o.is_empty()) {
        return Ok(OrgAttribution {
            site: site.to_string(),
            organization: org.to_string(),
            source: AttributionSource::CertSubject,
        });
    }
    match psl::domain_str(site) {
        Some(domain) => Ok(OrgAttribution {
            site: site.to_string(),
            organization: domain.to_string(),
            source: AttributionSource::RegistrableDomain,
        }),
        None => Err(ReportError::NoAttributionSource(site.to_string())),
    }
}

/// Everything the exporter can emit. Optional parts are skipped, but the
/// adoption files are always written (header-only when empty).
#[derive(Debug, Default)]
pub struct ReportBundle {
    pub adoption: Vec<AdoptionPoint>,
    pub plt_comparison: Option<Comparison>,
    /// (metric name, distribution) pairs.
    pub metric_summaries: Vec<(String, DistributionSummary)>,
}

/// Writes the bundle under `dir` and returns the paths created. Output is
/// byte-deterministic for equal inputs: rows are sorted and floats use a
/// fixed six-decimal format.
pub fn export_reports(dir: &Path, bundle: &ReportBundle) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut adoption = bundle.adoption.clone();
    adoption.sort_by(|a, b| (a.date, &a.token).cmp(&(b.date, &b.token)));

    let csv_path = dir.join("adoption.csv");
    {
        let mut w = csv::Writer::from_path(&csv_path).map_err(csv_io)?;
        w.write_record(["date", "token", "announced_count", "serving_count"])
            .map_err(csv_io)?;
        for p in &adoption {
            w.write_record([
                p.date.to_string(),
                p.token.clone(),
                p.announced_count.to_string(),
                p.serving_count.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
    }
    written.push(csv_path);

    let json_path = dir.join("adoption.json");
    std::fs::write(
        &json_path,
        serde_json::to_vec_pretty(&adoption).expect("adoption serializes"),
    )?;
    written.push(json_path);

    if let Some(cmp) = &bundle.plt_comparison {
        let mut deltas = cmp.deltas.clone();
        deltas.sort_by(|a, b| (&a.site, &a.scenario).cmp(&(&b.site, &b.scenario)));
        let path = dir.join("plt_deltas.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_io)?;
        w.write_record(["site", "scenario", "mean_h1_us", "mean_h2_us", "delta_us"])
            .map_err(csv_io)?;
        for d in &deltas {
            w.write_record([
                d.site.clone(),
                d.scenario.clone(),
                format!("{:.6}", d.mean_h1_us),
                format!("{:.6}", d.mean_h2_us),
                format!("{:.6}", d.delta_us),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        written.push(path);

        let path = dir.join("plt_delta_cdf.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_io)?;
        w.write_record(["delta_us", "fraction"]).map_err(csv_io)?;
        for (v, f) in &cmp.cdf {
            w.write_record([format!("{v:.6}"), format!("{f:.6}")])
                .map_err(csv_io)?;
        }
        w.flush()?;
        written.push(path);
    }

    if !bundle.metric_summaries.is_empty() {
        let mut summaries: Vec<&(String, DistributionSummary)> =
            bundle.metric_summaries.iter().collect();
        summaries.sort_by(|a, b| a.0.cmp(&b.0));
        let path = dir.join("metric_cdf.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_io)?;
        w.write_record(["metric", "value", "fraction"]).map_err(csv_io)?;
        for (name, summary) in summaries {
            for (v, f) in &summary.cdf_points {
                w.write_record([name.clone(), format!("{v:.6}"), format!("{f:.6}")])
                    .map_err(csv_io)?;
            }
        }
        w.flush()?;
        written.push(path);
    }

    Ok(written)
}

fn csv_io(e: csv::Error) -> ReportError {
    ReportError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ProtocolId;

    fn probe(host: &str, announced: &[&str]) -> ProbeRecord {
        let mut r = ProbeRecord::empty_for_test(host);
        r.announced = announced.iter().map(|t| ProtocolId::new(*t).unwrap()).collect();
        r
    }

    fn verdict(host: &str, serves: bool) -> VerdictRecord {
        let mut v = crate::verifier::VerdictRecord {
            schema_version: crate::SCHEMA_VERSION,
            host: host.to_string(),
            timestamp: chrono::Utc::now(),
            serves_h2: serves,
            classification: if serves {
                crate::verifier::Classification::ServesH2
            } else {
                crate::verifier::Classification::RedirectToH1
            },
            chain: crate::verifier::RedirectChain {
                hops: vec![],
                terminal_status: 200,
            },
            root_size: None,
            terminal_domain: None,
            reason: None,
        };
        if serves {
            v.root_size = Some(1);
        }
        v
    }

    fn day(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn series_counts_and_family_aggregate() {
        let probes = vec![(
            day("2015-02-01"),
            vec![
                probe("a.test", &["h2", "http/1.1"]),
                probe("b.test", &["h2-14", "http/1.1"]),
                probe("c.test", &["http/1.1"]),
            ],
        )];
        let verdicts = vec![(day("2015-02-01"), vec![verdict("a.test", true), verdict("b.test", false)])];
        let series = adoption_series(&probes, &verdicts).unwrap();
        let get = |token: &str| series.iter().find(|p| p.token == token).unwrap();
        assert_eq!(get("h2").announced_count, 1);
        assert_eq!(get("h2").serving_count, 1);
        assert_eq!(get("h2-14").serving_count, 0);
        assert_eq!(get(H2_FAMILY).announced_count, 2);
        assert_eq!(get(H2_FAMILY).serving_count, 1);
        assert_eq!(get("http/1.1").announced_count, 3);
        for p in &series {
            assert!(p.serving_count <= p.announced_count);
        }
    }

    #[test]
    fn series_is_order_independent() {
        let mut records = vec![
            probe("a.test", &["h2"]),
            probe("b.test", &["h2"]),
            probe("c.test", &["spdy/3.1", "h2"]),
        ];
        let verdicts = vec![(day("2015-03-01"), vec![verdict("b.test", true)])];
        let forward = adoption_series(&[(day("2015-03-01"), records.clone())], &verdicts).unwrap();
        records.reverse();
        let backward = adoption_series(&[(day("2015-03-01"), records)], &verdicts).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn mixed_schema_is_rejected() {
        let mut bad = probe("a.test", &["h2"]);
        bad.schema_version = 99;
        let err = adoption_series(&[(day("2015-02-01"), vec![bad])], &[]).unwrap_err();
        assert!(matches!(err, ReportError::SchemaMismatch { got: 99, .. }));
    }

    #[test]
    fn attribution_prefers_cert_subject() {
        let a = attribute_org("www.example.co.uk", Some("Example Ltd")).unwrap();
        assert_eq!(a.organization, "Example Ltd");
        assert_eq!(a.source, AttributionSource::CertSubject);
        let b = attribute_org("www.example.co.uk", None).unwrap();
        assert_eq!(b.organization, "example.co.uk");
        assert_eq!(b.source, AttributionSource::RegistrableDomain);
        let c = attribute_org("www.example.co.uk", Some("   ")).unwrap();
        assert_eq!(c.source, AttributionSource::RegistrableDomain);
        assert!(attribute_org("localhost", None).is_err());
    }

    #[test]
    fn exports_are_deterministic_and_empty_input_yields_headers() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = ReportBundle {
            adoption: vec![
                AdoptionPoint {
                    date: day("2015-02-08"),
                    token: "h2".into(),
                    announced_count: 5,
                    serving_count: 2,
                },
                AdoptionPoint {
                    date: day("2015-02-01"),
                    token: "h2".into(),
                    announced_count: 3,
                    serving_count: 1,
                },
            ],
            ..Default::default()
        };
        let first = export_reports(&dir.path().join("a"), &bundle).unwrap();
        let second = export_reports(&dir.path().join("b"), &bundle).unwrap();
        for (p1, p2) in first.iter().zip(&second) {
            assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
        }
        let csv_text = std::fs::read_to_string(&first[0]).unwrap();
        // sorted by date regardless of input order
        let lines: Vec<&str> = csv_text.lines().collect();
        assert_eq!(lines[0], "date,token,announced_count,serving_count");
        assert!(lines[1].starts_with("2015-02-01"));

        let empty = export_reports(&dir.path().join("c"), &ReportBundle::default()).unwrap();
        let text = std::fs::read_to_string(&empty[0]).unwrap();
        assert_eq!(text.trim(), "date,token,announced_count,serving_count");
    }
}
