//! Phase II: does a host that announces h2 actually serve its root object
//! over HTTP/2? Follows redirects, records the protocol of every hop, and
//! classifies the outcome. Network failures never raise; they are encoded
//! in the verdict.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use chrono::{DateTime, Utc};
use http::Request;
use http_body_util::{BodyExt, Empty};
use hyper_util::rt::{TokioExecutor, TokioIo};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use url::Url;

use crate::protocol::HttpVersion;
use crate::tlsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    ServesH2,
    RedirectToH1,
    H1OnlyRoot,
    ProtocolError,
    NetworkError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hop {
    pub url: Url,
    pub status: u16,
    pub protocol: HttpVersion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RedirectChain {
    pub hops: Vec<Hop>,
    pub terminal_status: u16,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRecord {
    #[serde(default = "crate::default_schema_version")]
    pub schema_version: u32,
    pub host: String,
    pub timestamp: DateTime<Utc>,
    pub serves_h2: bool,
    pub classification: Classification,
    pub chain: RedirectChain,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub root_size: Option<u64>,
    /// Host of the terminal hop, which may differ from the probed host.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub terminal_domain: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub max_redirects: usize,
    pub connect_timeout: Duration,
    pub request_timeout: Duration,
    /// Cap on in-flight verifications in [`verify_many`].
    pub parallel: usize,
    pub resolve: HashMap<String, SocketAddr>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            max_redirects: 10,
            connect_timeout: Duration::from_secs(10),
            request_timeout: Duration::from_secs(30),
            parallel: 10,
            resolve: HashMap::new(),
        }
    }
}

enum HopOutcome {
    Response {
        protocol: HttpVersion,
        status: u16,
        location: Option<String>,
        body_size: u64,
    },
    NetworkError(String),
    ProtocolError(String),
}

/// Attempts to download the root object of `host` over h2, following
/// redirects. `host` may carry an explicit `:port` (fixtures do).
pub async fn verify_h2(host: &str, cfg: &VerifyConfig) -> VerdictRecord {
    let start_url = match host_to_url(host) {
        Ok(u) => u,
        Err(e) => {
            return verdict(
                host,
                Classification::ProtocolError,
                RedirectChain {
                    hops: vec![],
                    terminal_status: 0,
                },
                None,
                None,
                Some(e),
            )
        }
    };

    let mut hops: Vec<Hop> = Vec::new();
    let mut url = start_url;
    for _ in 0..=cfg.max_redirects {
        let outcome = fetch_hop(&url, cfg).await;
        match outcome {
            HopOutcome::NetworkError(e) => {
                return verdict(
                    host,
                    Classification::NetworkError,
                    chain_of(hops),
                    None,
                    None,
                    Some(e),
                )
            }
            HopOutcome::ProtocolError(e) => {
                return verdict(
                    host,
                    Classification::ProtocolError,
                    chain_of(hops),
                    None,
                    None,
                    Some(e),
                )
            }
            HopOutcome::Response {
                protocol,
                status,
                location,
                body_size,
            } => {
                hops.push(Hop {
                    url: url.clone(),
                    status,
                    protocol,
                });
                if matches!(status, 301 | 302 | 303 | 307 | 308) {
                    let Some(location) = location else {
                        return verdict(
                            host,
                            Classification::ProtocolError,
                            chain_of(hops),
                            None,
                            None,
                            Some("redirect without Location".into()),
                        );
                    };
                    match url.join(&location) {
                        Ok(next) => {
                            url = next;
                            continue;
                        }
                        Err(e) => {
                            return verdict(
                                host,
                                Classification::ProtocolError,
                                chain_of(hops),
                                None,
                                None,
                                Some(format!("bad Location: {e}")),
                            )
                        }
                    }
                }
                // Terminal hop.
                let terminal_domain = url.host_str().map(|h| h.to_string());
                let classification = if status == 200 && protocol == HttpVersion::H2 {
                    Classification::ServesH2
                } else if status == 200 {
                    if hops.iter().any(|h| h.protocol == HttpVersion::H2) {
                        Classification::RedirectToH1
                    } else {
                        Classification::H1OnlyRoot
                    }
                } else {
                    Classification::ProtocolError
                };
                let root_size =
                    (classification == Classification::ServesH2).then_some(body_size);
                let reason = (classification == Classification::ProtocolError)
                    .then(|| format!("terminal status {status}"));
                return verdict(
                    host,
                    classification,
                    chain_of(hops),
                    root_size,
                    terminal_domain,
                    reason,
                );
            }
        }
    }
    verdict(
        host,
        Classification::ProtocolError,
        chain_of(hops),
        None,
        None,
        Some("RedirectLoop".into()),
    )
}

/// Verifies many hosts with bounded parallelism (default cap: 10 in-flight).
pub async fn verify_many(hosts: &[String], cfg: &VerifyConfig) -> Vec<VerdictRecord> {
    let semaphore = Arc::new(Semaphore::new(cfg.parallel.max(1)));
    let mut join = tokio::task::JoinSet::new();
    for (idx, host) in hosts.iter().enumerate() {
        let host = host.clone();
        let cfg = cfg.clone();
        let semaphore = semaphore.clone();
        join.spawn(async move {
            let _permit = semaphore.acquire().await.expect("semaphore open");
            (idx, verify_h2(&host, &cfg).await)
        });
    }
    let mut out: Vec<(usize, VerdictRecord)> = Vec::with_capacity(hosts.len());
    while let Some(res) = join.join_next().await {
        out.push(res.expect("verify task never panics"));
    }
    out.sort_by_key(|(idx, _)| *idx);
    out.into_iter().map(|(_, v)| v).collect()
}

fn host_to_url(host: &str) -> Result<Url, String> {
    Url::parse(&format!("https://{host}/")).map_err(|e| format!("invalid host: {e}"))
}

fn chain_of(hops: Vec<Hop>) -> RedirectChain {
    let terminal_status = hops.last().map(|h| h.status).unwrap_or(0);
    RedirectChain {
        hops,
        terminal_status,
    }
}

fn verdict(
    host: &str,
    classification: Classification,
    chain: RedirectChain,
    root_size: Option<u64>,
    terminal_domain: Option<String>,
    reason: Option<String>,
) -> VerdictRecord {
    VerdictRecord {
        schema_version: crate::SCHEMA_VERSION,
        host: host.to_string(),
        timestamp: Utc::now(),
        serves_h2: classification == Classification::ServesH2,
        classification,
        chain,
        root_size,
        terminal_domain,
        reason,
    }
}

/// One GET over a fresh connection, offering h2 first and recording what the
/// server actually negotiated.
async fn fetch_hop(url: &Url, cfg: &VerifyConfig) -> HopOutcome {
    let Some(host) = url.host_str().map(|h| h.to_string()) else {
        return HopOutcome::ProtocolError("hop url has no host".into());
    };
    let port = url.port_or_known_default().unwrap_or(443);
    let addr = match tlsutil::resolve_addr(&host, port, cfg.resolve.get(&host).copied()).await {
        Ok(a) => a,
        Err(e) => return HopOutcome::NetworkError(e.to_string()),
    };
    let connected = tlsutil::tls_connect(
        addr,
        &host,
        &[b"h2", b"http/1.1"],
        cfg.connect_timeout,
        cfg.connect_timeout,
    )
    .await;
    let (tls, negotiated) = match connected {
        Ok(ok) => ok,
        Err(e) if e.is_no_endpoint() => return HopOutcome::NetworkError(e.to_string()),
        Err(e) => return HopOutcome::ProtocolError(e.to_string()),
    };

    let request_result = tokio::time::timeout(cfg.request_timeout, async {
        if negotiated.as_deref() == Some(b"h2") {
            let (mut sender, conn) =
                hyper::client::conn::http2::handshake(TokioExecutor::new(), TokioIo::new(tls))
                    .await
                    .map_err(|e| HopOutcome::ProtocolError(e.to_string()))?;
            tokio::spawn(async move {
                let _ = conn.await;
            });
            let request = Request::builder()
                .method("GET")
                .uri(url.as_str())
                .body(Empty::<Bytes>::new())
                .map_err(|e| HopOutcome::ProtocolError(e.to_string()))?;
            let response = sender
                .send_request(request)
                .await
                .map_err(|e| HopOutcome::ProtocolError(e.to_string()))?;
            read_hop(response, HttpVersion::H2).await
        } else {
            let (mut sender, conn) = hyper::client::conn::http1::handshake(TokioIo::new(tls))
                .await
                .map_err(|e| HopOutcome::ProtocolError(e.to_string()))?;
            tokio::spawn(async move {
                let _ = conn.await;
            });
            let mut path = url.path().to_string();
            if let Some(q) = url.query() {
                path.push('?');
                path.push_str(q);
            }
            let host_header = match url.port() {
                Some(p) => format!("{host}:{p}"),
                None => host.clone(),
            };
            let request = Request::builder()
                .method("GET")
                .uri(path)
                .header(http::header::HOST, host_header)
                .body(Empty::<Bytes>::new())
                .map_err(|e| HopOutcome::ProtocolError(e.to_string()))?;
            let response = sender
                .send_request(request)
                .await
                .map_err(|e| HopOutcome::ProtocolError(e.to_string()))?;
            read_hop(response, HttpVersion::H1).await
        }
    })
    .await;

    match request_result {
        Ok(Ok(outcome)) => outcome,
        Ok(Err(err_outcome)) => err_outcome,
        Err(_) => HopOutcome::NetworkError("request timed out".into()),
    }
}

async fn read_hop(
    response: http::Response<hyper::body::Incoming>,
    protocol: HttpVersion,
) -> Result<HopOutcome, HopOutcome> {
    let status = response.status().as_u16();
    let location = response
        .headers()
        .get(http::header::LOCATION)
        .and_then(|v| v.to_str().ok())
        .map(|s| s.to_string());
    let body_size = response
        .into_body()
        .collect()
        .await
        .map(|b| b.to_bytes().len() as u64)
        .unwrap_or(0);
    Ok(HopOutcome::Response {
        protocol,
        status,
        location,
        body_size,
    })
}
