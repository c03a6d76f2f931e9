//! Phase III engine: full static page loads over exactly one protocol.
//!
//! The root object is fetched, object references are extracted statically
//! from HTML and CSS (no script execution), and embedded objects are fetched
//! concurrently under the protocol's connection rules. Objects unreachable
//! over the selected protocol become fetch errors; there is no fallback.

pub mod client;
pub mod extract;
pub mod types;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;
use tokio::task::JoinSet;
use url::Url;

use crate::protocol::HttpVersion;

use client::{ClientError, FetchedResponse, Ledger, Pool};
use extract::{extract_objects, is_css};

pub use types::{
    ConnectionInfo, FetchConfig, FetchErrorEntry, ObjectRecord, ObjectRef, OriginTag,
    PageSnapshot, UserAgent,
};

/// CSS discovered from the root may be scanned, and CSS discovered from that
/// CSS may be scanned once more; nothing deeper.
const MAX_WAVES: usize = 3;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("root fetch failed for {url}: {reason}")]
    RootFetchFailed { url: Url, reason: String },
    #[error("invalid root url: {0}")]
    InvalidUrl(String),
}

/// Downloads a complete page over `protocol` and returns the snapshot.
pub async fn fetch_page(
    root_url: &Url,
    protocol: HttpVersion,
    cfg: &FetchConfig,
) -> Result<PageSnapshot, FetchError> {
    match root_url.scheme() {
        "http" | "https" => {}
        other => return Err(FetchError::InvalidUrl(format!("unsupported scheme {other}"))),
    }

    let ledger = Arc::new(std::sync::Mutex::new(Ledger::default()));
    let pool = Arc::new(Pool::new(
        protocol,
        cfg.resolve.clone(),
        cfg.h1_max_conns_per_domain,
        cfg.per_object_timeout,
        ledger.clone(),
    ));
    let start = Instant::now();

    // Root object.
    let root = fetch_one(&pool, root_url, cfg, start).await;
    let (root_record, root_body, root_ct) = match root {
        Ok(ok) => ok,
        Err(e) => {
            return Err(FetchError::RootFetchFailed {
                url: root_url.clone(),
                reason: e,
            })
        }
    };
    if root_record.status != 200 {
        return Err(FetchError::RootFetchFailed {
            url: root_url.clone(),
            reason: format!("status {}", root_record.status),
        });
    }
    let html_bytes = root_record.size;
    let extraction = extract_objects(&root_body, &root_ct, root_url);
    let inline_css_js_bytes = extraction.inline_css_js_bytes;

    let mut objects = vec![root_record];
    let mut fetch_errors: Vec<FetchErrorEntry> = Vec::new();
    let mut seen: HashSet<Url> = HashSet::new();
    seen.insert(root_url.clone());

    let mut wave: Vec<ObjectRef> = Vec::new();
    for r in extraction.refs {
        if seen.insert(r.url.clone()) && objects.len() + wave.len() < cfg.max_objects {
            wave.push(r);
        }
    }

    for depth in 1..=MAX_WAVES {
        if wave.is_empty() {
            break;
        }
        let mut join = JoinSet::new();
        for obj_ref in wave.drain(..) {
            let pool = pool.clone();
            let cfg = cfg.clone();
            join.spawn(async move {
                let result = fetch_one(&pool, &obj_ref.url, &cfg, start).await;
                (obj_ref, result)
            });
        }
        let mut next_wave: Vec<ObjectRef> = Vec::new();
        while let Some(joined) = join.join_next().await {
            let (obj_ref, result) = joined.expect("fetch task never panics");
            match result {
                Ok((record, body, content_type)) => {
                    // Recurse into stylesheets, bounded by wave depth.
                    if depth < MAX_WAVES && is_css(&content_type) {
                        let nested = extract_objects(&body, &content_type, &obj_ref.url);
                        for r in nested.refs {
                            if seen.insert(r.url.clone())
                                && objects.len() + next_wave.len() < cfg.max_objects
                            {
                                next_wave.push(r);
                            }
                        }
                    }
                    objects.push(record);
                }
                Err(reason) => fetch_errors.push(FetchErrorEntry {
                    url: obj_ref.url,
                    error: reason,
                }),
            }
        }
        wave = next_wave;
    }

    let elapsed_us = start.elapsed().as_micros() as u64;
    let max_t_end = objects.iter().map(|o| o.t_end_us).max().unwrap_or(0);
    let total_bytes = objects.iter().map(|o| o.size).sum();
    let connections = ledger.lock().unwrap().entries();

    Ok(PageSnapshot {
        schema_version: crate::SCHEMA_VERSION,
        root_url: root_url.clone(),
        protocol,
        objects,
        inline_css_js_bytes,
        html_bytes,
        total_bytes,
        connections,
        plt_us: elapsed_us.max(max_t_end),
        fetch_errors,
    })
}

async fn fetch_one(
    pool: &Pool,
    url: &Url,
    cfg: &FetchConfig,
    page_start: Instant,
) -> Result<(ObjectRecord, bytes::Bytes, String), String> {
    let t_start_us = page_start.elapsed().as_micros() as u64;
    let fetched: FetchedResponse =
        tokio::time::timeout(cfg.per_object_timeout, pool.get(url, cfg.user_agent.header_value()))
            .await
            .map_err(|_| ClientError::Timeout.to_string())?
            .map_err(|e| e.to_string())?;
    let t_end_us = (page_start.elapsed().as_micros() as u64).max(t_start_us + 1);
    let protocol = match pool {
        Pool::H2(_) => HttpVersion::H2,
        Pool::H1(_) => HttpVersion::H1,
    };
    let record = ObjectRecord {
        url: url.clone(),
        domain: url.host_str().unwrap_or_default().to_string(),
        status: fetched.status,
        size: fetched.body.len() as u64,
        content_type: fetched.content_type.clone(),
        protocol,
        connection_id: fetched.connection_id,
        t_start_us,
        t_end_us,
    };
    Ok((record, fetched.body, fetched.content_type))
}

/// Repeated sequential page loads for PLT averaging. Repetitions run one
/// after another so they do not interfere with each other; failures are
/// returned in place so downstream averaging sees them.
pub async fn measure_plt(
    root_url: &Url,
    protocol: HttpVersion,
    cfg: &FetchConfig,
    repetitions: usize,
) -> Vec<Result<PageSnapshot, FetchError>> {
    assert!(repetitions >= 1, "repetitions must be >= 1");
    let mut out = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        out.push(fetch_page(root_url, protocol, cfg).await);
    }
    out
}
