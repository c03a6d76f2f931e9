//! Phase I: per-host discovery of announced application protocols.
//!
//! ALPN is the primary negotiation mechanism. Unlike NPN, ALPN only reveals
//! the server's single selection, so the full announcement list is recovered
//! by iterative elimination: handshake with the remaining offered tokens,
//! record the server's pick, remove it, repeat until no overlap remains. The
//! recovered list comes out in server-preference order.

use std::net::SocketAddr;
use std::time::Duration;

use chrono::{DateTime, Utc};
use http::HeaderMap;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use crate::protocol::ProtocolId;
use crate::tlsutil::{self, TlsConnectError};

/// How the announcement list was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mechanism {
    Alpn,
    Npn,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CleartextUpgrade {
    Supported,
    Unsupported,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeErrorClass {
    NoTlsEndpoint,
    HandshakeFailure,
    Timeout,
}

/// One host's announced protocols plus cleartext-upgrade and QUIC findings.
/// Per-host network failures never raise; they are encoded here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRecord {
    #[serde(default = "crate::default_schema_version")]
    pub schema_version: u32,
    pub host: String,
    pub port: u16,
    pub timestamp: DateTime<Utc>,
    pub mechanism: Mechanism,
    /// Announced protocols in the order recovered (server preference).
    pub announced: Vec<ProtocolId>,
    pub negotiated: Option<ProtocolId>,
    pub cleartext_upgrade: CleartextUpgrade,
    pub quic_advertised: bool,
    pub error: Option<ProbeErrorClass>,
    /// True when the announcement list was recovered via one handshake per
    /// token rather than read from a single negotiation.
    pub multi_handshake: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl ProbeRecord {
    /// A blank record for `host`: nothing announced, nothing attempted.
    /// Used as a placeholder in tests and synthetic pipelines.
    pub fn empty_for_test(host: &str) -> ProbeRecord {
        ProbeRecord {
            schema_version: crate::SCHEMA_VERSION,
            host: host.to_string(),
            port: 443,
            timestamp: Utc::now(),
            mechanism: Mechanism::None,
            announced: Vec::new(),
            negotiated: None,
            cleartext_upgrade: CleartextUpgrade::Error,
            quic_advertised: false,
            error: None,
            multi_handshake: false,
            note: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// Tokens offered to the server, client preference order. Non-empty.
    pub offered_protocols: Vec<ProtocolId>,
    pub connect_timeout: Duration,
    pub handshake_timeout: Duration,
    pub retries: u32,
    /// Port for the cleartext h2c-upgrade check; None skips it.
    pub cleartext_port: Option<u16>,
    /// Optional address override for hermetic tests.
    pub resolve_override: Option<SocketAddr>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            offered_protocols: [
                "h2", "h2-17", "h2-16", "h2-15", "h2-14", "spdy/3.1", "spdy/3", "spdy/2",
                "http/1.1",
            ]
            .iter()
            .map(|t| ProtocolId::new(*t).unwrap())
            .collect(),
            connect_timeout: Duration::from_secs(10),
            handshake_timeout: Duration::from_secs(10),
            retries: 1,
            cleartext_port: Some(80),
            resolve_override: None,
        }
    }
}

/// Probes one host: ALPN announcement recovery on `port`, then the cleartext
/// upgrade and QUIC-advertisement checks. Hostnames are probed verbatim; no
/// `www.` prefixing happens here.
pub async fn probe_host(host: &str, port: u16, cfg: &ProbeConfig) -> ProbeRecord {
    assert!(!cfg.offered_protocols.is_empty(), "offered_protocols empty");
    let mut record = ProbeRecord {
        schema_version: crate::SCHEMA_VERSION,
        host: host.to_string(),
        port,
        timestamp: Utc::now(),
        mechanism: Mechanism::None,
        announced: Vec::new(),
        negotiated: None,
        cleartext_upgrade: CleartextUpgrade::Error,
        quic_advertised: false,
        error: None,
        multi_handshake: false,
        note: None,
    };

    let addr = match tlsutil::resolve_addr(host, port, cfg.resolve_override).await {
        Ok(addr) => Some(addr),
        Err(_) => {
            record.error = Some(ProbeErrorClass::NoTlsEndpoint);
            None
        }
    };

    if let Some(addr) = addr {
        let mut remaining: Vec<ProtocolId> = cfg.offered_protocols.clone();
        let mut first = true;
        loop {
            if remaining.is_empty() {
                break;
            }
            match handshake_with_retries(addr, host, &remaining, cfg).await {
                Ok(Some(token_bytes)) => {
                    let Ok(token) = ProtocolId::new(String::from_utf8_lossy(&token_bytes)) else {
                        break;
                    };
                    if first {
                        record.negotiated = Some(token.clone());
                        record.mechanism = Mechanism::Alpn;
                    } else {
                        record.multi_handshake = true;
                    }
                    // Negotiation cannot select an unoffered token; an
                    // off-list selection would loop forever, so stop.
                    let Some(pos) = remaining.iter().position(|t| *t == token) else {
                        record.note = Some(format!("server selected unoffered token {token}"));
                        break;
                    };
                    remaining.remove(pos);
                    record.announced.push(token);
                }
                Ok(None) => {
                    // Handshake fine but the stack produced no ALPN result.
                    if first {
                        record.mechanism = Mechanism::None;
                        record.note =
                            Some("no ALPN result; NPN not offered by this stack".to_string());
                    }
                    break;
                }
                Err(e) => {
                    if first {
                        record.error = Some(classify(&e));
                        record.announced.clear();
                    }
                    // After the first success, a no-overlap alert is the
                    // expected terminator of list recovery.
                    break;
                }
            }
            first = false;
        }
    }

    if let Some(cleartext_port) = cfg.cleartext_port {
        // The override address targets the TLS endpoint; only its IP applies
        // to the cleartext port.
        let cleartext_override = cfg
            .resolve_override
            .map(|a| SocketAddr::new(a.ip(), cleartext_port));
        let (upgrade, headers) =
            cleartext_upgrade_check(host, cleartext_port, cleartext_override, cfg.connect_timeout)
                .await;
        record.cleartext_upgrade = upgrade;
        if let Some(headers) = headers {
            record.quic_advertised = check_quic_advertisement(&headers);
        }
    }

    // Invariant: records with an error carry no announcement.
    if record.error.is_some() {
        record.announced.clear();
        record.negotiated = None;
        record.mechanism = Mechanism::None;
    }
    record
}

async fn handshake_with_retries(
    addr: SocketAddr,
    host: &str,
    offered: &[ProtocolId],
    cfg: &ProbeConfig,
) -> Result<Option<Vec<u8>>, TlsConnectError> {
    let alpn: Vec<&[u8]> = offered.iter().map(|t| t.as_bytes()).collect();
    let mut last_err = None;
    for _ in 0..=cfg.retries {
        match tlsutil::tls_connect(addr, host, &alpn, cfg.connect_timeout, cfg.handshake_timeout)
            .await
        {
            Ok((_stream, negotiated)) => return Ok(negotiated),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn classify(e: &TlsConnectError) -> ProbeErrorClass {
    match e {
        TlsConnectError::Connect(_) | TlsConnectError::ConnectTimeout => {
            ProbeErrorClass::NoTlsEndpoint
        }
        TlsConnectError::HandshakeTimeout => ProbeErrorClass::Timeout,
        _ => ProbeErrorClass::HandshakeFailure,
    }
}

/// Checks whether the host accepts an h2c upgrade over cleartext.
pub async fn check_cleartext_upgrade(host: &str, port: u16, cfg: &ProbeConfig) -> CleartextUpgrade {
    let override_addr = cfg.resolve_override.map(|a| SocketAddr::new(a.ip(), port));
    cleartext_upgrade_check(host, port, override_addr, cfg.connect_timeout)
        .await
        .0
}

async fn cleartext_upgrade_check(
    host: &str,
    port: u16,
    resolve_override: Option<SocketAddr>,
    timeout: Duration,
) -> (CleartextUpgrade, Option<HeaderMap>) {
    let result = tokio::time::timeout(timeout * 2, async {
        let addr = tlsutil::resolve_addr(host, port, resolve_override).await?;
        let mut tcp = TcpStream::connect(addr).await?;
        let request = format!(
            "GET / HTTP/1.1\r\n\
             Host: {host}\r\n\
             Connection: Upgrade, HTTP2-Settings\r\n\
             Upgrade: h2c\r\n\
             HTTP2-Settings: AAMAAABkAARAAAAAAAIAAAAA\r\n\r\n"
        );
        tcp.write_all(request.as_bytes()).await?;
        let mut buf = Vec::with_capacity(8192);
        let mut chunk = [0u8; 2048];
        loop {
            let n = tcp.read(&mut chunk).await?;
            if n == 0 {
                break;
            }
            buf.extend_from_slice(&chunk[..n]);
            if buf.windows(4).any(|w| w == b"\r\n\r\n") || buf.len() > 64 * 1024 {
                break;
            }
        }
        Ok::<Vec<u8>, std::io::Error>(buf)
    })
    .await;

    let head = match result {
        Ok(Ok(head)) if !head.is_empty() => head,
        _ => return (CleartextUpgrade::Error, None),
    };
    let Some((status, headers)) = parse_response_head(&head) else {
        return (CleartextUpgrade::Error, None);
    };
    let upgraded_to_h2c = status == 101
        && headers
            .get_all(http::header::UPGRADE)
            .iter()
            .filter_map(|v| v.to_str().ok())
            .any(|v| v.split(',').any(|t| t.trim().eq_ignore_ascii_case("h2c")));
    let verdict = if upgraded_to_h2c {
        CleartextUpgrade::Supported
    } else {
        CleartextUpgrade::Unsupported
    };
    (verdict, Some(headers))
}

fn parse_response_head(raw: &[u8]) -> Option<(u16, HeaderMap)> {
    let text = std::str::from_utf8(&raw[..raw.len().min(64 * 1024)]).ok()?;
    let mut lines = text.split("\r\n");
    let status_line = lines.next()?;
    let mut parts = status_line.splitn(3, ' ');
    let version = parts.next()?;
    if !version.starts_with("HTTP/") {
        return None;
    }
    let status: u16 = parts.next()?.parse().ok()?;
    let mut headers = HeaderMap::new();
    for line in lines {
        if line.is_empty() {
            break;
        }
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        let Ok(name) = http::header::HeaderName::try_from(name.trim()) else {
            continue;
        };
        let Ok(value) = http::header::HeaderValue::try_from(value.trim()) else {
            continue;
        };
        headers.append(name, value);
    }
    Some((status, headers))
}

/// True iff the response advertises a QUIC-family alternative: the legacy
/// Alternate-Protocol header, or an Alt-Svc entry with a quic/h3 token.
pub fn check_quic_advertisement(headers: &HeaderMap) -> bool {
    if headers.contains_key("alternate-protocol") {
        return true;
    }
    headers
        .get_all("alt-svc")
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .filter_map(|entry| entry.trim().split('=').next())
        .any(|proto| {
            let proto = proto.trim().trim_matches('"');
            proto.eq_ignore_ascii_case("quic")
                || proto.to_ascii_lowercase().starts_with("quic")
                || proto.to_ascii_lowercase().starts_with("h3")
        })
}
