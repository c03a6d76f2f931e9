//! Per-protocol connection management for page loads.
//!
//! H2 mode opens exactly one connection per origin and multiplexes all
//! requests over it. H1 mode keeps a per-origin pool: idle connections are
//! reused, new ones are opened up to `h1_max_conns_per_domain`, and further
//! requests wait for a free slot.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use http::{Request, Response};
use http_body_util::{BodyExt, Empty};
use hyper::body::Incoming;
use hyper_util::rt::TokioIo;
use tokio::net::TcpStream;
use tokio::sync::{Mutex, OnceCell, Semaphore};
use url::Url;

use crate::protocol::HttpVersion;
use crate::tlsutil;

use super::types::ConnectionInfo;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Origin {
    pub scheme: String,
    pub host: String,
    pub port: u16,
}

impl Origin {
    pub fn of(url: &Url) -> Result<Origin, String> {
        let host = url.host_str().ok_or("url has no host")?.to_string();
        let port = url
            .port_or_known_default()
            .ok_or("url has no port")?;
        Ok(Origin {
            scheme: url.scheme().to_string(),
            host,
            port,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{0}")]
    Connect(String),
    #[error("expected ALPN {expected} but server selected {got}")]
    WrongAlpn { expected: String, got: String },
    #[error("request failed: {0}")]
    Request(String),
    #[error("timed out")]
    Timeout,
}

/// Shared connection ledger; one per page load.
#[derive(Default)]
pub struct Ledger {
    next_id: u64,
    entries: Vec<ConnectionInfo>,
}

impl Ledger {
    fn open(&mut self, domain: &str, protocol: HttpVersion) -> u64 {
        self.next_id += 1;
        self.entries.push(ConnectionInfo {
            connection_id: self.next_id,
            domain: domain.to_string(),
            protocol,
            object_count: 0,
        });
        self.next_id
    }

    fn count_object(&mut self, connection_id: u64) {
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.connection_id == connection_id)
        {
            e.object_count += 1;
        }
    }

    pub fn entries(&self) -> Vec<ConnectionInfo> {
        self.entries.clone()
    }
}

pub struct FetchedResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Bytes,
    pub connection_id: u64,
}

/// Protocol-specific connection pool for one page load.
pub enum Pool {
    H2(H2Pool),
    H1(H1Pool),
}

impl Pool {
    pub fn new(
        protocol: HttpVersion,
        resolve: HashMap<String, SocketAddr>,
        h1_max_conns_per_domain: usize,
        connect_timeout: Duration,
        ledger: Arc<std::sync::Mutex<Ledger>>,
    ) -> Pool {
        match protocol {
            HttpVersion::H2 => Pool::H2(H2Pool {
                shared: Shared {
                    resolve,
                    connect_timeout,
                    ledger,
                },
                conns: Mutex::new(HashMap::new()),
            }),
            HttpVersion::H1 => Pool::H1(H1Pool {
                shared: Shared {
                    resolve,
                    connect_timeout,
                    ledger,
                },
                max_per_origin: h1_max_conns_per_domain,
                origins: Mutex::new(HashMap::new()),
            }),
        }
    }

    pub async fn get(&self, url: &Url, user_agent: &str) -> Result<FetchedResponse, ClientError> {
        match self {
            Pool::H2(p) => p.get(url, user_agent).await,
            Pool::H1(p) => p.get(url, user_agent).await,
        }
    }
}

struct Shared {
    resolve: HashMap<String, SocketAddr>,
    connect_timeout: Duration,
    ledger: Arc<std::sync::Mutex<Ledger>>,
}

impl Shared {
    async fn addr_of(&self, origin: &Origin) -> Result<SocketAddr, ClientError> {
        tlsutil::resolve_addr(
            &origin.host,
            origin.port,
            self.resolve.get(&origin.host).copied(),
        )
        .await
        .map_err(|e| ClientError::Connect(e.to_string()))
    }

    async fn connect_tcp(&self, addr: SocketAddr) -> Result<TcpStream, ClientError> {
        let tcp = tokio::time::timeout(self.connect_timeout, TcpStream::connect(addr))
            .await
            .map_err(|_| ClientError::Timeout)?
            .map_err(|e| ClientError::Connect(e.to_string()))?;
        tcp.set_nodelay(true).ok();
        Ok(tcp)
    }
}

async fn read_response(
    response: Response<Incoming>,
    connection_id: u64,
) -> Result<FetchedResponse, ClientError> {
    let status = response.status().as_u16();
    let content_type = response
        .headers()
        .get(http::header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/octet-stream")
        .to_string();
    let body = response
        .into_body()
        .collect()
        .await
        .map_err(|e| ClientError::Request(e.to_string()))?
        .to_bytes();
    Ok(FetchedResponse {
        status,
        content_type,
        body,
        connection_id,
    })
}

// ---------------------------------------------------------------------------
// H2: one multiplexed connection per origin
// ---------------------------------------------------------------------------

type H2Sender = hyper::client::conn::http2::SendRequest<Empty<Bytes>>;
/// Lazily-opened h2 connection plus its ledger id; the OnceCell guarantees
/// at most one handshake per origin even under concurrent requests.
type H2Conn = Arc<OnceCell<(H2Sender, u64)>>;

pub struct H2Pool {
    shared: Shared,
    conns: Mutex<HashMap<Origin, H2Conn>>,
}

impl H2Pool {
    async fn get(&self, url: &Url, user_agent: &str) -> Result<FetchedResponse, ClientError> {
        let origin = Origin::of(url).map_err(ClientError::Connect)?;
        let cell = {
            let mut conns = self.conns.lock().await;
            conns.entry(origin.clone()).or_default().clone()
        };
        let (sender, connection_id) = cell
            .get_or_try_init(|| self.open(&origin))
            .await?
            .clone();
        let mut sender = sender;

        // http2 requests carry scheme and authority in the URI.
        let request = Request::builder()
            .method("GET")
            .uri(url.as_str())
            .header(http::header::USER_AGENT, user_agent)
            .body(Empty::<Bytes>::new())
            .map_err(|e| ClientError::Request(e.to_string()))?;
        let response = sender
            .send_request(request)
            .await
            .map_err(|e| ClientError::Request(e.to_string()))?;
        self.shared
            .ledger
            .lock()
            .unwrap()
            .count_object(connection_id);
        read_response(response, connection_id).await
    }

    async fn open(&self, origin: &Origin) -> Result<(H2Sender, u64), ClientError> {
        let addr = self.shared.addr_of(origin).await?;
        let exec = hyper_util::rt::TokioExecutor::new();
        let (sender, conn_id) = if origin.scheme == "https" {
            let (tls, negotiated) = tlsutil::tls_connect(
                addr,
                &origin.host,
                &[b"h2"],
                self.shared.connect_timeout,
                self.shared.connect_timeout,
            )
            .await
            .map_err(|e| ClientError::Connect(e.to_string()))?;
            // No protocol fallback: the selected protocol must be spoken or
            // the object is an error.
            match negotiated.as_deref() {
                Some(b"h2") => {}
                other => {
                    return Err(ClientError::WrongAlpn {
                        expected: "h2".into(),
                        got: String::from_utf8_lossy(other.unwrap_or(b"<none>")).into_owned(),
                    })
                }
            }
            let (sender, conn) = hyper::client::conn::http2::handshake(exec, TokioIo::new(tls))
                .await
                .map_err(|e| ClientError::Connect(e.to_string()))?;
            tokio::spawn(async move {
                let _ = conn.await;
            });
            let id = self
                .shared
                .ledger
                .lock()
                .unwrap()
                .open(&origin.host, HttpVersion::H2);
            (sender, id)
        } else {
            // Cleartext fixture mode: http2 with prior knowledge.
            let tcp = self.shared.connect_tcp(addr).await?;
            let (sender, conn) = hyper::client::conn::http2::handshake(exec, TokioIo::new(tcp))
                .await
                .map_err(|e| ClientError::Connect(e.to_string()))?;
            tokio::spawn(async move {
                let _ = conn.await;
            });
            let id = self
                .shared
                .ledger
                .lock()
                .unwrap()
                .open(&origin.host, HttpVersion::H2);
            (sender, id)
        };
        Ok((sender, conn_id))
    }
}

// ---------------------------------------------------------------------------
// H1: capped per-origin pool with keep-alive reuse
// ---------------------------------------------------------------------------

type H1Sender = hyper::client::conn::http1::SendRequest<Empty<Bytes>>;

struct H1Conn {
    sender: H1Sender,
    id: u64,
}

#[derive(Clone)]
struct OriginSlot {
    idle: Arc<Mutex<Vec<H1Conn>>>,
    permits: Arc<Semaphore>,
}

pub struct H1Pool {
    shared: Shared,
    max_per_origin: usize,
    origins: Mutex<HashMap<Origin, OriginSlot>>,
}

impl H1Pool {
    async fn get(&self, url: &Url, user_agent: &str) -> Result<FetchedResponse, ClientError> {
        let origin = Origin::of(url).map_err(ClientError::Connect)?;
        let slot = {
            let mut origins = self.origins.lock().await;
            origins
                .entry(origin.clone())
                .or_insert_with(|| OriginSlot {
                    idle: Arc::new(Mutex::new(Vec::new())),
                    permits: Arc::new(Semaphore::new(self.max_per_origin)),
                })
                .clone()
        };
        // Holding a permit bounds concurrent connections to the origin.
        let _permit = slot
            .permits
            .acquire()
            .await
            .expect("semaphore never closed");

        let mut conn = loop {
            let reused = slot.idle.lock().await.pop();
            match reused {
                Some(mut c) => {
                    if c.sender.ready().await.is_ok() {
                        break c;
                    }
                    // Connection died while idle; try the next one.
                }
                None => break self.open(&origin).await?,
            }
        };

        let host_header = if url.port().is_some() {
            format!("{}:{}", origin.host, origin.port)
        } else {
            origin.host.clone()
        };
        let mut path = url.path().to_string();
        if let Some(q) = url.query() {
            path.push('?');
            path.push_str(q);
        }
        let request = Request::builder()
            .method("GET")
            .uri(path)
            .header(http::header::HOST, host_header)
            .header(http::header::USER_AGENT, user_agent)
            .body(Empty::<Bytes>::new())
            .map_err(|e| ClientError::Request(e.to_string()))?;
        let response = conn
            .sender
            .send_request(request)
            .await
            .map_err(|e| ClientError::Request(e.to_string()))?;
        let connection_id = conn.id;
        self.shared
            .ledger
            .lock()
            .unwrap()
            .count_object(connection_id);
        let fetched = read_response(response, connection_id).await?;
        // Body fully consumed; the connection can serve the next request.
        slot.idle.lock().await.push(conn);
        Ok(fetched)
    }

    async fn open(&self, origin: &Origin) -> Result<H1Conn, ClientError> {
        let addr = self.shared.addr_of(origin).await?;
        let (sender, id) = if origin.scheme == "https" {
            let (tls, negotiated) = tlsutil::tls_connect(
                addr,
                &origin.host,
                &[b"http/1.1"],
                self.shared.connect_timeout,
                self.shared.connect_timeout,
            )
            .await
            .map_err(|e| ClientError::Connect(e.to_string()))?;
            if let Some(got) = negotiated.as_deref() {
                if got != b"http/1.1" {
                    return Err(ClientError::WrongAlpn {
                        expected: "http/1.1".into(),
                        got: String::from_utf8_lossy(got).into_owned(),
                    });
                }
            }
            let (sender, conn) = hyper::client::conn::http1::handshake(TokioIo::new(tls))
                .await
                .map_err(|e| ClientError::Connect(e.to_string()))?;
            tokio::spawn(async move {
                let _ = conn.await;
            });
            let id = self
                .shared
                .ledger
                .lock()
                .unwrap()
                .open(&origin.host, HttpVersion::H1);
            (sender, id)
        } else {
            let tcp = self.shared.connect_tcp(addr).await?;
            let (sender, conn) = hyper::client::conn::http1::handshake(TokioIo::new(tcp))
                .await
                .map_err(|e| ClientError::Connect(e.to_string()))?;
            tokio::spawn(async move {
                let _ = conn.await;
            });
            let id = self
                .shared
                .ledger
                .lock()
                .unwrap()
                .open(&origin.host, HttpVersion::H1);
            (sender, id)
        };
        Ok(H1Conn { sender, id })
    }
}
