//! TLS fixture server with a configurable ALPN announcement list.
//!
//! Serves canned HTTP responses over whichever protocol the handshake
//! selects, so the same fixture backs prober announcement-recovery tests and
//! verifier redirect-chain tests.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use bytes::Bytes;
use http_body_util::Full;
use hyper::service::service_fn;
use hyper_util::rt::{TokioExecutor, TokioIo};
use tokio::net::TcpListener;
use tokio_rustls::TlsAcceptor;

use crate::tlsutil::FixtureIdentity;

#[derive(Debug, Clone)]
pub struct CannedResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub content_type: String,
    pub body: Bytes,
}

impl CannedResponse {
    pub fn ok(body: impl Into<Bytes>) -> Self {
        CannedResponse {
            status: 200,
            headers: vec![],
            content_type: "text/html".into(),
            body: body.into(),
        }
    }

    pub fn redirect(status: u16, location: &str) -> Self {
        CannedResponse {
            status,
            headers: vec![("location".into(), location.into())],
            content_type: "text/html".into(),
            body: Bytes::new(),
        }
    }
}

pub struct TlsFixture {
    pub addr: SocketAddr,
    handle: tokio::task::JoinHandle<()>,
}

impl TlsFixture {
    /// Spawns a fixture announcing `alpn` (server preference order) and
    /// serving `routes` by path; unknown paths get 404.
    pub async fn spawn(
        identity: &FixtureIdentity,
        alpn: &[&str],
        routes: HashMap<String, CannedResponse>,
    ) -> std::io::Result<TlsFixture> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let alpn_bytes: Vec<&[u8]> = alpn.iter().map(|s| s.as_bytes()).collect();
        let acceptor = TlsAcceptor::from(identity.server_config(&alpn_bytes));
        let routes = Arc::new(routes);

        let handle = tokio::spawn(async move {
            loop {
                let Ok((tcp, _peer)) = listener.accept().await else {
                    break;
                };
                let acceptor = acceptor.clone();
                let routes = routes.clone();
                tokio::spawn(async move {
                    let Ok(tls) = acceptor.accept(tcp).await else {
                        return;
                    };
                    let negotiated = tls.get_ref().1.alpn_protocol().map(|p| p.to_vec());
                    let service = service_fn(move |req: hyper::Request<hyper::body::Incoming>| {
                        let routes = routes.clone();
                        async move {
                            let path = req.uri().path().to_string();
                            let canned = routes.get(&path).cloned().unwrap_or(CannedResponse {
                                status: 404,
                                headers: vec![],
                                content_type: "text/plain".into(),
                                body: Bytes::from_static(b"not found"),
                            });
                            let mut builder = hyper::Response::builder()
                                .status(canned.status)
                                .header("content-type", canned.content_type);
                            for (k, v) in &canned.headers {
                                builder = builder.header(k.as_str(), v.as_str());
                            }
                            Ok::<_, Infallible>(builder.body(Full::new(canned.body)).unwrap())
                        }
                    });
                    let io = TokioIo::new(tls);
                    let is_h2 = negotiated
                        .as_deref()
                        .is_some_and(|p| p == b"h2" || p.starts_with(b"h2-"));
                    if is_h2 {
                        let _ = hyper::server::conn::http2::Builder::new(TokioExecutor::new())
                            .serve_connection(io, service)
                            .await;
                    } else {
                        let _ = hyper::server::conn::http1::Builder::new()
                            .serve_connection(io, service)
                            .await;
                    }
                });
            }
        });
        Ok(TlsFixture { addr, handle })
    }
}

impl Drop for TlsFixture {
    fn drop(&mut self) {
        self.handle.abort();
    }
}
