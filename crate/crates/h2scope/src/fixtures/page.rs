//! Multi-domain page fixture for Phase III tests.
//!
//! Each fixture "domain" is a loopback listener that serves both HTTP/1.1
//! and prior-knowledge HTTP/2 on the same port; page loads address domains
//! by hostname through the fetcher's resolve overrides. All traffic passes
//! through a shared [`NetShim`], so bench scenarios can shape the emulated
//! path of a running fixture.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use bytes::Bytes;
use futures::stream;
use http_body_util::combinators::BoxBody;
use http_body_util::{BodyExt, StreamBody};
use hyper::body::Frame;
use hyper::service::service_fn;
use hyper_util::rt::{TokioExecutor, TokioIo};
use tokio::net::TcpListener;
use url::Url;

use super::shim::{NetShim, ShimConfig};

/// Path -> (content type, payload) for one fixture domain.
pub type DomainContent = HashMap<String, (String, Bytes)>;

pub struct PageFixture {
    pub root_url: Url,
    /// Hostname -> listener address, for `FetchConfig::resolve`.
    pub resolve: HashMap<String, SocketAddr>,
    pub shim: Arc<NetShim>,
    handles: Vec<tokio::task::JoinHandle<()>>,
}

impl PageFixture {
    /// Spawns listeners for `domain_names` and lets `make_content` build the
    /// per-domain routes once the bound addresses (and thus object URLs) are
    /// known. The first domain's "/" is the root page.
    pub async fn spawn_with<F>(
        domain_names: &[String],
        shim_cfg: ShimConfig,
        make_content: F,
    ) -> std::io::Result<PageFixture>
    where
        F: FnOnce(&[(String, SocketAddr)]) -> Vec<DomainContent>,
    {
        assert!(!domain_names.is_empty());
        let shim = NetShim::new(shim_cfg);
        let mut listeners = Vec::new();
        let mut bound = Vec::new();
        for name in domain_names {
            let listener = TcpListener::bind("127.0.0.1:0").await?;
            bound.push((name.clone(), listener.local_addr()?));
            listeners.push(listener);
        }
        let contents = make_content(&bound);
        assert_eq!(contents.len(), domain_names.len());

        let mut handles = Vec::new();
        for (listener, content) in listeners.into_iter().zip(contents) {
            let shim = shim.clone();
            let content = Arc::new(content);
            handles.push(tokio::spawn(async move {
                loop {
                    let Ok((tcp, _)) = listener.accept().await else {
                        break;
                    };
                    tcp.set_nodelay(true).ok();
                    let shim = shim.clone();
                    let content = content.clone();
                    tokio::spawn(async move {
                        // New connection: pay the emulated handshake.
                        shim.connection_setup().await;
                        let service = service_fn(move |req: hyper::Request<hyper::body::Incoming>| {
                            let shim = shim.clone();
                            let content = content.clone();
                            async move {
                                shim.request_round_trip().await;
                                let path = req.uri().path().to_string();
                                let response = match content.get(&path) {
                                    Some((ct, payload)) => hyper::Response::builder()
                                        .status(200)
                                        .header("content-type", ct.as_str())
                                        .body(shim_body(shim, payload.clone()))
                                        .unwrap(),
                                    None => hyper::Response::builder()
                                        .status(404)
                                        .header("content-type", "text/plain")
                                        .body(shim_body(shim, Bytes::from_static(b"not found")))
                                        .unwrap(),
                                };
                                Ok::<_, Infallible>(response)
                            }
                        });
                        let _ = hyper_util::server::conn::auto::Builder::new(TokioExecutor::new())
                            .serve_connection(TokioIo::new(tcp), service)
                            .await;
                    });
                }
            }));
        }

        let resolve: HashMap<String, SocketAddr> = bound.iter().cloned().collect();
        let (root_host, root_addr) = &bound[0];
        let root_url = Url::parse(&format!("http://{root_host}:{}/", root_addr.port())).unwrap();
        Ok(PageFixture {
            root_url,
            resolve,
            shim,
            handles,
        })
    }

    /// A sharded page: `domains` hostnames, `objects_per_domain` image
    /// objects of `object_size` bytes each, referenced from the root HTML on
    /// the first domain. `inline_bytes` of style body are embedded inline.
    pub async fn sharded(
        domains: usize,
        objects_per_domain: usize,
        object_size: usize,
        inline_bytes: usize,
        shim_cfg: ShimConfig,
    ) -> std::io::Result<PageFixture> {
        let names: Vec<String> = (0..domains).map(|i| format!("d{i}.fixture.test")).collect();
        PageFixture::spawn_with(&names, shim_cfg, |bound| {
            let mut html = String::from("<html><head>");
            if inline_bytes > 0 {
                html.push_str("<style>");
                html.push_str(&"x".repeat(inline_bytes));
                html.push_str("</style>");
            }
            html.push_str("</head><body>");
            for (host, addr) in bound {
                for j in 0..objects_per_domain {
                    html.push_str(&format!(
                        r#"<img src="http://{host}:{}/obj{j}.png">"#,
                        addr.port()
                    ));
                }
            }
            html.push_str("</body></html>");

            bound
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    let mut content = DomainContent::new();
                    if i == 0 {
                        content.insert("/".into(), ("text/html".into(), Bytes::from(html.clone())));
                    }
                    for j in 0..objects_per_domain {
                        content.insert(
                            format!("/obj{j}.png"),
                            ("image/png".into(), Bytes::from(vec![0u8; object_size])),
                        );
                    }
                    content
                })
                .collect()
        })
        .await
    }
}

impl Drop for PageFixture {
    fn drop(&mut self) {
        for h in &self.handles {
            h.abort();
        }
    }
}

/// Streams a payload through the shim, segment by segment.
fn shim_body(shim: Arc<NetShim>, payload: Bytes) -> BoxBody<Bytes, Infallible> {
    let mtu = shim.config().mtu.max(1);
    let body = StreamBody::new(stream::unfold(
        (shim, payload, 0usize),
        move |(shim, payload, offset)| async move {
            if offset >= payload.len() {
                return None;
            }
            let end = (offset + mtu).min(payload.len());
            shim.transfer((end - offset) as u64).await;
            let chunk = payload.slice(offset..end);
            Some((Ok(Frame::data(chunk)), (shim, payload, end)))
        },
    ));
    BodyExt::boxed(body)
}
