//! Cleartext fixture servers for the h2c-upgrade and QUIC-advertisement
//! checks. These speak just enough raw HTTP/1.1 to exercise the prober.

use std::net::SocketAddr;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpListener;

#[derive(Debug, Clone)]
pub enum CleartextBehavior {
    /// Accepts the h2c upgrade with 101 Switching Protocols.
    H2cUpgrade,
    /// Ignores the upgrade and answers an ordinary 200, optionally with
    /// extra headers (Alternate-Protocol, Alt-Svc, ...).
    PlainH1 { extra_headers: Vec<(String, String)> },
}

pub struct CleartextFixture {
    pub addr: SocketAddr,
    handle: tokio::task::JoinHandle<()>,
}

impl CleartextFixture {
    pub async fn spawn(behavior: CleartextBehavior) -> std::io::Result<CleartextFixture> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let handle = tokio::spawn(async move {
            loop {
                let Ok((mut tcp, _)) = listener.accept().await else {
                    break;
                };
                let behavior = behavior.clone();
                tokio::spawn(async move {
                    // Read the request head; content is irrelevant.
                    let mut buf = vec![0u8; 8192];
                    let mut read = 0;
                    loop {
                        match tcp.read(&mut buf[read..]).await {
                            Ok(0) => return,
                            Ok(n) => read += n,
                            Err(_) => return,
                        }
                        if buf[..read].windows(4).any(|w| w == b"\r\n\r\n") || read == buf.len() {
                            break;
                        }
                    }
                    let response = match behavior {
                        CleartextBehavior::H2cUpgrade => {
                            "HTTP/1.1 101 Switching Protocols\r\n\
                             Connection: Upgrade\r\n\
                             Upgrade: h2c\r\n\r\n"
                                .to_string()
                        }
                        CleartextBehavior::PlainH1 { extra_headers } => {
                            let mut head = String::from("HTTP/1.1 200 OK\r\n");
                            for (k, v) in &extra_headers {
                                head.push_str(&format!("{k}: {v}\r\n"));
                            }
                            head.push_str("Content-Length: 2\r\nConnection: close\r\n\r\nok");
                            head
                        }
                    };
                    let _ = tcp.write_all(response.as_bytes()).await;
                    let _ = tcp.shutdown().await;
                });
            }
        });
        Ok(CleartextFixture { addr, handle })
    }
}

impl Drop for CleartextFixture {
    fn drop(&mut self) {
        self.handle.abort();
    }
}
