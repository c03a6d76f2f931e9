//! TLS plumbing shared by the prober, verifier, fetcher, and fixtures.
//!
//! Certificate validity is deliberately not judged anywhere: a host with a
//! broken certificate still announces protocols, and announcements are what
//! the platform measures.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use rustls::client::danger::{
    HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier,
};
use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName, UnixTime};
use rustls::{ClientConfig, DigitallySignedStruct, ServerConfig, SignatureScheme};
use tokio::net::TcpStream;
use tokio_rustls::client::TlsStream;
use tokio_rustls::TlsConnector;

/// Accepts any certificate chain. Announcement discovery must work against
/// hosts with self-signed or expired certificates.
#[derive(Debug)]
struct AcceptAnyCert;

impl ServerCertVerifier for AcceptAnyCert {
    fn verify_server_cert(
        &self,
        _end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        Ok(ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        _message: &[u8],
        _cert: &CertificateDer<'_>,
        _dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        Ok(HandshakeSignatureValid::assertion())
    }

    fn verify_tls13_signature(
        &self,
        _message: &[u8],
        _cert: &CertificateDer<'_>,
        _dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        Ok(HandshakeSignatureValid::assertion())
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        rustls::crypto::ring::default_provider()
            .signature_verification_algorithms
            .supported_schemes()
    }
}

/// Client config offering the given ALPN tokens, with certificate
/// verification disabled.
pub fn client_config(alpn: &[&[u8]]) -> Arc<ClientConfig> {
    let mut cfg = ClientConfig::builder()
        .dangerous()
        .with_custom_certificate_verifier(Arc::new(AcceptAnyCert))
        .with_no_client_auth();
    cfg.alpn_protocols = alpn.iter().map(|p| p.to_vec()).collect();
    Arc::new(cfg)
}

/// Resolves `host:port`, honoring an optional address override.
pub async fn resolve_addr(
    host: &str,
    port: u16,
    override_addr: Option<SocketAddr>,
) -> std::io::Result<SocketAddr> {
    if let Some(addr) = override_addr {
        return Ok(addr);
    }
    tokio::net::lookup_host((host, port))
        .await?
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "no address for host"))
}

/// TCP connect + TLS handshake offering `alpn`; returns the stream and the
/// protocol the server selected, if any.
pub async fn tls_connect(
    addr: SocketAddr,
    sni_host: &str,
    alpn: &[&[u8]],
    connect_timeout: Duration,
    handshake_timeout: Duration,
) -> Result<(TlsStream<TcpStream>, Option<Vec<u8>>), TlsConnectError> {
    let tcp = tokio::time::timeout(connect_timeout, TcpStream::connect(addr))
        .await
        .map_err(|_| TlsConnectError::ConnectTimeout)?
        .map_err(TlsConnectError::Connect)?;
    tcp.set_nodelay(true).ok();
    let server_name = ServerName::try_from(sni_host.to_string())
        .map_err(|_| TlsConnectError::InvalidName(sni_host.to_string()))?;
    let connector = TlsConnector::from(client_config(alpn));
    let stream = tokio::time::timeout(handshake_timeout, connector.connect(server_name, tcp))
        .await
        .map_err(|_| TlsConnectError::HandshakeTimeout)?
        .map_err(TlsConnectError::Handshake)?;
    let negotiated = stream.get_ref().1.alpn_protocol().map(|p| p.to_vec());
    Ok((stream, negotiated))
}

#[derive(Debug, thiserror::Error)]
pub enum TlsConnectError {
    #[error("tcp connect failed: {0}")]
    Connect(std::io::Error),
    #[error("tcp connect timed out")]
    ConnectTimeout,
    #[error("tls handshake failed: {0}")]
    Handshake(std::io::Error),
    #[error("tls handshake timed out")]
    HandshakeTimeout,
    #[error("invalid server name: {0}")]
    InvalidName(String),
}

impl TlsConnectError {
    /// True when the failure happened before any TLS endpoint responded.
    pub fn is_no_endpoint(&self) -> bool {
        matches!(self, TlsConnectError::Connect(_) | TlsConnectError::ConnectTimeout)
    }
}

/// A self-signed identity for fixture servers.
#[derive(Clone)]
pub struct FixtureIdentity {
    pub cert_der: CertificateDer<'static>,
    key_der: Arc<PrivateKeyDer<'static>>,
}

impl FixtureIdentity {
    /// Generates a certificate covering loopback plus `*.fixture.test`.
    pub fn generate() -> Self {
        let names = vec![
            "localhost".to_string(),
            "127.0.0.1".to_string(),
            "fixture.test".to_string(),
            "*.fixture.test".to_string(),
        ];
        let cert = rcgen::generate_simple_self_signed(names).expect("self-signed cert");
        FixtureIdentity {
            cert_der: cert.cert.der().clone(),
            key_der: Arc::new(
                PrivateKeyDer::try_from(cert.key_pair.serialize_der()).expect("key der"),
            ),
        }
    }

    /// Server config announcing `alpn` in server-preference order.
    pub fn server_config(&self, alpn: &[&[u8]]) -> Arc<ServerConfig> {
        let mut cfg = ServerConfig::builder()
            .with_no_client_auth()
            .with_single_cert(
                vec![self.cert_der.clone()],
                self.key_der.clone_key(),
            )
            .expect("server config");
        cfg.alpn_protocols = alpn.iter().map(|p| p.to_vec()).collect();
        Arc::new(cfg)
    }
}
