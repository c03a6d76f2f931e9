//! Application-protocol identifiers as carried in TLS negotiation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wire limit on an ALPN protocol identifier.
pub const MAX_TOKEN_LEN: usize = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("protocol token is empty")]
    Empty,
    #[error("protocol token exceeds {MAX_TOKEN_LEN} bytes: {0} bytes")]
    TooLong(usize),
}

/// A protocol token exactly as negotiated on the wire ("h2", "h2-14",
/// "spdy/3.1", "http/1.1", ...). Case-sensitive, never normalized.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProtocolId(String);

impl ProtocolId {
    pub fn new(token: impl Into<String>) -> Result<Self, TokenError> {
        let token = token.into();
        if token.is_empty() {
            return Err(TokenError::Empty);
        }
        if token.len() > MAX_TOKEN_LEN {
            return Err(TokenError::TooLong(token.len()));
        }
        Ok(ProtocolId(token))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    /// True for "h2" and draft tokens like "h2-14" ... "h2-17".
    pub fn is_h2_family(&self) -> bool {
        self.0 == "h2" || self.0.starts_with("h2-")
    }

    pub fn is_spdy_family(&self) -> bool {
        self.0.starts_with("spdy/")
    }
}

impl std::fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for ProtocolId {
    type Err = TokenError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProtocolId::new(s)
    }
}

/// The HTTP version a page load or object transfer actually used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HttpVersion {
    H1,
    H2,
}

impl HttpVersion {
    pub fn alpn_token(self) -> &'static str {
        match self {
            HttpVersion::H1 => "http/1.1",
            HttpVersion::H2 => "h2",
        }
    }
}

impl std::fmt::Display for HttpVersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HttpVersion::H1 => f.write_str("h1"),
            HttpVersion::H2 => f.write_str("h2"),
        }
    }
}

impl std::str::FromStr for HttpVersion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "h1" | "http/1.1" | "http1" => Ok(HttpVersion::H1),
            "h2" | "http2" => Ok(HttpVersion::H2),
            other => Err(format!("unknown protocol: {other}")),
        }
    }
}
