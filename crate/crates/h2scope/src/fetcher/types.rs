//! Snapshot types produced by a single-protocol page load.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::protocol::HttpVersion;

/// Where an object reference was discovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OriginTag {
    /// src/href attribute in the HTML document.
    HtmlAttr,
    /// `url(...)` or `@import` inside a stylesheet.
    CssUrl,
    /// Inline style/script body; carries bytes, not a fetchable URL.
    Inline,
}

/// A reference to an embedded object, resolved to an absolute URL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRef {
    pub url: Url,
    pub origin_tag: OriginTag,
    /// URL of the document that referenced this object.
    pub discovered_from: Url,
}

/// One fetched object with timing and connection accounting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub url: Url,
    /// Host component of the URL.
    pub domain: String,
    pub status: u16,
    pub size: u64,
    pub content_type: String,
    pub protocol: HttpVersion,
    pub connection_id: u64,
    /// Microseconds relative to page start.
    pub t_start_us: u64,
    pub t_end_us: u64,
}

/// One entry in the connection ledger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectionInfo {
    pub connection_id: u64,
    pub domain: String,
    pub protocol: HttpVersion,
    pub object_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FetchErrorEntry {
    pub url: Url,
    pub error: String,
}

/// A complete static page fetch over exactly one protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageSnapshot {
    #[serde(default = "crate::default_schema_version")]
    pub schema_version: u32,
    pub root_url: Url,
    pub protocol: HttpVersion,
    /// Every fetched object, root included (the root record's size equals
    /// `html_bytes`).
    pub objects: Vec<ObjectRecord>,
    pub inline_css_js_bytes: u64,
    pub html_bytes: u64,
    /// Sum of all object sizes, root included.
    pub total_bytes: u64,
    pub connections: Vec<ConnectionInfo>,
    /// Page load time in microseconds: root request dispatch to completion
    /// (or failure) of the last statically discovered object.
    pub plt_us: u64,
    pub fetch_errors: Vec<FetchErrorEntry>,
}

impl PageSnapshot {
    pub fn distinct_domains(&self) -> usize {
        let mut hosts: Vec<&str> = self.objects.iter().map(|o| o.domain.as_str()).collect();
        hosts.sort_unstable();
        hosts.dedup();
        hosts.len()
    }

    pub fn plt(&self) -> Duration {
        Duration::from_micros(self.plt_us)
    }
}

/// User agent presented to servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserAgent {
    Desktop,
    Mobile,
}

impl UserAgent {
    pub fn header_value(self) -> &'static str {
        match self {
            UserAgent::Desktop => {
                "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) \
                 Chrome/120.0.0.0 Safari/537.36"
            }
            UserAgent::Mobile => {
                "Mozilla/5.0 (Linux; Android 14) AppleWebKit/537.36 (KHTML, like Gecko) \
                 Chrome/120.0.0.0 Mobile Safari/537.36"
            }
        }
    }
}

impl std::str::FromStr for UserAgent {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "desktop" => Ok(UserAgent::Desktop),
            "mobile" => Ok(UserAgent::Mobile),
            other => Err(format!("unknown user agent: {other}")),
        }
    }
}

/// Knobs for a page load.
#[derive(Debug, Clone)]
pub struct FetchConfig {
    /// Per-domain cap on concurrent H1 connections (Chrome's default).
    pub h1_max_conns_per_domain: usize,
    pub per_object_timeout: Duration,
    /// Guard against pathological pages.
    pub max_objects: usize,
    pub user_agent: UserAgent,
    /// Host -> address overrides, like curl's --resolve. Lets fixture
    /// hostnames map onto loopback listeners.
    pub resolve: HashMap<String, SocketAddr>,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            h1_max_conns_per_domain: 6,
            per_object_timeout: Duration::from_secs(30),
            max_objects: 500,
            user_agent: UserAgent::Desktop,
            resolve: HashMap::new(),
        }
    }
}
