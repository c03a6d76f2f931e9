//! h2scope: a measurement platform for HTTP/2 adoption and performance.
//!
//! The pipeline has three phases:
//!
//! 1. [`prober`] discovers which application protocols a host announces via
//!    TLS ALPN, whether cleartext h2c upgrade is accepted, and whether a
//!    QUIC-family alternative is advertised.
//! 2. [`verifier`] confirms whether hosts announcing h2 actually serve their
//!    root object over HTTP/2, following redirects.
//! 3. [`fetcher`] downloads complete pages over exactly one protocol and
//!    records per-object and per-connection accounting; [`analyzer`] and
//!    [`bench`] derive composition metrics and page-load-time comparisons.
//!
//! Phase I scales out through the [`coordinator`] master/worker machinery.
//! [`fixtures`] provides hermetic local servers used by the test suite and
//! the `h2scope fixtures` subcommand.

pub mod analyzer;
pub mod bench;
pub mod cli;
pub mod coordinator;
pub mod fetcher;
pub mod fixtures;
pub mod prober;
pub mod protocol;
pub mod report;
pub mod tlsutil;
pub mod verifier;

/// Version stamped into every serialized record. Bump on breaking schema changes.
pub const SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}
