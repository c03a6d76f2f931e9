//! In-process network emulation for fixture servers.
//!
//! Models the path properties a page load would see through a shaped link:
//! a shared bandwidth bucket, per-round-trip delay, per-connection handshake
//! cost (latency rounds plus certificate-exchange bytes), and random loss
//! charged as a retransmission stall on the affected stream. The
//! configuration can be swapped live, which is how bench scenarios are
//! applied to a running fixture.

use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShimConfig {
    /// Shared downstream bandwidth; None = unshaped.
    pub bandwidth_kbps: Option<u32>,
    /// Added one-way-pair delay per round trip, on top of `base_rtt_ms`.
    pub extra_delay_ms: u64,
    /// Per-segment loss probability in percent.
    pub loss_pct: f64,
    /// Baseline round-trip time of the emulated path.
    pub base_rtt_ms: u64,
    /// Round trips consumed by TCP + TLS connection setup.
    pub handshake_rtts: u32,
    /// Bytes exchanged during connection setup (certificates etc.), charged
    /// against the shared bandwidth.
    pub handshake_bytes: u64,
    /// Segment size used for pacing and loss accounting.
    pub mtu: usize,
    /// Stall charged to a stream when one of its segments is lost.
    pub rto_ms: u64,
}

impl ShimConfig {
    /// No shaping at all; every operation returns immediately.
    pub fn unshaped() -> Self {
        ShimConfig {
            bandwidth_kbps: None,
            extra_delay_ms: 0,
            loss_pct: 0.0,
            base_rtt_ms: 0,
            handshake_rtts: 0,
            handshake_bytes: 0,
            mtu: 1460,
            rto_ms: 0,
        }
    }

    /// A shaped path with the usual connection-setup costs enabled.
    pub fn shaped(base_rtt_ms: u64) -> Self {
        ShimConfig {
            bandwidth_kbps: None,
            extra_delay_ms: 0,
            loss_pct: 0.0,
            base_rtt_ms,
            handshake_rtts: 2,
            handshake_bytes: 4000,
            mtu: 1460,
            rto_ms: 250,
        }
    }
}

struct Bucket {
    available: f64,
    last: Instant,
}

pub struct NetShim {
    cfg: RwLock<ShimConfig>,
    bucket: Mutex<Bucket>,
}

impl NetShim {
    pub fn new(cfg: ShimConfig) -> Arc<Self> {
        Arc::new(NetShim {
            cfg: RwLock::new(cfg),
            bucket: Mutex::new(Bucket {
                available: 0.0,
                last: Instant::now(),
            }),
        })
    }

    pub fn config(&self) -> ShimConfig {
        self.cfg.read().unwrap().clone()
    }

    /// Swaps the active configuration (used by bench scenario setup).
    pub fn set_config(&self, cfg: ShimConfig) {
        *self.cfg.write().unwrap() = cfg;
        let mut bucket = self.bucket.lock().unwrap();
        bucket.available = 0.0;
        bucket.last = Instant::now();
    }

    fn rtt(&self) -> Duration {
        let cfg = self.cfg.read().unwrap();
        Duration::from_millis(cfg.base_rtt_ms + cfg.extra_delay_ms)
    }

    /// Cost of establishing one new connection.
    pub async fn connection_setup(&self) {
        let (rtts, bytes) = {
            let cfg = self.cfg.read().unwrap();
            (cfg.handshake_rtts, cfg.handshake_bytes)
        };
        let rtt = self.rtt();
        if !rtt.is_zero() && rtts > 0 {
            tokio::time::sleep(rtt * rtts).await;
        }
        if bytes > 0 {
            self.transfer(bytes).await;
        }
    }

    /// One request/response round trip.
    pub async fn request_round_trip(&self) {
        let rtt = self.rtt();
        if !rtt.is_zero() {
            tokio::time::sleep(rtt).await;
        }
    }

    /// Moves `bytes` through the shared link, segment by segment, applying
    /// loss stalls to this stream only.
    pub async fn transfer(&self, bytes: u64) {
        let (mtu, loss_pct, rto_ms, shaped) = {
            let cfg = self.cfg.read().unwrap();
            (
                cfg.mtu.max(1) as u64,
                cfg.loss_pct,
                cfg.rto_ms,
                cfg.bandwidth_kbps.is_some() || cfg.loss_pct > 0.0,
            )
        };
        if !shaped {
            return;
        }
        let mut remaining = bytes;
        while remaining > 0 {
            let seg = remaining.min(mtu);
            self.acquire(seg as f64).await;
            if loss_pct > 0.0 && rand::thread_rng().gen_bool((loss_pct / 100.0).clamp(0.0, 1.0)) {
                // Lost segment: the stream stalls for the RTO, then the
                // retransmission consumes link capacity again.
                tokio::time::sleep(Duration::from_millis(rto_ms)).await;
                self.acquire(seg as f64).await;
            }
            remaining -= seg;
        }
    }

    async fn acquire(&self, n: f64) {
        loop {
            let wait = {
                let rate = match self.cfg.read().unwrap().bandwidth_kbps {
                    Some(kbps) => kbps as f64 * 1000.0 / 8.0,
                    None => return,
                };
                let mut bucket = self.bucket.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(bucket.last).as_secs_f64();
                bucket.last = now;
                // Cap the burst so an idle link cannot bank unbounded credit.
                bucket.available = (bucket.available + elapsed * rate).min(rate * 0.05 + n);
                if bucket.available >= n {
                    bucket.available -= n;
                    return;
                }
                Duration::from_secs_f64((n - bucket.available) / rate)
            };
            tokio::time::sleep(wait).await;
        }
    }
}
