//! Master/worker wire protocol: u32 big-endian length-prefixed JSON frames
//! over TCP. Every message carries the protocol version and the sender's
//! worker id so the master can reject strangers and stale binaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::prober::ProbeRecord;

pub const WIRE_PROTOCOL_VERSION: u32 = 1;

/// Refuse to allocate for frames beyond this size (16 MiB).
const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Worker -> master: identify and ask for work, reporting health.
    Hello {
        free_memory_mb: u64,
        cpu_load_pct: f64,
    },
    /// Master -> worker: here is your chunk.
    Task { task_id: u64, hosts: Vec<String> },
    /// Master -> worker: nothing right now; `done` means the run is over.
    NoTask { done: bool },
    /// Worker -> master: results for a task.
    Report {
        task_id: u64,
        records: Vec<ProbeRecord>,
    },
    /// Master -> worker: report received; `accepted` false means rejected
    /// (e.g. incomplete coverage) and the task stays live.
    Ack { task_id: u64, accepted: bool },
    /// Either side: closing the connection cleanly.
    Bye,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub protocol_version: u32,
    pub worker_id: String,
    #[serde(flatten)]
    pub payload: Payload,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(u32),
    #[error("malformed frame: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("peer speaks protocol {got}, expected {expected}")]
    VersionMismatch { got: u32, expected: u32 },
}

pub async fn write_message<W: AsyncWrite + Unpin>(
    writer: &mut W,
    msg: &Message,
) -> Result<(), WireError> {
    let body = serde_json::to_vec(msg)?;
    let len = u32::try_from(body.len()).map_err(|_| WireError::FrameTooLarge(u32::MAX))?;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    writer.write_all(&len.to_be_bytes()).await?;
    writer.write_all(&body).await?;
    writer.flush().await?;
    Ok(())
}

pub async fn read_message<R: AsyncRead + Unpin>(reader: &mut R) -> Result<Message, WireError> {
    let mut len_buf = [0u8; 4];
    reader.read_exact(&mut len_buf).await?;
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    reader.read_exact(&mut body).await?;
    let msg: Message = serde_json::from_slice(&body)?;
    if msg.protocol_version != WIRE_PROTOCOL_VERSION {
        return Err(WireError::VersionMismatch {
            got: msg.protocol_version,
            expected: WIRE_PROTOCOL_VERSION,
        });
    }
    Ok(msg)
}

impl Message {
    pub fn new(worker_id: impl Into<String>, payload: Payload) -> Message {
        Message {
            protocol_version: WIRE_PROTOCOL_VERSION,
            worker_id: worker_id.into(),
            payload,
        }
    }
}
