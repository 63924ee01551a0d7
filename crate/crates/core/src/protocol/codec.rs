// SPDX-License-Identifier: Apache-2.0

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::io::{AsyncBufRead, AsyncBufReadExt};

use super::{Envelope, Hello, Kind, Message, RpcRequest, RpcResponse, Subscribe};
use crate::protocol::Event;

/// Maximum line length (excluding the newline) on the dispatch listener.
pub const DISPATCH_LINE_CAP: usize = 1 << 20;

/// Line cap on the application listener, sized for 1 MiB payloads after
/// base64 expansion. Matches the convergence-layer frame cap.
pub const APP_LINE_CAP: usize = 16 << 20;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed-document: {0}")]
    MalformedDocument(String),
    #[error("unknown-kind: {0:?}")]
    UnknownKind(String),
    #[error("seq-regression: got {got} after {previous}")]
    SeqRegression { previous: u64, got: u64 },
    #[error("unrepresentable-value: {0}")]
    Unrepresentable(String),
}

impl CodecError {
    pub fn code(&self) -> &'static str {
        match self {
            CodecError::MalformedDocument(_) => "malformed-document",
            CodecError::UnknownKind(_) => "unknown-kind",
            CodecError::SeqRegression { .. } => "seq-regression",
            CodecError::Unrepresentable(_) => "unrepresentable-value",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvelope {
    kind: String,
    seq: u64,
    body: Value,
}

/// Encodes one envelope as a single `\n`-terminated line.
pub fn encode_message(envelope: &Envelope) -> Result<Vec<u8>, CodecError> {
    let unrepresentable = |e: serde_json::Error| CodecError::Unrepresentable(e.to_string());
    let body = match &envelope.message {
        Message::Hello(h) => serde_json::to_value(h),
        Message::Event(e) => serde_json::to_value(e),
        Message::RpcRequest(r) => serde_json::to_value(r),
        Message::RpcResponse(r) => serde_json::to_value(r),
        Message::Subscribe(s) => serde_json::to_value(s),
    }
    .map_err(unrepresentable)?;
    let raw = RawEnvelope {
        kind: envelope.kind().as_str().to_string(),
        seq: envelope.seq,
        body,
    };
    let mut out = serde_json::to_vec(&raw).map_err(unrepresentable)?;
    debug_assert!(!out.contains(&b'\n'));
    out.push(b'\n');
    Ok(out)
}

/// Decodes one line (with or without its trailing newline) using the dispatch cap.
pub fn decode_message(line: &[u8]) -> Result<Envelope, CodecError> {
    decode_message_with_cap(line, DISPATCH_LINE_CAP)
}

pub fn decode_message_with_cap(line: &[u8], cap: usize) -> Result<Envelope, CodecError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    if line.len() > cap {
        return Err(CodecError::MalformedDocument(format!(
            "line of {} bytes exceeds cap of {cap}",
            line.len()
        )));
    }
    if line.contains(&b'\n') || line.contains(&b'\r') {
        return Err(CodecError::MalformedDocument("raw newline or carriage return".into()));
    }
    let malformed = |e: serde_json::Error| CodecError::MalformedDocument(e.to_string());
    let raw: RawEnvelope = serde_json::from_slice(line).map_err(malformed)?;
    let kind = Kind::parse(&raw.kind).ok_or_else(|| CodecError::UnknownKind(raw.kind.clone()))?;
    let message = match kind {
        Kind::Hello => Message::Hello(serde_json::from_value::<Hello>(raw.body).map_err(malformed)?),
        Kind::Event => Message::Event(serde_json::from_value::<Event>(raw.body).map_err(malformed)?),
        Kind::RpcRequest => {
            Message::RpcRequest(serde_json::from_value::<RpcRequest>(raw.body).map_err(malformed)?)
        }
        Kind::RpcResponse => {
            Message::RpcResponse(serde_json::from_value::<RpcResponse>(raw.body).map_err(malformed)?)
        }
        Kind::Subscribe => {
            Message::Subscribe(serde_json::from_value::<Subscribe>(raw.body).map_err(malformed)?)
        }
    };
    Ok(Envelope {
        seq: raw.seq,
        message,
    })
}

/// Inbound sequence check for one direction of one connection.
#[derive(Debug, Default)]
pub struct SeqTracker {
    last: Option<u64>,
}

impl SeqTracker {
    pub fn check(&mut self, seq: u64) -> Result<(), CodecError> {
        if let Some(previous) = self.last {
            if seq <= previous {
                return Err(CodecError::SeqRegression { previous, got: seq });
            }
        }
        self.last = Some(seq);
        Ok(())
    }

    /// Decodes and checks sequencing in one step.
    pub fn decode(&mut self, line: &[u8], cap: usize) -> Result<Envelope, CodecError> {
        let env = decode_message_with_cap(line, cap)?;
        self.check(env.seq)?;
        Ok(env)
    }
}

/// Reads one `\n`-terminated line without buffering more than `cap` bytes.
///
/// Returns `Ok(None)` on a clean end of stream. A line longer than `cap`
/// yields `InvalidData`; end of stream in the middle of a line yields
/// `UnexpectedEof`. The returned line excludes the newline.
pub async fn read_line_capped<R>(reader: &mut R, cap: usize) -> io::Result<Option<Vec<u8>>>
where
    R: AsyncBufRead + Unpin,
{
    let mut line = Vec::new();
    loop {
        let available = reader.fill_buf().await?;
        if available.is_empty() {
            if line.is_empty() {
                return Ok(None);
            }
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated line"));
        }
        let (chunk, done) = match available.iter().position(|&b| b == b'\n') {
            Some(i) => (&available[..i], Some(i + 1)),
            None => (available, None),
        };
        if line.len() + chunk.len() > cap {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line exceeds cap of {cap} bytes"),
            ));
        }
        line.extend_from_slice(chunk);
        let consumed = done.unwrap_or(chunk.len());
        reader.consume(consumed);
        if done.is_some() {
            return Ok(Some(line));
        }
    }
}
