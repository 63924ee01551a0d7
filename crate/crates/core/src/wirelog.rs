// SPDX-License-Identifier: Apache-2.0

//! JSON-lines capture of protocol traffic, used by the scenario runner to
//! evaluate assertions after the fact.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::bundle::{now_ms, BundleId, Instant};
use crate::protocol::{decode_message_with_cap, Envelope, APP_LINE_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    /// Lines on a dispatch-listener connection.
    Dispatch,
    /// Lines on an application-listener connection.
    App,
    /// Each event once, at publication.
    Bus,
    /// Convergence-layer frames (metadata only).
    Cla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Record {
    pub t: Instant,
    pub ch: Channel,
    pub dir: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conn: Option<u64>,
    /// The raw protocol line without its newline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
}

impl Record {
    pub fn line(ch: Channel, dir: Direction, conn: Option<u64>, line: &[u8]) -> Self {
        let line = line.strip_suffix(b"\n").unwrap_or(line);
        Record {
            t: now_ms(),
            ch,
            dir,
            conn,
            line: Some(String::from_utf8_lossy(line).into_owned()),
            peer: None,
            bundle: None,
            bytes: None,
        }
    }

    pub fn frame(dir: Direction, peer: &str, bundle: &BundleId, bytes: usize) -> Self {
        Record {
            t: now_ms(),
            ch: Channel::Cla,
            dir,
            conn: None,
            line: None,
            peer: Some(peer.to_string()),
            bundle: Some(bundle.clone()),
            bytes: Some(bytes as u64),
        }
    }

    /// Decodes the captured line, if any.
    pub fn envelope(&self) -> Option<Envelope> {
        self.line
            .as_ref()
            .and_then(|l| decode_message_with_cap(l.as_bytes(), APP_LINE_CAP).ok())
    }
}

/// Shared append-only log sink. A disabled log discards everything.
#[derive(Clone, Default)]
pub struct WireLog {
    sink: Option<Arc<Mutex<File>>>,
}

impl WireLog {
    pub fn disabled() -> Self {
        WireLog { sink: None }
    }

    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(WireLog {
            sink: Some(Arc::new(Mutex::new(File::create(path)?))),
        })
    }

    pub fn is_enabled(&self) -> bool {
        self.sink.is_some()
    }

    pub fn record(&self, record: Record) {
        let Some(sink) = &self.sink else { return };
        let mut text = match serde_json::to_vec(&record) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("wire log: {e}");
                return;
            }
        };
        text.push(b'\n');
        let mut file = sink.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = file.write_all(&text) {
            log::warn!("wire log write failed: {e}");
        }
    }
}

/// Reads a log written by [`WireLog`]. A truncated final line is ignored.
pub fn read_log(path: &Path) -> io::Result<Vec<Record>> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => records.push(r),
            Err(e) => log::warn!("skipping unreadable wire log line: {e}"),
        }
    }
    Ok(records)
}
