// SPDX-License-Identifier: Apache-2.0

//! Golden transcript of a scripted dispatch-client session.
//!
//! Other client implementations replay the same RPC sequence and compare
//! their bytes to the checked-in transcript with [`normalize_line`] applied
//! to both sides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bpa::{start, NodeConfig, NodeError};
use crate::bundle::{parse_endpoint, BundleId};
use crate::client::{ClientError, DispatchClient};
use crate::protocol::{Action, Role, Topic};
use crate::wirelog::{read_log, Channel, Direction, WireLog};

#[derive(Error, Debug)]
pub enum ConformanceError {
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unexpected result for {step}: {got}")]
    Unexpected { step: &'static str, got: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub dir: Direction,
    pub line: String,
}

/// Replaces RPC correlation ids with `"*"`. Lines that are not protocol
/// envelopes are returned unchanged.
pub fn normalize_line(line: &str) -> String {
    let Ok(mut doc) = serde_json::from_str::<Value>(line) else {
        return line.to_string();
    };
    let is_rpc = matches!(doc.get("kind").and_then(Value::as_str), Some("rpc-request" | "rpc-response"));
    if is_rpc {
        if let Some(id) = doc.pointer_mut("/body/id") {
            if !id.is_null() {
                *id = Value::String("*".into());
            }
        }
    }
    serde_json::to_string(&doc).unwrap_or_else(|_| line.to_string())
}

pub fn to_jsonl(lines: &[TranscriptLine]) -> String {
    lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("serializable") + "\n")
        .collect()
}

pub fn from_jsonl(text: &str) -> Result<Vec<TranscriptLine>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

fn expect_code<T: std::fmt::Debug>(step: &'static str, r: Result<T, ClientError>, code: &str) -> Result<(), ConformanceError> {
    match r {
        Err(e) if e.rpc_code() == Some(code) => Ok(()),
        other => Err(ConformanceError::Unexpected {
            step,
            got: format!("{other:?}"),
        }),
    }
}

async fn script(client: &DispatchClient) -> Result<(), ConformanceError> {
    let unknown = BundleId {
        source: parse_endpoint("dtn://X/src").expect("valid endpoint"),
        creation_time: 1_000,
        sequence: 0,
    };
    client.subscribe(&[Topic::ForwardingRequired, Topic::LinkUp]).await?;
    client.query_supported_actions().await?;
    let listed = client.list_bundles().await?;
    if !listed.is_empty() {
        return Err(ConformanceError::Unexpected {
            step: "list-bundles",
            got: format!("{} bundles", listed.len()),
        });
    }
    expect_code(
        "update-actions",
        client.update_actions(&unknown, vec![Action::send_to("B"), Action::drop()]).await,
        "unknown-bundle",
    )?;
    expect_code("get-bundle", client.get_bundle(&unknown).await, "unknown-bundle")?;
    expect_code(
        "set-default-actions",
        client.call("set-default-actions", json!({"actions": [{"verb": "send-to", "args": {}}]})).await,
        "invalid-action-list",
    )?;
    client.set_default_actions(vec![Action::send_to("B"), Action::drop()]).await?;
    client.set_default_actions(Vec::new()).await?;
    expect_code("frobnicate", client.call("frobnicate", json!({})).await, "unknown-method")?;
    expect_code("update-actions", client.call("update-actions", json!({"id": 7})).await, "bad-params")?;
    Ok(())
}

fn scratch_path() -> PathBuf {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    std::env::temp_dir().join(format!("bpa-conformance-{}-{nanos}.jsonl", std::process::id()))
}

/// Runs the scripted session against a fresh node named `A` and returns
/// the client's view of the dispatch connection.
pub async fn record_dispatch_session() -> Result<Vec<TranscriptLine>, ConformanceError> {
    let node = start(NodeConfig::ephemeral("A")).await?;
    let path = scratch_path();
    let result = record_into(&node.dispatch_addr.to_string(), &path).await;
    node.shutdown().await;
    let lines = result.and_then(|()| Ok(read_log(&path)?));
    let _ = std::fs::remove_file(&path);
    Ok(lines?
        .into_iter()
        .filter(|r| r.ch == Channel::Dispatch)
        .filter_map(|r| Some(TranscriptLine { dir: r.dir, line: r.line? }))
        .collect())
}

async fn record_into(address: &str, path: &Path) -> Result<(), ConformanceError> {
    let client = DispatchClient::connect_logged(address, Role::Bdm, "conformance", WireLog::create(path)?).await?;
    script(&client).await
}
