// SPDX-License-Identifier: Apache-2.0

//! Bundles, endpoint identifiers and lifetime arithmetic.
//!
//! All instants are milliseconds since the Unix epoch. Durations are plain
//! millisecond counts.

use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::protocol::Action;

/// Milliseconds since the Unix epoch.
pub type Instant = u64;

/// Current wall-clock time in milliseconds since the Unix epoch.
pub fn now_ms() -> Instant {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

const SCHEME_PREFIX: &str = "dtn://";

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum EndpointError {
    #[error("malformed-scheme: {0:?} does not start with dtn://")]
    MalformedScheme(String),
    #[error("empty-node-name: {0:?}")]
    EmptyNodeName(String),
    #[error("invalid character in endpoint {0:?}")]
    InvalidCharacter(String),
}

impl EndpointError {
    pub fn code(&self) -> &'static str {
        match self {
            EndpointError::MalformedScheme(_) => "malformed-scheme",
            EndpointError::EmptyNodeName(_) => "empty-node-name",
            EndpointError::InvalidCharacter(_) => "invalid-character",
        }
    }
}

/// A `dtn://<node-name>/<demux>` endpoint identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EndpointId {
    node: String,
    demux: String,
}

/// Returns true if `name` is usable as a node name.
pub fn is_valid_node_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(|c| c == '/' || c.is_whitespace() || c.is_control())
}

impl EndpointId {
    pub fn new(node: &str, demux: &str) -> Result<Self, EndpointError> {
        if node.is_empty() {
            return Err(EndpointError::EmptyNodeName(node.to_string()));
        }
        if !is_valid_node_name(node) || demux.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(EndpointError::InvalidCharacter(format!("{node}/{demux}")));
        }
        Ok(EndpointId {
            node: node.to_string(),
            demux: demux.to_string(),
        })
    }

    /// The node-level endpoint `dtn://<node>/`.
    pub fn node_endpoint(node: &str) -> Result<Self, EndpointError> {
        Self::new(node, "")
    }

    pub fn node_name(&self) -> &str {
        &self.node
    }

    pub fn demux(&self) -> &str {
        &self.demux
    }
}

/// Parses the canonical text form. `dtn://node` without a trailing slash is
/// accepted and treated as `dtn://node/`.
pub fn parse_endpoint(text: &str) -> Result<EndpointId, EndpointError> {
    let rest = text
        .strip_prefix(SCHEME_PREFIX)
        .ok_or_else(|| EndpointError::MalformedScheme(text.to_string()))?;
    let (node, demux) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i + 1..]),
        None => (rest, ""),
    };
    if node.is_empty() {
        return Err(EndpointError::EmptyNodeName(text.to_string()));
    }
    EndpointId::new(node, demux)
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{SCHEME_PREFIX}{}/{}", self.node, self.demux)
    }
}

impl FromStr for EndpointId {
    type Err = EndpointError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_endpoint(s)
    }
}

impl Serialize for EndpointId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EndpointId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_endpoint(&s).map_err(serde::de::Error::custom)
    }
}

/// Bundle identity at the originating node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BundleId {
    pub source: EndpointId,
    pub creation_time: Instant,
    pub sequence: u64,
}

impl fmt::Display for BundleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}.{}", self.source, self.creation_time, self.sequence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExtensionBlock {
    pub block_type: u64,
    pub flags: u64,
    #[serde(with = "crate::protocol::base64_bytes")]
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Bundle {
    pub id: BundleId,
    pub destination: EndpointId,
    pub report_to: Option<EndpointId>,
    /// Milliseconds; always > 0 for a well-formed bundle.
    pub lifetime: u64,
    pub previous_node: Option<EndpointId>,
    #[serde(default)]
    pub extension_blocks: Vec<ExtensionBlock>,
    #[serde(with = "crate::protocol::base64_bytes")]
    pub payload: Vec<u8>,
}

impl Bundle {
    /// `creation-time + lifetime`, saturating instead of wrapping.
    pub fn expires_at(&self) -> Instant {
        expires_at(self)
    }

    pub fn is_expired(&self, now: Instant) -> bool {
        is_expired(self, now)
    }

    /// Payload-free projection of this bundle.
    pub fn metadata(
        &self,
        arrival_time: Instant,
        current_actions: Vec<Action>,
        update_seq: u64,
        retention: Vec<Retention>,
    ) -> BundleMetadata {
        BundleMetadata {
            id: self.id.clone(),
            destination: self.destination.clone(),
            report_to: self.report_to.clone(),
            previous_node: self.previous_node.clone(),
            lifetime: self.lifetime,
            payload_length: self.payload.len() as u64,
            extension_blocks: self.extension_blocks.clone(),
            arrival_time,
            current_actions,
            update_seq,
            retention,
        }
    }
}

pub fn expires_at(bundle: &Bundle) -> Instant {
    bundle.id.creation_time.saturating_add(bundle.lifetime)
}

pub fn is_expired(bundle: &Bundle, now: Instant) -> bool {
    now >= expires_at(bundle)
}

/// Tags that keep a bundle in the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Retention {
    ForwardPending,
    DispatchPending,
}

/// Everything a dispatcher needs to know about a stored bundle, minus the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BundleMetadata {
    pub id: BundleId,
    pub destination: EndpointId,
    pub report_to: Option<EndpointId>,
    pub previous_node: Option<EndpointId>,
    pub lifetime: u64,
    pub payload_length: u64,
    pub extension_blocks: Vec<ExtensionBlock>,
    pub arrival_time: Instant,
    pub current_actions: Vec<Action>,
    pub update_seq: u64,
    #[serde(default)]
    pub retention: Vec<Retention>,
}

impl BundleMetadata {
    pub fn expires_at(&self) -> Instant {
        self.id.creation_time.saturating_add(self.lifetime)
    }
}
