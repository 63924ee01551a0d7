// SPDX-License-Identifier: Apache-2.0

//! Wire protocol shared by the node, dispatcher modules, monitors and
//! applications.
//!
//! Every message is one JSON document on one line:
//!
//! ```text
//! {"kind":"<kind>","seq":<n>,"body":{...}}\n
//! ```
//!
//! Byte strings are carried as standard (padded) base64. Lines are capped at
//! [`DISPATCH_LINE_CAP`] bytes on the dispatch listener.

mod action;
mod codec;
mod event;
mod rpc;

pub use action::{core_verbs, validate_action_list, Action, ActionError, VerbDescriptor, DROP, SEND_TO};
pub use codec::{
    decode_message, decode_message_with_cap, encode_message, read_line_capped, CodecError,
    SeqTracker, APP_LINE_CAP, DISPATCH_LINE_CAP,
};
pub use event::{Event, EventPayload, Topic};
pub use rpc::{
    method, BundleIdParams, BundleResult, ListBundlesResult, RegisterParams, RegisterResult,
    RpcError, RpcRequest, RpcResponse, SendAduParams, SendAduResult, SetDefaultActionsParams,
    SupportedActionsResult, UpdateActionsParams,
};

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Envelope kinds. Anything else on the wire terminates the connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Event,
    RpcRequest,
    RpcResponse,
    Subscribe,
    Hello,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Event => "event",
            Kind::RpcRequest => "rpc-request",
            Kind::RpcResponse => "rpc-response",
            Kind::Subscribe => "subscribe",
            Kind::Hello => "hello",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "event" => Kind::Event,
            "rpc-request" => Kind::RpcRequest,
            "rpc-response" => Kind::RpcResponse,
            "subscribe" => Kind::Subscribe,
            "hello" => Kind::Hello,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Bpa,
    Bdm,
    App,
    Monitor,
    Cla,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Hello {
    pub protocol_version: u32,
    pub role: Role,
    pub node: String,
}

impl Hello {
    pub fn new(role: Role, node: &str) -> Self {
        Hello {
            protocol_version: PROTOCOL_VERSION,
            role,
            node: node.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subscribe {
    pub topics: Vec<Topic>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    Event(Event),
    RpcRequest(RpcRequest),
    RpcResponse(RpcResponse),
    Subscribe(Subscribe),
}

impl Message {
    pub fn kind(&self) -> Kind {
        match self {
            Message::Hello(_) => Kind::Hello,
            Message::Event(_) => Kind::Event,
            Message::RpcRequest(_) => Kind::RpcRequest,
            Message::RpcResponse(_) => Kind::RpcResponse,
            Message::Subscribe(_) => Kind::Subscribe,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub seq: u64,
    pub message: Message,
}

impl Envelope {
    pub fn new(seq: u64, message: Message) -> Self {
        Envelope { seq, message }
    }

    pub fn kind(&self) -> Kind {
        self.message.kind()
    }
}

/// Per-connection outbound sequence numbering, starting at 0.
#[derive(Debug, Default)]
pub struct SeqCounter {
    next: u64,
}

impl SeqCounter {
    pub fn wrap(&mut self, message: Message) -> Envelope {
        let seq = self.next;
        self.next += 1;
        Envelope { seq, message }
    }
}

/// serde adapter for byte strings as standard base64.
pub mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        STANDARD.decode(s.as_bytes()).map_err(serde::de::Error::custom)
    }
}
