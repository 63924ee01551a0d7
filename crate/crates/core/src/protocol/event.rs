// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::bundle::{Bundle, BundleMetadata, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topic {
    BundleReceived,
    ForwardingRequired,
    BundleForwarded,
    ActionFailed,
    BundleExpired,
    BundleDelivered,
    LinkUp,
    LinkDown,
    /// Pushed to registered applications on the application listener only.
    Delivery,
}

impl Topic {
    /// Every topic published on the dispatch bus.
    pub const BUS: [Topic; 8] = [
        Topic::BundleReceived,
        Topic::ForwardingRequired,
        Topic::BundleForwarded,
        Topic::ActionFailed,
        Topic::BundleExpired,
        Topic::BundleDelivered,
        Topic::LinkUp,
        Topic::LinkDown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Topic::BundleReceived => "bundle-received",
            Topic::ForwardingRequired => "forwarding-required",
            Topic::BundleForwarded => "bundle-forwarded",
            Topic::ActionFailed => "action-failed",
            Topic::BundleExpired => "bundle-expired",
            Topic::BundleDelivered => "bundle-delivered",
            Topic::LinkUp => "link-up",
            Topic::LinkDown => "link-down",
            Topic::Delivery => "delivery",
        }
    }

    fn payload_class(self) -> PayloadClass {
        match self {
            Topic::BundleReceived
            | Topic::ForwardingRequired
            | Topic::BundleExpired
            | Topic::BundleDelivered => PayloadClass::Bundle,
            Topic::BundleForwarded | Topic::ActionFailed => PayloadClass::Outcome,
            Topic::LinkUp | Topic::LinkDown => PayloadClass::Link,
            Topic::Delivery => PayloadClass::Delivery,
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::BUS
            .into_iter()
            .chain([Topic::Delivery])
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown topic {s:?}"))
    }
}

#[derive(Clone, Copy)]
enum PayloadClass {
    Bundle,
    Outcome,
    Link,
    Delivery,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventPayload {
    Bundle {
        bundle: BundleMetadata,
    },
    Outcome {
        bundle: BundleMetadata,
        action_index: usize,
        reason: String,
    },
    Link {
        peer: String,
        address: String,
    },
    Delivery {
        bundle: Bundle,
    },
}

impl EventPayload {
    fn class(&self) -> PayloadClass {
        match self {
            EventPayload::Bundle { .. } => PayloadClass::Bundle,
            EventPayload::Outcome { .. } => PayloadClass::Outcome,
            EventPayload::Link { .. } => PayloadClass::Link,
            EventPayload::Delivery { .. } => PayloadClass::Delivery,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub topic: Topic,
    pub timestamp: Instant,
    pub payload: EventPayload,
}

impl Event {
    pub fn bundle(topic: Topic, timestamp: Instant, bundle: BundleMetadata) -> Self {
        Event {
            topic,
            timestamp,
            payload: EventPayload::Bundle { bundle },
        }
    }

    pub fn outcome(
        topic: Topic,
        timestamp: Instant,
        bundle: BundleMetadata,
        action_index: usize,
        reason: impl Into<String>,
    ) -> Self {
        Event {
            topic,
            timestamp,
            payload: EventPayload::Outcome {
                bundle,
                action_index,
                reason: reason.into(),
            },
        }
    }

    pub fn link(topic: Topic, timestamp: Instant, peer: &str, address: &str) -> Self {
        Event {
            topic,
            timestamp,
            payload: EventPayload::Link {
                peer: peer.to_string(),
                address: address.to_string(),
            },
        }
    }

    /// Metadata snapshot carried by bundle-topic events.
    pub fn metadata(&self) -> Option<&BundleMetadata> {
        match &self.payload {
            EventPayload::Bundle { bundle } | EventPayload::Outcome { bundle, .. } => Some(bundle),
            _ => None,
        }
    }

    pub fn action_index(&self) -> Option<usize> {
        match &self.payload {
            EventPayload::Outcome { action_index, .. } => Some(*action_index),
            _ => None,
        }
    }

    pub fn link_peer(&self) -> Option<&str> {
        match &self.payload {
            EventPayload::Link { peer, .. } => Some(peer),
            _ => None,
        }
    }

    /// True if the payload shape matches what the topic requires.
    pub fn is_consistent(&self) -> bool {
        std::mem::discriminant(&self.topic.payload_class()) == std::mem::discriminant(&self.payload.class())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct BundlePayload<T> {
    bundle: T,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct OutcomePayload {
    bundle: BundleMetadata,
    action_index: usize,
    reason: String,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct LinkPayload {
    peer: String,
    address: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    topic: Topic,
    timestamp: Instant,
    payload: Value,
}

impl Serialize for Event {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error;
        if !self.is_consistent() {
            return Err(S::Error::custom(format!(
                "payload does not match topic {}",
                self.topic
            )));
        }
        let payload = match &self.payload {
            EventPayload::Bundle { bundle } => serde_json::to_value(BundlePayload { bundle }),
            EventPayload::Outcome {
                bundle,
                action_index,
                reason,
            } => serde_json::to_value(OutcomePayload {
                bundle: bundle.clone(),
                action_index: *action_index,
                reason: reason.clone(),
            }),
            EventPayload::Link { peer, address } => serde_json::to_value(LinkPayload {
                peer: peer.clone(),
                address: address.clone(),
            }),
            EventPayload::Delivery { bundle } => serde_json::to_value(BundlePayload { bundle }),
        }
        .map_err(S::Error::custom)?;
        RawEvent {
            topic: self.topic,
            timestamp: self.timestamp,
            payload,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Event {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawEvent::deserialize(deserializer)?;
        let payload = match raw.topic.payload_class() {
            PayloadClass::Bundle => {
                let p: BundlePayload<BundleMetadata> =
                    serde_json::from_value(raw.payload).map_err(D::Error::custom)?;
                EventPayload::Bundle { bundle: p.bundle }
            }
            PayloadClass::Outcome => {
                let p: OutcomePayload = serde_json::from_value(raw.payload).map_err(D::Error::custom)?;
                EventPayload::Outcome {
                    bundle: p.bundle,
                    action_index: p.action_index,
                    reason: p.reason,
                }
            }
            PayloadClass::Link => {
                let p: LinkPayload = serde_json::from_value(raw.payload).map_err(D::Error::custom)?;
                EventPayload::Link {
                    peer: p.peer,
                    address: p.address,
                }
            }
            PayloadClass::Delivery => {
                let p: BundlePayload<Bundle> =
                    serde_json::from_value(raw.payload).map_err(D::Error::custom)?;
                EventPayload::Delivery { bundle: p.bundle }
            }
        };
        Ok(Event {
            topic: raw.topic,
            timestamp: raw.timestamp,
            payload,
        })
    }
}
