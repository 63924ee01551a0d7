// SPDX-License-Identifier: Apache-2.0

//! Everything observed during one scenario run.

use std::collections::BTreeMap;

use crate::bundle::{BundleId, Instant};
use crate::protocol::{Event, Message, Topic};
use crate::wirelog::{Channel, Direction, Record};

#[derive(Debug, Clone)]
pub struct SentRecord {
    pub node: String,
    pub id: BundleId,
    pub t: Instant,
    pub lifetime: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct DeliveryRecord {
    pub node: String,
    pub demux: String,
    pub t: Instant,
    pub id: BundleId,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub t0: Instant,
    /// Wire log records per node.
    pub records: BTreeMap<String, Vec<Record>>,
    pub sent: Vec<SentRecord>,
    pub deliveries: Vec<DeliveryRecord>,
    /// Replies to control commands, prefixed with the node name.
    pub control: Vec<String>,
}

impl Trace {
    fn node_records(&self, node: &str) -> &[Record] {
        self.records.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Events published on `node`'s bus, in publication order.
    pub fn events(&self, node: &str) -> Vec<(Instant, Event)> {
        self.node_records(node)
            .iter()
            .filter(|r| r.ch == Channel::Bus)
            .filter_map(|r| match r.envelope()?.message {
                Message::Event(e) => Some((r.t, e)),
                _ => None,
            })
            .collect()
    }

    /// Events on `node` concerning bundle `id`.
    pub fn bundle_events(&self, node: &str, id: &BundleId) -> Vec<(Instant, Event)> {
        self.events(node)
            .into_iter()
            .filter(|(_, e)| e.metadata().is_some_and(|m| &m.id == id))
            .collect()
    }

    pub fn first_event(&self, node: &str, topic: Topic, id: &BundleId) -> Option<Instant> {
        self.bundle_events(node, id)
            .into_iter()
            .find(|(_, e)| e.topic == topic)
            .map(|(t, _)| t)
    }

    /// Frames `from` sent to `to`.
    pub fn frames(&self, from: &str, to: &str) -> Vec<&Record> {
        self.node_records(from)
            .iter()
            .filter(|r| r.ch == Channel::Cla && r.dir == Direction::Out && r.peer.as_deref() == Some(to))
            .collect()
    }

    /// RPC requests received on `node`'s dispatch listener.
    pub fn rpc_requests(&self, node: &str) -> usize {
        self.node_records(node)
            .iter()
            .filter(|r| r.ch == Channel::Dispatch && r.dir == Direction::In)
            .filter(|r| matches!(r.envelope().map(|e| e.message), Some(Message::RpcRequest(_))))
            .count()
    }

    pub fn deliveries_to(&self, node: &str, demux: &str) -> Vec<&DeliveryRecord> {
        self.deliveries
            .iter()
            .filter(|d| d.node == node && d.demux == demux)
            .collect()
    }

    /// Whether `id` was held by `node` at time `t`: received or submitted
    /// before `t` and not yet forwarded, delivered or expired.
    pub fn held_at(&self, node: &str, id: &BundleId, t: Instant) -> bool {
        let mut held = false;
        for (at, e) in self.bundle_events(node, id) {
            if at > t {
                break;
            }
            match e.topic {
                Topic::BundleReceived | Topic::ForwardingRequired => held = true,
                Topic::BundleExpired | Topic::BundleDelivered => held = false,
                Topic::BundleForwarded => {
                    // a send followed by a drop removes it; without a drop it stays
                    let md = e.metadata().expect("bundle event");
                    let next = e.action_index().map(|i| i + 1).unwrap_or(0);
                    if md.current_actions.get(next).is_some_and(|a| a.is_drop()) {
                        held = false;
                    }
                }
                _ => {}
            }
        }
        held
    }
}
