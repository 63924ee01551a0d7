// SPDX-License-Identifier: Apache-2.0

//! Reference dispatcher modules.
//!
//! Each dispatcher is a pure state machine fed with events, bundle listings
//! and timer wakeups; it answers with [`Decision`]s. [`driver::run`] wires one
//! to a node's dispatch listener.

pub mod contact;
pub mod driver;
pub mod opportunistic;
pub mod plan;
pub mod routes;
pub mod static_routes;

use std::collections::HashSet;

use crate::bundle::{BundleId, BundleMetadata, Instant, Retention};
use crate::protocol::{Action, Event, Topic};

pub use contact::ContactDispatcher;
pub use opportunistic::{FloodMode, OpportunisticDispatcher};
pub use plan::{earliest_arrival, load_plan, parse_plan, ContactPlanEntry, PlanError, Route};
pub use routes::{RoutesError, StaticRouteTable};
pub use static_routes::StaticDispatcher;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    UpdateActions { id: BundleId, actions: Vec<Action> },
    /// Ask for a `list-bundles` snapshot, answered via `on_bundle_list`.
    ListBundles,
    /// Ask for an `on_wake` call at or after the given time.
    WakeAt(Instant),
}

pub trait Dispatcher: Send {
    fn name(&self) -> &'static str;

    fn topics(&self) -> Vec<Topic>;

    /// Called once with the node name announced by the agent.
    fn on_connect(&mut self, _node: &str) {}

    fn on_event(&mut self, event: &Event, now: Instant) -> Vec<Decision>;

    fn on_bundle_list(&mut self, bundles: &[BundleMetadata], now: Instant) -> Vec<Decision>;

    fn on_wake(&mut self, _now: Instant) -> Vec<Decision> {
        Vec::new()
    }
}

pub(crate) fn needs_forwarding(md: &BundleMetadata) -> bool {
    md.retention.contains(&Retention::ForwardPending)
}

pub(crate) fn previous_hop(md: &BundleMetadata) -> Option<&str> {
    md.previous_node.as_ref().map(|p| p.node_name())
}

/// Link state as seen through events. Peers never mentioned since attach are
/// unknown: a dispatcher that attaches after links came up has no other way
/// to learn about them.
#[derive(Debug, Default, Clone)]
pub(crate) struct LinkSet {
    /// Peers with an open link, in link-up order.
    order: Vec<String>,
    down: HashSet<String>,
}

impl LinkSet {
    /// Applies a link event; returns true on link-up.
    pub fn apply(&mut self, event: &Event) -> bool {
        let Some(peer) = event.link_peer() else { return false };
        match event.topic {
            Topic::LinkUp => {
                if !self.contains(peer) {
                    self.order.push(peer.to_string());
                }
                self.down.remove(peer);
                true
            }
            Topic::LinkDown => {
                self.mark_down(peer);
                false
            }
            _ => false,
        }
    }

    /// Records a failed send to `peer`; it stays down until its next link-up.
    pub fn mark_down(&mut self, peer: &str) {
        self.order.retain(|p| p != peer);
        self.down.insert(peer.to_string());
    }

    /// Applies an action-failed event: the failed send's target is down.
    pub fn apply_failure(&mut self, event: &Event) {
        let (Some(md), Some(i)) = (event.metadata(), event.action_index()) else { return };
        if let Some(peer) = md.current_actions.get(i).and_then(Action::send_to_target) {
            self.mark_down(peer);
        }
    }

    pub fn contains(&self, peer: &str) -> bool {
        self.order.iter().any(|p| p == peer)
    }

    /// Up, or never reported since attach.
    pub fn maybe_up(&self, peer: &str) -> bool {
        self.contains(peer) || !self.down.contains(peer)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }
}
