// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use super::{needs_forwarding, Decision, Dispatcher, LinkSet, StaticRouteTable};
use crate::bundle::{BundleId, BundleMetadata, Instant};
use crate::protocol::{Action, Event, Topic};

/// Forwards along a fixed next-hop table when the next hop's link is up.
pub struct StaticDispatcher {
    table: StaticRouteTable,
    links: LinkSet,
    issued: HashMap<BundleId, String>,
    local: String,
}

impl StaticDispatcher {
    pub fn new(table: StaticRouteTable) -> Self {
        StaticDispatcher {
            table,
            links: LinkSet::default(),
            issued: HashMap::new(),
            local: String::new(),
        }
    }

    fn decide(&mut self, md: &BundleMetadata) -> Option<Decision> {
        let hop = self.table.next_hop(md.destination.node_name())?;
        if hop == self.local || !self.links.maybe_up(hop) {
            return None;
        }
        if self.issued.get(&md.id).map(String::as_str) == Some(hop) {
            return None;
        }
        self.issued.insert(md.id.clone(), hop.to_string());
        Some(Decision::UpdateActions {
            id: md.id.clone(),
            actions: vec![Action::send_to(hop), Action::drop()],
        })
    }
}

impl Dispatcher for StaticDispatcher {
    fn name(&self) -> &'static str {
        "static"
    }

    fn topics(&self) -> Vec<Topic> {
        vec![Topic::ForwardingRequired, Topic::ActionFailed, Topic::LinkUp, Topic::LinkDown]
    }

    fn on_connect(&mut self, node: &str) {
        self.local = node.to_string();
    }

    fn on_event(&mut self, event: &Event, _now: Instant) -> Vec<Decision> {
        match event.topic {
            Topic::ForwardingRequired => {
                let Some(md) = event.metadata() else { return vec![] };
                self.issued.remove(&md.id);
                self.decide(md).into_iter().collect()
            }
            Topic::ActionFailed => {
                self.links.apply_failure(event);
                vec![]
            }
            Topic::LinkUp | Topic::LinkDown => {
                if self.links.apply(event) {
                    vec![Decision::ListBundles]
                } else {
                    vec![]
                }
            }
            _ => vec![],
        }
    }

    fn on_bundle_list(&mut self, bundles: &[BundleMetadata], _now: Instant) -> Vec<Decision> {
        self.issued.retain(|id, _| bundles.iter().any(|b| &b.id == id));
        bundles
            .iter()
            .filter(|md| needs_forwarding(md))
            .filter_map(|md| self.decide(md))
            .collect()
    }
}
