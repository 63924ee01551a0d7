// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeSet, HashMap, HashSet};
use std::str::FromStr;

use super::{needs_forwarding, previous_hop, Decision, Dispatcher, LinkSet};
use crate::bundle::{BundleId, BundleMetadata, Instant};
use crate::protocol::{Action, Event, Topic};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloodMode {
    /// Hand the bundle to one peer, then drop it.
    SingleCopy,
    /// Copy to every new peer; never drop.
    Flood,
}

impl FromStr for FloodMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single-copy" | "single" => Ok(FloodMode::SingleCopy),
            "flood" => Ok(FloodMode::Flood),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Forwards over whatever links happen to be up.
pub struct OpportunisticDispatcher {
    mode: FloodMode,
    links: LinkSet,
    /// Peers a bundle is known to have reached.
    delivered_to: HashSet<(BundleId, String)>,
    /// Peers named in the list most recently issued for a bundle.
    issued: HashMap<BundleId, BTreeSet<String>>,
}

impl OpportunisticDispatcher {
    pub fn new(mode: FloodMode) -> Self {
        OpportunisticDispatcher {
            mode,
            links: LinkSet::default(),
            delivered_to: HashSet::new(),
            issued: HashMap::new(),
        }
    }

    fn decide(&mut self, md: &BundleMetadata) -> Option<Decision> {
        let prev = previous_hop(md);
        let dest = md.destination.node_name();
        match self.mode {
            FloodMode::SingleCopy => {
                if self.issued.contains_key(&md.id) {
                    return None;
                }
                let hop = if self.links.contains(dest) {
                    dest.to_string()
                } else {
                    self.links.iter().find(|p| Some(*p) != prev)?.to_string()
                };
                self.issued.insert(md.id.clone(), BTreeSet::from([hop.clone()]));
                Some(Decision::UpdateActions {
                    id: md.id.clone(),
                    actions: vec![Action::send_to(&hop), Action::drop()],
                })
            }
            FloodMode::Flood => {
                let issued = self.issued.entry(md.id.clone()).or_default();
                let fresh: Vec<String> = self
                    .links
                    .iter()
                    .filter(|p| Some(*p) != prev)
                    .filter(|p| !issued.contains(*p))
                    .filter(|p| !self.delivered_to.contains(&(md.id.clone(), p.to_string())))
                    .map(str::to_string)
                    .collect();
                if fresh.is_empty() {
                    return None;
                }
                issued.extend(fresh.iter().cloned());
                Some(Decision::UpdateActions {
                    id: md.id.clone(),
                    actions: fresh.iter().map(|p| Action::send_to(p)).collect(),
                })
            }
        }
    }
}

impl Dispatcher for OpportunisticDispatcher {
    fn name(&self) -> &'static str {
        "opportunistic"
    }

    fn topics(&self) -> Vec<Topic> {
        vec![
            Topic::ForwardingRequired,
            Topic::BundleForwarded,
            Topic::LinkUp,
            Topic::LinkDown,
        ]
    }

    fn on_event(&mut self, event: &Event, _now: Instant) -> Vec<Decision> {
        match event.topic {
            Topic::ForwardingRequired => {
                let Some(md) = event.metadata() else { return vec![] };
                self.issued.remove(&md.id);
                self.decide(md).into_iter().collect()
            }
            Topic::BundleForwarded => {
                let (Some(md), Some(i)) = (event.metadata(), event.action_index()) else {
                    return vec![];
                };
                if let Some(peer) = md.current_actions.get(i).and_then(Action::send_to_target) {
                    self.delivered_to.insert((md.id.clone(), peer.to_string()));
                }
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
        let live: HashSet<&BundleId> = bundles.iter().map(|b| &b.id).collect();
        self.issued.retain(|id, _| live.contains(id));
        self.delivered_to.retain(|(id, _)| live.contains(id));
        let mut out = Vec::new();
        for md in bundles.iter().filter(|md| needs_forwarding(md)) {
            if self.mode == FloodMode::Flood {
                // peers still pending in the current list remain outstanding;
                // completed ones are already recorded
                let pending: BTreeSet<String> = md.current_actions.iter().filter_map(Action::send_to_target).map(str::to_string).collect();
                if let Some(issued) = self.issued.get_mut(&md.id) {
                    issued.retain(|p| pending.contains(p) || self.delivered_to.contains(&(md.id.clone(), p.clone())));
                }
            }
            out.extend(self.decide(md));
        }
        out
    }
}
