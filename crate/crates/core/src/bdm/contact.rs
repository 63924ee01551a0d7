// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use super::{earliest_arrival, needs_forwarding, ContactPlanEntry, Decision, Dispatcher, LinkSet};
use crate::bundle::{BundleId, BundleMetadata, Instant};
use crate::protocol::{Action, Event, Topic};

/// Forwards along earliest-arrival routes over a scheduled contact plan.
///
/// A bundle is released to its next hop once the first contact of its route
/// is open and the link to that hop is up; otherwise a wakeup is requested
/// for the planned departure.
pub struct ContactDispatcher {
    plan: Vec<ContactPlanEntry>,
    local: String,
    links: LinkSet,
    pending: HashMap<BundleId, BundleMetadata>,
    issued: HashMap<BundleId, String>,
}

impl ContactDispatcher {
    pub fn new(plan: Vec<ContactPlanEntry>) -> Self {
        ContactDispatcher {
            plan,
            local: String::new(),
            links: LinkSet::default(),
            pending: HashMap::new(),
            issued: HashMap::new(),
        }
    }

    /// Sets the local node name without a connection; `on_connect` does the same.
    pub fn with_local(mut self, node: &str) -> Self {
        self.local = node.to_string();
        self
    }

    fn evaluate(&mut self, md: &BundleMetadata, now: Instant) -> Option<Decision> {
        if self.issued.contains_key(&md.id) {
            return None;
        }
        let route = earliest_arrival(&self.plan, &self.local, md.destination.node_name(), now)?;
        let first = route.first_contact.as_ref()?;
        if route.arrival > md.expires_at() {
            log::debug!("{:?}: best arrival {} is past expiry", md.id, route.arrival);
            return None;
        }
        if first.is_active(now) && self.links.maybe_up(&route.next_hop) {
            self.issued.insert(md.id.clone(), route.next_hop.clone());
            return Some(Decision::UpdateActions {
                id: md.id.clone(),
                actions: vec![Action::send_to(&route.next_hop), Action::drop()],
            });
        }
        if route.departure > now {
            return Some(Decision::WakeAt(route.departure));
        }
        // contact open but link not up yet: the link-up event rechecks
        None
    }

    fn evaluate_all(&mut self, now: Instant) -> Vec<Decision> {
        let mut ids: Vec<BundleId> = self.pending.keys().cloned().collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            let md = self.pending[&id].clone();
            out.extend(self.evaluate(&md, now));
        }
        out
    }
}

impl Dispatcher for ContactDispatcher {
    fn name(&self) -> &'static str {
        "contact"
    }

    fn topics(&self) -> Vec<Topic> {
        vec![
            Topic::ForwardingRequired,
            Topic::ActionFailed,
            Topic::LinkUp,
            Topic::LinkDown,
        ]
    }

    fn on_connect(&mut self, node: &str) {
        self.local = node.to_string();
    }

    fn on_event(&mut self, event: &Event, now: Instant) -> Vec<Decision> {
        match event.topic {
            Topic::ForwardingRequired => {
                let Some(md) = event.metadata() else { return vec![] };
                self.issued.remove(&md.id);
                self.pending.insert(md.id.clone(), md.clone());
                self.evaluate(md, now).into_iter().collect()
            }
            Topic::ActionFailed => {
                if let Some(md) = event.metadata() {
                    self.issued.remove(&md.id);
                }
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

    fn on_bundle_list(&mut self, bundles: &[BundleMetadata], now: Instant) -> Vec<Decision> {
        self.pending = bundles
            .iter()
            .filter(|md| needs_forwarding(md))
            .map(|md| (md.id.clone(), md.clone()))
            .collect();
        self.issued.retain(|id, _| self.pending.contains_key(id));
        self.evaluate_all(now)
    }

    fn on_wake(&mut self, now: Instant) -> Vec<Decision> {
        self.evaluate_all(now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdm::tests_support::{fwd_required, link, metadata};

    fn plan() -> Vec<ContactPlanEntry> {
        vec![
            ContactPlanEntry::new("A", "Y", 2000, 10_000, 0).unwrap(),
            ContactPlanEntry::new("Y", "Z", 0, 60_000, 0).unwrap(),
        ]
    }

    #[test]
    fn waits_for_contact_then_sends() {
        let mut d = ContactDispatcher::new(plan()).with_local("A");
        d.on_event(&link(Topic::LinkDown, "Y"), 0);
        let md = metadata("Z", None);
        assert_eq!(d.on_event(&fwd_required(md.clone()), 0), vec![Decision::WakeAt(2000)]);
        // contact window open but link still down
        assert!(d.on_wake(2000).is_empty());
        assert_eq!(d.on_event(&link(Topic::LinkUp, "Y"), 2010), vec![Decision::ListBundles]);
        let out = d.on_bundle_list(std::slice::from_ref(&md), 2010);
        assert_eq!(
            out,
            vec![Decision::UpdateActions {
                id: md.id.clone(),
                actions: vec![Action::send_to("Y"), Action::drop()]
            }]
        );
        assert!(d.on_wake(2020).is_empty());
    }

    #[test]
    fn link_up_before_contact_does_not_send() {
        let mut d = ContactDispatcher::new(plan()).with_local("A");
        d.on_event(&link(Topic::LinkUp, "Y"), 0);
        let md = metadata("Z", None);
        assert_eq!(d.on_event(&fwd_required(md), 500), vec![Decision::WakeAt(2000)]);
        assert_eq!(d.on_wake(2000).len(), 1);
    }

    #[test]
    fn failure_then_reissue_on_link_up() {
        let mut d = ContactDispatcher::new(plan()).with_local("A");
        d.on_event(&link(Topic::LinkUp, "Y"), 0);
        let md = metadata("Z", None);
        assert_eq!(d.on_event(&fwd_required(md.clone()), 3000).len(), 1);
        d.on_event(&Event::outcome(Topic::ActionFailed, 3001, md.clone(), 0, "down"), 3001);
        d.on_event(&link(Topic::LinkDown, "Y"), 3001);
        assert!(d.on_event(&fwd_required(md.clone()), 3001).is_empty());
        d.on_event(&link(Topic::LinkUp, "Y"), 4000);
        assert_eq!(d.on_bundle_list(&[md], 4000).len(), 1);
    }

    #[test]
    fn unreachable_or_too_late() {
        let mut d = ContactDispatcher::new(plan()).with_local("A");
        assert!(d.on_event(&fwd_required(metadata("Q", None)), 0).is_empty());
        let mut md = metadata("Z", None);
        md.lifetime = 1000;
        assert!(d.on_event(&fwd_required(md), 0).is_empty());
    }
}
