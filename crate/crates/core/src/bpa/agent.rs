// SPDX-License-Identifier: Apache-2.0

//! Bundle store and action-list engine.
//!
//! [`Agent`] is a plain state machine: it never blocks and never does I/O.
//! Every mutation appends [`Output`]s (events, local deliveries) that the
//! caller drains in order. Transmissions are two-phase: [`Agent::execute_next`]
//! hands out a [`Transmission`], and the caller reports the transport result
//! through [`Agent::complete_transmission`] before stepping again.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::bundle::{Bundle, BundleId, BundleMetadata, EndpointId, Instant, Retention};
use crate::protocol::{core_verbs, validate_action_list, Action, ActionError, Event, Topic, VerbDescriptor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestSource {
    Application,
    ConvergenceLayer { peer: String },
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("expired-on-arrival")]
    ExpiredOnArrival,
    #[error("duplicate-id")]
    DuplicateId,
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum UpdateError {
    #[error("unknown-bundle: {0}")]
    UnknownBundle(BundleId),
    #[error("invalid-action-list: {0}")]
    InvalidActionList(#[from] ActionError),
}

impl UpdateError {
    pub fn code(&self) -> &'static str {
        match self {
            UpdateError::UnknownBundle(_) => "unknown-bundle",
            UpdateError::InvalidActionList(_) => "invalid-action-list",
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
#[error("demux-taken: {0:?}")]
pub struct DemuxTaken(pub String);

/// Something the caller must act on after a mutation.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    /// Publish on the dispatch bus.
    Event(Event),
    /// Hand the full bundle to the application registered on `demux`.
    Deliver { demux: String, bundle: Bundle },
}

/// A `send-to` the caller must perform and then report back.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub id: BundleId,
    pub peer: String,
    pub action_index: usize,
    pub update_seq: u64,
    pub bundle: Bundle,
}

/// Result of one engine step.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// No bundle has a pending action.
    Idle,
    /// A drop removed the forward-pending constraint.
    Dropped { id: BundleId },
    /// A drop was skipped because the preceding action failed.
    Skipped { id: BundleId, action_index: usize },
    Transmit(Transmission),
}

#[derive(Debug, Clone)]
pub struct StoredBundle {
    pub bundle: Bundle,
    pub arrival_time: Instant,
    pub retention: BTreeSet<Retention>,
    pub actions: Vec<Action>,
    pub exec_cursor: usize,
    /// Recorded outcome per action index; `None` until executed.
    outcomes: Vec<Option<bool>>,
    pub update_seq: u64,
    /// Set on action failure; cleared by the next update.
    pub halted: bool,
}

impl StoredBundle {
    fn metadata(&self) -> BundleMetadata {
        self.bundle.metadata(
            self.arrival_time,
            self.actions.clone(),
            self.update_seq,
            self.retention.iter().copied().collect(),
        )
    }

    fn eligible(&self) -> bool {
        self.retention.contains(&Retention::ForwardPending)
            && !self.halted
            && self.exec_cursor < self.actions.len()
    }
}

pub struct Agent {
    node_name: String,
    default_actions: Vec<Action>,
    supported: Vec<VerbDescriptor>,
    store: HashMap<BundleId, StoredBundle>,
    by_update_seq: BTreeMap<u64, BundleId>,
    next_update_seq: u64,
    /// Ids already accepted or handled, kept until their lifetime ends.
    seen: HashMap<BundleId, Instant>,
    registrations: BTreeSet<String>,
    next_sequence: u64,
    in_flight: Option<(BundleId, u64)>,
    outputs: VecDeque<Output>,
}

impl Agent {
    pub fn new(node_name: &str, default_actions: Vec<Action>) -> Self {
        Agent {
            node_name: node_name.to_string(),
            default_actions,
            supported: core_verbs(),
            store: HashMap::new(),
            by_update_seq: BTreeMap::new(),
            next_update_seq: 1,
            seen: HashMap::new(),
            registrations: BTreeSet::new(),
            next_sequence: 0,
            in_flight: None,
            outputs: VecDeque::new(),
        }
    }

    pub fn node_name(&self) -> &str {
        &self.node_name
    }

    pub fn drain_outputs(&mut self) -> impl Iterator<Item = Output> + '_ {
        self.outputs.drain(..)
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn stored(&self, id: &BundleId) -> Option<&StoredBundle> {
        self.store.get(id)
    }

    fn stamp(&mut self) -> u64 {
        let s = self.next_update_seq;
        self.next_update_seq += 1;
        s
    }

    fn emit(&mut self, event: Event) {
        self.outputs.push_back(Output::Event(event));
    }

    fn insert(&mut self, stored: StoredBundle) {
        self.by_update_seq.insert(stored.update_seq, stored.bundle.id.clone());
        self.store.insert(stored.bundle.id.clone(), stored);
    }

    fn remove(&mut self, id: &BundleId) -> Option<StoredBundle> {
        let stored = self.store.remove(id)?;
        self.by_update_seq.remove(&stored.update_seq);
        Some(stored)
    }

    /// Allocates a fresh id for a bundle originating at `source`.
    pub fn allocate_id(&mut self, source: EndpointId, now: Instant) -> BundleId {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        BundleId {
            source,
            creation_time: now,
            sequence,
        }
    }

    pub fn ingest(
        &mut self,
        bundle: Bundle,
        source: IngestSource,
        now: Instant,
    ) -> Result<BundleId, IngestError> {
        let id = bundle.id.clone();
        if self.store.contains_key(&id) || self.seen.contains_key(&id) {
            log::debug!("{}: duplicate {id} from {source:?} discarded", self.node_name);
            return Err(IngestError::DuplicateId);
        }
        self.seen.insert(id.clone(), bundle.expires_at());
        if bundle.is_expired(now) {
            let md = bundle.metadata(now, vec![], 0, vec![]);
            self.emit(Event::bundle(Topic::BundleExpired, now, md));
            return Err(IngestError::ExpiredOnArrival);
        }

        if bundle.destination.node_name() == self.node_name {
            let demux = bundle.destination.demux().to_string();
            if self.registrations.contains(&demux) {
                let md = bundle.metadata(now, vec![], 0, vec![]);
                self.outputs.push_back(Output::Deliver { demux, bundle });
                self.emit(Event::bundle(Topic::BundleDelivered, now, md));
            } else {
                let update_seq = self.stamp();
                let stored = StoredBundle {
                    bundle,
                    arrival_time: now,
                    retention: BTreeSet::from([Retention::DispatchPending]),
                    actions: vec![],
                    exec_cursor: 0,
                    outcomes: vec![],
                    update_seq,
                    halted: false,
                };
                let md = stored.metadata();
                self.insert(stored);
                self.emit(Event::bundle(Topic::BundleReceived, now, md));
            }
            return Ok(id);
        }

        let update_seq = self.stamp();
        let actions = self.default_actions.clone();
        let stored = StoredBundle {
            bundle,
            arrival_time: now,
            retention: BTreeSet::from([Retention::ForwardPending]),
            outcomes: vec![None; actions.len()],
            actions,
            exec_cursor: 0,
            update_seq,
            halted: false,
        };
        let md = stored.metadata();
        self.insert(stored);
        self.emit(Event::bundle(Topic::BundleReceived, now, md.clone()));
        self.emit(Event::bundle(Topic::ForwardingRequired, now, md));
        Ok(id)
    }

    /// Replaces a bundle's whole action list and moves it to the back of the
    /// execution order.
    pub fn update_actions(&mut self, id: &BundleId, actions: Vec<Action>) -> Result<(), UpdateError> {
        if !self.store.contains_key(id) {
            return Err(UpdateError::UnknownBundle(id.clone()));
        }
        validate_action_list(&actions, &self.supported)?;
        let update_seq = self.stamp();
        let mut stored = self.remove(id).expect("checked above");
        stored.outcomes = vec![None; actions.len()];
        stored.actions = actions;
        stored.exec_cursor = 0;
        stored.halted = false;
        stored.update_seq = update_seq;
        self.insert(stored);
        Ok(())
    }

    /// Applies to bundles ingested after this call only.
    pub fn set_default_actions(&mut self, actions: Vec<Action>) -> Result<(), ActionError> {
        validate_action_list(&actions, &self.supported)?;
        self.default_actions = actions;
        Ok(())
    }

    pub fn default_actions(&self) -> &[Action] {
        &self.default_actions
    }

    pub fn query_supported_actions(&self) -> Vec<VerbDescriptor> {
        self.supported.clone()
    }

    /// Metadata of every stored bundle, in execution-priority order.
    pub fn list_bundles(&self) -> Vec<BundleMetadata> {
        self.by_update_seq
            .values()
            .map(|id| self.store[id].metadata())
            .collect()
    }

    pub fn get_bundle(&self, id: &BundleId) -> Option<BundleMetadata> {
        self.store.get(id).map(StoredBundle::metadata)
    }

    /// Removes every expired bundle regardless of pending actions.
    pub fn expiry_scan(&mut self, now: Instant) -> usize {
        let expired: Vec<BundleId> = self
            .by_update_seq
            .values()
            .filter(|id| self.store[*id].bundle.is_expired(now))
            .cloned()
            .collect();
        for id in &expired {
            let stored = self.remove(id).expect("listed above");
            self.emit(Event::bundle(Topic::BundleExpired, now, stored.metadata()));
        }
        self.seen.retain(|_, expiry| *expiry > now);
        expired.len()
    }

    pub fn register(&mut self, demux: &str, now: Instant) -> Result<(), DemuxTaken> {
        if !self.registrations.insert(demux.to_string()) {
            return Err(DemuxTaken(demux.to_string()));
        }
        let held: Vec<BundleId> = self
            .by_update_seq
            .values()
            .filter(|id| {
                let s = &self.store[*id];
                s.retention.contains(&Retention::DispatchPending) && s.bundle.destination.demux() == demux
            })
            .cloned()
            .collect();
        for id in held {
            let stored = self.remove(&id).expect("listed above");
            let mut md = stored.metadata();
            md.retention.clear();
            self.outputs.push_back(Output::Deliver {
                demux: demux.to_string(),
                bundle: stored.bundle,
            });
            self.emit(Event::bundle(Topic::BundleDelivered, now, md));
        }
        Ok(())
    }

    pub fn unregister(&mut self, demux: &str) {
        self.registrations.remove(demux);
    }

    pub fn is_registered(&self, demux: &str) -> bool {
        self.registrations.contains(demux)
    }

    pub fn link_up(&mut self, peer: &str, address: &str, now: Instant) {
        self.emit(Event::link(Topic::LinkUp, now, peer, address));
    }

    pub fn link_down(&mut self, peer: &str, address: &str, now: Instant) {
        self.emit(Event::link(Topic::LinkDown, now, peer, address));
    }

    /// Executes the action at the cursor of the eligible bundle with the
    /// smallest update-seq.
    pub fn execute_next(&mut self, _now: Instant) -> Step {
        let in_flight = self.in_flight.as_ref().map(|(id, _)| id.clone());
        let Some(id) = self
            .by_update_seq
            .values()
            .find(|id| Some(*id) != in_flight.as_ref() && self.store[*id].eligible())
            .cloned()
        else {
            return Step::Idle;
        };
        let stored = self.store.get_mut(&id).expect("indexed");
        let index = stored.exec_cursor;
        let action = stored.actions[index].clone();

        if let Some(peer) = action.send_to_target() {
            self.in_flight = Some((id.clone(), stored.update_seq));
            return Step::Transmit(Transmission {
                id,
                peer: peer.to_string(),
                action_index: index,
                update_seq: stored.update_seq,
                bundle: stored.bundle.clone(),
            });
        }

        if action.is_drop() {
            let previous_ok = index == 0 || stored.outcomes[index - 1] == Some(true);
            if previous_ok {
                stored.outcomes[index] = Some(true);
                stored.exec_cursor += 1;
                stored.retention.remove(&Retention::ForwardPending);
                if stored.retention.is_empty() {
                    self.remove(&id);
                }
                return Step::Dropped { id };
            }
            stored.outcomes[index] = Some(false);
            stored.exec_cursor += 1;
            return Step::Skipped {
                id,
                action_index: index,
            };
        }

        // Only core verbs are announced, so validation keeps anything else out.
        stored.outcomes[index] = Some(false);
        stored.exec_cursor += 1;
        Step::Skipped {
            id,
            action_index: index,
        }
    }

    /// Records the transport result of a transmission handed out by
    /// [`Agent::execute_next`]. Stale results (bundle gone or list replaced)
    /// are ignored.
    pub fn complete_transmission(&mut self, tx: &Transmission, result: Result<(), String>, now: Instant) {
        if self.in_flight.as_ref() == Some(&(tx.id.clone(), tx.update_seq)) {
            self.in_flight = None;
        }
        let Some(stored) = self.store.get_mut(&tx.id) else {
            return;
        };
        if stored.update_seq != tx.update_seq || stored.exec_cursor != tx.action_index {
            return;
        }
        match result {
            Ok(()) => {
                stored.outcomes[tx.action_index] = Some(true);
                stored.exec_cursor += 1;
                let md = stored.metadata();
                self.emit(Event::outcome(
                    Topic::BundleForwarded,
                    now,
                    md,
                    tx.action_index,
                    format!("sent to {}", tx.peer),
                ));
            }
            Err(reason) => {
                stored.outcomes[tx.action_index] = Some(false);
                stored.halted = true;
                let md = stored.metadata();
                self.emit(Event::outcome(
                    Topic::ActionFailed,
                    now,
                    md.clone(),
                    tx.action_index,
                    reason,
                ));
                self.emit(Event::bundle(Topic::ForwardingRequired, now, md));
            }
        }
    }

    /// Steps the engine until idle, performing transmissions synchronously
    /// through `transmit`. Returns the steps taken.
    pub fn run_until_idle<F>(&mut self, now: Instant, mut transmit: F) -> Vec<Step>
    where
        F: FnMut(&Transmission) -> Result<(), String>,
    {
        let mut steps = Vec::new();
        loop {
            let step = self.execute_next(now);
            match &step {
                Step::Idle => break,
                Step::Transmit(tx) => {
                    let result = transmit(tx);
                    self.complete_transmission(tx, result, now);
                }
                _ => {}
            }
            steps.push(step);
        }
        steps
    }
}
