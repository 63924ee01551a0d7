// SPDX-License-Identifier: Apache-2.0

//! Topic-filtered fan-out of events to subscriber queues.

use std::collections::{BTreeMap, BTreeSet};

use tokio::sync::mpsc;

use crate::protocol::{Event, Topic};

pub type SubscriberId = u64;

/// Closes a subscriber's connection with the given reason.
pub type CloseHandle = mpsc::UnboundedSender<String>;

struct Subscriber {
    topics: BTreeSet<Topic>,
    queue: mpsc::Sender<Event>,
    close: CloseHandle,
}

#[derive(Default)]
pub struct Bus {
    subscribers: BTreeMap<SubscriberId, Subscriber>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `topics` to the subscriber's filter, creating it on first use.
    /// Repeated subscriptions are additive and idempotent; the queue and close
    /// handle of an existing subscriber are kept.
    pub fn subscribe(
        &mut self,
        id: SubscriberId,
        topics: impl IntoIterator<Item = Topic>,
        queue: mpsc::Sender<Event>,
        close: CloseHandle,
    ) {
        let sub = self.subscribers.entry(id).or_insert_with(|| Subscriber {
            topics: BTreeSet::new(),
            queue,
            close,
        });
        sub.topics.extend(topics);
    }

    pub fn unsubscribe_all(&mut self, id: SubscriberId) {
        self.subscribers.remove(&id);
    }

    pub fn len(&self) -> usize {
        self.subscribers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subscribers.is_empty()
    }

    /// Queues `event` for every matching subscriber. A subscriber whose queue
    /// is full is removed and told to close ("slow-consumer"). Returns the
    /// ids of removed subscribers.
    pub fn publish(&mut self, event: &Event) -> Vec<SubscriberId> {
        let mut dropped = Vec::new();
        for (id, sub) in &self.subscribers {
            if !sub.topics.contains(&event.topic) {
                continue;
            }
            match sub.queue.try_send(event.clone()) {
                Ok(()) => {}
                Err(mpsc::error::TrySendError::Full(_)) => {
                    let _ = sub.close.send("slow-consumer".into());
                    dropped.push(*id);
                }
                Err(mpsc::error::TrySendError::Closed(_)) => dropped.push(*id),
            }
        }
        for id in &dropped {
            self.subscribers.remove(id);
        }
        dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link_up() -> Event {
        Event::link(Topic::LinkUp, 1, "B", "127.0.0.1:1")
    }

    fn received() -> Event {
        let b = crate::bundle::Bundle {
            id: crate::bundle::BundleId {
                source: "dtn://A/x".parse().unwrap(),
                creation_time: 0,
                sequence: 0,
            },
            destination: "dtn://Z/x".parse().unwrap(),
            report_to: None,
            lifetime: 10,
            previous_node: None,
            extension_blocks: vec![],
            payload: vec![],
        };
        Event::bundle(Topic::BundleReceived, 1, b.metadata(0, vec![], 1, vec![]))
    }

    #[test]
    fn filter_semantics() {
        let mut bus = Bus::new();
        let (tx1, mut rx1) = mpsc::channel(8);
        let (tx2, mut rx2) = mpsc::channel(8);
        let (c, _cr) = mpsc::unbounded_channel();
        bus.subscribe(1, [Topic::LinkUp], tx1, c.clone());
        bus.subscribe(2, Topic::BUS, tx2, c);
        bus.publish(&link_up());
        bus.publish(&received());
        assert_eq!(rx1.try_recv().unwrap().topic, Topic::LinkUp);
        assert!(rx1.try_recv().is_err());
        assert_eq!(rx2.try_recv().unwrap().topic, Topic::LinkUp);
        assert_eq!(rx2.try_recv().unwrap().topic, Topic::BundleReceived);
    }

    #[test]
    fn no_subscribers_is_fine() {
        let mut bus = Bus::new();
        assert!(bus.publish(&link_up()).is_empty());
    }

    #[test]
    fn subscribe_is_additive() {
        let mut bus = Bus::new();
        let (tx, mut rx) = mpsc::channel(8);
        let (c, _cr) = mpsc::unbounded_channel();
        bus.subscribe(1, [Topic::LinkUp], tx.clone(), c.clone());
        bus.subscribe(1, [Topic::LinkUp], tx.clone(), c.clone());
        bus.subscribe(1, [Topic::BundleReceived], tx, c);
        bus.publish(&link_up());
        bus.publish(&received());
        assert_eq!(rx.try_recv().unwrap().topic, Topic::LinkUp);
        assert_eq!(rx.try_recv().unwrap().topic, Topic::BundleReceived);
        assert!(rx.try_recv().is_err());
    }

    #[test]
    fn slow_subscriber_disconnected_at_cap() {
        let mut bus = Bus::new();
        let (tx, _rx) = mpsc::channel(1024);
        let (c, mut closed) = mpsc::unbounded_channel();
        bus.subscribe(7, Topic::BUS, tx, c);
        for _ in 0..1024 {
            assert!(bus.publish(&link_up()).is_empty());
        }
        assert_eq!(bus.publish(&link_up()), vec![7]);
        assert_eq!(closed.try_recv().unwrap(), "slow-consumer");
        assert!(bus.is_empty());
    }
}
