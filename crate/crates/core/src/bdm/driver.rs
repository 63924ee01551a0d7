// SPDX-License-Identifier: Apache-2.0

//! Runs a [`Dispatcher`] against a live dispatch connection.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::time::Duration;

use super::{Decision, Dispatcher};
use crate::bundle::now_ms;
use crate::client::{ClientError, DispatchClient};

/// Subscribes, reconciles against the current store, then processes events
/// and wakeups until the connection closes. `on_ready` runs once the
/// subscription is in place and the initial reconcile is done.
pub async fn run<D, F>(client: &DispatchClient, dispatcher: &mut D, on_ready: F) -> Result<(), ClientError>
where
    D: Dispatcher,
    F: FnOnce(&str),
{
    let node = client.server().node.clone();
    dispatcher.on_connect(&node);
    client.subscribe(&dispatcher.topics()).await?;
    let bundles = client.list_bundles().await?;
    log::info!("{} dispatcher attached to {node} with {} stored bundles", dispatcher.name(), bundles.len());

    let mut wakes: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
    let first = dispatcher.on_bundle_list(&bundles, now_ms());
    execute(client, dispatcher, first, &mut wakes).await?;
    on_ready(&node);

    loop {
        let next_wake = wakes.peek().map(|Reverse(t)| *t);
        let timeout = next_wake.map(|t| Duration::from_millis(t.saturating_sub(now_ms())));
        let decisions = match client.next_event(timeout).await {
            Ok(event) => dispatcher.on_event(&event, now_ms()),
            Err(ClientError::Timeout) => {
                let now = now_ms();
                while wakes.peek().is_some_and(|Reverse(t)| *t <= now) {
                    wakes.pop();
                }
                dispatcher.on_wake(now)
            }
            Err(ClientError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        };
        execute(client, dispatcher, decisions, &mut wakes).await?;
    }
}

async fn execute<D: Dispatcher>(
    client: &DispatchClient,
    dispatcher: &mut D,
    decisions: Vec<Decision>,
    wakes: &mut BinaryHeap<Reverse<u64>>,
) -> Result<(), ClientError> {
    let mut queue: VecDeque<Decision> = decisions.into();
    while let Some(decision) = queue.pop_front() {
        match decision {
            Decision::UpdateActions { id, actions } => match client.update_actions(&id, actions).await {
                Ok(()) => {}
                // the bundle left the store in the meantime
                Err(ClientError::Rpc(e)) => log::warn!("update-actions for {id:?}: {e}"),
                Err(e) => return Err(e),
            },
            Decision::ListBundles => {
                let bundles = client.list_bundles().await?;
                queue.extend(dispatcher.on_bundle_list(&bundles, now_ms()));
            }
            Decision::WakeAt(t) => {
                if !wakes.iter().any(|Reverse(w)| *w == t) {
                    wakes.push(Reverse(t));
                }
            }
        }
    }
    Ok(())
}
