// SPDX-License-Identifier: Apache-2.0

use std::time::Duration;

use bpa_dispatch::bpa::{start, NodeConfig, NodeError, NodeHandle};
use bpa_dispatch::client::{AppClient, ClientError, DispatchClient};
use bpa_dispatch::protocol::{Action, Event, Role, Topic};

const T: Duration = Duration::from_secs(3);

async fn node(name: &str) -> NodeHandle {
    start(NodeConfig::ephemeral(name)).await.unwrap()
}

async fn watch(n: &NodeHandle, topics: &[Topic]) -> DispatchClient {
    let c = DispatchClient::connect(&n.dispatch_addr.to_string(), Role::Monitor, "w").await.unwrap();
    c.subscribe(topics).await.unwrap();
    c.sync().await.unwrap();
    c
}

/// Collects events until `quiet` passes without one.
async fn collect(c: &DispatchClient, quiet: Duration) -> Vec<Event> {
    let mut out = Vec::new();
    loop {
        match c.next_event(Some(quiet)).await {
            Ok(e) => out.push(e),
            Err(ClientError::Timeout) => return out,
            Err(e) => panic!("{e}"),
        }
    }
}

#[tokio::test]
async fn link_events_on_both_sides() {
    let a = node("A").await;
    let b = node("B").await;
    let wa = watch(&a, &[Topic::LinkUp, Topic::LinkDown]).await;
    let wb = watch(&b, &[Topic::LinkUp, Topic::LinkDown]).await;
    assert_eq!(a.dial(&b.cla_addr.to_string()).await.unwrap(), "B");
    let ua = wa.next_event(Some(T)).await.unwrap();
    let ub = wb.next_event(Some(T)).await.unwrap();
    assert_eq!((ua.topic, ua.link_peer()), (Topic::LinkUp, Some("B")));
    assert_eq!((ub.topic, ub.link_peer()), (Topic::LinkUp, Some("A")));

    assert!(a.close_link("B").await.unwrap());
    assert!(!a.close_link("B").await.unwrap());
    let da = wa.next_event(Some(T)).await.unwrap();
    let db = wb.next_event(Some(T)).await.unwrap();
    assert_eq!((da.topic, da.link_peer()), (Topic::LinkDown, Some("B")));
    assert_eq!((db.topic, db.link_peer()), (Topic::LinkDown, Some("A")));
}

#[tokio::test]
async fn refused_dial_reports_error() {
    let a = node("A").await;
    let b = node("B").await;
    let addr = b.cla_addr.to_string();
    b.shutdown().await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert!(matches!(a.dial(&addr).await, Err(NodeError::Cla(_))));
}

#[tokio::test]
async fn self_dial_is_a_name_conflict() {
    let a = node("A").await;
    assert!(a.dial(&a.cla_addr.to_string()).await.is_err());
}

#[tokio::test]
async fn simultaneous_dials_leave_one_link() {
    let a = node("A").await;
    let b = node("B").await;
    let wa = watch(&a, &[Topic::LinkUp, Topic::LinkDown]).await;
    let wb = watch(&b, &[Topic::LinkUp, Topic::LinkDown]).await;
    let (to_b, to_a) = (b.cla_addr.to_string(), a.cla_addr.to_string());
    let (ra, rb) = tokio::join!(a.dial(&to_b), b.dial(&to_a));
    assert_eq!(ra.unwrap(), "B");
    assert_eq!(rb.unwrap(), "A");
    let ea = collect(&wa, Duration::from_millis(300)).await;
    let eb = collect(&wb, Duration::from_millis(300)).await;
    let topics = |v: &[Event]| v.iter().map(|e| e.topic).collect::<Vec<_>>();
    assert_eq!(topics(&ea), vec![Topic::LinkUp]);
    assert_eq!(topics(&eb), vec![Topic::LinkUp]);

    // the surviving link carries traffic both ways
    let ab = watch(&a, &[Topic::ForwardingRequired, Topic::BundleForwarded]).await;
    let sink = AppClient::connect(&b.app_addr.to_string(), "sink").await.unwrap();
    sink.register("in").await.unwrap();
    let src = AppClient::connect(&a.app_addr.to_string(), "src").await.unwrap();
    src.register("out").await.unwrap();
    let id = src.send("dtn://B/in", b"over".to_vec(), 60_000, vec![]).await.unwrap();
    ab.wait_for(T, |e| e.topic == Topic::ForwardingRequired).await.unwrap();
    ab.update_actions(&id, vec![Action::send_to("B"), Action::drop()]).await.unwrap();
    let got = sink.recv(Some(T)).await.unwrap();
    assert_eq!(got.payload, b"over");
    assert_eq!(got.previous_node.unwrap().to_string(), "dtn://A/");
}

#[tokio::test]
async fn peer_shutdown_raises_link_down_and_fails_sends() {
    let a = node("A").await;
    let b = node("B").await;
    a.dial(&b.cla_addr.to_string()).await.unwrap();
    let wa = watch(&a, &[Topic::LinkDown, Topic::ActionFailed, Topic::ForwardingRequired]).await;
    b.shutdown().await;
    let e = wa.next_event(Some(T)).await.unwrap();
    assert_eq!((e.topic, e.link_peer()), (Topic::LinkDown, Some("B")));

    let src = AppClient::connect(&a.app_addr.to_string(), "src").await.unwrap();
    src.register("out").await.unwrap();
    let id = src.send("dtn://B/in", b"x".to_vec(), 60_000, vec![]).await.unwrap();
    wa.wait_for(T, |e| e.topic == Topic::ForwardingRequired).await.unwrap();
    wa.update_actions(&id, vec![Action::send_to("B"), Action::drop()]).await.unwrap();
    wa.wait_for(T, |e| e.topic == Topic::ActionFailed).await.unwrap();
    assert_eq!(wa.list_bundles().await.unwrap().len(), 1);
}

#[tokio::test]
async fn configured_peers_are_dialed_at_startup() {
    let b = node("B").await;
    let wb = watch(&b, &[Topic::LinkUp]).await;
    let mut cfg = NodeConfig::ephemeral("A");
    cfg.peers = vec![b.cla_addr.to_string()];
    let _a = start(cfg).await.unwrap();
    let e = wb.next_event(Some(T)).await.unwrap();
    assert_eq!(e.link_peer(), Some("A"));
}
