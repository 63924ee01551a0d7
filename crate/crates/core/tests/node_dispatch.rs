// SPDX-License-Identifier: Apache-2.0

use std::time::Duration;

use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

use bpa_dispatch::bpa::{start, NodeConfig, NodeHandle};
use bpa_dispatch::bundle::Retention;
use bpa_dispatch::client::{AppClient, ClientError, DispatchClient};
use bpa_dispatch::protocol::{decode_message, Action, Message, Role, Topic};

const T: Duration = Duration::from_secs(3);

async fn node(name: &str) -> NodeHandle {
    start(NodeConfig::ephemeral(name)).await.unwrap()
}

async fn bdm(n: &NodeHandle, topics: &[Topic]) -> DispatchClient {
    let c = DispatchClient::connect(&n.dispatch_addr.to_string(), Role::Bdm, "test").await.unwrap();
    c.subscribe(topics).await.unwrap();
    c.sync().await.unwrap();
    c
}

async fn app(n: &NodeHandle, demux: &str) -> AppClient {
    let a = AppClient::connect(&n.app_addr.to_string(), "test").await.unwrap();
    a.register(demux).await.unwrap();
    a
}

#[tokio::test]
async fn hello_and_supported_actions() {
    let a = node("A").await;
    let c = DispatchClient::connect(&a.dispatch_addr.to_string(), Role::Monitor, "m").await.unwrap();
    assert_eq!(c.server().node, "A");
    assert_eq!(c.server().role, Role::Bpa);
    let verbs: Vec<String> = c.query_supported_actions().await.unwrap().into_iter().map(|v| v.verb).collect();
    assert_eq!(verbs, vec!["send-to", "drop"]);
    assert!(c.list_bundles().await.unwrap().is_empty());
}

#[tokio::test]
async fn submitted_bundle_is_listed_and_announced() {
    let a = node("A").await;
    let c = bdm(&a, &[Topic::BundleReceived, Topic::ForwardingRequired]).await;
    let src = app(&a, "src").await;
    let id = src.send("dtn://Z/app", b"hello".to_vec(), 60_000, vec![]).await.unwrap();
    assert_eq!(id.source.to_string(), "dtn://A/src");

    let e1 = c.next_event(Some(T)).await.unwrap();
    let e2 = c.next_event(Some(T)).await.unwrap();
    assert_eq!((e1.topic, e2.topic), (Topic::BundleReceived, Topic::ForwardingRequired));
    let md = e2.metadata().unwrap();
    assert_eq!(md.id, id);
    assert_eq!(md.payload_length, 5);
    assert_eq!(md.retention, vec![Retention::ForwardPending]);

    let listed = c.list_bundles().await.unwrap();
    assert_eq!(listed.len(), 1);
    assert_eq!(c.get_bundle(&id).await.unwrap().id, id);
}

#[tokio::test]
async fn rpc_error_codes() {
    let a = node("A").await;
    let c = bdm(&a, &[]).await;
    let src = app(&a, "src").await;
    let id = src.send("dtn://Z/app", b"x".to_vec(), 60_000, vec![]).await.unwrap();

    let mut other = id.clone();
    other.sequence += 100;
    assert_eq!(code(c.get_bundle(&other).await).as_deref(), Some("unknown-bundle"));
    assert_eq!(
        code(c.update_actions(&other, vec![Action::drop()]).await).as_deref(),
        Some("unknown-bundle")
    );
    let bad = Action {
        verb: "teleport".into(),
        args: Default::default(),
    };
    assert_eq!(code(c.update_actions(&id, vec![bad]).await).as_deref(), Some("invalid-action-list"));
    assert_eq!(code(c.call("frobnicate", json!({})).await).as_deref(), Some("unknown-method"));
    assert_eq!(code(c.call("get-bundle", json!({"nope": 1})).await).as_deref(), Some("bad-params"));
    assert_eq!(
        code(c.set_default_actions(vec![Action::send_to("bad/name")]).await).as_deref(),
        Some("invalid-action-list")
    );
    // the rejected update left the bundle as it was
    assert!(c.get_bundle(&id).await.unwrap().current_actions.is_empty());
}

#[tokio::test]
async fn drop_only_after_success() {
    let a = node("A").await;
    let b = node("B").await;
    let c = bdm(&a, &[Topic::BundleForwarded, Topic::ActionFailed, Topic::ForwardingRequired]).await;
    let src = app(&a, "src").await;
    let id = src.send("dtn://Z/app", b"x".to_vec(), 60_000, vec![]).await.unwrap();
    c.wait_for(T, |e| e.topic == Topic::ForwardingRequired).await.unwrap();

    // no link to B yet: the send fails and the drop must not run
    c.update_actions(&id, vec![Action::send_to("B"), Action::drop()]).await.unwrap();
    let failed = c.wait_for(T, |e| e.topic == Topic::ActionFailed).await.unwrap();
    assert_eq!(failed.action_index(), Some(0));
    c.wait_for(T, |e| e.topic == Topic::ForwardingRequired).await.unwrap();
    assert_eq!(c.list_bundles().await.unwrap().len(), 1);

    a.dial(&b.cla_addr.to_string()).await.unwrap();
    c.update_actions(&id, vec![Action::send_to("B"), Action::drop()]).await.unwrap();
    let fwd = c.wait_for(T, |e| e.topic == Topic::BundleForwarded).await.unwrap();
    assert_eq!(fwd.action_index(), Some(0));
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert!(c.list_bundles().await.unwrap().is_empty());
}

#[tokio::test]
async fn send_without_drop_keeps_bundle() {
    let a = node("A").await;
    let b = node("B").await;
    a.dial(&b.cla_addr.to_string()).await.unwrap();
    let c = bdm(&a, &[Topic::BundleForwarded, Topic::ForwardingRequired]).await;
    let src = app(&a, "src").await;
    let id = src.send("dtn://Z/app", b"x".to_vec(), 60_000, vec![]).await.unwrap();
    c.wait_for(T, |e| e.topic == Topic::ForwardingRequired).await.unwrap();
    c.update_actions(&id, vec![Action::send_to("B")]).await.unwrap();
    c.wait_for(T, |e| e.topic == Topic::BundleForwarded).await.unwrap();
    let md = c.get_bundle(&id).await.unwrap();
    assert_eq!(md.current_actions, vec![Action::send_to("B")]);
}

#[tokio::test]
async fn bundle_expires_on_schedule() {
    let a = node("A").await;
    let c = bdm(&a, &[Topic::BundleExpired]).await;
    let src = app(&a, "src").await;
    let id = src.send("dtn://Z/app", b"x".to_vec(), 300, vec![]).await.unwrap();
    let e = c.next_event(Some(T)).await.unwrap();
    assert_eq!(e.topic, Topic::BundleExpired);
    assert_eq!(e.metadata().unwrap().id, id);
    let lag = e.timestamp as i64 - (id.creation_time + 300) as i64;
    assert!((0..=250).contains(&lag), "expired {lag} ms after expiry");
    assert!(c.list_bundles().await.unwrap().is_empty());
}

#[tokio::test]
async fn local_delivery_and_held_bundles() {
    let a = node("A").await;
    let c = bdm(&a, &[Topic::BundleDelivered]).await;
    let src = app(&a, "src").await;

    let sink = app(&a, "sink").await;
    src.send("dtn://A/sink", b"one".to_vec(), 60_000, vec![]).await.unwrap();
    assert_eq!(sink.recv(Some(T)).await.unwrap().payload, b"one");
    c.wait_for(T, |e| e.topic == Topic::BundleDelivered).await.unwrap();

    // nobody registered for "later": the bundle waits in the store
    let id = src.send("dtn://A/later", b"two".to_vec(), 60_000, vec![]).await.unwrap();
    tokio::time::sleep(Duration::from_millis(50)).await;
    let held = c.get_bundle(&id).await.unwrap();
    assert_eq!(held.retention, vec![Retention::DispatchPending]);
    let later = app(&a, "later").await;
    assert_eq!(later.recv(Some(T)).await.unwrap().payload, b"two");
    assert!(c.list_bundles().await.unwrap().is_empty());
}

#[tokio::test]
async fn app_listener_errors() {
    let a = node("A").await;
    let x = AppClient::connect(&a.app_addr.to_string(), "x").await.unwrap();
    let e = x.send("dtn://Z/app", vec![1], 1000, vec![]).await.unwrap_err();
    assert_eq!(e.rpc_code(), Some("not-registered"));
    x.register("taken").await.unwrap();
    assert_eq!(x.register("again").await.unwrap_err().rpc_code(), Some("already-registered"));
    let y = AppClient::connect(&a.app_addr.to_string(), "y").await.unwrap();
    assert_eq!(y.register("taken").await.unwrap_err().rpc_code(), Some("demux-taken"));
    assert_eq!(
        x.send("mailto:z", vec![1], 1000, vec![]).await.unwrap_err().rpc_code(),
        Some("invalid-destination")
    );
    assert_eq!(
        x.send("dtn://Z/app", vec![1], 0, vec![]).await.unwrap_err().rpc_code(),
        Some("zero-lifetime")
    );
    // registration is released with the connection
    drop(x);
    tokio::time::sleep(Duration::from_millis(100)).await;
    y.register("taken").await.unwrap();
}

fn code<T>(r: Result<T, ClientError>) -> Option<String> {
    r.err().and_then(|e| e.rpc_code().map(str::to_string))
}

async fn raw(addr: &str) -> (BufReader<tokio::net::tcp::OwnedReadHalf>, tokio::net::tcp::OwnedWriteHalf) {
    let s = TcpStream::connect(addr).await.unwrap();
    let (r, w) = s.into_split();
    (BufReader::new(r), w)
}

/// Reads until EOF; returns the decoded messages.
async fn drain(r: &mut BufReader<tokio::net::tcp::OwnedReadHalf>) -> Vec<Message> {
    let mut out = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        match tokio::time::timeout(T, r.read_line(&mut line)).await {
            Ok(Ok(0)) | Err(_) | Ok(Err(_)) => return out,
            Ok(Ok(_)) => out.push(decode_message(line.as_bytes()).unwrap().message),
        }
    }
}

fn closed_with_protocol_error(msgs: &[Message]) -> bool {
    matches!(msgs.last(), Some(Message::RpcResponse(r)) if r.id.is_none()
        && r.outcome.as_ref().err().is_some_and(|e| e.code == "protocol-error"))
}

const HELLO: &str = "{\"kind\":\"hello\",\"seq\":0,\"body\":{\"node\":\"t\",\"protocol-version\":1,\"role\":\"bdm\"}}\n";

#[tokio::test]
async fn malformed_line_closes_with_protocol_error() {
    let a = node("A").await;
    let (mut r, mut w) = raw(&a.dispatch_addr.to_string()).await;
    w.write_all(HELLO.as_bytes()).await.unwrap();
    w.write_all(b"{not json\n").await.unwrap();
    let msgs = drain(&mut r).await;
    assert!(matches!(msgs.first(), Some(Message::Hello(_))));
    assert!(closed_with_protocol_error(&msgs), "{msgs:?}");
}

#[tokio::test]
async fn seq_regression_closes() {
    let a = node("A").await;
    let (mut r, mut w) = raw(&a.dispatch_addr.to_string()).await;
    w.write_all(HELLO.as_bytes()).await.unwrap();
    w.write_all(b"{\"kind\":\"subscribe\",\"seq\":0,\"body\":{\"topics\":[]}}\n").await.unwrap();
    assert!(closed_with_protocol_error(&drain(&mut r).await));
}

#[tokio::test]
async fn reused_request_id_closes() {
    let a = node("A").await;
    let (mut r, mut w) = raw(&a.dispatch_addr.to_string()).await;
    w.write_all(HELLO.as_bytes()).await.unwrap();
    let req = |seq: u64| format!("{{\"kind\":\"rpc-request\",\"seq\":{seq},\"body\":{{\"id\":\"x\",\"method\":\"list-bundles\",\"params\":{{}}}}}}\n");
    w.write_all(req(1).as_bytes()).await.unwrap();
    w.write_all(req(2).as_bytes()).await.unwrap();
    let msgs = drain(&mut r).await;
    let answered = msgs
        .iter()
        .filter(|m| matches!(m, Message::RpcResponse(r) if r.id.as_deref() == Some("x")))
        .count();
    assert_eq!(answered, 1);
    assert!(closed_with_protocol_error(&msgs));
}

#[tokio::test]
async fn oversized_line_closes() {
    let a = node("A").await;
    let (mut r, mut w) = raw(&a.dispatch_addr.to_string()).await;
    w.write_all(HELLO.as_bytes()).await.unwrap();
    let big = format!(
        "{{\"kind\":\"rpc-request\",\"seq\":1,\"body\":{{\"id\":\"{}\",\"method\":\"m\",\"params\":{{}}}}}}\n",
        "x".repeat((1 << 20) + 10)
    );
    let _ = w.write_all(big.as_bytes()).await;
    assert!(closed_with_protocol_error(&drain(&mut r).await));
}

#[tokio::test]
async fn wrong_version_hello_rejected() {
    let a = node("A").await;
    let (mut r, mut w) = raw(&a.dispatch_addr.to_string()).await;
    w.write_all(HELLO.replace("\"protocol-version\":1", "\"protocol-version\":7").as_bytes())
        .await
        .unwrap();
    let msgs = drain(&mut r).await;
    assert!(closed_with_protocol_error(&msgs), "{msgs:?}");
}

#[tokio::test]
async fn default_actions_apply_without_dispatcher() {
    let mut cfg = NodeConfig::ephemeral("A");
    cfg.default_actions = vec![Action::send_to("B"), Action::drop()];
    let a = start(cfg).await.unwrap();
    let b = node("B").await;
    a.dial(&b.cla_addr.to_string()).await.unwrap();
    let watch_b = bdm(&b, &[Topic::BundleReceived]).await;
    let src = app(&a, "src").await;
    let id = src.send("dtn://Z/app", b"x".to_vec(), 60_000, vec![]).await.unwrap();
    let e = watch_b.next_event(Some(T)).await.unwrap();
    assert_eq!(e.metadata().unwrap().id, id);
    assert_eq!(e.metadata().unwrap().previous_node.as_ref().unwrap().to_string(), "dtn://A/");
}

#[tokio::test]
async fn unix_socket_serves_same_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dispatch.sock");
    let cfg = NodeConfig {
        dispatch_socket: Some(path.clone()),
        ..NodeConfig::ephemeral("A")
    };
    let a = start(cfg).await.unwrap();
    assert!(a.readiness_line().ends_with(&format!("dispatch-socket={}", path.display())));
    let over_unix = DispatchClient::connect(&format!("unix:{}", path.display()), Role::Bdm, "u").await.unwrap();
    over_unix.subscribe(&[Topic::ForwardingRequired]).await.unwrap();
    over_unix.sync().await.unwrap();
    let over_tcp = bdm(&a, &[Topic::ForwardingRequired]).await;
    let src = app(&a, "src").await;
    let id = src.send("dtn://Z/app", b"x".to_vec(), 60_000, vec![]).await.unwrap();
    for c in [&over_unix, &over_tcp] {
        let e = c.wait_for(T, |e| e.topic == Topic::ForwardingRequired).await.unwrap();
        assert_eq!(e.metadata().unwrap().id, id);
    }
    over_unix.update_actions(&id, vec![]).await.unwrap();
    a.shutdown().await;
    assert!(!path.exists());
}
