// SPDX-License-Identifier: Apache-2.0

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use bpa_dispatch_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    bpa_string_free(p);
    s
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(bpa_last_error_message()).to_str().unwrap().to_string() }
}

#[test]
fn route_through_c_abi() {
    let plan = c("A B 10 20\nB C 15 30\n");
    let mut out = ptr::null_mut();
    let st = unsafe { bpa_earliest_arrival(plan.as_ptr(), c("A").as_ptr(), c("C").as_ptr(), 5, &mut out) };
    assert_eq!(st, BpaStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert_eq!(v["next-hop"], "B");
    assert_eq!(v["arrival"], 15);

    let plan = c("A B 10 20\nB C 5 8\n");
    let st = unsafe { bpa_earliest_arrival(plan.as_ptr(), c("A").as_ptr(), c("C").as_ptr(), 5, &mut out) };
    assert_eq!(st, BpaStatus::Unreachable);
    assert!(last_error().contains("no route"));

    let st = unsafe { bpa_earliest_arrival(c("A A 1 2").as_ptr(), c("A").as_ptr(), c("C").as_ptr(), 5, &mut out) };
    assert_eq!(st, BpaStatus::InvalidArgument);
}

#[test]
fn null_arguments_are_reported() {
    let mut out = ptr::null_mut();
    let st = unsafe { bpa_earliest_arrival(ptr::null(), c("A").as_ptr(), c("C").as_ptr(), 0, &mut out) };
    assert_eq!(st, BpaStatus::NullArgument);
    assert!(last_error().contains("plan"));
    assert_eq!(unsafe { bpa_client_subscribe(ptr::null(), c("link-up").as_ptr()) }, BpaStatus::NullArgument);
    unsafe {
        bpa_string_free(ptr::null_mut());
        bpa_node_free(ptr::null_mut());
        bpa_client_free(ptr::null_mut());
    }
}

#[test]
fn action_list_validation() {
    let ok = c(r#"[{"verb":"send-to","args":{"node":"B"}},{"verb":"drop"}]"#);
    assert_eq!(unsafe { bpa_validate_action_list(ok.as_ptr()) }, BpaStatus::Ok);
    assert_eq!(last_error(), "");
    let bad = c(r#"[{"verb":"teleport"}]"#);
    assert_eq!(unsafe { bpa_validate_action_list(bad.as_ptr()) }, BpaStatus::InvalidArgument);
    assert!(last_error().contains("teleport"));
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(bpa_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn node_and_client_round_trip() {
    let cfg = c(r#"
node-name = "A"
dispatch-listen = "127.0.0.1:0"
app-listen = "127.0.0.1:0"
cla-listen = "127.0.0.1:0"
"#);
    let mut node = ptr::null_mut();
    assert_eq!(unsafe { bpa_node_start(cfg.as_ptr(), &mut node) }, BpaStatus::Ok);
    let mut addr = ptr::null_mut();
    assert_eq!(
        unsafe { bpa_node_address(node, BpaListener::Dispatch, &mut addr) },
        BpaStatus::Ok
    );
    let addr = c(&unsafe { take(addr) });

    let mut client = ptr::null_mut();
    let st = unsafe { bpa_client_connect(addr.as_ptr(), c("bdm").as_ptr(), c("ffi").as_ptr(), &mut client) };
    assert_eq!(st, BpaStatus::Ok, "{}", last_error());
    assert_eq!(
        unsafe { bpa_client_subscribe(client, c("forwarding-required, link-up").as_ptr()) },
        BpaStatus::Ok
    );
    assert_eq!(
        unsafe { bpa_client_subscribe(client, c("nonsense").as_ptr()) },
        BpaStatus::InvalidArgument
    );

    let mut result = ptr::null_mut();
    let st = unsafe { bpa_client_call(client, c("query-supported-actions").as_ptr(), c("{}").as_ptr(), &mut result) };
    assert_eq!(st, BpaStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&unsafe { take(result) }).unwrap();
    assert_eq!(v["actions"].as_array().unwrap().len(), 2);

    let st = unsafe { bpa_client_call(client, c("list-bundles").as_ptr(), c("{}").as_ptr(), &mut result) };
    assert_eq!(st, BpaStatus::Ok);
    assert_eq!(unsafe { take(result) }, r#"{"bundles":[]}"#);

    let params = c(r#"{"id":{"source":"dtn://A/x","creation-time":1,"sequence":0},"actions":[]}"#);
    let st = unsafe { bpa_client_call(client, c("update-actions").as_ptr(), params.as_ptr(), &mut result) };
    assert_eq!(st, BpaStatus::RpcError);
    assert!(last_error().contains("unknown-bundle"), "{}", last_error());

    // a second node comes up on a link: the event reaches the C side
    let cfg_b = c(&String::from_utf8(cfg.as_bytes().to_vec()).unwrap().replace("\"A\"", "\"B\""));
    let mut node_b = ptr::null_mut();
    assert_eq!(unsafe { bpa_node_start(cfg_b.as_ptr(), &mut node_b) }, BpaStatus::Ok);
    let mut cla_b = ptr::null_mut();
    unsafe { bpa_node_address(node_b, BpaListener::Cla, &mut cla_b) };
    let cla_b = c(&unsafe { take(cla_b) });
    let mut peer = ptr::null_mut();
    assert_eq!(unsafe { bpa_node_dial(node, cla_b.as_ptr(), &mut peer) }, BpaStatus::Ok);
    assert_eq!(unsafe { take(peer) }, "B");
    let mut ev = ptr::null_mut();
    assert_eq!(unsafe { bpa_client_next_event(client, 2000, &mut ev) }, BpaStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&unsafe { take(ev) }).unwrap();
    assert_eq!(v["topic"], "link-up");
    assert_eq!(unsafe { bpa_client_next_event(client, 50, &mut ev) }, BpaStatus::Timeout);

    unsafe {
        bpa_client_free(client);
        bpa_node_free(node_b);
        bpa_node_free(node);
    }
}
