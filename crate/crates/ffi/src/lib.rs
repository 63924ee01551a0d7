// SPDX-License-Identifier: Apache-2.0

//! C ABI for running nodes, talking to dispatch listeners and computing
//! contact-plan routes.
//!
//! Every function returns a [`BpaStatus`]. On failure a message is available
//! from [`bpa_last_error_message`] on the same thread. Strings handed out by
//! the library must be released with [`bpa_string_free`]; handles with their
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::sync::OnceLock;
use std::time::Duration;

use serde_json::Value;
use tokio::runtime::Runtime;

use bpa_dispatch::bdm::{earliest_arrival, parse_plan};
use bpa_dispatch::bpa::{self, NodeConfig, NodeError, NodeHandle};
use bpa_dispatch::client::{ClientError, DispatchClient};
use bpa_dispatch::protocol::{core_verbs, validate_action_list, Action, Role, Topic};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    PortInUse = 3,
    ConnectRefused = 4,
    RpcError = 5,
    Timeout = 6,
    Closed = 7,
    ProtocolError = 8,
    Unreachable = 9,
    Internal = 10,
}

/// Which listener address to report.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpaListener {
    Dispatch = 0,
    App = 1,
    Cla = 2,
}

/// A running node.
pub struct BpaNode {
    handle: Option<NodeHandle>,
}

/// A connection to a dispatch listener.
pub struct BpaClient {
    client: Option<DispatchClient>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn runtime() -> &'static Runtime {
    static RT: OnceLock<Runtime> = OnceLock::new();
    RT.get_or_init(|| {
        tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime")
    })
}

fn fail(status: BpaStatus, message: impl std::fmt::Display) -> BpaStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
    status
}

fn succeed() -> BpaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::default());
    BpaStatus::Ok
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, BpaStatus> {
    if p.is_null() {
        return Err(fail(BpaStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BpaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_str(out: *mut *mut c_char, text: String) -> BpaStatus {
    match CString::new(text) {
        Ok(s) => {
            *out = s.into_raw();
            succeed()
        }
        Err(_) => fail(BpaStatus::Internal, "string contains NUL"),
    }
}

fn client_status(e: &ClientError) -> BpaStatus {
    match e {
        ClientError::Refused(_) => BpaStatus::ConnectRefused,
        ClientError::VersionMismatch(_) | ClientError::Protocol(_) => BpaStatus::ProtocolError,
        ClientError::Rpc(_) => BpaStatus::RpcError,
        ClientError::Closed => BpaStatus::Closed,
        ClientError::Timeout => BpaStatus::Timeout,
        ClientError::Io(_) => BpaStatus::Closed,
    }
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bpa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn bpa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bpa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Starts a node from TOML configuration text.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpa_node_start(config_toml: *const c_char, out: *mut *mut BpaNode) -> BpaStatus {
    if out.is_null() {
        return fail(BpaStatus::NullArgument, "out is null");
    }
    let text = try_ffi!(read_str(config_toml, "config_toml"));
    let config = match NodeConfig::from_toml(text) {
        Ok(c) => c,
        Err(e) => return fail(BpaStatus::InvalidArgument, e),
    };
    match runtime().block_on(bpa::start(config)) {
        Ok(handle) => {
            *out = Box::into_raw(Box::new(BpaNode { handle: Some(handle) }));
            succeed()
        }
        Err(e @ NodeError::PortInUse { .. }) => fail(BpaStatus::PortInUse, e),
        Err(e) => fail(BpaStatus::InvalidArgument, e),
    }
}

/// Writes the bound `host:port` of one listener to `out`.
///
/// # Safety
/// `node` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpa_node_address(node: *const BpaNode, which: BpaListener, out: *mut *mut c_char) -> BpaStatus {
    let Some(h) = node.as_ref().and_then(|n| n.handle.as_ref()) else {
        return fail(BpaStatus::NullArgument, "node is null or stopped");
    };
    if out.is_null() {
        return fail(BpaStatus::NullArgument, "out is null");
    }
    let addr = match which {
        BpaListener::Dispatch => h.dispatch_addr,
        BpaListener::App => h.app_addr,
        BpaListener::Cla => h.cla_addr,
    };
    write_str(out, addr.to_string())
}

/// Dials a peer's CLA listener and writes the peer's node name to `peer_out`.
///
/// # Safety
/// `node` must be a live handle; `address` a NUL-terminated string;
/// `peer_out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpa_node_dial(node: *const BpaNode, address: *const c_char, peer_out: *mut *mut c_char) -> BpaStatus {
    let Some(h) = node.as_ref().and_then(|n| n.handle.as_ref()) else {
        return fail(BpaStatus::NullArgument, "node is null or stopped");
    };
    let address = try_ffi!(read_str(address, "address"));
    if peer_out.is_null() {
        return fail(BpaStatus::NullArgument, "peer_out is null");
    }
    match runtime().block_on(h.dial(address)) {
        Ok(peer) => write_str(peer_out, peer),
        Err(e) => fail(BpaStatus::ConnectRefused, e),
    }
}

/// Stops the node and releases the handle. Null is ignored.
///
/// # Safety
/// `node` must come from [`bpa_node_start`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bpa_node_free(node: *mut BpaNode) {
    if node.is_null() {
        return;
    }
    let mut node = Box::from_raw(node);
    if let Some(h) = node.handle.take() {
        runtime().block_on(h.shutdown());
    }
}

/// Connects to a dispatch listener. `role` is one of `bdm`, `monitor`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpa_client_connect(
    address: *const c_char,
    role: *const c_char,
    name: *const c_char,
    out: *mut *mut BpaClient,
) -> BpaStatus {
    if out.is_null() {
        return fail(BpaStatus::NullArgument, "out is null");
    }
    let address = try_ffi!(read_str(address, "address"));
    let role = match try_ffi!(read_str(role, "role")) {
        "bdm" => Role::Bdm,
        "monitor" => Role::Monitor,
        other => return fail(BpaStatus::InvalidArgument, format!("unsupported role {other:?}")),
    };
    let name = try_ffi!(read_str(name, "name"));
    match runtime().block_on(DispatchClient::connect(address, role, name)) {
        Ok(client) => {
            *out = Box::into_raw(Box::new(BpaClient { client: Some(client) }));
            succeed()
        }
        Err(e) => fail(client_status(&e), e),
    }
}

unsafe fn live_client<'a>(client: *const BpaClient) -> Result<&'a DispatchClient, BpaStatus> {
    client
        .as_ref()
        .and_then(|c| c.client.as_ref())
        .ok_or_else(|| fail(BpaStatus::NullArgument, "client is null"))
}

/// Subscribes to a comma-separated list of topics.
///
/// # Safety
/// `client` must be live; `topics` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bpa_client_subscribe(client: *const BpaClient, topics: *const c_char) -> BpaStatus {
    let c = try_ffi!(live_client(client));
    let text = try_ffi!(read_str(topics, "topics"));
    let mut parsed = Vec::new();
    for t in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match t.parse::<Topic>() {
            Ok(t) => parsed.push(t),
            Err(e) => return fail(BpaStatus::InvalidArgument, e),
        }
    }
    let rt = runtime();
    match rt.block_on(async { c.subscribe(&parsed).await?; c.sync().await }) {
        Ok(()) => succeed(),
        Err(e) => fail(client_status(&e), e),
    }
}

/// Issues an RPC with JSON params and writes the JSON result to `result_out`.
/// On [`BpaStatus::RpcError`] the message carries the server's error code.
///
/// # Safety
/// `client` must be live; strings NUL-terminated; `result_out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpa_client_call(
    client: *const BpaClient,
    method: *const c_char,
    params_json: *const c_char,
    result_out: *mut *mut c_char,
) -> BpaStatus {
    let c = try_ffi!(live_client(client));
    let method = try_ffi!(read_str(method, "method"));
    let params: Value = match serde_json::from_str(try_ffi!(read_str(params_json, "params_json"))) {
        Ok(v) => v,
        Err(e) => return fail(BpaStatus::InvalidArgument, format!("params: {e}")),
    };
    if result_out.is_null() {
        return fail(BpaStatus::NullArgument, "result_out is null");
    }
    match runtime().block_on(c.call(method, params)) {
        Ok(v) => write_str(result_out, v.to_string()),
        Err(e) => fail(client_status(&e), e),
    }
}

/// Waits up to `timeout_ms` (negative: forever) for the next event and writes
/// it as JSON to `event_out`.
///
/// # Safety
/// `client` must be live; `event_out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpa_client_next_event(client: *const BpaClient, timeout_ms: i64, event_out: *mut *mut c_char) -> BpaStatus {
    let c = try_ffi!(live_client(client));
    if event_out.is_null() {
        return fail(BpaStatus::NullArgument, "event_out is null");
    }
    let timeout = u64::try_from(timeout_ms).ok().map(Duration::from_millis);
    match runtime().block_on(c.next_event(timeout)) {
        Ok(ev) => match serde_json::to_string(&ev) {
            Ok(s) => write_str(event_out, s),
            Err(e) => fail(BpaStatus::Internal, e),
        },
        Err(e) => fail(client_status(&e), e),
    }
}

/// Closes the connection and releases the handle. Null is ignored.
///
/// # Safety
/// `client` must come from [`bpa_client_connect`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bpa_client_free(client: *mut BpaClient) {
    if client.is_null() {
        return;
    }
    let mut client = Box::from_raw(client);
    let _guard = runtime().enter();
    drop(client.client.take());
}

/// Computes the earliest-arrival route over a plan given as text
/// (`from to start end [owlt]` lines). Writes
/// `{"next-hop","arrival","departure","hops"}` JSON to `route_out`, or
/// returns [`BpaStatus::Unreachable`].
///
/// # Safety
/// Strings must be NUL-terminated; `route_out` writable.
#[no_mangle]
pub unsafe extern "C" fn bpa_earliest_arrival(
    plan: *const c_char,
    source: *const c_char,
    dest: *const c_char,
    t0: u64,
    route_out: *mut *mut c_char,
) -> BpaStatus {
    let plan = match parse_plan(try_ffi!(read_str(plan, "plan"))) {
        Ok(p) => p,
        Err(e) => return fail(BpaStatus::InvalidArgument, e),
    };
    let source = try_ffi!(read_str(source, "source"));
    let dest = try_ffi!(read_str(dest, "dest"));
    if route_out.is_null() {
        return fail(BpaStatus::NullArgument, "route_out is null");
    }
    match earliest_arrival(&plan, source, dest, t0) {
        Some(r) => write_str(
            route_out,
            serde_json::json!({
                "next-hop": r.next_hop,
                "arrival": r.arrival,
                "departure": r.departure,
                "hops": r.hops,
            })
            .to_string(),
        ),
        None => fail(BpaStatus::Unreachable, format!("no route from {source} to {dest}")),
    }
}

/// Validates a JSON action list against the core verbs.
///
/// # Safety
/// `actions_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bpa_validate_action_list(actions_json: *const c_char) -> BpaStatus {
    let text = try_ffi!(read_str(actions_json, "actions_json"));
    let actions: Vec<Action> = match serde_json::from_str(text) {
        Ok(a) => a,
        Err(e) => return fail(BpaStatus::InvalidArgument, format!("actions: {e}")),
    };
    match validate_action_list(&actions, &core_verbs()) {
        Ok(()) => succeed(),
        Err(e) => fail(BpaStatus::InvalidArgument, e),
    }
}
