// SPDX-License-Identifier: Apache-2.0

//! The node daemon: one event loop owning the [`Agent`], the event bus and
//! the link table, fed by connection handlers over a command channel.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::os::unix::fs::FileTypeExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream, UnixListener};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use super::agent::{Agent, IngestError, IngestSource, Output, Step};
use super::bus::{Bus, CloseHandle};
use super::config::{ConfigError, NodeConfig};
use crate::bundle::{now_ms, Bundle, BundleId, EndpointId};
use crate::cla::{self, ClaError, Handshaken, Link, LinkDirection, LinkEvent};
use crate::protocol::{
    encode_message, method, read_line_capped, BundleIdParams, BundleResult, Event, Hello,
    ListBundlesResult, Message, RegisterParams, RegisterResult, Role, RpcError, RpcRequest,
    RpcResponse, SendAduParams, SendAduResult, SeqCounter, SeqTracker, SetDefaultActionsParams,
    SupportedActionsResult, Topic, UpdateActionsParams, APP_LINE_CAP, DISPATCH_LINE_CAP,
    PROTOCOL_VERSION,
};
use crate::wirelog::{Channel, Direction, Record, WireLog};

const TRANSMIT_TIMEOUT: Duration = Duration::from_secs(2);
const CLOSE_WRITE_TIMEOUT: Duration = Duration::from_millis(200);

type ConnRead = Box<dyn AsyncRead + Unpin + Send>;
type ConnWrite = Box<dyn AsyncWrite + Unpin + Send>;

fn split_tcp(stream: TcpStream) -> (ConnRead, ConnWrite) {
    let _ = stream.set_nodelay(true);
    let (r, w) = stream.into_split();
    (Box::new(r), Box::new(w))
}

#[derive(Error, Debug)]
pub enum NodeError {
    #[error("port-in-use: cannot bind {which} listener on {addr}: {source}")]
    PortInUse {
        which: &'static str,
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("cannot bind dispatch socket {path}: {source}")]
    Socket {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cla(#[from] ClaError),
    #[error("cannot open wire log: {0}")]
    WireLog(std::io::Error),
    #[error("node stopped")]
    Stopped,
}

enum Command {
    Link(LinkEvent),
    LinkReady {
        hs: Handshaken,
        reply: Option<oneshot::Sender<String>>,
    },
    CloseLink {
        peer: String,
        reply: oneshot::Sender<bool>,
    },
    Subscribe {
        conn: u64,
        topics: Vec<Topic>,
        queue: mpsc::Sender<Event>,
        close: CloseHandle,
    },
    DispatchRpc {
        request: RpcRequest,
        reply: oneshot::Sender<RpcResponse>,
    },
    DispatchClosed {
        conn: u64,
    },
    AppRegister {
        conn: u64,
        demux: String,
        queue: mpsc::Sender<Event>,
        close: CloseHandle,
        reply: oneshot::Sender<Result<EndpointId, RpcError>>,
    },
    AppSend {
        demux: String,
        params: SendAduParams,
        reply: oneshot::Sender<Result<BundleId, RpcError>>,
    },
    AppClosed {
        conn: u64,
        demux: Option<String>,
    },
    Shutdown,
}

type CommandTx = mpsc::UnboundedSender<Command>;

/// Handle to a running node. Dropping it stops the node.
pub struct NodeHandle {
    pub node_name: String,
    pub dispatch_addr: SocketAddr,
    pub app_addr: SocketAddr,
    pub cla_addr: SocketAddr,
    pub dispatch_socket: Option<PathBuf>,
    commands: CommandTx,
    tasks: Vec<JoinHandle<()>>,
    event_loop: Option<JoinHandle<()>>,
}

impl NodeHandle {
    /// The line printed once all listeners are bound.
    pub fn readiness_line(&self) -> String {
        let mut line = format!(
            "ready node={} dispatch={} app={} cla={}",
            self.node_name, self.dispatch_addr, self.app_addr, self.cla_addr
        );
        if let Some(p) = &self.dispatch_socket {
            line += &format!(" dispatch-socket={}", p.display());
        }
        line
    }

    /// Dials a peer's CLA listener. Returns the peer's node name once the
    /// link is active.
    pub async fn dial(&self, address: &str) -> Result<String, NodeError> {
        dial_peer(&self.node_name, address, &self.commands).await
    }

    /// Closes the active link to `peer`. Returns false if there was none.
    pub async fn close_link(&self, peer: &str) -> Result<bool, NodeError> {
        let (reply, rx) = oneshot::channel();
        self.commands
            .send(Command::CloseLink {
                peer: peer.to_string(),
                reply,
            })
            .map_err(|_| NodeError::Stopped)?;
        rx.await.map_err(|_| NodeError::Stopped)
    }

    pub async fn shutdown(mut self) {
        let _ = self.commands.send(Command::Shutdown);
        if let Some(h) = self.event_loop.take() {
            let _ = h.await;
        }
    }

    /// Resolves when the event loop exits.
    pub async fn stopped(&mut self) {
        if let Some(h) = self.event_loop.as_mut() {
            let _ = h.await;
            self.event_loop = None;
        }
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        let _ = self.commands.send(Command::Shutdown);
        if let Some(p) = &self.dispatch_socket {
            let _ = std::fs::remove_file(p);
        }
        for t in &self.tasks {
            t.abort();
        }
        if let Some(h) = &self.event_loop {
            h.abort();
        }
    }
}

async fn dial_peer(local: &str, address: &str, commands: &CommandTx) -> Result<String, NodeError> {
    let hs = cla::dial(address, local).await?;
    let (reply, rx) = oneshot::channel();
    commands
        .send(Command::LinkReady {
            hs,
            reply: Some(reply),
        })
        .map_err(|_| NodeError::Stopped)?;
    rx.await.map_err(|_| NodeError::Stopped)
}

/// Binds a Unix socket, replacing a stale socket file left at `path`.
fn bind_socket(path: &Path) -> Result<UnixListener, NodeError> {
    let err = |source| NodeError::Socket {
        path: path.to_path_buf(),
        source,
    };
    if std::fs::symlink_metadata(path).is_ok_and(|m| m.file_type().is_socket()) {
        std::fs::remove_file(path).map_err(err)?;
    }
    UnixListener::bind(path).map_err(err)
}

async fn bind(which: &'static str, addr: SocketAddr) -> Result<TcpListener, NodeError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| NodeError::PortInUse { which, addr, source })
}

/// Binds all listeners and starts the node.
pub async fn start(config: NodeConfig) -> Result<NodeHandle, NodeError> {
    config.validate()?;
    let log = match &config.wire_log {
        Some(p) => WireLog::create(p).map_err(NodeError::WireLog)?,
        None => WireLog::disabled(),
    };
    let dispatch = bind("dispatch", config.dispatch_listen).await?;
    let app = bind("app", config.app_listen).await?;
    let cla_listener = bind("cla", config.cla_listen).await?;
    let dispatch_unix = config.dispatch_socket.as_deref().map(bind_socket).transpose()?;
    let dispatch_addr = dispatch.local_addr().expect("bound");
    let app_addr = app.local_addr().expect("bound");
    let cla_addr = cla_listener.local_addr().expect("bound");

    let (commands, command_rx) = mpsc::unbounded_channel();
    let (stop_tx, stopping) = watch::channel(());
    let ctx = Arc::new(ConnContext {
        node_name: config.node_name.clone(),
        commands: commands.clone(),
        log: log.clone(),
        queue_cap: config.subscriber_queue_cap,
        next_conn: AtomicU64::new(1),
        stopping,
    });

    let event_loop = EventLoop {
        agent: Agent::new(&config.node_name, config.default_actions.clone()),
        bus: Bus::new(),
        links: HashMap::new(),
        next_link_id: 1,
        apps: HashMap::new(),
        log,
        commands: commands.clone(),
        scan_period: config.expiry_scan_period(),
        _stop: stop_tx,
    };
    let event_loop = tokio::spawn(event_loop.run(command_rx));

    let mut tasks = vec![
        tokio::spawn(accept_dispatch(dispatch, ctx.clone())),
        tokio::spawn(accept_app(app, ctx.clone())),
        tokio::spawn(accept_cla(cla_listener, ctx.clone())),
    ];
    if let Some(listener) = dispatch_unix {
        tasks.push(tokio::spawn(accept_dispatch_unix(listener, ctx.clone())));
    }
    for peer in &config.peers {
        let ctx = ctx.clone();
        let peer = peer.clone();
        tasks.push(tokio::spawn(async move {
            if let Err(e) = dial_peer(&ctx.node_name, &peer, &ctx.commands).await {
                log::warn!("{}: dialing {peer} failed: {e}", ctx.node_name);
            }
        }));
    }

    Ok(NodeHandle {
        node_name: config.node_name,
        dispatch_addr,
        app_addr,
        cla_addr,
        dispatch_socket: config.dispatch_socket,
        commands,
        tasks,
        event_loop: Some(event_loop),
    })
}

struct AppRegistration {
    conn: u64,
    queue: mpsc::Sender<Event>,
    close: CloseHandle,
}

struct EventLoop {
    agent: Agent,
    bus: Bus,
    links: HashMap<String, Link>,
    next_link_id: u64,
    apps: HashMap<String, AppRegistration>,
    log: WireLog,
    commands: CommandTx,
    scan_period: Duration,
    _stop: watch::Sender<()>,
}

impl EventLoop {
    async fn run(mut self, mut commands: mpsc::UnboundedReceiver<Command>) {
        let mut scan = tokio::time::interval(self.scan_period);
        scan.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                cmd = commands.recv() => match cmd {
                    None | Some(Command::Shutdown) => break,
                    Some(cmd) => self.handle(cmd),
                },
                _ = scan.tick() => {
                    let n = self.agent.expiry_scan(now_ms());
                    if n > 0 {
                        log::debug!("{}: {n} bundle(s) expired", self.agent.node_name());
                    }
                }
            }
            self.pump().await;
        }
        self.links.clear();
    }

    fn flush_outputs(&mut self) {
        let outputs: Vec<Output> = self.agent.drain_outputs().collect();
        for out in outputs {
            match out {
                Output::Event(event) => {
                    if self.log.is_enabled() {
                        if let Ok(line) = encode_message(&SeqCounter::default().wrap(Message::Event(event.clone()))) {
                            self.log.record(Record::line(Channel::Bus, Direction::Out, None, &line));
                        }
                    }
                    self.bus.publish(&event);
                }
                Output::Deliver { demux, bundle } => {
                    let Some(reg) = self.apps.get(&demux) else {
                        log::warn!("delivery for {demux} without registration");
                        continue;
                    };
                    let event = Event {
                        topic: Topic::Delivery,
                        timestamp: now_ms(),
                        payload: crate::protocol::EventPayload::Delivery { bundle },
                    };
                    if reg.queue.try_send(event).is_err() {
                        let _ = reg.close.send("slow-consumer".into());
                    }
                }
            }
        }
    }

    /// Publishes pending outputs and runs the action engine until idle.
    async fn pump(&mut self) {
        self.flush_outputs();
        loop {
            let step = self.agent.execute_next(now_ms());
            match step {
                Step::Idle => break,
                Step::Transmit(tx) => {
                    let result = match self.links.get(&tx.peer) {
                        None => Err(format!("no active link to {}", tx.peer)),
                        Some(link) => match tokio::time::timeout(TRANSMIT_TIMEOUT, link.transmit(&tx.bundle)).await {
                            Ok(Ok(_)) => {
                                self.log.record(Record::frame(
                                    Direction::Out,
                                    &tx.peer,
                                    &tx.id,
                                    tx.bundle.payload.len(),
                                ));
                                Ok(())
                            }
                            Ok(Err(e)) => Err(e.to_string()),
                            Err(_) => Err("transmit timed out".to_string()),
                        },
                    };
                    self.agent.complete_transmission(&tx, result, now_ms());
                }
                Step::Dropped { .. } | Step::Skipped { .. } => {}
            }
            self.flush_outputs();
        }
    }

    fn handle(&mut self, cmd: Command) {
        let now = now_ms();
        match cmd {
            Command::Link(LinkEvent::Bundle { peer, bundle, .. }) => {
                match self.agent.ingest(bundle, IngestSource::ConvergenceLayer { peer }, now) {
                    Ok(_) | Err(IngestError::DuplicateId) | Err(IngestError::ExpiredOnArrival) => {}
                }
            }
            Command::Link(LinkEvent::Closed { link_id, peer, reason }) => {
                if self.links.get(&peer).map(|l| l.id) == Some(link_id) {
                    let link = self.links.remove(&peer).expect("checked");
                    log::info!("{}: link to {peer} closed: {reason}", self.agent.node_name());
                    self.agent.link_down(&peer, &link.address.to_string(), now);
                }
            }
            Command::LinkReady { hs, reply } => {
                let id = self.next_link_id;
                self.next_link_id += 1;
                let commands = self.commands.clone();
                let link = Link::spawn(hs, self.agent.node_name(), id, self.log.clone(), move |ev| {
                    let _ = commands.send(Command::Link(ev));
                });
                let peer = link.peer.clone();
                match self.links.get(&peer) {
                    None => {
                        self.agent.link_up(&peer, &link.address.to_string(), now);
                        self.links.insert(peer.clone(), link);
                    }
                    Some(existing) if cla::prefer_candidate(&existing.dialer, &link.dialer) => {
                        // peer stays reachable throughout; no link events
                        self.links.insert(peer.clone(), link);
                    }
                    Some(_) => drop(link),
                }
                if let Some(reply) = reply {
                    let _ = reply.send(peer);
                }
            }
            Command::CloseLink { peer, reply } => {
                let found = match self.links.remove(&peer) {
                    Some(link) => {
                        self.agent.link_down(&peer, &link.address.to_string(), now);
                        true
                    }
                    None => false,
                };
                let _ = reply.send(found);
            }
            Command::Subscribe {
                conn,
                topics,
                queue,
                close,
            } => self.bus.subscribe(conn, topics, queue, close),
            Command::DispatchRpc { request, reply } => {
                let _ = reply.send(self.dispatch_rpc(&request));
            }
            Command::DispatchClosed { conn } => self.bus.unsubscribe_all(conn),
            Command::AppRegister {
                conn,
                demux,
                queue,
                close,
                reply,
            } => {
                let endpoint = match EndpointId::new(self.agent.node_name(), &demux) {
                    Ok(e) => e,
                    Err(e) => {
                        let _ = reply.send(Err(RpcError::new("invalid-demux", e.to_string())));
                        return;
                    }
                };
                if self.agent.register(&demux, now).is_err() {
                    let _ = reply.send(Err(RpcError::new("demux-taken", format!("{demux:?} is registered"))));
                    return;
                }
                self.apps.insert(demux, AppRegistration { conn, queue, close });
                let _ = reply.send(Ok(endpoint));
            }
            Command::AppSend { demux, params, reply } => {
                let _ = reply.send(self.send_adu(&demux, params, now));
            }
            Command::AppClosed { conn, demux } => {
                if let Some(demux) = demux {
                    if self.apps.get(&demux).map(|r| r.conn) == Some(conn) {
                        self.apps.remove(&demux);
                        self.agent.unregister(&demux);
                    }
                }
            }
            Command::Shutdown => {}
        }
    }

    fn send_adu(&mut self, demux: &str, params: SendAduParams, now: u64) -> Result<BundleId, RpcError> {
        let destination = crate::bundle::parse_endpoint(&params.destination)
            .map_err(|e| RpcError::new("invalid-destination", e.to_string()))?;
        if params.lifetime == 0 {
            return Err(RpcError::new("zero-lifetime", "lifetime must be > 0"));
        }
        let source = EndpointId::new(self.agent.node_name(), demux)
            .map_err(|e| RpcError::new("invalid-demux", e.to_string()))?;
        let id = self.agent.allocate_id(source, now);
        let bundle = Bundle {
            id,
            destination,
            report_to: params.report_to,
            lifetime: params.lifetime,
            previous_node: None,
            extension_blocks: params.extension_blocks,
            payload: params.payload,
        };
        self.agent
            .ingest(bundle, IngestSource::Application, now)
            .map_err(|e| RpcError::new(&e.to_string(), "bundle not accepted"))
    }

    fn dispatch_rpc(&mut self, req: &RpcRequest) -> RpcResponse {
        match self.dispatch_method(req) {
            Ok(v) => RpcResponse::ok(&req.id, v),
            Err(e) => RpcResponse::err(&req.id, e),
        }
    }

    fn dispatch_method(&mut self, req: &RpcRequest) -> Result<Value, RpcError> {
        fn params<T: DeserializeOwned>(v: &Value) -> Result<T, RpcError> {
            serde_json::from_value(v.clone()).map_err(|e| RpcError::new("bad-params", e.to_string()))
        }
        fn to_value<T: serde::Serialize>(v: T) -> Result<Value, RpcError> {
            serde_json::to_value(v).map_err(|e| RpcError::new("internal", e.to_string()))
        }
        match req.method.as_str() {
            method::UPDATE_ACTIONS => {
                let p: UpdateActionsParams = params(&req.params)?;
                self.agent
                    .update_actions(&p.id, p.actions)
                    .map_err(|e| RpcError::new(e.code(), e.to_string()))?;
                Ok(json!({}))
            }
            method::QUERY_SUPPORTED_ACTIONS => to_value(SupportedActionsResult {
                actions: self.agent.query_supported_actions(),
            }),
            method::LIST_BUNDLES => to_value(ListBundlesResult {
                bundles: self.agent.list_bundles(),
            }),
            method::GET_BUNDLE => {
                let p: BundleIdParams = params(&req.params)?;
                let bundle = self
                    .agent
                    .get_bundle(&p.id)
                    .ok_or_else(|| RpcError::new("unknown-bundle", p.id.to_string()))?;
                to_value(BundleResult { bundle })
            }
            method::SET_DEFAULT_ACTIONS => {
                let p: SetDefaultActionsParams = params(&req.params)?;
                self.agent
                    .set_default_actions(p.actions)
                    .map_err(|e| RpcError::new("invalid-action-list", e.to_string()))?;
                Ok(json!({}))
            }
            other => Err(RpcError::new("unknown-method", other.to_string())),
        }
    }
}

struct ConnContext {
    node_name: String,
    commands: CommandTx,
    log: WireLog,
    queue_cap: usize,
    next_conn: AtomicU64,
    /// Resolves `changed()` with an error once the event loop has exited.
    stopping: watch::Receiver<()>,
}

impl ConnContext {
    fn conn_id(&self) -> u64 {
        self.next_conn.fetch_add(1, Ordering::Relaxed)
    }
}

async fn accept_dispatch(listener: TcpListener, ctx: Arc<ConnContext>) {
    loop {
        match listener.accept().await {
            Ok((stream, _)) => {
                let (r, w) = split_tcp(stream);
                tokio::spawn(serve_dispatch(r, w, ctx.clone()));
            }
            Err(e) => log::warn!("dispatch accept: {e}"),
        }
    }
}

async fn accept_dispatch_unix(listener: UnixListener, ctx: Arc<ConnContext>) {
    loop {
        match listener.accept().await {
            Ok((stream, _)) => {
                let (r, w) = stream.into_split();
                tokio::spawn(serve_dispatch(Box::new(r), Box::new(w), ctx.clone()));
            }
            Err(e) => log::warn!("dispatch socket accept: {e}"),
        }
    }
}

async fn accept_app(listener: TcpListener, ctx: Arc<ConnContext>) {
    loop {
        match listener.accept().await {
            Ok((stream, _)) => {
                let (r, w) = split_tcp(stream);
                tokio::spawn(serve_app(r, w, ctx.clone()));
            }
            Err(e) => log::warn!("app accept: {e}"),
        }
    }
}

async fn accept_cla(listener: TcpListener, ctx: Arc<ConnContext>) {
    loop {
        match listener.accept().await {
            Ok((stream, _)) => {
                let _ = stream.set_nodelay(true);
                let ctx = ctx.clone();
                tokio::spawn(async move {
                    match cla::handshake(stream, &ctx.node_name, LinkDirection::Accepted).await {
                        Ok(hs) => {
                            let _ = ctx.commands.send(Command::LinkReady { hs, reply: None });
                        }
                        Err(e) => log::warn!("{}: inbound CLA handshake failed: {e}", ctx.node_name),
                    }
                });
            }
            Err(e) => log::warn!("cla accept: {e}"),
        }
    }
}

/// Outbound side of one client connection.
struct ConnWriter {
    responses: mpsc::UnboundedSender<RpcResponse>,
    events: mpsc::Sender<Event>,
    close: CloseHandle,
    closed: watch::Receiver<bool>,
}

fn spawn_writer(
    mut write: ConnWrite,
    hello: Hello,
    channel: Channel,
    conn: u64,
    log: WireLog,
    queue_cap: usize,
) -> ConnWriter {
    let (responses, mut resp_rx) = mpsc::unbounded_channel::<RpcResponse>();
    let (events, mut event_rx) = mpsc::channel::<Event>(queue_cap);
    let (close, mut close_rx) = mpsc::unbounded_channel::<String>();
    let (closed_tx, closed) = watch::channel(false);
    tokio::spawn(async move {
        let mut seq = SeqCounter::default();
        let mut send = |message: Message| -> Option<Vec<u8>> {
            let env = seq.wrap(message);
            match encode_message(&env) {
                Ok(line) => {
                    log.record(Record::line(channel, Direction::Out, Some(conn), &line));
                    Some(line)
                }
                Err(e) => {
                    log::warn!("encode failed: {e}");
                    None
                }
            }
        };
        let mut ok = match send(Message::Hello(hello)) {
            Some(line) => write.write_all(&line).await.is_ok(),
            None => false,
        };
        let mut resp_open = true;
        let mut events_open = true;
        while ok && (resp_open || events_open) {
            let line = tokio::select! {
                biased;
                reason = close_rx.recv() => {
                    if let Some(reason) = reason {
                        // answers already produced still go out, ahead of the error
                        let mut tail = Vec::new();
                        while let Ok(r) = resp_rx.try_recv() {
                            tail.extend(send(Message::RpcResponse(r)).unwrap_or_default());
                        }
                        tail.extend(send(Message::RpcResponse(RpcResponse::protocol_error(reason))).unwrap_or_default());
                        let _ = tokio::time::timeout(CLOSE_WRITE_TIMEOUT, write.write_all(&tail)).await;
                    }
                    break;
                }
                r = resp_rx.recv(), if resp_open => match r {
                    Some(r) => send(Message::RpcResponse(r)),
                    None => { resp_open = false; None }
                },
                e = event_rx.recv(), if events_open => match e {
                    Some(e) => send(Message::Event(e)),
                    None => { events_open = false; None }
                },
            };
            if let Some(line) = line {
                // a stalled peer must not pin the writer past a close request
                tokio::select! {
                    r = write.write_all(&line) => ok = r.is_ok(),
                    reason = close_rx.recv() => {
                        log::info!("closing connection {conn}: {reason:?}");
                        break;
                    }
                }
            }
        }
        let _ = write.shutdown().await;
        let _ = closed_tx.send(true);
    });
    ConnWriter {
        responses,
        events,
        close,
        closed,
    }
}

/// Reads and validates the client's hello.
async fn read_hello(
    reader: &mut BufReader<ConnRead>,
    tracker: &mut SeqTracker,
    cap: usize,
    channel: Channel,
    conn: u64,
    log: &WireLog,
) -> Result<Hello, String> {
    let line = read_line_capped(reader, cap)
        .await
        .map_err(|e| e.to_string())?
        .ok_or_else(|| "closed before hello".to_string())?;
    log.record(Record::line(channel, Direction::In, Some(conn), &line));
    let env = tracker.decode(&line, cap).map_err(|e| e.to_string())?;
    match env.message {
        Message::Hello(h) if env.seq == 0 => {
            if h.protocol_version != PROTOCOL_VERSION {
                return Err(format!(
                    "version-mismatch: server speaks {PROTOCOL_VERSION}, client {}",
                    h.protocol_version
                ));
            }
            Ok(h)
        }
        other => Err(format!("expected hello, got {}", other.kind().as_str())),
    }
}

/// Next client line, or `None` when the connection should end.
async fn next_line(
    reader: &mut BufReader<ConnRead>,
    cap: usize,
    closed: &mut watch::Receiver<bool>,
    close: &CloseHandle,
    stopping: &mut watch::Receiver<()>,
) -> Option<Vec<u8>> {
    tokio::select! {
        r = read_line_capped(reader, cap) => match r {
            Ok(Some(line)) => Some(line),
            Ok(None) => None,
            Err(e) => {
                let _ = close.send(format!("malformed-document: {e}"));
                None
            }
        },
        _ = closed.changed() => None,
        _ = stopping.changed() => None,
    }
}

async fn serve_dispatch(read: ConnRead, write: ConnWrite, ctx: Arc<ConnContext>) {
    let conn = ctx.conn_id();
    let mut writer = spawn_writer(
        write,
        Hello::new(Role::Bpa, &ctx.node_name),
        Channel::Dispatch,
        conn,
        ctx.log.clone(),
        ctx.queue_cap,
    );
    let mut reader = BufReader::new(read);
    let mut tracker = SeqTracker::default();
    if let Err(reason) = read_hello(&mut reader, &mut tracker, DISPATCH_LINE_CAP, Channel::Dispatch, conn, &ctx.log).await {
        let _ = writer.close.send(reason);
        return;
    }
    let mut request_ids = HashSet::new();
    let mut stopping = ctx.stopping.clone();
    while let Some(line) = next_line(&mut reader, DISPATCH_LINE_CAP, &mut writer.closed, &writer.close, &mut stopping).await {
        ctx.log.record(Record::line(Channel::Dispatch, Direction::In, Some(conn), &line));
        let env = match tracker.decode(&line, DISPATCH_LINE_CAP) {
            Ok(env) => env,
            Err(e) => {
                let _ = writer.close.send(e.to_string());
                break;
            }
        };
        match env.message {
            Message::Subscribe(s) => {
                let _ = ctx.commands.send(Command::Subscribe {
                    conn,
                    topics: s.topics,
                    queue: writer.events.clone(),
                    close: writer.close.clone(),
                });
            }
            Message::RpcRequest(request) => {
                if !request_ids.insert(request.id.clone()) {
                    let _ = writer.close.send(format!("request id {:?} reused", request.id));
                    break;
                }
                let (reply, rx) = oneshot::channel();
                if ctx.commands.send(Command::DispatchRpc { request, reply }).is_err() {
                    break;
                }
                match rx.await {
                    Ok(resp) => {
                        let _ = writer.responses.send(resp);
                    }
                    Err(_) => break,
                }
            }
            other => {
                let _ = writer.close.send(format!("unexpected {} message", other.kind().as_str()));
                break;
            }
        }
    }
    let _ = ctx.commands.send(Command::DispatchClosed { conn });
}

async fn serve_app(read: ConnRead, write: ConnWrite, ctx: Arc<ConnContext>) {
    let conn = ctx.conn_id();
    let mut writer = spawn_writer(
        write,
        Hello::new(Role::Bpa, &ctx.node_name),
        Channel::App,
        conn,
        ctx.log.clone(),
        ctx.queue_cap,
    );
    let mut reader = BufReader::new(read);
    let mut tracker = SeqTracker::default();
    match read_hello(&mut reader, &mut tracker, APP_LINE_CAP, Channel::App, conn, &ctx.log).await {
        Ok(h) if h.role == Role::App => {}
        Ok(h) => {
            let _ = writer.close.send(format!("application listener requires role app, got {:?}", h.role));
            return;
        }
        Err(reason) => {
            let _ = writer.close.send(reason);
            return;
        }
    }
    let mut demux: Option<String> = None;
    let mut request_ids = HashSet::new();
    let mut stopping = ctx.stopping.clone();
    while let Some(line) = next_line(&mut reader, APP_LINE_CAP, &mut writer.closed, &writer.close, &mut stopping).await {
        ctx.log.record(Record::line(Channel::App, Direction::In, Some(conn), &line));
        let env = match tracker.decode(&line, APP_LINE_CAP) {
            Ok(env) => env,
            Err(e) => {
                let _ = writer.close.send(e.to_string());
                break;
            }
        };
        let Message::RpcRequest(request) = env.message else {
            let _ = writer.close.send(format!("unexpected {} message", env.message.kind().as_str()));
            break;
        };
        if !request_ids.insert(request.id.clone()) {
            let _ = writer.close.send(format!("request id {:?} reused", request.id));
            break;
        }
        let outcome: Result<Value, RpcError> = match request.method.as_str() {
            method::REGISTER => match serde_json::from_value::<RegisterParams>(request.params.clone()) {
                Err(e) => Err(RpcError::new("bad-params", e.to_string())),
                Ok(_) if demux.is_some() => Err(RpcError::new(
                    "already-registered",
                    "connection already holds a registration",
                )),
                Ok(p) => {
                    let (reply, rx) = oneshot::channel();
                    let _ = ctx.commands.send(Command::AppRegister {
                        conn,
                        demux: p.demux.clone(),
                        queue: writer.events.clone(),
                        close: writer.close.clone(),
                        reply,
                    });
                    match rx.await {
                        Ok(Ok(endpoint)) => {
                            demux = Some(p.demux);
                            Ok(serde_json::to_value(RegisterResult { endpoint }).expect("serializable"))
                        }
                        Ok(Err(e)) => Err(e),
                        Err(_) => break,
                    }
                }
            },
            method::SEND => match (&demux, serde_json::from_value::<SendAduParams>(request.params.clone())) {
                (_, Err(e)) => Err(RpcError::new("bad-params", e.to_string())),
                (None, _) => Err(RpcError::new("not-registered", "register before sending")),
                (Some(d), Ok(params)) => {
                    let (reply, rx) = oneshot::channel();
                    let _ = ctx.commands.send(Command::AppSend {
                        demux: d.clone(),
                        params,
                        reply,
                    });
                    match rx.await {
                        Ok(r) => r.map(|id| serde_json::to_value(SendAduResult { id }).expect("serializable")),
                        Err(_) => break,
                    }
                }
            },
            other => Err(RpcError::new("unknown-method", other.to_string())),
        };
        let resp = RpcResponse {
            id: Some(request.id),
            outcome,
        };
        let _ = writer.responses.send(resp);
    }
    let _ = ctx.commands.send(Command::AppClosed { conn, demux });
}
