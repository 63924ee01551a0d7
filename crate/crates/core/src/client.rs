// SPDX-License-Identifier: Apache-2.0

//! Async clients for the dispatch and application listeners.

use std::collections::HashMap;
use std::io;
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::{TcpStream, UnixStream};
use tokio::sync::{mpsc, oneshot, Mutex};
use tokio::task::JoinHandle;

use crate::bundle::{Bundle, BundleId, BundleMetadata, EndpointId, ExtensionBlock};
use crate::protocol::{
    decode_message_with_cap, encode_message, method, read_line_capped, Action, BundleIdParams,
    BundleResult, Event, EventPayload, Hello, ListBundlesResult, Message, RegisterParams,
    RegisterResult, Role, RpcError, RpcRequest, RpcResponse, SendAduParams, SendAduResult,
    SeqCounter, SeqTracker, SetDefaultActionsParams, Subscribe, SupportedActionsResult, Topic,
    UpdateActionsParams, VerbDescriptor, APP_LINE_CAP, DISPATCH_LINE_CAP, PROTOCOL_VERSION,
};
use crate::wirelog::{Channel, Direction, Record, WireLog};

const HELLO_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Error, Debug)]
pub enum ClientError {
    #[error("connection-refused: {0}")]
    Refused(io::Error),
    #[error("version-mismatch: server speaks protocol {0}")]
    VersionMismatch(u32),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{0}")]
    Rpc(RpcError),
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    Timeout,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ClientError {
    /// Server error code, for RPC errors.
    pub fn rpc_code(&self) -> Option<&str> {
        match self {
            ClientError::Rpc(e) => Some(&e.code),
            _ => None,
        }
    }
}

type Pending = Arc<std::sync::Mutex<HashMap<String, oneshot::Sender<RpcResponse>>>>;

/// Prefix selecting a Unix socket path instead of a TCP address.
pub const UNIX_PREFIX: &str = "unix:";

type ReadHalf = Box<dyn AsyncRead + Unpin + Send>;

struct Writer {
    half: Box<dyn AsyncWrite + Unpin + Send>,
    seq: SeqCounter,
}

async fn open(address: &str) -> Result<(ReadHalf, Box<dyn AsyncWrite + Unpin + Send>), ClientError> {
    if let Some(path) = address.strip_prefix(UNIX_PREFIX) {
        let (r, w) = UnixStream::connect(path).await.map_err(ClientError::Refused)?.into_split();
        return Ok((Box::new(r), Box::new(w)));
    }
    let stream = TcpStream::connect(address).await.map_err(ClientError::Refused)?;
    stream.set_nodelay(true)?;
    let (r, w) = stream.into_split();
    Ok((Box::new(r), Box::new(w)))
}

/// One protocol session: hello exchange, sequencing, RPC correlation, and a
/// background reader that routes events into a queue.
struct Session {
    writer: Mutex<Writer>,
    pending: Pending,
    events: Mutex<mpsc::UnboundedReceiver<Event>>,
    next_id: std::sync::atomic::AtomicU64,
    server: Hello,
    close_reason: Arc<std::sync::Mutex<Option<String>>>,
    reader: JoinHandle<()>,
    log: WireLog,
    channel: Channel,
}

impl Drop for Session {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

impl Session {
    async fn connect(
        address: &str,
        role: Role,
        name: &str,
        cap: usize,
        log: WireLog,
        channel: Channel,
    ) -> Result<Session, ClientError> {
        let (read, half) = open(address).await?;
        let mut reader = BufReader::new(read);
        let mut writer = Writer {
            half,
            seq: SeqCounter::default(),
        };
        Self::write(&mut writer, Message::Hello(Hello::new(role, name)), &log, channel).await?;

        let mut tracker = SeqTracker::default();
        let line = tokio::time::timeout(HELLO_TIMEOUT, read_line_capped(&mut reader, cap))
            .await
            .map_err(|_| ClientError::Timeout)??
            .ok_or(ClientError::Closed)?;
        log.record(Record::line(channel, Direction::In, None, &line));
        let env = tracker
            .decode(&line, cap)
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        let server = match env.message {
            Message::Hello(h) => h,
            other => return Err(ClientError::Protocol(format!("expected hello, got {:?}", other.kind()))),
        };
        if server.protocol_version != PROTOCOL_VERSION {
            return Err(ClientError::VersionMismatch(server.protocol_version));
        }

        let pending: Pending = Arc::default();
        let close_reason: Arc<std::sync::Mutex<Option<String>>> = Arc::default();
        let (event_tx, event_rx) = mpsc::unbounded_channel();
        let reader_task = {
            let pending = pending.clone();
            let close_reason = close_reason.clone();
            let log = log.clone();
            tokio::spawn(async move {
                let reason = loop {
                    let line = match read_line_capped(&mut reader, cap).await {
                        Ok(Some(line)) => line,
                        Ok(None) => break "closed by server".to_string(),
                        Err(e) => break e.to_string(),
                    };
                    log.record(Record::line(channel, Direction::In, None, &line));
                    let env = match tracker.decode(&line, cap) {
                        Ok(env) => env,
                        Err(e) => break e.to_string(),
                    };
                    match env.message {
                        Message::Event(e) => {
                            let _ = event_tx.send(e);
                        }
                        Message::RpcResponse(r) => match &r.id {
                            Some(id) => {
                                if let Some(tx) = pending.lock().unwrap().remove(id) {
                                    let _ = tx.send(r);
                                }
                            }
                            None => {
                                break match r.outcome {
                                    Err(e) => e.to_string(),
                                    Ok(_) => "unsolicited response".into(),
                                }
                            }
                        },
                        other => break format!("unexpected {:?} from server", other.kind()),
                    }
                };
                *close_reason.lock().unwrap() = Some(reason);
                // wake every waiter
                pending.lock().unwrap().clear();
            })
        };
        Ok(Session {
            writer: Mutex::new(writer),
            pending,
            events: Mutex::new(event_rx),
            next_id: Default::default(),
            server,
            close_reason,
            reader: reader_task,
            log,
            channel,
        })
    }

    async fn write(writer: &mut Writer, message: Message, log: &WireLog, channel: Channel) -> Result<(), ClientError> {
        let env = writer.seq.wrap(message);
        let line = encode_message(&env).map_err(|e| ClientError::Protocol(e.to_string()))?;
        log.record(Record::line(channel, Direction::Out, None, &line));
        writer.half.write_all(&line).await?;
        Ok(())
    }

    async fn send(&self, message: Message) -> Result<(), ClientError> {
        let mut w = self.writer.lock().await;
        Self::write(&mut w, message, &self.log, self.channel).await
    }

    async fn call(&self, method: &str, params: Value) -> Result<Value, ClientError> {
        let n = self.next_id.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let id = format!("r{n}");
        let (tx, rx) = oneshot::channel();
        {
            let mut pending = self.pending.lock().unwrap();
            if self.close_reason.lock().unwrap().is_some() {
                return Err(self.closed_error());
            }
            pending.insert(id.clone(), tx);
        }
        let request = RpcRequest {
            id: id.clone(),
            method: method.to_string(),
            params,
        };
        if let Err(e) = self.send(Message::RpcRequest(request)).await {
            self.pending.lock().unwrap().remove(&id);
            return Err(e);
        }
        match rx.await {
            Ok(resp) => resp.outcome.map_err(ClientError::Rpc),
            Err(_) => Err(self.closed_error()),
        }
    }

    fn closed_error(&self) -> ClientError {
        match self.close_reason.lock().unwrap().clone() {
            Some(r) => ClientError::Protocol(r),
            None => ClientError::Closed,
        }
    }

    async fn next_event(&self, timeout: Option<Duration>) -> Result<Event, ClientError> {
        let mut rx = self.events.lock().await;
        let ev = match timeout {
            Some(t) => tokio::time::timeout(t, rx.recv()).await.map_err(|_| ClientError::Timeout)?,
            None => rx.recv().await,
        };
        ev.ok_or_else(|| self.closed_error())
    }
}

fn to_params<T: Serialize>(p: T) -> Result<Value, ClientError> {
    serde_json::to_value(p).map_err(|e| ClientError::Protocol(e.to_string()))
}

fn from_result<T: DeserializeOwned>(v: Value) -> Result<T, ClientError> {
    serde_json::from_value(v).map_err(|e| ClientError::Protocol(format!("bad result: {e}")))
}

/// Client of the dispatch listener (dispatcher modules, monitors).
pub struct DispatchClient {
    session: Session,
}

impl DispatchClient {
    /// Connects to `host:port`, or to a Unix socket given as `unix:PATH`.
    pub async fn connect(address: &str, role: Role, name: &str) -> Result<Self, ClientError> {
        Self::connect_logged(address, role, name, WireLog::disabled()).await
    }

    /// Like [`DispatchClient::connect`], recording every line in `log`.
    pub async fn connect_logged(address: &str, role: Role, name: &str, log: WireLog) -> Result<Self, ClientError> {
        let session = Session::connect(address, role, name, DISPATCH_LINE_CAP, log, Channel::Dispatch).await?;
        Ok(DispatchClient { session })
    }

    /// The server's hello.
    pub fn server(&self) -> &Hello {
        &self.session.server
    }

    /// Adds topics to this connection's subscription. Events published
    /// after the node processes this message will be delivered; use
    /// [`DispatchClient::sync`] to wait for that point.
    pub async fn subscribe(&self, topics: &[Topic]) -> Result<(), ClientError> {
        self.session
            .send(Message::Subscribe(Subscribe {
                topics: topics.to_vec(),
            }))
            .await
    }

    /// Round-trips a query so that every earlier message is known processed.
    pub async fn sync(&self) -> Result<(), ClientError> {
        self.query_supported_actions().await.map(|_| ())
    }

    pub async fn call(&self, method: &str, params: Value) -> Result<Value, ClientError> {
        self.session.call(method, params).await
    }

    pub async fn update_actions(&self, id: &BundleId, actions: Vec<Action>) -> Result<(), ClientError> {
        let params = to_params(UpdateActionsParams { id: id.clone(), actions })?;
        self.call(method::UPDATE_ACTIONS, params).await.map(|_| ())
    }

    pub async fn query_supported_actions(&self) -> Result<Vec<VerbDescriptor>, ClientError> {
        let v = self.call(method::QUERY_SUPPORTED_ACTIONS, json!({})).await?;
        Ok(from_result::<SupportedActionsResult>(v)?.actions)
    }

    pub async fn list_bundles(&self) -> Result<Vec<BundleMetadata>, ClientError> {
        let v = self.call(method::LIST_BUNDLES, json!({})).await?;
        Ok(from_result::<ListBundlesResult>(v)?.bundles)
    }

    pub async fn get_bundle(&self, id: &BundleId) -> Result<BundleMetadata, ClientError> {
        let v = self.call(method::GET_BUNDLE, to_params(BundleIdParams { id: id.clone() })?).await?;
        Ok(from_result::<BundleResult>(v)?.bundle)
    }

    pub async fn set_default_actions(&self, actions: Vec<Action>) -> Result<(), ClientError> {
        let params = to_params(SetDefaultActionsParams { actions })?;
        self.call(method::SET_DEFAULT_ACTIONS, params).await.map(|_| ())
    }

    /// Next event, waiting at most `timeout` if given.
    pub async fn next_event(&self, timeout: Option<Duration>) -> Result<Event, ClientError> {
        self.session.next_event(timeout).await
    }

    /// Waits for the first event satisfying `pred`, discarding others.
    pub async fn wait_for<F>(&self, timeout: Duration, mut pred: F) -> Result<Event, ClientError>
    where
        F: FnMut(&Event) -> bool,
    {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            let ev = self.next_event(Some(left)).await?;
            if pred(&ev) {
                return Ok(ev);
            }
        }
    }
}

/// Client of the application listener.
pub struct AppClient {
    session: Session,
}

impl AppClient {
    pub async fn connect(address: &str, name: &str) -> Result<Self, ClientError> {
        Self::connect_logged(address, name, WireLog::disabled()).await
    }

    pub async fn connect_logged(address: &str, name: &str, log: WireLog) -> Result<Self, ClientError> {
        let session = Session::connect(address, Role::App, name, APP_LINE_CAP, log, Channel::App).await?;
        Ok(AppClient { session })
    }

    pub async fn register(&self, demux: &str) -> Result<EndpointId, ClientError> {
        let params = to_params(RegisterParams { demux: demux.to_string() })?;
        let v = self.session.call(method::REGISTER, params).await?;
        Ok(from_result::<RegisterResult>(v)?.endpoint)
    }

    pub async fn send(
        &self,
        destination: &str,
        payload: Vec<u8>,
        lifetime: u64,
        extension_blocks: Vec<ExtensionBlock>,
    ) -> Result<BundleId, ClientError> {
        let params = to_params(SendAduParams {
            destination: destination.to_string(),
            payload,
            lifetime,
            extension_blocks,
            report_to: None,
        })?;
        let v = self.session.call(method::SEND, params).await?;
        Ok(from_result::<SendAduResult>(v)?.id)
    }

    /// Next delivered bundle.
    pub async fn recv(&self, timeout: Option<Duration>) -> Result<Bundle, ClientError> {
        loop {
            let ev = self.session.next_event(timeout).await?;
            if let EventPayload::Delivery { bundle } = ev.payload {
                return Ok(bundle);
            }
        }
    }
}

/// Decodes one line from a dispatch log; convenience for tools.
pub fn decode_line(line: &str) -> Option<Message> {
    decode_message_with_cap(line.as_bytes(), APP_LINE_CAP).ok().map(|e| e.message)
}
