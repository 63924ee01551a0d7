// SPDX-License-Identifier: Apache-2.0

//! TCP convergence layer.
//!
//! After connecting, each side sends one hello line (role `cla`), then the
//! stream carries frames: a big-endian `u32` length followed by that many
//! bytes of JSON bundle document (payload included, base64).

use std::io;
use std::net::SocketAddr;
use std::time::Duration;

use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::bundle::{Bundle, EndpointId};
use crate::protocol::{
    decode_message, encode_message, read_line_capped, Envelope, Hello, Message, Role,
    DISPATCH_LINE_CAP, PROTOCOL_VERSION,
};
use crate::wirelog::{Direction, Record, WireLog};

pub const FRAME_CAP: usize = 16 << 20;
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Error, Debug)]
pub enum ClaError {
    #[error("connect-refused: {0}")]
    ConnectRefused(io::Error),
    #[error("handshake-timeout")]
    HandshakeTimeout,
    #[error("name-conflict: peer claims our node name {0:?}")]
    NameConflict(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("link-closed")]
    LinkClosed,
    #[error("frame of {0} bytes exceeds cap")]
    FrameTooLarge(usize),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkDirection {
    Dialed,
    Accepted,
}

/// Encodes one bundle frame.
pub fn encode_frame(bundle: &Bundle) -> Vec<u8> {
    let doc = serde_json::to_vec(bundle).expect("bundles always serialize");
    let mut out = Vec::with_capacity(doc.len() + 4);
    out.extend_from_slice(&(doc.len() as u32).to_be_bytes());
    out.extend_from_slice(&doc);
    out
}

/// Reads one frame. `Ok(None)` on a clean end of stream at a frame boundary.
pub async fn read_frame<R>(reader: &mut R, cap: usize) -> Result<Option<Bundle>, ClaError>
where
    R: AsyncRead + Unpin,
{
    let mut len = [0u8; 4];
    match reader.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > cap {
        return Err(ClaError::FrameTooLarge(len));
    }
    let mut doc = vec![0u8; len];
    reader.read_exact(&mut doc).await?;
    serde_json::from_slice(&doc)
        .map(Some)
        .map_err(|e| ClaError::MalformedFrame(e.to_string()))
}

/// A connection that completed the hello exchange.
pub struct Handshaken {
    pub peer: String,
    pub address: SocketAddr,
    pub direction: LinkDirection,
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
}

async fn write_hello<W: AsyncWrite + Unpin>(w: &mut W, local: &str) -> io::Result<()> {
    let line = encode_message(&Envelope::new(0, Message::Hello(Hello::new(Role::Cla, local))))
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    w.write_all(&line).await?;
    w.flush().await
}

/// Exchanges hellos on a fresh connection.
pub async fn handshake(
    stream: TcpStream,
    local: &str,
    direction: LinkDirection,
) -> Result<Handshaken, ClaError> {
    let address = stream.peer_addr()?;
    let (read, mut writer) = stream.into_split();
    let mut reader = BufReader::new(read);
    let exchange = async {
        write_hello(&mut writer, local).await?;
        let line = read_line_capped(&mut reader, DISPATCH_LINE_CAP)
            .await?
            .ok_or_else(|| ClaError::Handshake("closed before hello".into()))?;
        let env = decode_message(&line).map_err(|e| ClaError::Handshake(e.to_string()))?;
        match env.message {
            Message::Hello(h) if env.seq == 0 && h.role == Role::Cla => Ok(h),
            other => Err(ClaError::Handshake(format!("expected cla hello, got {:?}", other.kind()))),
        }
    };
    let hello = tokio::time::timeout(HANDSHAKE_TIMEOUT, exchange)
        .await
        .map_err(|_| ClaError::HandshakeTimeout)??;
    if hello.protocol_version != PROTOCOL_VERSION {
        return Err(ClaError::Handshake(format!(
            "protocol version {} not supported",
            hello.protocol_version
        )));
    }
    if hello.node == local {
        return Err(ClaError::NameConflict(hello.node));
    }
    if !crate::bundle::is_valid_node_name(&hello.node) {
        return Err(ClaError::Handshake(format!("invalid peer name {:?}", hello.node)));
    }
    Ok(Handshaken {
        peer: hello.node,
        address,
        direction,
        reader,
        writer,
    })
}

/// Connects to a peer's CLA listener and performs the handshake.
pub async fn dial(address: &str, local: &str) -> Result<Handshaken, ClaError> {
    let stream = tokio::time::timeout(HANDSHAKE_TIMEOUT, TcpStream::connect(address))
        .await
        .map_err(|_| ClaError::HandshakeTimeout)?
        .map_err(ClaError::ConnectRefused)?;
    stream.set_nodelay(true)?;
    handshake(stream, local, LinkDirection::Dialed).await
}

/// Notifications from running links.
#[derive(Debug)]
pub enum LinkEvent {
    Bundle { link_id: u64, peer: String, bundle: Bundle },
    Closed { link_id: u64, peer: String, reason: String },
}

type WriteRequest = (Vec<u8>, oneshot::Sender<io::Result<()>>);

/// An active link. Dropping it closes the connection without a
/// [`LinkEvent::Closed`] notification.
pub struct Link {
    pub id: u64,
    pub peer: String,
    pub address: SocketAddr,
    pub direction: LinkDirection,
    /// Node name of the side that dialed; decides dial collisions.
    pub dialer: String,
    writes: mpsc::UnboundedSender<WriteRequest>,
    reader_task: JoinHandle<()>,
    writer_task: JoinHandle<()>,
}

impl Link {
    pub fn spawn<F>(hs: Handshaken, local: &str, id: u64, log: WireLog, on_event: F) -> Link
    where
        F: Fn(LinkEvent) + Send + Sync + 'static,
    {
        let Handshaken {
            peer,
            address,
            direction,
            mut reader,
            mut writer,
        } = hs;
        let dialer = match direction {
            LinkDirection::Dialed => local.to_string(),
            LinkDirection::Accepted => peer.clone(),
        };
        let (writes, mut write_rx) = mpsc::unbounded_channel::<WriteRequest>();
        let writer_task = tokio::spawn(async move {
            while let Some((frame, done)) = write_rx.recv().await {
                let result = async {
                    writer.write_all(&frame).await?;
                    writer.flush().await
                }
                .await;
                let failed = result.is_err();
                let _ = done.send(result);
                if failed {
                    break;
                }
            }
            let _ = writer.shutdown().await;
        });
        let peer_for_reader = peer.clone();
        let reader_task = tokio::spawn(async move {
            let peer = peer_for_reader;
            let previous = EndpointId::node_endpoint(&peer).ok();
            let reason = loop {
                match read_frame(&mut reader, FRAME_CAP).await {
                    Ok(Some(mut bundle)) => {
                        log.record(Record::frame(
                            Direction::In,
                            &peer,
                            &bundle.id,
                            bundle.payload.len(),
                        ));
                        bundle.previous_node = previous.clone();
                        on_event(LinkEvent::Bundle {
                            link_id: id,
                            peer: peer.clone(),
                            bundle,
                        });
                    }
                    Ok(None) => break "closed by peer".to_string(),
                    Err(e) => break e.to_string(),
                }
            };
            on_event(LinkEvent::Closed {
                link_id: id,
                peer,
                reason,
            });
        });
        Link {
            id,
            peer,
            address,
            direction,
            dialer,
            writes,
            reader_task,
            writer_task,
        }
    }

    /// Writes one frame; resolves once the transport accepted every byte.
    pub async fn transmit(&self, bundle: &Bundle) -> Result<usize, ClaError> {
        let frame = encode_frame(bundle);
        let len = frame.len();
        let (tx, rx) = oneshot::channel();
        self.writes.send((frame, tx)).map_err(|_| ClaError::LinkClosed)?;
        match rx.await {
            Ok(Ok(())) => Ok(len),
            Ok(Err(_)) | Err(_) => Err(ClaError::LinkClosed),
        }
    }
}

impl Drop for Link {
    fn drop(&mut self) {
        self.reader_task.abort();
        self.writer_task.abort();
    }
}

/// Which of two links to the same peer survives a dial collision: the one
/// whose dialing side has the smaller node name. Returns true if
/// `candidate` should replace `existing`.
pub fn prefer_candidate(existing_dialer: &str, candidate_dialer: &str) -> bool {
    candidate_dialer < existing_dialer
}
