//! Framed wire protocol between the server (switch, Alice, Bob) and clients,
//! over TCP or an in-process loopback.
//!
//! Frame: `[u32 BE payload length][u8 type][payload]`. All integers and
//! floats are big-endian; outcomes are 0x00, 0x01 and 0x02 for ∅.
//!
//! Handshake: client HELLO, server HELLO with the granted session id, server
//! CONFIG, client echoes CONFIG to accept it (or sends ERROR). Rounds follow;
//! the client sends CLIENT_ACK after every `ack_every` rounds and the server
//! waits for it before the next window. SESSION_END closes the session.

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::behavior::Outcome;
use crate::certifier::DiMode;
use crate::photonic_sim::OpticalModel;
use crate::protocol::{
    Announcement, ClientSession, ProtocolConfig, ProtocolError, ServerSession, SessionParams, SessionStatus,
    StreamCounters, Transcript,
};

pub const PROTOCOL_VERSION: u16 = 1;
pub const DEFAULT_PORT: u16 = 7341;
pub const DEFAULT_ACK_EVERY: u32 = 1024;
pub const MAX_PAYLOAD: u32 = 1 << 20;
const HEADER: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame truncated: {need} bytes needed, {have} available")]
    Truncated { need: usize, have: usize },
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload of {got} bytes for {kind}, expected {want}")]
    PayloadSize { kind: &'static str, got: usize, want: usize },
    #[error("payload of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("field {field} has value {value}")]
    BadField { field: &'static str, value: u64 },
    #[error("error text is not UTF-8")]
    BadText,
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("peer closed the connection")]
    Closed,
    #[error("peer reported {code:?}: {text}")]
    Remote { code: ErrorCode, text: String },
    #[error("protocol version {0} not supported")]
    Version(u16),
    #[error("unexpected {0}")]
    Unexpected(&'static str),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCode {
    Version = 1,
    Malformed = 2,
    Config = 3,
    Protocol = 4,
    Internal = 5,
}

impl ErrorCode {
    fn from_u8(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            1 => ErrorCode::Version,
            2 => ErrorCode::Malformed,
            3 => ErrorCode::Config,
            4 => ErrorCode::Protocol,
            5 => ErrorCode::Internal,
            _ => return Err(WireError::BadField { field: "error code", value: v as u64 }),
        })
    }
}

/// Session parameters as sent in CONFIG. Seeds stay private to each side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WireConfig {
    pub n: u64,
    pub gamma: [f64; 2],
    pub p_switch: f64,
    pub px: [f64; 2],
    pub py: [f64; 2],
    pub pz: [f64; 2],
    pub mode: DiMode,
    pub ack_every: u32,
}

impl WireConfig {
    pub fn new(p: &SessionParams, ack_every: u32) -> Self {
        Self { n: p.n, gamma: p.gamma, p_switch: p.p_switch, px: p.px, py: p.py, pz: p.pz, mode: p.mode, ack_every }
    }

    /// Differences from the client's own parameters, if any.
    pub fn mismatch(&self, p: &SessionParams) -> Option<String> {
        let mine = Self::new(p, self.ack_every);
        (mine != *self).then(|| format!("server offers {self:?}, client expects {mine:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello { version: u16, session: u64 },
    Config(WireConfig),
    RoundAnnounce(Announcement),
    ClientAck { i: u64 },
    SessionEnd { status: SessionStatus },
    Error { code: ErrorCode, text: String },
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::Hello { .. } => 0x01,
            Message::Config(_) => 0x02,
            Message::RoundAnnounce(_) => 0x03,
            Message::ClientAck { .. } => 0x04,
            Message::SessionEnd { .. } => 0x05,
            Message::Error { .. } => 0x06,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Message::Hello { version, session } => {
                p.extend(version.to_be_bytes());
                p.extend(session.to_be_bytes());
            }
            Message::Config(c) => {
                p.extend(c.n.to_be_bytes());
                for v in c.gamma.iter().chain([&c.p_switch]).chain(&c.px).chain(&c.py).chain(&c.pz) {
                    p.extend(v.to_bits().to_be_bytes());
                }
                p.push(match c.mode {
                    DiMode::SemiDi => 0,
                    DiMode::FullyDi => 1,
                });
                p.extend(c.ack_every.to_be_bytes());
            }
            Message::RoundAnnounce(a) => {
                p.extend(a.i.to_be_bytes());
                p.extend([a.s, a.x, a.y, a.a.index() as u8, a.b.index() as u8]);
            }
            Message::ClientAck { i } => p.extend(i.to_be_bytes()),
            Message::SessionEnd { status } => p.push(match status {
                SessionStatus::Completed => 0,
                SessionStatus::Aborted => 1,
                SessionStatus::TransportError => 2,
            }),
            Message::Error { code, text } => {
                p.push(*code as u8);
                p.extend(text.as_bytes());
            }
        }
        p
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(HEADER + payload.len());
        out.extend((payload.len() as u32).to_be_bytes());
        out.push(self.type_byte());
        out.extend(payload);
        out
    }

    /// Decode exactly one frame.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER {
            return Err(WireError::Truncated { need: HEADER, have: bytes.len() });
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
        if len > MAX_PAYLOAD {
            return Err(WireError::TooLarge(len));
        }
        let need = HEADER + len as usize;
        if bytes.len() < need {
            return Err(WireError::Truncated { need, have: bytes.len() });
        }
        if bytes.len() > need {
            return Err(WireError::Trailing(bytes.len() - need));
        }
        Self::decode_payload(bytes[4], &bytes[HEADER..])
    }

    pub fn decode_payload(kind: u8, p: &[u8]) -> Result<Self, WireError> {
        let fixed = |name: &'static str, want: usize| {
            if p.len() == want {
                Ok(())
            } else {
                Err(WireError::PayloadSize { kind: name, got: p.len(), want })
            }
        };
        let u64_at = |k: usize| u64::from_be_bytes(p[k..k + 8].try_into().expect("8 bytes"));
        let bit = |field: &'static str, v: u8| {
            if v <= 1 {
                Ok(v)
            } else {
                Err(WireError::BadField { field, value: v as u64 })
            }
        };
        let outcome = |field: &'static str, v: u8| {
            Outcome::from_index(v as usize).ok_or(WireError::BadField { field, value: v as u64 })
        };
        Ok(match kind {
            0x01 => {
                fixed("HELLO", 10)?;
                Message::Hello { version: u16::from_be_bytes([p[0], p[1]]), session: u64_at(2) }
            }
            0x02 => {
                fixed("CONFIG", 85)?;
                let f = |k: usize| f64::from_bits(u64_at(8 + 8 * k));
                let mode = match p[80] {
                    0 => DiMode::SemiDi,
                    1 => DiMode::FullyDi,
                    v => return Err(WireError::BadField { field: "mode", value: v as u64 }),
                };
                Message::Config(WireConfig {
                    n: u64_at(0),
                    gamma: [f(0), f(1)],
                    p_switch: f(2),
                    px: [f(3), f(4)],
                    py: [f(5), f(6)],
                    pz: [f(7), f(8)],
                    mode,
                    ack_every: u32::from_be_bytes(p[81..85].try_into().expect("4 bytes")),
                })
            }
            0x03 => {
                fixed("ROUND_ANNOUNCE", 13)?;
                let ann = Announcement {
                    i: u64_at(0),
                    s: bit("s", p[8])?,
                    x: bit("x", p[9])?,
                    y: bit("y", p[10])?,
                    a: outcome("a", p[11])?,
                    b: outcome("b", p[12])?,
                };
                if ann.s == 1 && ann.b != Outcome::Void {
                    return Err(WireError::BadField { field: "b (s=1)", value: p[12] as u64 });
                }
                Message::RoundAnnounce(ann)
            }
            0x04 => {
                fixed("CLIENT_ACK", 8)?;
                Message::ClientAck { i: u64_at(0) }
            }
            0x05 => {
                fixed("SESSION_END", 1)?;
                let status = match p[0] {
                    0 => SessionStatus::Completed,
                    1 => SessionStatus::Aborted,
                    2 => SessionStatus::TransportError,
                    v => return Err(WireError::BadField { field: "status", value: v as u64 }),
                };
                Message::SessionEnd { status }
            }
            0x06 => {
                if p.is_empty() {
                    return Err(WireError::PayloadSize { kind: "ERROR", got: 0, want: 1 });
                }
                let text = std::str::from_utf8(&p[1..]).map_err(|_| WireError::BadText)?;
                Message::Error { code: ErrorCode::from_u8(p[0])?, text: text.to_string() }
            }
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

/// An ordered, reliable message stream.
pub trait Channel: Send {
    /// Queue a message; it is delivered no later than the next `flush` or `recv`.
    fn send(&mut self, m: &Message) -> Result<(), TransportError>;
    fn flush(&mut self) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<Message, TransportError>;
}

/// Framing over any byte stream.
pub struct StreamChannel<R: Read, W: Write> {
    reader: BufReader<R>,
    writer: BufWriter<W>,
}

impl<R: Read + Send, W: Write + Send> StreamChannel<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader: BufReader::new(reader), writer: BufWriter::new(writer) }
    }
}

pub type TcpChannel = StreamChannel<TcpStream, TcpStream>;

impl TcpChannel {
    pub fn from_tcp(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self::new(stream.try_clone()?, stream))
    }
}

pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<TcpChannel, TransportError> {
    Ok(TcpChannel::from_tcp(TcpStream::connect(addr)?)?)
}

impl<R: Read + Send, W: Write + Send> Channel for StreamChannel<R, W> {
    fn send(&mut self, m: &Message) -> Result<(), TransportError> {
        self.writer.write_all(&m.encode())?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        self.flush()?;
        let mut head = [0u8; HEADER];
        match self.reader.read_exact(&mut head) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Err(TransportError::Closed),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(head[..4].try_into().expect("4 bytes"));
        if len > MAX_PAYLOAD {
            return Err(WireError::TooLarge(len).into());
        }
        let mut payload = vec![0u8; len as usize];
        match self.reader.read_exact(&mut payload) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Err(TransportError::Closed),
            Err(e) => return Err(e.into()),
        }
        Ok(Message::decode_payload(head[4], &payload)?)
    }
}

/// In-process transport carrying encoded frames over channels.
pub struct LoopbackChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn loopback_pair() -> (LoopbackChannel, LoopbackChannel) {
    let (t1, r1) = channel();
    let (t2, r2) = channel();
    (LoopbackChannel { tx: t1, rx: r2 }, LoopbackChannel { tx: t2, rx: r1 })
}

impl Channel for LoopbackChannel {
    fn send(&mut self, m: &Message) -> Result<(), TransportError> {
        self.tx.send(m.encode()).map_err(|_| TransportError::Closed)
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = self.rx.recv().map_err(|_| TransportError::Closed)?;
        Ok(Message::decode(&frame)?)
    }
}

/// Hands out session ids; a requested id is granted if still free.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    used: Mutex<HashSet<u64>>,
}

impl SessionRegistry {
    pub fn claim(&self, requested: u64) -> u64 {
        let mut used = self.used.lock().expect("registry lock");
        let mut id = requested;
        while used.contains(&id) {
            id = id.wrapping_add(1);
        }
        used.insert(id);
        id
    }
}

pub type SessionFactory = dyn Fn(u64) -> Result<ServerSession, ProtocolError> + Send + Sync;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ServerOptions {
    pub ack_every: u32,
    /// Drop the connection after this many announcements (fault injection).
    pub fail_after: Option<u64>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { ack_every: DEFAULT_ACK_EVERY, fail_after: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerReport {
    pub session_id: u64,
    pub rounds_sent: u64,
    pub counters: StreamCounters,
    pub completed: bool,
}

pub struct Server {
    factory: Box<SessionFactory>,
    registry: SessionRegistry,
    opts: ServerOptions,
}

impl Server {
    pub fn new(factory: Box<SessionFactory>, opts: ServerOptions) -> Arc<Self> {
        assert!(opts.ack_every > 0, "ack_every must be positive");
        Arc::new(Self { factory, registry: SessionRegistry::default(), opts })
    }

    /// Server whose session `k` runs `params` with seeds offset by `k`.
    pub fn with_model(params: SessionParams, model: OpticalModel<f64>, opts: ServerOptions) -> Arc<Self> {
        Self::new(
            Box::new(move |k| {
                let mut p = params.clone();
                p.seeds.server = p.seeds.server.wrapping_add(k);
                p.seeds.switch = p.seeds.switch.wrapping_add(k);
                ServerSession::new(p, &model)
            }),
            opts,
        )
    }

    /// Run one session to its end on `chan`.
    pub fn handle<C: Channel>(&self, chan: &mut C) -> Result<ServerReport, TransportError> {
        let requested = match chan.recv()? {
            Message::Hello { version, session } if version == PROTOCOL_VERSION => session,
            Message::Hello { version, .. } => {
                chan.send(&Message::Error {
                    code: ErrorCode::Version,
                    text: format!("server speaks version {PROTOCOL_VERSION}, client sent {version}"),
                })?;
                chan.flush()?;
                return Err(TransportError::Version(version));
            }
            _ => return Err(TransportError::Unexpected("message before HELLO")),
        };
        let session_id = self.registry.claim(requested);
        let mut session = match (self.factory)(session_id) {
            Ok(s) => s,
            Err(e) => {
                chan.send(&Message::Error { code: ErrorCode::Internal, text: e.to_string() })?;
                chan.flush()?;
                return Err(e.into());
            }
        };
        chan.send(&Message::Hello { version: PROTOCOL_VERSION, session: session_id })?;
        let offer = WireConfig::new(session.params(), self.opts.ack_every);
        chan.send(&Message::Config(offer))?;
        match chan.recv()? {
            Message::Config(echo) if echo == offer => {}
            Message::Error { code, text } => return Err(TransportError::Remote { code, text }),
            _ => return Err(TransportError::Unexpected("message in place of the CONFIG echo")),
        }
        let ack = self.opts.ack_every as u64;
        let n = session.params().n;
        let report = |s: &ServerSession, completed| ServerReport {
            session_id,
            rounds_sent: s.rounds_sent(),
            counters: s.counters(),
            completed,
        };
        while let Some(ann) = session.next_round() {
            chan.send(&Message::RoundAnnounce(ann))?;
            if Some(session.rounds_sent()) == self.opts.fail_after {
                chan.flush()?;
                return Ok(report(&session, false));
            }
            let sent = ann.i + 1;
            if sent % ack == 0 && sent < n {
                match chan.recv()? {
                    Message::ClientAck { i } if i == ann.i => {}
                    Message::Error { code, text } => return Err(TransportError::Remote { code, text }),
                    _ => return Err(TransportError::Unexpected("message in place of CLIENT_ACK")),
                }
            }
        }
        chan.send(&Message::SessionEnd { status: SessionStatus::Completed })?;
        chan.flush()?;
        Ok(report(&session, true))
    }

    /// Serve a session on the other end of a fresh loopback pair.
    pub fn connect_loopback(self: &Arc<Self>) -> (LoopbackChannel, JoinHandle<Result<ServerReport, TransportError>>) {
        let (client, mut server) = loopback_pair();
        let me = Arc::clone(self);
        (client, std::thread::spawn(move || me.handle(&mut server)))
    }

    /// Accept connections, one thread per session. Stops accepting after
    /// `max_sessions` when given.
    pub fn serve(
        self: &Arc<Self>,
        listener: TcpListener,
        max_sessions: Option<usize>,
    ) -> std::io::Result<Vec<JoinHandle<Result<ServerReport, TransportError>>>> {
        let mut handles = Vec::new();
        for stream in listener.incoming() {
            let me = Arc::clone(self);
            let stream = stream?;
            handles.push(std::thread::spawn(move || me.handle(&mut TcpChannel::from_tcp(stream)?)));
            if max_sessions.is_some_and(|m| handles.len() >= m) {
                break;
            }
        }
        Ok(handles)
    }
}

#[derive(Clone, Debug)]
pub struct ClientReport {
    pub session_id: u64,
    pub transcript: Transcript,
}

/// Client side of a session. Transport failures after the handshake end
/// the session with a `transport_error` transcript rather than an `Err`.
/// Stream counters in the transcript cover the client's streams only.
pub fn run_client<C: Channel>(
    chan: &mut C,
    config: &ProtocolConfig,
    model: &OpticalModel<f64>,
    session_request: u64,
) -> Result<ClientReport, TransportError> {
    let mut session = ClientSession::new(config.clone(), model)?;
    chan.send(&Message::Hello { version: PROTOCOL_VERSION, session: session_request })?;
    let session_id = match chan.recv()? {
        Message::Hello { session, .. } => session,
        Message::Error { code, text } => return Err(TransportError::Remote { code, text }),
        _ => return Err(TransportError::Unexpected("message in place of HELLO")),
    };
    let wire = match chan.recv()? {
        Message::Config(c) => c,
        Message::Error { code, text } => return Err(TransportError::Remote { code, text }),
        _ => return Err(TransportError::Unexpected("message in place of CONFIG")),
    };
    if let Some(why) = wire.mismatch(&config.params) {
        let _ = chan.send(&Message::Error { code: ErrorCode::Config, text: why.clone() });
        let _ = chan.flush();
        return Err(TransportError::ConfigMismatch(why));
    }
    chan.send(&Message::Config(wire))?;
    let ack = wire.ack_every.max(1) as u64;
    let n = config.params.n;
    loop {
        let msg = match chan.recv() {
            Ok(m) => m,
            Err(e) => return Ok(ClientReport { session_id, transcript: session.fail(&e.to_string()) }),
        };
        match msg {
            Message::RoundAnnounce(ann) => {
                if let Err(e) = session.ingest(&ann) {
                    let _ = chan.send(&Message::Error { code: ErrorCode::Protocol, text: e.to_string() });
                    let _ = chan.flush();
                    return Ok(ClientReport { session_id, transcript: session.fail(&e.to_string()) });
                }
                let got = ann.i + 1;
                if got % ack == 0 && got < n {
                    let sent = chan.send(&Message::ClientAck { i: ann.i }).and_then(|_| chan.flush());
                    if let Err(e) = sent {
                        return Ok(ClientReport { session_id, transcript: session.fail(&e.to_string()) });
                    }
                }
            }
            Message::SessionEnd { status: SessionStatus::Completed } if session.next_index() == n => {
                return Ok(ClientReport { session_id, transcript: session.finish() });
            }
            Message::SessionEnd { status } => {
                let why = format!("server ended the session ({status}) after {} rounds", session.next_index());
                return Ok(ClientReport { session_id, transcript: session.fail(&why) });
            }
            Message::Error { code, text } => {
                let why = format!("server error {code:?}: {text}");
                return Ok(ClientReport { session_id, transcript: session.fail(&why) });
            }
            _ => {
                return Ok(ClientReport { session_id, transcript: session.fail("unexpected message") });
            }
        }
    }
}
