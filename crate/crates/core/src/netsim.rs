//! Lockstep party channels with latency/bandwidth shaping and exact accounting.
//!
//! Frames on the wire are `u32` LE payload length in bytes, `u16` LE message
//! kind, then the payload as packed `u64` LE ring elements. A round is one
//! frame in each direction. Its modelled duration is
//! `rtt + 8 * (bytes_ab + bytes_ba) / bandwidth_bps`, headers included.
//! In [`ClockMode::Real`] the receiver sleeps until that duration has elapsed
//! since the round began. In [`ClockMode::Simulated`] only the model clock
//! advances.

use std::io::{self, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const HEADER_BYTES: u64 = 6;
/// Largest payload a frame header can describe, in ring elements.
pub const MAX_FRAME_ELEMS: usize = (u32::MAX / 8) as usize;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("unknown network profile '{0}' (expected LAN, WAN or custom)")]
    UnknownProfile(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("channel closed")]
    Closed,
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("protocol desync: expected message kind {expected}, got {got}")]
    KindMismatch { expected: u16, got: u16 },
    #[error("frame of {0} elements exceeds the wire limit")]
    FrameTooLarge(usize),
    #[error("malformed frame: payload of {0} bytes is not a whole number of ring elements")]
    Malformed(u32),
    #[error("round misuse: {0}")]
    RoundMisuse(&'static str),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    pub rtt_ms: f64,
    pub bandwidth_bps: f64,
}

impl NetworkProfile {
    pub fn lan() -> Self {
        Self { name: "LAN".into(), rtt_ms: 1.0, bandwidth_bps: 1e9 }
    }

    pub fn wan() -> Self {
        Self { name: "WAN".into(), rtt_ms: 40.0, bandwidth_bps: 1e8 }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "LAN" => Ok(Self::lan()),
            "WAN" => Ok(Self::wan()),
            _ => Err(NetError::UnknownProfile(name.to_string())),
        }
    }

    pub fn custom(name: &str, rtt_ms: f64, bandwidth_bps: f64) -> Result<Self> {
        if !(rtt_ms.is_finite() && rtt_ms >= 0.0) {
            return Err(NetError::InvalidProfile(format!("rtt_ms must be finite and >= 0, got {rtt_ms}")));
        }
        if !(bandwidth_bps.is_finite() && bandwidth_bps > 0.0) {
            return Err(NetError::InvalidProfile(format!("bandwidth must be finite positive, got {bandwidth_bps}")));
        }
        Ok(Self { name: name.to_string(), rtt_ms, bandwidth_bps })
    }

    pub fn rtt(&self) -> f64 {
        self.rtt_ms / 1e3
    }

    pub fn serialization(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / self.bandwidth_bps
    }

    /// Modelled duration of one exchange round moving `total_bytes` in total.
    pub fn round_time(&self, total_bytes: u64) -> f64 {
        self.rtt() + self.serialization(total_bytes)
    }

    /// Modelled duration of a single one-way delivery.
    pub fn one_way_time(&self, bytes: u64) -> f64 {
        self.rtt() / 2.0 + self.serialization(bytes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Simulated,
    Real,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub rounds: u64,
    pub messages_sent: u64,
    pub messages_recv: u64,
    pub bytes_sent: u64,
    pub bytes_recv: u64,
}

impl Counters {
    pub fn merged(&self, o: &Counters) -> Counters {
        Counters {
            rounds: self.rounds + o.rounds,
            messages_sent: self.messages_sent + o.messages_sent,
            messages_recv: self.messages_recv + o.messages_recv,
            bytes_sent: self.bytes_sent + o.bytes_sent,
            bytes_recv: self.bytes_recv + o.bytes_recv,
        }
    }

    pub fn delta_since(&self, earlier: &Counters) -> Counters {
        Counters {
            rounds: self.rounds - earlier.rounds,
            messages_sent: self.messages_sent - earlier.messages_sent,
            messages_recv: self.messages_recv - earlier.messages_recv,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_recv: self.bytes_recv - earlier.bytes_recv,
        }
    }
}

pub fn frame_bytes(elems: usize) -> u64 {
    HEADER_BYTES + 8 * elems as u64
}

pub fn encode_header(elems: usize, kind: u16) -> Result<[u8; 6]> {
    if elems > MAX_FRAME_ELEMS {
        return Err(NetError::FrameTooLarge(elems));
    }
    let mut h = [0u8; 6];
    h[..4].copy_from_slice(&((elems * 8) as u32).to_le_bytes());
    h[4..].copy_from_slice(&kind.to_le_bytes());
    Ok(h)
}

pub fn decode_header(h: &[u8; 6]) -> Result<(usize, u16)> {
    let len = u32::from_le_bytes([h[0], h[1], h[2], h[3]]);
    if len % 8 != 0 {
        return Err(NetError::Malformed(len));
    }
    Ok(((len / 8) as usize, u16::from_le_bytes([h[4], h[5]])))
}

pub fn pack(xs: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn unpack_into(bytes: &[u8], out: &mut [u64]) {
    for (o, c) in out.iter_mut().zip(bytes.chunks_exact(8)) {
        *o = u64::from_le_bytes(c.try_into().expect("8-byte chunk"));
    }
}

/// Ordered byte stream between two endpoints. Writes never block on the peer.
pub trait Transport: Send {
    fn write_all(&mut self, bytes: Vec<u8>) -> io::Result<()>;
    fn read_exact(&mut self, buf: &mut [u8]) -> io::Result<()>;
}

pub struct MemTransport {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    pending: Vec<u8>,
    offset: usize,
}

pub fn memory_pair() -> (MemTransport, MemTransport) {
    let (ta, rb) = mpsc::channel();
    let (tb, ra) = mpsc::channel();
    (MemTransport { tx: ta, rx: ra, pending: Vec::new(), offset: 0 }, MemTransport { tx: tb, rx: rb, pending: Vec::new(), offset: 0 })
}

impl Transport for MemTransport {
    fn write_all(&mut self, bytes: Vec<u8>) -> io::Result<()> {
        if bytes.is_empty() {
            return Ok(());
        }
        self.tx.send(bytes).map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer dropped"))
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> io::Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            if self.offset == self.pending.len() {
                self.pending = self.rx.recv().map_err(|_| io::Error::new(io::ErrorKind::UnexpectedEof, "peer dropped"))?;
                self.offset = 0;
            }
            let take = (buf.len() - filled).min(self.pending.len() - self.offset);
            buf[filled..filled + take].copy_from_slice(&self.pending[self.offset..self.offset + take]);
            filled += take;
            self.offset += take;
        }
        Ok(())
    }
}

/// Stream-socket transport. A writer thread drains an unbounded queue so both
/// parties can send a large frame before reading without deadlocking.
pub struct TcpTransport {
    queue: Option<mpsc::Sender<Vec<u8>>>,
    writer: Option<JoinHandle<io::Result<()>>>,
    reader: BufReader<TcpStream>,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> io::Result<Self> {
        let deadline = Instant::now() + timeout;
        loop {
            match TcpStream::connect(&addr) {
                Ok(s) => return Self::from_stream(s),
                Err(e) if Instant::now() < deadline => {
                    let _ = e;
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn accept(listener: &TcpListener) -> io::Result<Self> {
        let (s, _) = listener.accept()?;
        Self::from_stream(s)
    }

    pub fn from_stream(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let mut w = stream.try_clone()?;
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        let writer = std::thread::spawn(move || {
            for buf in rx {
                w.write_all(&buf)?;
            }
            w.flush()
        });
        Ok(Self { queue: Some(tx), writer: Some(writer), reader: BufReader::with_capacity(1 << 16, stream) })
    }
}

impl Transport for TcpTransport {
    fn write_all(&mut self, bytes: Vec<u8>) -> io::Result<()> {
        match &self.queue {
            Some(q) => q.send(bytes).map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "writer stopped")),
            None => Err(io::Error::new(io::ErrorKind::BrokenPipe, "closed")),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> io::Result<()> {
        self.reader.read_exact(buf)
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        self.queue.take();
        if let Some(h) = self.writer.take() {
            let _ = h.join();
        }
    }
}

/// One endpoint of a lockstep two-party channel.
pub struct Channel {
    party: usize,
    transport: Box<dyn Transport>,
    profile: NetworkProfile,
    mode: ClockMode,
    counters: Counters,
    model_time: f64,
    hashers: Option<[Sha256; 2]>,
}

impl Channel {
    pub fn new(party: usize, transport: Box<dyn Transport>, profile: NetworkProfile, mode: ClockMode) -> Self {
        assert!(party < 2, "party id must be 0 or 1");
        Self { party, transport, profile, mode, counters: Counters::default(), model_time: 0.0, hashers: None }
    }

    /// In-memory connected pair `(party 0, party 1)`.
    pub fn pair(profile: NetworkProfile, mode: ClockMode) -> (Channel, Channel) {
        let (a, b) = memory_pair();
        (Channel::new(0, Box::new(a), profile.clone(), mode), Channel::new(1, Box::new(b), profile, mode))
    }

    /// Records a SHA-256 digest over both directions of traffic.
    pub fn with_transcript_hash(mut self) -> Self {
        self.hashers = Some([Sha256::new(), Sha256::new()]);
        self
    }

    pub fn party(&self) -> usize {
        self.party
    }

    pub fn profile(&self) -> &NetworkProfile {
        &self.profile
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Model communication time accumulated so far, seconds.
    pub fn model_time(&self) -> f64 {
        self.model_time
    }

    /// Digest of party 0's stream followed by party 1's stream, hex.
    pub fn transcript_hash(&self) -> Option<String> {
        self.hashers.as_ref().map(|[h0, h1]| {
            let mut h = Sha256::new();
            h.update(h0.clone().finalize());
            h.update(h1.clone().finalize());
            h.finalize().iter().map(|b| format!("{b:02x}")).collect()
        })
    }

    fn hash(&mut self, from_party: usize, bytes: &[u8]) {
        if let Some(h) = self.hashers.as_mut() {
            h[from_party].update(bytes);
        }
    }

    /// Opens a round; this side will send exactly `send_len` elements of `kind`.
    pub fn round(&mut self, kind: u16, send_len: usize) -> Result<Round<'_>> {
        let header = encode_header(send_len, kind)?;
        let me = self.party;
        self.hash(me, &header);
        self.transport.write_all(header.to_vec())?;
        Ok(Round { ch: self, kind, send_len, sent: 0, peer_len: None, received: 0, started: Instant::now() })
    }

    /// Sends `payload` and returns the peer's payload of the same kind.
    pub fn exchange(&mut self, kind: u16, payload: &[u64]) -> Result<Vec<u64>> {
        let mut r = self.round(kind, payload.len())?;
        r.send(payload)?;
        let n = r.peer_len()?;
        let mut out = vec![0u64; n];
        r.recv_into(&mut out)?;
        r.finish()?;
        Ok(out)
    }

    /// Sender half of a one-way push; counted as one round by convention.
    pub fn one_way_send(&mut self, kind: u16, payload: &[u64]) -> Result<()> {
        let header = encode_header(payload.len(), kind)?;
        let started = Instant::now();
        let mut bytes = header.to_vec();
        bytes.extend_from_slice(&pack(payload));
        let me = self.party;
        self.hash(me, &bytes);
        self.transport.write_all(bytes)?;
        let b = frame_bytes(payload.len());
        self.counters.messages_sent += 1;
        self.counters.bytes_sent += b;
        self.counters.rounds += 1;
        let t = self.profile.one_way_time(b);
        self.model_time += t;
        self.shape(started, t);
        Ok(())
    }

    /// Receiver half of a one-way push.
    pub fn one_way_recv(&mut self, kind: u16) -> Result<Vec<u64>> {
        let started = Instant::now();
        let mut h = [0u8; 6];
        self.transport.read_exact(&mut h)?;
        let (n, got) = decode_header(&h)?;
        if got != kind {
            return Err(NetError::KindMismatch { expected: kind, got });
        }
        let mut raw = vec![0u8; n * 8];
        self.transport.read_exact(&mut raw)?;
        let peer = 1 - self.party;
        self.hash(peer, &h);
        self.hash(peer, &raw);
        let mut out = vec![0u64; n];
        unpack_into(&raw, &mut out);
        let b = frame_bytes(n);
        self.counters.messages_recv += 1;
        self.counters.bytes_recv += b;
        self.counters.rounds += 1;
        let t = self.profile.one_way_time(b);
        self.model_time += t;
        self.shape(started, t);
        Ok(out)
    }

    fn shape(&self, started: Instant, target: f64) {
        if self.mode == ClockMode::Real {
            let target = Duration::from_secs_f64(target);
            let spent = started.elapsed();
            if target > spent {
                std::thread::sleep(target - spent);
            }
        }
    }
}

/// An open exchange round. Sends and receives may interleave in any order;
/// [`Round::finish`] checks both frames were fully transferred.
pub struct Round<'a> {
    ch: &'a mut Channel,
    kind: u16,
    send_len: usize,
    sent: usize,
    peer_len: Option<usize>,
    received: usize,
    started: Instant,
}

impl Round<'_> {
    pub fn send(&mut self, part: &[u64]) -> Result<()> {
        if self.sent + part.len() > self.send_len {
            return Err(NetError::RoundMisuse("sent more than announced"));
        }
        self.sent += part.len();
        let bytes = pack(part);
        let me = self.ch.party;
        self.ch.hash(me, &bytes);
        self.ch.transport.write_all(bytes)?;
        Ok(())
    }

    pub fn peer_len(&mut self) -> Result<usize> {
        if let Some(n) = self.peer_len {
            return Ok(n);
        }
        let mut h = [0u8; 6];
        self.ch.transport.read_exact(&mut h)?;
        let (n, got) = decode_header(&h)?;
        if got != self.kind {
            return Err(NetError::KindMismatch { expected: self.kind, got });
        }
        let peer = 1 - self.ch.party;
        self.ch.hash(peer, &h);
        self.peer_len = Some(n);
        Ok(n)
    }

    pub fn recv_into(&mut self, out: &mut [u64]) -> Result<()> {
        let n = self.peer_len()?;
        if self.received + out.len() > n {
            return Err(NetError::RoundMisuse("received more than the peer announced"));
        }
        let mut raw = vec![0u8; out.len() * 8];
        self.ch.transport.read_exact(&mut raw)?;
        let peer = 1 - self.ch.party;
        self.ch.hash(peer, &raw);
        unpack_into(&raw, out);
        self.received += out.len();
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        let n = self.peer_len()?;
        if self.sent != self.send_len || self.received != n {
            return Err(NetError::RoundMisuse("round finished with untransferred payload"));
        }
        let out = frame_bytes(self.send_len);
        let inc = frame_bytes(n);
        let c = &mut self.ch.counters;
        c.rounds += 1;
        c.messages_sent += 1;
        c.messages_recv += 1;
        c.bytes_sent += out;
        c.bytes_recv += inc;
        let t = self.ch.profile.round_time(out + inc);
        self.ch.model_time += t;
        self.ch.shape(self.started, t);
        Ok(())
    }
}

/// Deterministic compute-time model used by the simulated clock.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeModel {
    /// Ring multiply-accumulates per second at one compute party.
    pub ring_ops_per_sec: f64,
    /// Plaintext floating-point operations per second at a client or the aggregator.
    pub flops_per_sec: f64,
}

impl Default for ComputeModel {
    fn default() -> Self {
        Self { ring_ops_per_sec: 1e9, flops_per_sec: 5e10 }
    }
}

impl ComputeModel {
    pub fn ring_time(&self, ops: u64) -> f64 {
        ops as f64 / self.ring_ops_per_sec
    }

    pub fn flop_time(&self, flops: u64) -> f64 {
        flops as f64 / self.flops_per_sec
    }
}

/// Accounting-only one-way link (client to compute party). Delivery is a
/// move; bytes and model time follow the same frame and timing rules.
#[derive(Clone, Debug)]
pub struct Link {
    profile: NetworkProfile,
    counters: Counters,
    model_time: f64,
}

impl Link {
    pub fn new(profile: NetworkProfile) -> Self {
        Self { profile, counters: Counters::default(), model_time: 0.0 }
    }

    /// Delivers `payload`, returning it with the modelled one-way time.
    pub fn deliver(&mut self, payload: Vec<u64>) -> Result<(Vec<u64>, f64)> {
        if payload.len() > MAX_FRAME_ELEMS {
            return Err(NetError::FrameTooLarge(payload.len()));
        }
        let b = frame_bytes(payload.len());
        self.counters.messages_sent += 1;
        self.counters.bytes_sent += b;
        let t = self.profile.one_way_time(b);
        self.model_time += t;
        Ok((payload, t))
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn model_time(&self) -> f64 {
        self.model_time
    }
}
