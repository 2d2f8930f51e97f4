use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, select, unbounded, Receiver, Sender};
use parking_lot::Mutex;

use crate::bus::{Event, WeakBus, WorkToken};
use crate::registry::{Registry, ServiceDescriptor, ServiceHandle};
use crate::services::{Call, GenericService, Reply, ServiceContext, ServiceError};
use crate::value::Value;

use super::frame::{encode_frame, FormatTag, FrameDecoder, WireMessage};
use super::GatewayError;

pub const HELLO_TOPIC: &str = "Gateway.hello";
pub const SEND_QUEUE_CAPACITY: usize = 1024;
pub const BACKOFF_START: Duration = Duration::from_millis(100);
pub const BACKOFF_CAP: Duration = Duration::from_secs(5);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);
const WRITE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessagingPattern {
    RequestResponse,
    RouterDealer,
    Pair,
}

impl MessagingPattern {
    pub fn as_str(self) -> &'static str {
        match self {
            MessagingPattern::RequestResponse => "REQUEST_RESPONSE",
            MessagingPattern::RouterDealer => "ROUTER_DEALER",
            MessagingPattern::Pair => "PAIR",
        }
    }
}

impl fmt::Display for MessagingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessagingPattern {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "REQUEST_RESPONSE" => Ok(MessagingPattern::RequestResponse),
            "ROUTER_DEALER" => Ok(MessagingPattern::RouterDealer),
            "PAIR" => Ok(MessagingPattern::Pair),
            _ => Err(GatewayError::Config(format!("unknown pattern `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterConfig {
    pub endpoint: String,
    pub pattern: MessagingPattern,
    pub contract: String,
}

impl AdapterConfig {
    pub fn new(endpoint: impl Into<String>, contract: impl Into<String>) -> Self {
        AdapterConfig {
            endpoint: endpoint.into(),
            pattern: MessagingPattern::RequestResponse,
            contract: contract.into(),
        }
    }
}

/// Reads `endpoint=`, `pattern=` and `contract=` lines.
pub fn parse_adapter_manifest(text: &str) -> Result<AdapterConfig, GatewayError> {
    let (mut endpoint, mut pattern, mut contract) = (None, MessagingPattern::RequestResponse, None);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| GatewayError::Config(format!("line {}: expected key=value", i + 1)))?;
        match k.trim() {
            "endpoint" => endpoint = Some(v.trim().to_string()),
            "pattern" => pattern = v.parse()?,
            "contract" => contract = Some(v.trim().to_string()),
            other => return Err(GatewayError::Config(format!("line {}: unknown key `{other}`", i + 1))),
        }
    }
    Ok(AdapterConfig {
        endpoint: endpoint.ok_or_else(|| GatewayError::Config("missing endpoint".into()))?,
        pattern,
        contract: contract.ok_or_else(|| GatewayError::Config("missing contract".into()))?,
    })
}

/// 100 ms, 200 ms, 400 ms, ... capped at 5 s.
pub fn backoff_delays() -> impl Iterator<Item = Duration> {
    std::iter::successors(Some(BACKOFF_START), |d| Some((*d * 2).min(BACKOFF_CAP)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkStatus {
    pub connected: bool,
    pub reconnects: u64,
    pub pending: usize,
}

struct Pending {
    request: Event,
    contract: String,
    service_id: String,
    _work: Option<WorkToken>,
}

enum Ctrl {
    Broken(u64),
    Stop,
}

struct LinkShared {
    endpoint: String,
    pattern: MessagingPattern,
    bus: WeakBus,
    frames: Sender<Vec<u8>>,
    pending: Mutex<HashMap<String, Pending>>,
    next: AtomicU64,
    connected: AtomicBool,
    reconnects: AtomicU64,
}

impl LinkShared {
    fn fail_pending(&self) {
        let dropped = std::mem::take(&mut *self.pending.lock());
        if !dropped.is_empty() {
            log::warn!("{}: link lost with {} calls in flight", self.endpoint, dropped.len());
        }
    }

    fn deliver(&self, msg: WireMessage) {
        let Some(cid) = msg.correlation_id.as_deref() else {
            log::debug!("{}: uncorrelated frame on {}", self.endpoint, msg.topic);
            return;
        };
        let Some(p) = self.pending.lock().remove(cid) else {
            log::debug!("{}: reply for unknown call {cid}", self.endpoint);
            return;
        };
        let Some(bus) = self.bus.upgrade() else { return };
        let kind = msg.topic.rsplit('.').next().filter(|k| !k.is_empty()).unwrap_or("response");
        let topic = format!("Service.{}.{kind}", p.contract);
        match Event::reply_to(&p.request, topic, p.service_id.as_str()) {
            Ok(e) => {
                if let Err(e) = bus.post(e.with_payload(msg.payload)) {
                    log::warn!("{}: reposting reply failed: {e}", self.endpoint);
                }
            }
            Err(e) => log::warn!("{}: bad reply topic: {e}", self.endpoint),
        }
    }
}

fn connect(endpoint: &str, pattern: MessagingPattern) -> Result<TcpStream, GatewayError> {
    let failed = |reason: String| GatewayError::ConnectFailed {
        endpoint: endpoint.to_string(),
        reason,
    };
    let addrs = endpoint.to_socket_addrs().map_err(|e| failed(e.to_string()))?;
    let mut last = String::from("no addresses");
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
            Ok(mut stream) => {
                let _ = stream.set_nodelay(true);
                let _ = stream.set_write_timeout(Some(WRITE_TIMEOUT));
                handshake(&mut stream, pattern).map_err(|e| match e {
                    GatewayError::PatternMismatch { .. } => e,
                    other => failed(other.to_string()),
                })?;
                return Ok(stream);
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(failed(last))
}

fn handshake(stream: &mut TcpStream, pattern: MessagingPattern) -> Result<(), GatewayError> {
    let io = |e: std::io::Error| GatewayError::MalformedPayload(format!("handshake: {e}"));
    let hello = encode_frame(&WireMessage::new(HELLO_TOPIC, pattern.as_str()), FormatTag::Json)?;
    stream.write_all(&hello).map_err(io)?;
    stream.set_read_timeout(Some(CONNECT_TIMEOUT)).map_err(io)?;
    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 512];
    let reply = loop {
        if let Some(m) = decoder.next_message()? {
            break m;
        }
        let n = stream.read(&mut buf).map_err(io)?;
        if n == 0 {
            return Err(GatewayError::MalformedPayload("peer closed during handshake".into()));
        }
        decoder.push(&buf[..n]);
    };
    stream.set_read_timeout(None).map_err(io)?;
    if reply.topic != HELLO_TOPIC {
        return Err(GatewayError::MalformedPayload(format!("expected hello, got `{}`", reply.topic)));
    }
    if reply.what != pattern.as_str() {
        return Err(GatewayError::PatternMismatch {
            ours: pattern.as_str().into(),
            theirs: reply.what,
        });
    }
    Ok(())
}

fn spawn_reader(link: Arc<LinkShared>, mut stream: TcpStream, generation: u64, ctrl: Sender<Ctrl>) {
    std::thread::spawn(move || {
        let mut decoder = FrameDecoder::new();
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => decoder.push(&buf[..n]),
            }
            loop {
                match decoder.next_message() {
                    Ok(Some(m)) => link.deliver(m),
                    Ok(None) => break,
                    Err(e) => {
                        log::warn!("{}: {e}; dropping connection", link.endpoint);
                        let _ = ctrl.send(Ctrl::Broken(generation));
                        return;
                    }
                }
            }
        }
        let _ = ctrl.send(Ctrl::Broken(generation));
    });
}

/// Owns the connection: writes queued frames and reconnects with backoff.
fn supervise(link: Arc<LinkShared>, mut stream: TcpStream, frames: Receiver<Vec<u8>>, ctrl_tx: Sender<Ctrl>, ctrl: Receiver<Ctrl>) {
    let mut generation = 0;
    spawn_reader(Arc::clone(&link), stream.try_clone().expect("clone stream"), generation, ctrl_tx.clone());
    loop {
        let broken = select! {
            recv(ctrl) -> msg => match msg {
                Ok(Ctrl::Broken(g)) => g == generation,
                Ok(Ctrl::Stop) | Err(_) => break,
            },
            recv(frames) -> frame => match frame {
                Ok(bytes) => stream.write_all(&bytes).is_err(),
                Err(_) => break,
            },
        };
        if !broken {
            continue;
        }
        link.connected.store(false, Ordering::Release);
        let _ = stream.shutdown(Shutdown::Both);
        link.fail_pending();
        let mut delays = backoff_delays();
        stream = loop {
            let delay = delays.next().unwrap_or(BACKOFF_CAP);
            match ctrl.recv_timeout(delay) {
                Ok(Ctrl::Stop) | Err(crossbeam_channel::RecvTimeoutError::Disconnected) => {
                    link.fail_pending();
                    return;
                }
                _ => {}
            }
            match connect(&link.endpoint, link.pattern) {
                Ok(s) => break s,
                Err(e) => log::debug!("reconnect: {e}"),
            }
        };
        generation += 1;
        link.reconnects.fetch_add(1, Ordering::Relaxed);
        link.connected.store(true, Ordering::Release);
        log::info!("{}: reconnected", link.endpoint);
        spawn_reader(Arc::clone(&link), stream.try_clone().expect("clone stream"), generation, ctrl_tx.clone());
    }
    let _ = stream.shutdown(Shutdown::Both);
    link.connected.store(false, Ordering::Release);
    link.fail_pending();
}

struct Link {
    shared: Arc<LinkShared>,
    ctrl: Sender<Ctrl>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl Link {
    fn open(endpoint: &str, pattern: MessagingPattern, bus: WeakBus) -> Result<Link, GatewayError> {
        let stream = connect(endpoint, pattern)?;
        let (frames_tx, frames_rx) = bounded(SEND_QUEUE_CAPACITY);
        let (ctrl_tx, ctrl_rx) = unbounded();
        let shared = Arc::new(LinkShared {
            endpoint: endpoint.to_string(),
            pattern,
            bus,
            frames: frames_tx,
            pending: Mutex::new(HashMap::new()),
            next: AtomicU64::new(1),
            connected: AtomicBool::new(true),
            reconnects: AtomicU64::new(0),
        });
        let thread = {
            let (shared, ctrl_tx) = (Arc::clone(&shared), ctrl_tx.clone());
            std::thread::Builder::new()
                .name(format!("gateway:{endpoint}"))
                .spawn(move || supervise(shared, stream, frames_rx, ctrl_tx, ctrl_rx))
                .expect("spawn gateway thread")
        };
        Ok(Link {
            shared,
            ctrl: ctrl_tx,
            thread: Mutex::new(Some(thread)),
        })
    }

    fn status(&self) -> LinkStatus {
        LinkStatus {
            connected: self.shared.connected.load(Ordering::Acquire),
            reconnects: self.shared.reconnects.load(Ordering::Relaxed),
            pending: self.shared.pending.lock().len(),
        }
    }

    fn close(&self) {
        let _ = self.ctrl.send(Ctrl::Stop);
        if let Some(t) = self.thread.lock().take() {
            let _ = t.join();
        }
    }
}

/// Bus-side stand-in for a service that lives behind a link.
struct RemoteService {
    link: Arc<LinkShared>,
}

impl GenericService for RemoteService {
    fn on_event(&mut self, ctx: &ServiceContext, call: &Call<'_>) -> Result<Option<Reply>, ServiceError> {
        let cid = self.link.next.fetch_add(1, Ordering::Relaxed).to_string();
        let topic = format!("Service.{}.{}", ctx.contract(), call.method);
        let msg = WireMessage::new(topic.as_str(), call.method)
            .with_correlation(cid.as_str())
            .with_payload(Value::List(call.params.to_vec()));
        let frame = encode_frame(&msg, FormatTag::Json).map_err(|e| ServiceError::BadParams(e.to_string()))?;
        let request = match call.event {
            Some(e) => e.clone(),
            None => Event::new(topic, ctx.service_id()).map_err(|e| ServiceError::Failed(e.to_string()))?,
        };
        self.link.pending.lock().insert(
            cid.clone(),
            Pending {
                request,
                contract: ctx.contract().to_string(),
                service_id: ctx.service_id().to_string(),
                _work: self.link.bus.upgrade().map(|b| b.begin_work()),
            },
        );
        if self.link.frames.send(frame).is_err() {
            self.link.pending.lock().remove(&cid);
            return Err(ServiceError::Failed(format!("link to {} is closed", self.link.endpoint)));
        }
        Ok(None)
    }
}

/// Bridges remote contracts onto a registry. Contracts on the same endpoint
/// share one connection; replies are matched by correlation id.
pub struct Gateway {
    registry: Registry,
    links: Mutex<HashMap<(String, MessagingPattern), Arc<Link>>>,
    next_id: AtomicU64,
}

impl Gateway {
    pub fn new(registry: &Registry) -> Self {
        Gateway {
            registry: registry.clone(),
            links: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    /// Registers and starts a REMOTE service for `config.contract`.
    pub fn bridge(&self, config: &AdapterConfig) -> Result<ServiceHandle, GatewayError> {
        let link = {
            let mut links = self.links.lock();
            let key = (config.endpoint.clone(), config.pattern);
            match links.get(&key) {
                Some(l) => Arc::clone(l),
                None => {
                    let l = Arc::new(Link::open(&config.endpoint, config.pattern, self.registry.bus().weak())?);
                    links.insert(key, Arc::clone(&l));
                    l
                }
            }
        };
        let id = format!("remote-{}-{}", config.contract, self.next_id.fetch_add(1, Ordering::Relaxed));
        let descriptor = ServiceDescriptor::remote(id, config.contract.as_str(), config.endpoint.as_str())
            .with_capability("pattern", config.pattern.as_str());
        let shared = Arc::clone(&link.shared);
        let handle = self.registry.register_service(descriptor, move || {
            Box::new(RemoteService {
                link: Arc::clone(&shared),
            })
        })?;
        self.registry.start(&handle)?;
        Ok(handle)
    }

    pub fn status(&self, endpoint: &str) -> Option<LinkStatus> {
        self.links
            .lock()
            .iter()
            .find(|((e, _), _)| e == endpoint)
            .map(|(_, l)| l.status())
    }

    pub fn shutdown(&self) {
        let links: Vec<_> = self.links.lock().drain().map(|(_, l)| l).collect();
        for l in links {
            l.close();
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest() {
        let c = parse_adapter_manifest("# echo\nendpoint=127.0.0.1:7000\npattern=router_dealer\ncontract=RemoteEcho\n").unwrap();
        assert_eq!(c.pattern, MessagingPattern::RouterDealer);
        assert_eq!(c.contract, "RemoteEcho");
        assert!(parse_adapter_manifest("contract=X").is_err());
        assert!(parse_adapter_manifest("endpoint=a:1\ncontract=X\npattern=PUBSUB").is_err());
    }

    #[test]
    fn backoff_doubles_to_cap() {
        let ms: Vec<u128> = backoff_delays().take(9).map(|d| d.as_millis()).collect();
        assert_eq!(ms, [100, 200, 400, 800, 1600, 3200, 5000, 5000, 5000]);
    }
}
