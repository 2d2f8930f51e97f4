use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;

use crate::services::echo_value;
use crate::value::Value;

use super::adapter::{MessagingPattern, HELLO_TOPIC};
use super::frame::{encode_frame, FormatTag, FrameDecoder, WireMessage};

#[derive(Debug, Clone, Copy)]
pub struct PeerOptions {
    pub pattern: MessagingPattern,
    pub reply_delay: Duration,
    /// Accept calls but never answer them.
    pub mute: bool,
}

impl Default for PeerOptions {
    fn default() -> Self {
        PeerOptions {
            pattern: MessagingPattern::RequestResponse,
            reply_delay: Duration::ZERO,
            mute: false,
        }
    }
}

/// A TCP peer that answers `Service.<C>.<m>` calls with their parameters on
/// `Service.<C>.response`, and echoes binary frames back unchanged.
pub struct EchoPeer {
    addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    served: Arc<AtomicU64>,
    accept: Option<JoinHandle<()>>,
}

fn answer(msg: WireMessage, opts: &PeerOptions) -> Option<WireMessage> {
    if msg.topic == HELLO_TOPIC {
        return Some(WireMessage::new(HELLO_TOPIC, opts.pattern.as_str()));
    }
    if opts.mute {
        return None;
    }
    if msg.topic.is_empty() {
        return Some(msg);
    }
    let (contract, _method) = msg.topic.strip_prefix("Service.")?.rsplit_once('.')?;
    let params = match &msg.payload {
        Value::List(items) => items.clone(),
        other => vec![other.clone()],
    };
    Some(WireMessage {
        topic: format!("Service.{contract}.response"),
        what: msg.what,
        correlation_id: msg.correlation_id,
        payload: echo_value(&params),
    })
}

fn serve(mut stream: TcpStream, opts: PeerOptions, served: Arc<AtomicU64>) {
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = match stream.read(&mut buf) {
            Ok(0) | Err(_) => return,
            Ok(n) => n,
        };
        decoder.push(&buf[..n]);
        loop {
            let msg = match decoder.next_message() {
                Ok(Some(m)) => m,
                Ok(None) => break,
                Err(e) => {
                    log::warn!("echo peer: {e}");
                    return;
                }
            };
            let is_call = msg.topic != HELLO_TOPIC;
            let Some(reply) = answer(msg, &opts) else { continue };
            if is_call {
                if !opts.reply_delay.is_zero() {
                    std::thread::sleep(opts.reply_delay);
                }
                served.fetch_add(1, Ordering::Relaxed);
            }
            let tag = if reply.topic.is_empty() { FormatTag::Binary } else { FormatTag::Json };
            match encode_frame(&reply, tag) {
                Ok(bytes) => {
                    if stream.write_all(&bytes).is_err() {
                        return;
                    }
                }
                Err(e) => log::warn!("echo peer: cannot encode reply: {e}"),
            }
        }
    }
}

impl EchoPeer {
    pub fn spawn(listen: &str) -> io::Result<Self> {
        Self::spawn_with(listen, PeerOptions::default())
    }

    pub fn spawn_with(listen: &str, opts: PeerOptions) -> io::Result<Self> {
        let listener = TcpListener::bind(listen)?;
        let addr = listener.local_addr()?;
        let stopping = Arc::new(AtomicBool::new(false));
        let conns = Arc::new(Mutex::new(Vec::new()));
        let served = Arc::new(AtomicU64::new(0));
        let accept = {
            let (stopping, conns, served) = (Arc::clone(&stopping), Arc::clone(&conns), Arc::clone(&served));
            std::thread::Builder::new().name(format!("echo-peer:{addr}")).spawn(move || {
                for stream in listener.incoming() {
                    if stopping.load(Ordering::Acquire) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let _ = stream.set_nodelay(true);
                    if let Ok(clone) = stream.try_clone() {
                        conns.lock().push(clone);
                    }
                    let served = Arc::clone(&served);
                    std::thread::spawn(move || serve(stream, opts, served));
                }
            })?
        };
        Ok(EchoPeer {
            addr,
            stopping,
            conns,
            served,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Calls answered so far.
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }

    /// Blocks until the peer is stopped from another thread (never, for the CLI).
    pub fn join(mut self) {
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }

    /// Closes the listener and drops every connection.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stopping.store(true, Ordering::Release);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(500));
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        for c in self.conns.lock().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for EchoPeer {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.shutdown();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answers_calls_and_hello() {
        let opts = PeerOptions::default();
        let hello = answer(WireMessage::new(HELLO_TOPIC, "PAIR"), &opts).unwrap();
        assert_eq!(hello.what, "REQUEST_RESPONSE");
        let call = WireMessage::new("Service.Echo.echo", "echo")
            .with_correlation("4")
            .with_payload(Value::List(vec![Value::text("x")]));
        let r = answer(call, &opts).unwrap();
        assert_eq!(r.topic, "Service.Echo.response");
        assert_eq!(r.correlation_id.as_deref(), Some("4"));
        assert_eq!(r.payload, Value::text("x"));
        let mute = PeerOptions { mute: true, ..opts };
        assert!(answer(WireMessage::new("Service.Echo.echo", "echo"), &mute).is_none());
    }
}
