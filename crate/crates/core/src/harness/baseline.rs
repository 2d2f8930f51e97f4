//! A bound-service transport for comparison: one bind per client, and a
//! handshake plus a serialised bundle each way for every message.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Sender};
use parking_lot::Mutex;

use super::HarnessError;

#[derive(Debug, Default)]
pub struct BaselineCounters {
    serializations: AtomicU64,
    deserializations: AtomicU64,
    handshakes: AtomicU64,
    binds: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterSnapshot {
    pub serializations: u64,
    pub deserializations: u64,
    pub handshakes: u64,
    pub binds: u64,
}

impl BaselineCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            serializations: self.serializations.load(Ordering::Relaxed),
            deserializations: self.deserializations.load(Ordering::Relaxed),
            handshakes: self.handshakes.load(Ordering::Relaxed),
            binds: self.binds.load(Ordering::Relaxed),
        }
    }
}

/// Flat key/value parcel: `u32` count, then per entry a length-prefixed
/// key, a type byte and a length-prefixed value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bundle {
    entries: Vec<(String, BundleValue)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BundleValue {
    Long(i64),
    Text(String),
    Bytes(Vec<u8>),
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(mut self, key: &str, value: BundleValue) -> Self {
        self.entries.push((key.to_string(), value));
        self
    }

    pub fn get(&self, key: &str) -> Option<&BundleValue> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for (k, v) in &self.entries {
            put_chunk(&mut out, k.as_bytes());
            match v {
                BundleValue::Long(n) => {
                    out.push(0);
                    put_chunk(&mut out, &n.to_be_bytes());
                }
                BundleValue::Text(s) => {
                    out.push(1);
                    put_chunk(&mut out, s.as_bytes());
                }
                BundleValue::Bytes(b) => {
                    out.push(2);
                    put_chunk(&mut out, b);
                }
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, HarnessError> {
        let bad = || HarnessError::Transport("malformed bundle".into());
        let n = u32::from_be_bytes(take(&mut bytes, 4).ok_or_else(bad)?.try_into().unwrap());
        let mut entries = Vec::with_capacity(n.min(64) as usize);
        for _ in 0..n {
            let key = String::from_utf8(take_chunk(&mut bytes).ok_or_else(bad)?.to_vec()).map_err(|_| bad())?;
            let tag = take(&mut bytes, 1).ok_or_else(bad)?[0];
            let raw = take_chunk(&mut bytes).ok_or_else(bad)?;
            let value = match tag {
                0 => BundleValue::Long(i64::from_be_bytes(raw.try_into().map_err(|_| bad())?)),
                1 => BundleValue::Text(String::from_utf8(raw.to_vec()).map_err(|_| bad())?),
                2 => BundleValue::Bytes(raw.to_vec()),
                _ => return Err(bad()),
            };
            entries.push((key, value));
        }
        if !bytes.is_empty() {
            return Err(bad());
        }
        Ok(Bundle { entries })
    }
}

fn put_chunk(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if bytes.len() < n {
        return None;
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Some(head)
}

fn take_chunk<'a>(bytes: &mut &'a [u8]) -> Option<&'a [u8]> {
    let len = u32::from_be_bytes(take(bytes, 4)?.try_into().ok()?) as usize;
    take(bytes, len)
}

enum ServiceMsg {
    Call { parcel: Vec<u8>, reply_to: Sender<Vec<u8>> },
    Unbind,
}

/// A bound echo service on its own thread.
pub struct BoundService {
    tx: Sender<ServiceMsg>,
    thread: Option<JoinHandle<()>>,
    handlers: Mutex<HashMap<i64, Sender<Vec<u8>>>>,
    next_id: AtomicU64,
    counters: Arc<BaselineCounters>,
    timeout: Duration,
}

fn echo_parcel(parcel: &[u8], counters: &BaselineCounters) -> Result<Vec<u8>, HarnessError> {
    let request = Bundle::from_bytes(parcel)?;
    counters.deserializations.fetch_add(1, Ordering::Relaxed);
    let id = request.get("id").cloned().unwrap_or(BundleValue::Long(0));
    let body = request.get("body").cloned().unwrap_or(BundleValue::Bytes(Vec::new()));
    let reply = Bundle::new()
        .put("id", id)
        .put("what", BundleValue::Text("echo.reply".into()))
        .put("body", body)
        .to_bytes();
    counters.serializations.fetch_add(1, Ordering::Relaxed);
    Ok(reply)
}

impl BoundService {
    /// Starts the service thread and blocks until it acknowledges the bind.
    pub fn bind(name: &str, counters: Arc<BaselineCounters>, timeout: Duration) -> Result<Self, HarnessError> {
        let (tx, rx) = unbounded::<ServiceMsg>();
        let (ack_tx, ack_rx) = bounded::<()>(1);
        let svc_counters = Arc::clone(&counters);
        let thread = std::thread::Builder::new()
            .name(format!("bound:{name}"))
            .spawn(move || {
                let _ = ack_tx.send(());
                for msg in rx {
                    match msg {
                        ServiceMsg::Call { parcel, reply_to } => match echo_parcel(&parcel, &svc_counters) {
                            Ok(reply) => {
                                let _ = reply_to.send(reply);
                            }
                            Err(e) => log::warn!("bound service: {e}"),
                        },
                        ServiceMsg::Unbind => break,
                    }
                }
            })
            .map_err(|e| HarnessError::ServiceSetupFailed(e.to_string()))?;
        ack_rx
            .recv_timeout(timeout)
            .map_err(|_| HarnessError::ServiceSetupFailed(format!("{name}: bind not acknowledged")))?;
        counters.binds.fetch_add(1, Ordering::Relaxed);
        Ok(BoundService {
            tx,
            thread: Some(thread),
            handlers: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            counters,
            timeout,
        })
    }

    /// One message: handshake, serialise, send, await, deserialise, tear down.
    pub fn call(&self, payload: &[u8]) -> Result<Vec<u8>, HarnessError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed) as i64;
        let (reply_tx, reply_rx) = bounded(1);
        self.handlers.lock().insert(id, reply_tx.clone());
        self.counters.handshakes.fetch_add(1, Ordering::Relaxed);

        let parcel = Bundle::new()
            .put("id", BundleValue::Long(id))
            .put("what", BundleValue::Text("echo".into()))
            .put("body", BundleValue::Bytes(payload.to_vec()))
            .to_bytes();
        self.counters.serializations.fetch_add(1, Ordering::Relaxed);

        let result = self
            .tx
            .send(ServiceMsg::Call { parcel, reply_to: reply_tx })
            .map_err(|_| HarnessError::Transport("service unbound".into()))
            .and_then(|_| {
                reply_rx
                    .recv_timeout(self.timeout)
                    .map_err(|_| HarnessError::Transport(format!("no reply within {:?}", self.timeout)))
            })
            .and_then(|bytes| {
                let reply = Bundle::from_bytes(&bytes)?;
                self.counters.deserializations.fetch_add(1, Ordering::Relaxed);
                match reply.get("body") {
                    Some(BundleValue::Bytes(b)) => Ok(b.clone()),
                    _ => Err(HarnessError::Transport("reply without body".into())),
                }
            });
        self.handlers.lock().remove(&id);
        result
    }

    pub fn unbind(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let _ = self.tx.send(ServiceMsg::Unbind);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BoundService {
    fn drop(&mut self) {
        self.stop();
    }
}
