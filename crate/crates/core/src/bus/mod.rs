//! The message broker: topic routing, delivery modes, interceptors,
//! request/response correlation and point-to-point channels.
//!
//! Events travel as `Arc<Event>`; payloads are never copied on the way from
//! poster to subscriber. Subscribers that are not run inline own a bounded
//! FIFO mailbox, so per-subscriber delivery order equals post order for any
//! single posting thread.

mod channel;
mod event;
mod exec;
mod pattern;

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::{Condvar, Mutex, RwLock};
use thiserror::Error;

use crate::value::Value;

pub use channel::{Channel, ChannelError, ChannelKind, Envelope, PairChannel, RouterDealerChannel};
pub use event::{monotonic_ns, validate_topic, CorrelationId, Event, EventKind};
pub use pattern::TopicPattern;

use exec::Executor;
use pattern::segment_prefixes;

/// Topic namespace used to address one concrete service implementation.
pub const DISPATCH_NAMESPACE: &str = "Dispatch";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("subscription ({subscriber}, {pattern}) already registered")]
    DuplicateSubscription { subscriber: String, pattern: String },
    #[error("malformed topic pattern `{0}`")]
    BadPattern(String),
    #[error("malformed topic `{0}`")]
    BadTopic(String),
    #[error("bus is shut down")]
    BusClosed,
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("timeout must be positive")]
    InvalidTimeout,
    #[error("no service registered for contract `{0}`")]
    NoSuchContract(String),
    #[error("tap `{0}` already installed")]
    DuplicateTap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeliveryMode {
    /// Handler runs inline on the posting thread.
    Posting,
    /// Handler runs on the bus's single dispatcher thread.
    Dispatcher,
    /// Handler runs on the worker pool.
    Background,
}

#[derive(Debug, Clone)]
pub struct BusConfig {
    /// Per-subscriber mailbox bound; a full mailbox blocks the poster.
    pub mailbox_capacity: usize,
    pub worker_threads: usize,
}

impl Default for BusConfig {
    fn default() -> Self {
        let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
        BusConfig {
            mailbox_capacity: 1024,
            worker_threads: cpus.max(4),
        }
    }
}

/// Handle returned by [`Bus::subscribe`]; pass it to [`Bus::unsubscribe`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    id: u64,
    subscriber_id: String,
    pattern: TopicPattern,
    mode: DeliveryMode,
}

impl Subscription {
    pub fn subscriber_id(&self) -> &str {
        &self.subscriber_id
    }

    pub fn pattern(&self) -> &TopicPattern {
        &self.pattern
    }

    pub fn delivery_mode(&self) -> DeliveryMode {
        self.mode
    }
}

#[derive(Debug, Clone)]
pub struct DeliveryReport {
    pub event: Arc<Event>,
    pub matched_subscribers: usize,
    pub delivered: usize,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapHandle {
    id: String,
}

impl TapHandle {
    pub fn id(&self) -> &str {
        &self.id
    }
}

/// Resolves a contract name to the service id that should receive requests.
pub trait ContractResolver: Send + Sync {
    fn resolve(&self, contract: &str) -> Option<String>;
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct BusMetrics {
    pub posted: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub late_responses: u64,
    pub requests: u64,
    pub timeouts: u64,
}

#[derive(Default)]
struct Counters {
    posted: AtomicU64,
    delivered: AtomicU64,
    dropped: AtomicU64,
    late_responses: AtomicU64,
    requests: AtomicU64,
    timeouts: AtomicU64,
}

type Handler = Arc<dyn Fn(&Arc<Event>) + Send + Sync>;
type TapFn = Arc<dyn Fn(&Arc<Event>) + Send + Sync>;

struct Mailbox {
    tx: Sender<Arc<Event>>,
    rx: Receiver<Arc<Event>>,
    scheduled: AtomicBool,
}

struct Sub {
    id: u64,
    subscriber_id: String,
    mode: DeliveryMode,
    handler: Handler,
    mailbox: Option<Mailbox>,
    active: AtomicBool,
}

#[derive(Default, Clone)]
struct Table {
    exact: HashMap<String, Vec<Arc<Sub>>>,
    prefix: HashMap<String, Vec<Arc<Sub>>>,
    any: Vec<Arc<Sub>>,
    keys: HashSet<(String, String)>,
}

impl Table {
    fn slot(&mut self, pattern: &TopicPattern) -> &mut Vec<Arc<Sub>> {
        match pattern {
            TopicPattern::Exact(t) => self.exact.entry(t.clone()).or_default(),
            TopicPattern::Prefix(p) => self.prefix.entry(p.clone()).or_default(),
            TopicPattern::Any => &mut self.any,
        }
    }

    fn for_each_match(&self, topic: &str, mut f: impl FnMut(&Arc<Sub>)) {
        if let Some(subs) = self.exact.get(topic) {
            subs.iter().for_each(&mut f);
        }
        if !self.prefix.is_empty() {
            for p in segment_prefixes(topic) {
                if let Some(subs) = self.prefix.get(p) {
                    subs.iter().for_each(&mut f);
                }
            }
        }
        self.any.iter().for_each(f);
    }
}

/// In-flight work counter used for quiescence detection.
#[derive(Default)]
struct WorkTracker {
    count: AtomicUsize,
    lock: Mutex<()>,
    idle: Condvar,
}

impl WorkTracker {
    fn begin(&self) {
        self.count.fetch_add(1, Ordering::AcqRel);
    }

    fn end(&self) {
        if self.count.fetch_sub(1, Ordering::AcqRel) == 1 {
            let _g = self.lock.lock();
            self.idle.notify_all();
        }
    }

    fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut g = self.lock.lock();
        while self.count.load(Ordering::Acquire) > 0 {
            if self.idle.wait_until(&mut g, deadline).timed_out() {
                return self.count.load(Ordering::Acquire) == 0;
            }
        }
        true
    }
}

/// Keeps the bus from reporting idle while held. Returned by [`Bus::begin_work`].
pub struct WorkToken {
    inner: Weak<Inner>,
}

impl Drop for WorkToken {
    fn drop(&mut self) {
        if let Some(inner) = self.inner.upgrade() {
            inner.work.end();
        }
    }
}

struct Inner {
    config: BusConfig,
    table: RwLock<Arc<Table>>,
    taps: RwLock<Arc<Vec<(String, TapFn)>>>,
    pending: Mutex<HashMap<CorrelationId, Sender<Arc<Event>>>>,
    resolver: RwLock<Option<Weak<dyn ContractResolver>>>,
    next_id: AtomicU64,
    closed: AtomicBool,
    dispatcher: Executor,
    pool: Executor,
    counters: Counters,
    work: WorkTracker,
    endpoints: Mutex<HashSet<String>>,
    paired: Mutex<HashSet<String>>,
}

/// Non-owning bus handle; see [`Bus::weak`].
#[derive(Clone)]
pub struct WeakBus {
    inner: Weak<Inner>,
}

impl WeakBus {
    pub fn upgrade(&self) -> Option<Bus> {
        self.inner.upgrade().map(|inner| Bus { inner })
    }
}

/// Cheaply cloneable handle to a shared broker.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Default for Bus {
    fn default() -> Self {
        Bus::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Bus::with_config(BusConfig::default())
    }

    pub fn with_config(config: BusConfig) -> Self {
        let pool = Executor::background(config.worker_threads);
        Bus {
            inner: Arc::new(Inner {
                config,
                table: RwLock::new(Arc::new(Table::default())),
                taps: RwLock::new(Arc::new(Vec::new())),
                pending: Mutex::new(HashMap::new()),
                resolver: RwLock::new(None),
                next_id: AtomicU64::new(1),
                closed: AtomicBool::new(false),
                dispatcher: Executor::dispatcher(),
                pool,
                counters: Counters::default(),
                work: WorkTracker::default(),
                endpoints: Mutex::new(HashSet::new()),
                paired: Mutex::new(HashSet::new()),
            }),
        }
    }

    fn downgrade(&self) -> Weak<Inner> {
        Arc::downgrade(&self.inner)
    }

    /// A handle that does not keep the bus alive.
    pub fn weak(&self) -> WeakBus {
        WeakBus { inner: self.downgrade() }
    }

    pub(crate) fn fresh_id(&self) -> u64 {
        self.inner.next_id.fetch_add(1, Ordering::Relaxed)
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    /// Installs the locator used by [`Bus::request`]. Held weakly.
    pub fn set_resolver(&self, resolver: Weak<dyn ContractResolver>) {
        *self.inner.resolver.write() = Some(resolver);
    }

    pub fn subscribe<F>(
        &self,
        subscriber_id: &str,
        pattern: &str,
        mode: DeliveryMode,
        handler: F,
    ) -> Result<Subscription, BusError>
    where
        F: Fn(&Arc<Event>) + Send + Sync + 'static,
    {
        let parsed = TopicPattern::parse(pattern)?;
        let key = (subscriber_id.to_string(), parsed.to_string());
        let id = self.fresh_id();
        let mailbox = (mode != DeliveryMode::Posting).then(|| {
            let (tx, rx) = bounded(self.inner.config.mailbox_capacity.max(1));
            Mailbox {
                tx,
                rx,
                scheduled: AtomicBool::new(false),
            }
        });
        let sub = Arc::new(Sub {
            id,
            subscriber_id: subscriber_id.to_string(),
            mode,
            handler: Arc::new(handler),
            mailbox,
            active: AtomicBool::new(true),
        });
        let mut guard = self.inner.table.write();
        if guard.keys.contains(&key) {
            return Err(BusError::DuplicateSubscription {
                subscriber: key.0,
                pattern: key.1,
            });
        }
        let mut table = (**guard).clone();
        table.keys.insert(key);
        table.slot(&parsed).push(sub);
        *guard = Arc::new(table);
        Ok(Subscription {
            id,
            subscriber_id: subscriber_id.to_string(),
            pattern: parsed,
            mode,
        })
    }

    /// Returns whether the subscription was still registered.
    pub fn unsubscribe(&self, sub: &Subscription) -> bool {
        let mut guard = self.inner.table.write();
        let mut table = (**guard).clone();
        let slot = table.slot(&sub.pattern);
        let Some(pos) = slot.iter().position(|s| s.id == sub.id) else {
            return false;
        };
        let removed = slot.remove(pos);
        removed.active.store(false, Ordering::Release);
        table.keys.remove(&(sub.subscriber_id.clone(), sub.pattern.to_string()));
        *guard = Arc::new(table);
        true
    }

    /// Removes every subscription owned by `subscriber_id`; returns how many.
    pub fn unsubscribe_all(&self, subscriber_id: &str) -> usize {
        let mut guard = self.inner.table.write();
        let mut table = (**guard).clone();
        let mut removed = 0;
        let mut strip = |subs: &mut Vec<Arc<Sub>>| {
            subs.retain(|s| {
                let keep = s.subscriber_id != subscriber_id;
                if !keep {
                    s.active.store(false, Ordering::Release);
                    removed += 1;
                }
                keep
            })
        };
        table.exact.values_mut().for_each(&mut strip);
        table.prefix.values_mut().for_each(&mut strip);
        strip(&mut table.any);
        table.keys.retain(|(s, _)| s != subscriber_id);
        *guard = Arc::new(table);
        removed
    }

    pub fn subscription_count(&self) -> usize {
        self.inner.table.read().keys.len()
    }

    pub fn intercept<F>(&self, tap_id: &str, callback: F) -> Result<TapHandle, BusError>
    where
        F: Fn(&Arc<Event>) + Send + Sync + 'static,
    {
        let mut guard = self.inner.taps.write();
        if guard.iter().any(|(id, _)| id == tap_id) {
            return Err(BusError::DuplicateTap(tap_id.to_string()));
        }
        let mut taps = (**guard).clone();
        taps.push((tap_id.to_string(), Arc::new(callback)));
        *guard = Arc::new(taps);
        Ok(TapHandle { id: tap_id.to_string() })
    }

    pub fn remove_tap(&self, handle: TapHandle) -> bool {
        let mut guard = self.inner.taps.write();
        let before = guard.len();
        let taps: Vec<_> = guard.iter().filter(|(id, _)| *id != handle.id).cloned().collect();
        let removed = taps.len() != before;
        *guard = Arc::new(taps);
        removed
    }

    pub(crate) fn observe(&self, event: &Arc<Event>) {
        let taps = self.inner.taps.read().clone();
        for (id, tap) in taps.iter() {
            if catch_unwind(AssertUnwindSafe(|| tap(event))).is_err() {
                log::error!("tap `{id}` panicked on {}", event.topic());
            }
        }
    }

    pub fn post(&self, event: Event) -> Result<DeliveryReport, BusError> {
        self.post_shared(Arc::new(event))
    }

    pub fn post_shared(&self, event: Arc<Event>) -> Result<DeliveryReport, BusError> {
        if self.is_closed() {
            return Err(BusError::BusClosed);
        }
        let c = &self.inner.counters;
        c.posted.fetch_add(1, Ordering::Relaxed);
        self.observe(&event);

        let mut matched = 0;
        let mut delivered = 0;
        if event.kind() == EventKind::Reply {
            if let Some(id) = event.correlation_id() {
                match self.inner.pending.lock().remove(&id) {
                    Some(waiter) => {
                        matched += 1;
                        if waiter.send(event.clone()).is_ok() {
                            delivered += 1;
                        }
                    }
                    None => {
                        c.late_responses.fetch_add(1, Ordering::Relaxed);
                        log::debug!("uncorrelated reply {} on {}", id, event.topic());
                    }
                }
            }
        }

        let table = self.inner.table.read().clone();
        table.for_each_match(event.topic(), |sub| {
            matched += 1;
            if self.deliver(sub, &event) {
                delivered += 1;
            }
        });
        c.delivered.fetch_add(delivered as u64, Ordering::Relaxed);
        if matched == 0 {
            c.dropped.fetch_add(1, Ordering::Relaxed);
        }
        Ok(DeliveryReport {
            event,
            matched_subscribers: matched,
            delivered,
            dropped: matched == 0,
        })
    }

    fn deliver(&self, sub: &Arc<Sub>, event: &Arc<Event>) -> bool {
        let Some(mb) = &sub.mailbox else {
            return run_handler(sub, event);
        };
        self.inner.work.begin();
        if mb.tx.send(event.clone()).is_err() {
            self.inner.work.end();
            return false;
        }
        if !mb.scheduled.swap(true, Ordering::AcqRel) {
            self.schedule(sub.clone());
        }
        true
    }

    fn schedule(&self, sub: Arc<Sub>) {
        let weak = self.downgrade();
        let exec = match sub.mode {
            DeliveryMode::Dispatcher => &self.inner.dispatcher,
            _ => &self.inner.pool,
        };
        exec.submit(Box::new(move || {
            if let Some(inner) = weak.upgrade() {
                drain(&Bus { inner }, sub);
            }
        }));
    }

    /// Sends a request to the service bound to `contract` and waits for the
    /// first reply carrying the same correlation id.
    pub fn request(
        &self,
        contract: &str,
        method: &str,
        params: Vec<Value>,
        timeout: Duration,
    ) -> Result<Arc<Event>, BusError> {
        if timeout.is_zero() {
            return Err(BusError::InvalidTimeout);
        }
        let service_id = self
            .inner
            .resolver
            .read()
            .as_ref()
            .and_then(Weak::upgrade)
            .and_then(|r| r.resolve(contract))
            .ok_or_else(|| BusError::NoSuchContract(contract.to_string()))?;
        let topic = format!("{DISPATCH_NAMESPACE}.{service_id}.{method}");
        let id = CorrelationId(self.fresh_id());
        let event = Event::correlated(topic, "requester", EventKind::Request, id)?.with_payload(Value::List(params));
        let (tx, rx) = bounded(1);
        self.inner.pending.lock().insert(id, tx);
        self.inner.counters.requests.fetch_add(1, Ordering::Relaxed);
        if let Err(e) = self.post(event) {
            self.inner.pending.lock().remove(&id);
            return Err(e);
        }
        match rx.recv_timeout(timeout) {
            Ok(reply) => Ok(reply),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                // A reply may have raced in between the timeout and this removal.
                if self.inner.pending.lock().remove(&id).is_none() {
                    if let Ok(reply) = rx.try_recv() {
                        return Ok(reply);
                    }
                }
                self.inner.counters.timeouts.fetch_add(1, Ordering::Relaxed);
                Err(BusError::Timeout(timeout))
            }
        }
    }

    /// Marks work outside the bus (an engine queue, a remote call) as in flight.
    pub fn begin_work(&self) -> WorkToken {
        self.inner.work.begin();
        WorkToken {
            inner: self.downgrade(),
        }
    }

    /// Blocks until no mailbox delivery or [`WorkToken`] is outstanding.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        self.inner.work.wait_idle(timeout)
    }

    pub fn metrics(&self) -> BusMetrics {
        let c = &self.inner.counters;
        BusMetrics {
            posted: c.posted.load(Ordering::Relaxed),
            delivered: c.delivered.load(Ordering::Relaxed),
            dropped: c.dropped.load(Ordering::Relaxed),
            late_responses: c.late_responses.load(Ordering::Relaxed),
            requests: c.requests.load(Ordering::Relaxed),
            timeouts: c.timeouts.load(Ordering::Relaxed),
        }
    }

    /// Stops accepting posts and stops the dispatcher thread. Idempotent.
    pub fn shutdown(&self) {
        if self.inner.closed.swap(true, Ordering::AcqRel) {
            return;
        }
        self.inner.pending.lock().clear();
        self.inner.dispatcher.stop();
        self.inner.pool.stop();
    }

    pub fn register_endpoint(&self, component_id: &str) {
        self.inner.endpoints.lock().insert(component_id.to_string());
    }

    pub fn open_channel(&self, kind: ChannelKind, endpoint_a: &str, endpoint_b: &str) -> Result<Channel, ChannelError> {
        channel::open(self, kind, endpoint_a, endpoint_b)
    }
}

fn run_handler(sub: &Sub, event: &Arc<Event>) -> bool {
    if !sub.active.load(Ordering::Acquire) {
        return false;
    }
    if catch_unwind(AssertUnwindSafe(|| (sub.handler)(event))).is_err() {
        log::error!("subscriber `{}` panicked on {}", sub.subscriber_id, event.topic());
    }
    true
}

const DRAIN_BATCH: usize = 64;

fn drain(bus: &Bus, sub: Arc<Sub>) {
    let mb = sub.mailbox.as_ref().expect("queued subscriber has a mailbox");
    loop {
        let mut handled = 0;
        while handled < DRAIN_BATCH {
            let Ok(event) = mb.rx.try_recv() else { break };
            run_handler(&sub, &event);
            bus.inner.work.end();
            handled += 1;
        }
        if handled == DRAIN_BATCH && !mb.rx.is_empty() {
            // Yield the executor to other mailboxes; stay scheduled.
            bus.schedule(sub);
            return;
        }
        mb.scheduled.store(false, Ordering::Release);
        if mb.rx.is_empty() || mb.scheduled.swap(true, Ordering::AcqRel) {
            return;
        }
    }
}
