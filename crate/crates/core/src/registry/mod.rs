//! Resource manager: service registry, contract-based locator, dependency
//! injection and lifecycle control.
//!
//! Every contract with at least one registration gets a router subscribed on
//! `Service.<contract>.*`. Invocation events posted there (for example by the
//! rule engine) are resolved to one implementation and re-posted on
//! `Dispatch.<service_id>.<method>`, where the started service listens.

mod manifest;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::bus::{Bus, BusError, ContractResolver, DeliveryMode, Event, EventKind, Subscription, DISPATCH_NAMESPACE};
use crate::services::{Call, GenericService, ServiceContext, ServiceError};
use crate::value::Value;

pub use manifest::{parse_manifest, ManifestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placement {
    Local,
    Remote,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Local => "LOCAL",
            Placement::Remote => "REMOTE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ServiceState {
    Registered = 0,
    Started = 1,
    Bound = 2,
    Destroyed = 3,
}

impl ServiceState {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => ServiceState::Registered,
            1 => ServiceState::Started,
            2 => ServiceState::Bound,
            _ => ServiceState::Destroyed,
        }
    }

    pub fn is_running(self) -> bool {
        matches!(self, ServiceState::Started | ServiceState::Bound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LifecycleCommand {
    Start,
    Bind,
    Unbind,
    Destroy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceDescriptor {
    pub service_id: String,
    pub contract: String,
    pub placement: Placement,
    pub endpoint: Option<String>,
    pub capabilities: BTreeMap<String, String>,
    pub dependencies: Vec<String>,
}

fn is_segment(s: &str) -> bool {
    !s.is_empty() && !s.contains('.') && !s.contains('*') && !s.chars().any(char::is_whitespace)
}

impl ServiceDescriptor {
    pub fn local(service_id: impl Into<String>, contract: impl Into<String>) -> Self {
        ServiceDescriptor {
            service_id: service_id.into(),
            contract: contract.into(),
            placement: Placement::Local,
            endpoint: None,
            capabilities: BTreeMap::new(),
            dependencies: Vec::new(),
        }
    }

    pub fn remote(service_id: impl Into<String>, contract: impl Into<String>, endpoint: impl Into<String>) -> Self {
        ServiceDescriptor {
            placement: Placement::Remote,
            endpoint: Some(endpoint.into()),
            ..ServiceDescriptor::local(service_id, contract)
        }
    }

    pub fn with_capability(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.capabilities.insert(key.into(), value.into());
        self
    }

    pub fn with_dependency(mut self, contract: impl Into<String>) -> Self {
        self.dependencies.push(contract.into());
        self
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |msg: &str| Err(RegistryError::InvalidDescriptor(format!("{}: {msg}", self.service_id)));
        if !is_segment(&self.service_id) {
            return bad("service id must be one topic segment");
        }
        if !is_segment(&self.contract) {
            return bad("contract must be one topic segment");
        }
        match (self.placement, &self.endpoint) {
            (Placement::Remote, None) => bad("REMOTE placement requires an endpoint"),
            (Placement::Local, Some(_)) => bad("LOCAL placement must not have an endpoint"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelectionHints {
    pub required_capabilities: BTreeMap<String, String>,
    pub preferred_placement: Option<Placement>,
}

impl SelectionHints {
    pub fn any() -> Self {
        SelectionHints::default()
    }

    pub fn require(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.required_capabilities.insert(key.into(), value.into());
        self
    }

    pub fn prefer(mut self, placement: Placement) -> Self {
        self.preferred_placement = Some(placement);
        self
    }

    fn admits(&self, d: &ServiceDescriptor) -> bool {
        self.required_capabilities
            .iter()
            .all(|(k, v)| d.capabilities.get(k) == Some(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ServiceHandle {
    service_id: Arc<str>,
    contract: Arc<str>,
    seq: u64,
}

impl ServiceHandle {
    pub fn service_id(&self) -> &str {
        &self.service_id
    }

    pub fn contract(&self) -> &str {
        &self.contract
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("service id `{0}` already registered")]
    DuplicateServiceId(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("`{service}` depends on `{contract}`, which has no registered implementation")]
    UnresolvableDependency { service: String, contract: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    DependencyCycle(Vec<String>),
    #[error("no service registered for contract `{0}`")]
    NoSuchContract(String),
    #[error("no implementation of `{0}` satisfies the selection hints")]
    NoMatchingImplementation(String),
    #[error("illegal transition {command:?} from {from:?}")]
    IllegalTransition { from: ServiceState, command: LifecycleCommand },
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("no such method `{0}`")]
    NoSuchMethod(String),
    #[error("service `{0}` is not running")]
    ServiceNotRunning(String),
    #[error("service error: {0}")]
    Service(ServiceError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

impl From<ServiceError> for RegistryError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::NoSuchMethod(m) => RegistryError::NoSuchMethod(m),
            other => RegistryError::Service(other),
        }
    }
}

pub type ServiceFactory = Box<dyn Fn() -> Box<dyn GenericService> + Send + Sync>;

#[derive(Default)]
struct Cell {
    instance: Option<Box<dyn GenericService>>,
    ctx: Option<Arc<ServiceContext>>,
}

struct Entry {
    seq: u64,
    descriptor: ServiceDescriptor,
    factory: ServiceFactory,
    state: AtomicU8,
    cell: Mutex<Cell>,
}

impl Entry {
    fn state(&self) -> ServiceState {
        ServiceState::from_u8(self.state.load(Ordering::Acquire))
    }

    fn set_state(&self, s: ServiceState) {
        self.state.store(s as u8, Ordering::Release);
    }

    fn handle(&self) -> ServiceHandle {
        ServiceHandle {
            service_id: self.descriptor.service_id.as_str().into(),
            contract: self.descriptor.contract.as_str().into(),
            seq: self.seq,
        }
    }
}

#[derive(Default)]
struct Index {
    by_id: HashMap<String, Arc<Entry>>,
    /// Live (non-destroyed) entries per contract, in registration order.
    by_contract: HashMap<String, Vec<Arc<Entry>>>,
}

struct Inner {
    bus: Bus,
    index: RwLock<Index>,
    routers: Mutex<HashMap<String, Subscription>>,
    next_seq: AtomicU64,
    routed: AtomicU64,
    unroutable: AtomicU64,
}

#[derive(Clone)]
pub struct Registry {
    inner: Arc<Inner>,
}

impl ContractResolver for Inner {
    fn resolve(&self, contract: &str) -> Option<String> {
        self.locate(contract, &SelectionHints::any())
            .ok()
            .map(|e| e.descriptor.service_id.clone())
    }
}

impl Registry {
    pub fn new(bus: &Bus) -> Self {
        let inner = Arc::new(Inner {
            bus: bus.clone(),
            index: RwLock::new(Index::default()),
            routers: Mutex::new(HashMap::new()),
            next_seq: AtomicU64::new(1),
            routed: AtomicU64::new(0),
            unroutable: AtomicU64::new(0),
        });
        let weak: Weak<dyn ContractResolver> = Arc::downgrade(&inner) as Weak<dyn ContractResolver>;
        bus.set_resolver(weak);
        Registry { inner }
    }

    pub fn bus(&self) -> &Bus {
        &self.inner.bus
    }

    pub fn register_service<F>(&self, descriptor: ServiceDescriptor, factory: F) -> Result<ServiceHandle, RegistryError>
    where
        F: Fn() -> Box<dyn GenericService> + Send + Sync + 'static,
    {
        descriptor.validate()?;
        let contract = descriptor.contract.clone();
        let entry = {
            let mut index = self.inner.index.write();
            if let Some(existing) = index.by_id.get(&descriptor.service_id) {
                if existing.state() != ServiceState::Destroyed {
                    return Err(RegistryError::DuplicateServiceId(descriptor.service_id));
                }
            }
            let entry = Arc::new(Entry {
                seq: self.inner.next_seq.fetch_add(1, Ordering::Relaxed),
                descriptor,
                factory: Box::new(factory),
                state: AtomicU8::new(ServiceState::Registered as u8),
                cell: Mutex::new(Cell::default()),
            });
            index.by_id.insert(entry.descriptor.service_id.clone(), entry.clone());
            index.by_contract.entry(contract.clone()).or_default().push(entry.clone());
            entry
        };
        self.ensure_router(&contract)?;
        self.inner.bus.register_endpoint(&entry.descriptor.service_id);
        Ok(entry.handle())
    }

    fn ensure_router(&self, contract: &str) -> Result<(), RegistryError> {
        let mut routers = self.inner.routers.lock();
        if routers.contains_key(contract) {
            return Ok(());
        }
        let weak = Arc::downgrade(&self.inner);
        let owned = contract.to_string();
        let sub = self.inner.bus.subscribe(
            &format!("router:{contract}"),
            &format!("Service.{contract}.*"),
            DeliveryMode::Posting,
            move |event| {
                if event.kind() == EventKind::Invoke {
                    if let Some(inner) = weak.upgrade() {
                        inner.route(&owned, event);
                    }
                }
            },
        )?;
        routers.insert(contract.to_string(), sub);
        Ok(())
    }

    pub fn locate(&self, contract: &str, hints: &SelectionHints) -> Result<ServiceHandle, RegistryError> {
        self.inner.locate(contract, hints).map(|e| e.handle())
    }

    /// Live implementations of `contract`, in registration order.
    pub fn list(&self, contract: &str) -> Vec<ServiceHandle> {
        self.inner
            .index
            .read()
            .by_contract
            .get(contract)
            .map(|v| v.iter().map(|e| e.handle()).collect())
            .unwrap_or_default()
    }

    pub fn descriptor(&self, handle: &ServiceHandle) -> Result<ServiceDescriptor, RegistryError> {
        Ok(self.inner.entry(handle)?.descriptor.clone())
    }

    pub fn state(&self, handle: &ServiceHandle) -> Result<ServiceState, RegistryError> {
        Ok(self.inner.entry(handle).map(|e| e.state()).unwrap_or(ServiceState::Destroyed))
    }

    pub fn handle_of(&self, service_id: &str) -> Option<ServiceHandle> {
        self.inner.index.read().by_id.get(service_id).map(|e| e.handle())
    }

    pub fn set_lifecycle(&self, handle: &ServiceHandle, command: LifecycleCommand) -> Result<ServiceState, RegistryError> {
        let entry = match self.inner.entry(handle) {
            Ok(e) => e,
            // A stale handle refers to a destroyed registration.
            Err(_) => {
                return Err(RegistryError::IllegalTransition {
                    from: ServiceState::Destroyed,
                    command,
                })
            }
        };
        let mut cell = entry.cell.lock();
        let from = entry.state();
        use LifecycleCommand::*;
        use ServiceState::*;
        let next = match (from, command) {
            (Registered, Start) => {
                self.do_start(&entry, &mut cell)?;
                Started
            }
            (Started, Bind) => Bound,
            (Bound, Unbind) => Started,
            (Registered | Started, Destroy) => {
                self.do_destroy(&entry, &mut cell);
                Destroyed
            }
            _ => return Err(RegistryError::IllegalTransition { from, command }),
        };
        entry.set_state(next);
        Ok(next)
    }

    pub fn start(&self, handle: &ServiceHandle) -> Result<ServiceState, RegistryError> {
        self.set_lifecycle(handle, LifecycleCommand::Start)
    }

    fn do_start(&self, entry: &Arc<Entry>, cell: &mut Cell) -> Result<(), RegistryError> {
        let d = &entry.descriptor;
        self.inner.check_cycles(&d.contract)?;
        let mut deps = BTreeMap::new();
        for contract in &d.dependencies {
            let dep = self
                .inner
                .locate(contract, &SelectionHints::any())
                .map_err(|_| RegistryError::UnresolvableDependency {
                    service: d.service_id.clone(),
                    contract: contract.clone(),
                })?;
            deps.insert(contract.clone(), dep.handle());
        }
        let ctx = Arc::new(ServiceContext::new(self.inner.bus.clone(), &d.service_id, &d.contract, deps));
        let mut instance = (entry.factory)();
        instance.on_start(&ctx)?;
        cell.instance = Some(instance);
        cell.ctx = Some(ctx);

        let weak_entry = Arc::downgrade(entry);
        let weak_inner = Arc::downgrade(&self.inner);
        self.inner.bus.subscribe(
            &d.service_id,
            &format!("{DISPATCH_NAMESPACE}.{}.*", d.service_id),
            DeliveryMode::Background,
            move |event| {
                let (Some(entry), Some(inner)) = (weak_entry.upgrade(), weak_inner.upgrade()) else {
                    return;
                };
                if let Err(e) = inner.invoke(&entry, event.leaf(), event.params(), Some(event)) {
                    log::warn!("{}: {} failed: {e}", entry.descriptor.service_id, event.topic());
                }
            },
        )?;
        Ok(())
    }

    fn do_destroy(&self, entry: &Arc<Entry>, cell: &mut Cell) {
        let d = &entry.descriptor;
        self.inner.bus.unsubscribe_all(&d.service_id);
        if let (Some(mut instance), Some(ctx)) = (cell.instance.take(), cell.ctx.take()) {
            instance.on_destroy(&ctx);
        }
        let mut index = self.inner.index.write();
        if let Some(v) = index.by_contract.get_mut(&d.contract) {
            v.retain(|e| e.seq != entry.seq);
            if v.is_empty() {
                index.by_contract.remove(&d.contract);
            }
        }
    }

    /// Calls `method` on a running service directly and posts its reply.
    pub fn dispatch(
        &self,
        handle: &ServiceHandle,
        method: &str,
        params: &[Value],
    ) -> Result<Option<Arc<Event>>, RegistryError> {
        let entry = self
            .inner
            .entry(handle)
            .map_err(|_| RegistryError::ServiceNotRunning(handle.service_id().to_string()))?;
        self.inner.invoke(&entry, method, params, None)
    }

    /// (routed, unroutable) invocation counts seen by the contract routers.
    pub fn routing_counts(&self) -> (u64, u64) {
        (
            self.inner.routed.load(Ordering::Relaxed),
            self.inner.unroutable.load(Ordering::Relaxed),
        )
    }
}

impl Inner {
    fn entry(&self, handle: &ServiceHandle) -> Result<Arc<Entry>, RegistryError> {
        self.index
            .read()
            .by_id
            .get(handle.service_id())
            .filter(|e| e.seq == handle.seq)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownService(handle.service_id().to_string()))
    }

    fn locate(&self, contract: &str, hints: &SelectionHints) -> Result<Arc<Entry>, RegistryError> {
        let index = self.index.read();
        let live: Vec<&Arc<Entry>> = index
            .by_contract
            .get(contract)
            .map(|v| v.iter().filter(|e| e.state() != ServiceState::Destroyed).collect())
            .unwrap_or_default();
        if live.is_empty() {
            return Err(RegistryError::NoSuchContract(contract.to_string()));
        }
        let admitted: Vec<&Arc<Entry>> = live.into_iter().filter(|e| hints.admits(&e.descriptor)).collect();
        let chosen = hints
            .preferred_placement
            .and_then(|p| admitted.iter().find(|e| e.descriptor.placement == p))
            .or_else(|| admitted.first())
            .ok_or_else(|| RegistryError::NoMatchingImplementation(contract.to_string()))?;
        Ok(Arc::clone(chosen))
    }

    /// Depth-first search over the contract dependency graph of live entries.
    fn check_cycles(&self, root: &str) -> Result<(), RegistryError> {
        let index = self.index.read();
        let mut graph: HashMap<&str, Vec<&str>> = HashMap::new();
        for entries in index.by_contract.values() {
            for e in entries {
                graph
                    .entry(e.descriptor.contract.as_str())
                    .or_default()
                    .extend(e.descriptor.dependencies.iter().map(String::as_str));
            }
        }
        fn visit<'a>(
            node: &'a str,
            graph: &HashMap<&'a str, Vec<&'a str>>,
            path: &mut Vec<&'a str>,
            done: &mut HashSet<&'a str>,
        ) -> Option<Vec<String>> {
            if let Some(pos) = path.iter().position(|n| *n == node) {
                let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
                cycle.push(node.to_string());
                return Some(cycle);
            }
            if done.contains(node) {
                return None;
            }
            path.push(node);
            for next in graph.get(node).into_iter().flatten() {
                if let Some(c) = visit(next, graph, path, done) {
                    return Some(c);
                }
            }
            path.pop();
            done.insert(node);
            None
        }
        match visit(root, &graph, &mut Vec::new(), &mut HashSet::new()) {
            Some(cycle) => Err(RegistryError::DependencyCycle(cycle)),
            None => Ok(()),
        }
    }

    fn invoke(
        &self,
        entry: &Arc<Entry>,
        method: &str,
        params: &[Value],
        event: Option<&Event>,
    ) -> Result<Option<Arc<Event>>, RegistryError> {
        let d = &entry.descriptor;
        let (reply, ctx) = {
            let mut cell = entry.cell.lock();
            if !entry.state().is_running() {
                return Err(RegistryError::ServiceNotRunning(d.service_id.clone()));
            }
            let ctx = cell.ctx.clone().expect("running service has a context");
            let instance = cell.instance.as_mut().expect("running service has an instance");
            let reply = instance.on_event(&ctx, &Call { method, params, event })?;
            (reply, ctx)
        };
        let Some(reply) = reply else { return Ok(None) };
        let topic = format!("Service.{}.{}", d.contract, reply.kind);
        let out = match event {
            Some(req) => Event::reply_to(req, topic, ctx.service_id())?,
            None => Event::new(topic, ctx.service_id())?,
        }
        .with_payload(reply.payload);
        Ok(Some(self.bus.post(out)?.event))
    }

    /// First parameter naming a registered implementation (`ASR.Local` for
    /// `ASR_Local`) becomes selection hints built from that implementation's
    /// descriptor, and is removed from the parameters.
    fn hints_from_params(&self, contract: &str, params: &mut Vec<Value>) -> SelectionHints {
        let Some(name) = params.first().and_then(Value::as_str) else {
            return SelectionHints::any();
        };
        let wanted = name.replace('.', "_");
        let index = self.index.read();
        let named = index
            .by_contract
            .get(contract)
            .and_then(|v| v.iter().find(|e| e.descriptor.service_id == wanted))
            .map(|e| SelectionHints {
                required_capabilities: e.descriptor.capabilities.clone(),
                preferred_placement: Some(e.descriptor.placement),
            });
        drop(index);
        match named {
            Some(h) => {
                params.remove(0);
                h
            }
            None => SelectionHints::any(),
        }
    }

    fn route(&self, contract: &str, event: &Arc<Event>) {
        let mut params = event.params().to_vec();
        let hints = self.hints_from_params(contract, &mut params);
        let target = match self.locate(contract, &hints) {
            Ok(e) => e,
            Err(e) => {
                self.unroutable.fetch_add(1, Ordering::Relaxed);
                log::warn!("cannot route {}: {e}", event.topic());
                return;
            }
        };
        let topic = format!("{DISPATCH_NAMESPACE}.{}.{}", target.descriptor.service_id, event.leaf());
        match Event::invoke(topic, format!("router:{contract}"), params).and_then(|e| self.bus.post(e)) {
            Ok(_) => {
                self.routed.fetch_add(1, Ordering::Relaxed);
            }
            Err(e) => log::warn!("cannot route {}: {e}", event.topic()),
        }
    }
}
