//! The service contract every pluggable component implements, plus the
//! deterministic stub services used by the rule scenarios and benchmarks.

mod echo;
mod stub;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::bus::{Bus, BusError, Event};
use crate::registry::{Registry, RegistryError, ServiceHandle};
use crate::value::Value;

pub use echo::{echo_value, EchoService};
pub use stub::{
    load_fixture_dir, parse_stub_fixture, stub_pipeline_table, FixtureError, StubBehavior, StubRow, StubService,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("no such method `{0}`")]
    NoSuchMethod(String),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("service failed: {0}")]
    Failed(String),
}

/// Everything a running service may touch. The broker is its only
/// collaborator; dependencies are contract bindings resolved at start.
#[derive(Clone)]
pub struct ServiceContext {
    bus: Bus,
    service_id: String,
    contract: String,
    dependencies: BTreeMap<String, ServiceHandle>,
}

impl ServiceContext {
    pub(crate) fn new(
        bus: Bus,
        service_id: &str,
        contract: &str,
        dependencies: BTreeMap<String, ServiceHandle>,
    ) -> Self {
        ServiceContext {
            bus,
            service_id: service_id.to_string(),
            contract: contract.to_string(),
            dependencies,
        }
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn service_id(&self) -> &str {
        &self.service_id
    }

    pub fn contract(&self) -> &str {
        &self.contract
    }

    pub fn dependency(&self, contract: &str) -> Option<&ServiceHandle> {
        self.dependencies.get(contract)
    }

    pub fn dependencies(&self) -> &BTreeMap<String, ServiceHandle> {
        &self.dependencies
    }

    pub fn post(&self, event: Event) -> Result<(), BusError> {
        self.bus.post(event).map(|_| ())
    }
}

/// One method call delivered to a service.
#[derive(Debug, Clone, Copy)]
pub struct Call<'a> {
    pub method: &'a str,
    pub params: &'a [Value],
    /// The bus event that carried the call; absent for direct dispatch.
    pub event: Option<&'a Event>,
}

/// A service's answer, posted on `Service.<contract>.<kind>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub kind: String,
    pub payload: Value,
}

impl Reply {
    pub fn new(kind: impl Into<String>, payload: Value) -> Self {
        Reply {
            kind: kind.into(),
            payload,
        }
    }
}

pub trait GenericService: Send + 'static {
    fn on_start(&mut self, _ctx: &ServiceContext) -> Result<(), ServiceError> {
        Ok(())
    }

    /// Handles one call. `Ok(None)` means no reply is posted (or a reply
    /// will be posted later by the service itself).
    fn on_event(&mut self, ctx: &ServiceContext, call: &Call<'_>) -> Result<Option<Reply>, ServiceError>;

    fn on_destroy(&mut self, _ctx: &ServiceContext) {}
}

/// Invokes `method` on a running service and returns the reply event it posted.
pub fn dispatch(
    registry: &Registry,
    handle: &ServiceHandle,
    method: &str,
    params: &[Value],
) -> Result<Option<Arc<Event>>, RegistryError> {
    registry.dispatch(handle, method, params)
}
