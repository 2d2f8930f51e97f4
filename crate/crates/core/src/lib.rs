//! Event-driven service middleware.
//!
//! A message broker ([`bus`]) connects services ([`services`], managed by
//! [`registry`]), simulated sensors and effectors ([`sse`]) and a
//! forward-chaining decision rule engine ([`rules`]). Payloads move as
//! shared handles ([`cache`]); only the [`gateway`] knows wire formats.
//! [`harness`] holds the latency experiments and the scenario runner.

pub mod bus;
pub mod cache;
pub mod gateway;
pub mod harness;
pub mod registry;
pub mod rules;
pub mod services;
pub mod sse;
pub mod value;

pub use bus::{Bus, DeliveryMode, Event, EventKind, WeakBus};
pub use registry::{Registry, ServiceDescriptor, ServiceHandle};
pub use value::{Handle, Value};
