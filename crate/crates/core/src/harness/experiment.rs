use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::bounded;

use crate::bus::{Bus, DeliveryMode, Event};
use crate::cache::HandleCache;
use crate::registry::{Registry, ServiceDescriptor};
use crate::services::EchoService;
use crate::value::{Handle, Value};

use super::baseline::{BaselineCounters, BoundService, CounterSnapshot};
use super::stats::{harmonic_mean, median, perf_rate};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transport {
    Middleware,
    Baseline,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Middleware => "MIDDLEWARE",
            Transport::Baseline => "BASELINE",
        })
    }
}

impl FromStr for Transport {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MIDDLEWARE" => Ok(Transport::Middleware),
            "BASELINE" => Ok(Transport::Baseline),
            _ => Err(HarnessError::InvalidSpec(format!("unknown transport `{s}`"))),
        }
    }
}

/// How the client fan-out over services runs. Without the `parallel`
/// feature both variants run sequentially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parallelism {
    Parallel,
    Sequential,
}

impl fmt::Display for Parallelism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parallelism::Parallel => "parallel",
            Parallelism::Sequential => "sequential",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub n_services: usize,
    pub n_messages: usize,
    pub transport: Transport,
    pub repetitions: usize,
    pub payload_bytes: usize,
    /// Repetitions run first and discarded.
    pub warmup: usize,
    pub parallelism: Parallelism,
    /// Per-message reply timeout.
    pub timeout: Duration,
}

impl ExperimentSpec {
    pub fn new(n_services: usize, n_messages: usize, transport: Transport) -> Self {
        ExperimentSpec {
            n_services,
            n_messages,
            transport,
            repetitions: 10,
            payload_bytes: 1024,
            warmup: 1,
            parallelism: Parallelism::Parallel,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_repetitions(mut self, n: usize) -> Self {
        self.repetitions = n;
        self
    }

    pub fn with_transport(mut self, t: Transport) -> Self {
        self.transport = t;
        self
    }

    pub fn with_parallelism(mut self, p: Parallelism) -> Self {
        self.parallelism = p;
        self
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSpec(m.to_string()));
        if self.n_services == 0 {
            return bad("n_services must be at least 1");
        }
        if self.n_messages == 0 {
            return bad("n_messages must be at least 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.timeout.is_zero() {
            return bad("timeout must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub spec: ExperimentSpec,
    /// Wall time of each kept repetition, in milliseconds.
    pub runs: Vec<f64>,
    pub harmonic_mean_ms: f64,
    pub median_ms: f64,
    /// Baseline work counters summed over kept repetitions; zero for MIDDLEWARE.
    pub counters: CounterSnapshot,
}

fn fan_out<F>(n: usize, parallelism: Parallelism, f: F) -> Result<(), HarnessError>
where
    F: Fn(usize) -> Result<(), HarnessError> + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if parallelism == Parallelism::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().try_for_each(f);
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallelism;
    (0..n).try_for_each(f)
}

struct MiddlewareRig {
    bus: Bus,
    _registry: Registry,
    cache: HandleCache,
}

impl MiddlewareRig {
    fn new(n_services: usize) -> Result<Self, HarnessError> {
        let bus = Bus::new();
        let registry = Registry::new(&bus);
        for i in 0..n_services {
            let name = format!("Echo{i}");
            let h = registry
                .register_service(ServiceDescriptor::local(name.as_str(), name.as_str()), || Box::new(EchoService))
                .map_err(|e| HarnessError::ServiceSetupFailed(e.to_string()))?;
            registry.start(&h).map_err(|e| HarnessError::ServiceSetupFailed(e.to_string()))?;
        }
        let cache = HandleCache::new(n_services.max(1)).map_err(|e| HarnessError::ServiceSetupFailed(e.to_string()))?;
        Ok(MiddlewareRig {
            bus,
            _registry: registry,
            cache,
        })
    }

    fn run(&self, spec: &ExperimentSpec) -> Result<Duration, HarnessError> {
        for i in 0..spec.n_services {
            let key = format!("payload-{i}");
            self.cache.put(key.as_str(), Handle::new(key.as_str(), vec![i as u8; spec.payload_bytes]));
        }
        let start = Instant::now();
        fan_out(spec.n_services, spec.parallelism, |i| {
            let contract = format!("Echo{i}");
            let key = format!("payload-{i}");
            for _ in 0..spec.n_messages {
                let handle = self
                    .cache
                    .get(&key)
                    .ok_or_else(|| HarnessError::Transport(format!("{key} evicted")))?;
                let reply = self.bus.request(&contract, "echo", vec![Value::Handle(handle.clone())], spec.timeout)?;
                match reply.payload() {
                    Value::Handle(h) if h.ptr_eq(&handle) => {}
                    other => return Err(HarnessError::Transport(format!("{contract}: unexpected reply {other:?}"))),
                }
            }
            Ok(())
        })?;
        Ok(start.elapsed())
    }
}

fn run_baseline(spec: &ExperimentSpec, counters: &Arc<BaselineCounters>) -> Result<Duration, HarnessError> {
    let start = Instant::now();
    fan_out(spec.n_services, spec.parallelism, |i| {
        let service = BoundService::bind(&format!("Echo{i}"), Arc::clone(counters), spec.timeout)?;
        let payload = vec![i as u8; spec.payload_bytes];
        for _ in 0..spec.n_messages {
            let reply = service.call(&payload)?;
            if reply != payload {
                return Err(HarnessError::Transport(format!("Echo{i}: reply differs from request")));
            }
        }
        service.unbind();
        Ok(())
    })?;
    Ok(start.elapsed())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs `spec.warmup + spec.repetitions` repetitions and reports the kept ones.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<LatencyReport, HarnessError> {
    spec.validate()?;
    let total = spec.warmup + spec.repetitions;
    let mut runs = Vec::with_capacity(spec.repetitions);
    let mut counters = CounterSnapshot::default();
    match spec.transport {
        Transport::Middleware => {
            let rig = MiddlewareRig::new(spec.n_services)?;
            for rep in 0..total {
                let t = rig.run(spec)?;
                if rep >= spec.warmup {
                    runs.push(ms(t));
                }
            }
        }
        Transport::Baseline => {
            for rep in 0..total {
                let c = Arc::new(BaselineCounters::default());
                let t = run_baseline(spec, &c)?;
                if rep >= spec.warmup {
                    runs.push(ms(t));
                    let s = c.snapshot();
                    counters.serializations += s.serializations;
                    counters.deserializations += s.deserializations;
                    counters.handshakes += s.handshakes;
                    counters.binds += s.binds;
                }
            }
        }
    }
    // A zero-length run would poison the harmonic mean; clamp to 1 ns.
    for r in &mut runs {
        *r = r.max(1e-6);
    }
    Ok(LatencyReport {
        harmonic_mean_ms: harmonic_mean(&runs)?,
        median_ms: median(&runs)?,
        spec: spec.clone(),
        runs,
        counters,
    })
}

/// One grid cell measured under both transports.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedReport {
    pub middleware: LatencyReport,
    pub baseline: LatencyReport,
}

impl PairedReport {
    pub fn perf_rate_pct(&self) -> f64 {
        perf_rate(self.baseline.harmonic_mean_ms, self.middleware.harmonic_mean_ms).unwrap_or(f64::NAN)
    }
}

pub fn run_paired(spec: &ExperimentSpec) -> Result<PairedReport, HarnessError> {
    Ok(PairedReport {
        middleware: run_experiment(&spec.clone().with_transport(Transport::Middleware))?,
        baseline: run_experiment(&spec.clone().with_transport(Transport::Baseline))?,
    })
}

/// Every `(services, messages)` pair from `template`, with
/// `repetitions(messages)` kept repetitions per cell.
pub fn run_grid<F>(
    template: &ExperimentSpec,
    services: &[usize],
    messages: &[usize],
    repetitions: F,
) -> Result<Vec<PairedReport>, HarnessError>
where
    F: Fn(usize) -> usize,
{
    let mut out = Vec::with_capacity(services.len() * messages.len());
    for &s in services {
        for &m in messages {
            let mut spec = template.clone().with_repetitions(repetitions(m));
            spec.n_services = s;
            spec.n_messages = m;
            out.push(run_paired(&spec)?);
        }
    }
    Ok(out)
}

/// Post-to-delivery round trips through the bus, in microseconds: a probe
/// event goes to a dispatcher-mode subscriber, which signals back.
pub fn sample_bus_round_trip(samples: usize, payload_bytes: usize) -> Result<Vec<f64>, HarnessError> {
    let bus = Bus::new();
    let (tx, rx) = bounded::<()>(1);
    bus.subscribe("probe", "Probe.ping", DeliveryMode::Dispatcher, move |_| {
        let _ = tx.send(());
    })?;
    let handle = Handle::new("probe", vec![0u8; payload_bytes]);
    let warmup = samples / 10;
    let mut out = Vec::with_capacity(samples);
    for i in 0..warmup + samples {
        let event = Event::new("Probe.ping", "harness")?.with_payload(Value::Handle(handle.clone()));
        let start = Instant::now();
        bus.post(event)?;
        rx.recv_timeout(Duration::from_secs(5))
            .map_err(|_| HarnessError::Transport("probe not delivered".into()))?;
        if i >= warmup {
            out.push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    bus.shutdown();
    Ok(out)
}

/// Single-message round trips over an already bound baseline service, in
/// microseconds. Bind cost is excluded.
pub fn sample_baseline_round_trip(samples: usize, payload_bytes: usize) -> Result<Vec<f64>, HarnessError> {
    let counters = Arc::new(BaselineCounters::default());
    let service = BoundService::bind("probe", counters, Duration::from_secs(5))?;
    let payload = vec![0u8; payload_bytes];
    let warmup = samples / 10;
    let mut out = Vec::with_capacity(samples);
    for i in 0..warmup + samples {
        let start = Instant::now();
        service.call(&payload)?;
        if i >= warmup {
            out.push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    service.unbind();
    Ok(out)
}
