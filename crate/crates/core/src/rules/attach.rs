use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Sender};
use parking_lot::Mutex;

use crate::bus::{Bus, BusError, Event, TapHandle, WorkToken};
use crate::value::Value;

use super::engine::{ActionCall, ActionSink, Engine, Firing};
use super::{RuleBase, RuleError};

/// Source name on events posted by fired rules.
pub const DRE_SOURCE: &str = "dre";

type FireHook = Box<dyn FnMut(&str) + Send>;

/// Posts each action as an invocation event on `<component>.<method>`.
pub struct BusSink {
    bus: Bus,
    on_fire: Option<FireHook>,
}

impl BusSink {
    pub fn new(bus: Bus) -> Self {
        BusSink { bus, on_fire: None }
    }
}

impl ActionSink for BusSink {
    fn rule_fired(&mut self, rule: &str) {
        if let Some(hook) = &mut self.on_fire {
            hook(rule);
        }
    }

    fn post(&mut self, call: &ActionCall) -> Result<(), RuleError> {
        let event = Event::invoke(call.topic(), DRE_SOURCE, call.params.clone()).map_err(|e| RuleError::Sink(e.to_string()))?;
        self.bus.post(event).map_err(|e| RuleError::Sink(e.to_string()))?;
        Ok(())
    }
}

enum Msg {
    Event(Arc<Event>, WorkToken),
    Assert(String, Value, WorkToken),
    Stop,
}

/// An engine fed by a bus tap on its own thread.
pub struct AttachedEngine {
    bus: Bus,
    tap: Option<TapHandle>,
    tx: Sender<Msg>,
    thread: Option<JoinHandle<()>>,
    engine: Arc<Mutex<Engine>>,
    log: Arc<Mutex<Vec<Firing>>>,
    errors: Arc<Mutex<Vec<RuleError>>>,
}

pub fn attach_to_bus(bus: &Bus, rules: RuleBase) -> Result<AttachedEngine, BusError> {
    attach_with_observer(bus, rules, |_| {})
}

/// Like [`attach_to_bus`]; `observer` gets each rule name on the engine
/// thread as the rule fires, before its actions are posted.
pub fn attach_with_observer<F>(bus: &Bus, rules: RuleBase, observer: F) -> Result<AttachedEngine, BusError>
where
    F: FnMut(&str) + Send + 'static,
{
    let (tx, rx) = unbounded::<Msg>();
    let engine = Arc::new(Mutex::new(Engine::new(rules)));
    let log = Arc::new(Mutex::new(Vec::new()));
    let errors = Arc::new(Mutex::new(Vec::new()));

    let thread = {
        let (engine, log, errors) = (Arc::clone(&engine), Arc::clone(&log), Arc::clone(&errors));
        let mut sink = BusSink {
            bus: bus.clone(),
            on_fire: Some(Box::new(observer)),
        };
        std::thread::Builder::new()
            .name("dre".into())
            .spawn(move || {
                for msg in rx {
                    let (result, _token) = match msg {
                        Msg::Event(event, token) => (engine.lock().on_event(event, &mut sink), token),
                        Msg::Assert(path, value, token) => {
                            let mut e = engine.lock();
                            let r = e.assert_fact(&path, value).and_then(|_| e.run_cycle(&mut sink));
                            (r, token)
                        }
                        Msg::Stop => break,
                    };
                    match result {
                        Ok(firings) => log.lock().extend(firings),
                        Err(e) => {
                            log::warn!("rule engine: {e}");
                            errors.lock().push(e);
                        }
                    }
                }
            })
            .expect("spawn rule engine thread")
    };

    let weak = bus.weak();
    let tap_tx = tx.clone();
    let tap_id = format!("dre-{}", bus.fresh_id());
    let tap = bus.intercept(&tap_id, move |event| {
        if let Some(bus) = weak.upgrade() {
            let _ = tap_tx.send(Msg::Event(Arc::clone(event), bus.begin_work()));
        }
    });
    let tap = match tap {
        Ok(t) => t,
        Err(e) => {
            let _ = tx.send(Msg::Stop);
            let _ = thread.join();
            return Err(e);
        }
    };

    Ok(AttachedEngine {
        bus: bus.clone(),
        tap: Some(tap),
        tx,
        thread: Some(thread),
        engine,
        log,
        errors,
    })
}

impl AttachedEngine {
    /// Asserts a fact on the engine thread and runs a cycle.
    pub fn assert_fact(&self, path: &str, value: Value) {
        let _ = self.tx.send(Msg::Assert(path.to_string(), value, self.bus.begin_work()));
    }

    pub fn fact(&self, path: &str) -> Option<Value> {
        self.engine.lock().memory().fact(path).map(|f| f.value.clone())
    }

    pub fn firings(&self) -> Vec<Firing> {
        self.log.lock().clone()
    }

    pub fn fired_rules(&self) -> Vec<String> {
        self.log.lock().iter().map(|f| f.rule.clone()).collect()
    }

    pub fn errors(&self) -> Vec<RuleError> {
        self.errors.lock().clone()
    }

    /// Stops observing the bus. Events already queued are still processed.
    pub fn detach(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tap) = self.tap.take() {
            self.bus.remove_tap(tap);
        }
        let _ = self.tx.send(Msg::Stop);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for AttachedEngine {
    fn drop(&mut self) {
        self.stop();
    }
}
