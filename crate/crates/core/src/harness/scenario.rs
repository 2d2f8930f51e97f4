use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;

use crate::bus::{Bus, EventKind, DISPATCH_NAMESPACE};
use crate::cache::HandleCache;
use crate::registry::{parse_manifest, Registry, ServiceDescriptor};
use crate::rules::{attach_with_observer, parse_rules};
use crate::services::{load_fixture_dir, StubService};
use crate::sse::{parse_sensor_script, ActionLog, SensorRig, TtsEffector};
use crate::value::Value;

use super::HarnessError;

const SETTLE: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEntry {
    RuleFired { rule: String },
    Dispatched { service_id: String, method: String, params: Vec<Value> },
    Effector { effector: String, payload: Value },
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEntry::RuleFired { rule } => write!(f, "fired {rule}"),
            TraceEntry::Dispatched { service_id, method, params } => {
                let params: Vec<String> = params.iter().map(Value::key_text).collect();
                write!(f, "dispatch {service_id}.{method} [{}]", params.join(", "))
            }
            TraceEntry::Effector { effector, payload } => write!(f, "effector {effector} {}", payload.key_text()),
        }
    }
}

/// Everything a scenario did, in causal order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    pub entries: Vec<TraceEntry>,
    /// Rule engine errors, rendered.
    pub errors: Vec<String>,
}

impl TraceLog {
    pub fn fired(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                TraceEntry::RuleFired { rule } => Some(rule.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn dispatched(&self) -> Vec<(&str, &str)> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                TraceEntry::Dispatched { service_id, method, .. } => Some((service_id.as_str(), method.as_str())),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for TraceLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{e}")?;
        }
        for e in &self.errors {
            writeln!(f, "error {e}")?;
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Registers every stub in `dir`. A `<id>.manifest` next to `<id>.tsv`
/// supplies the descriptor; REMOTE stubs still run in-process.
fn register_stubs(registry: &Registry, dir: &Path) -> Result<(), HarnessError> {
    for behavior in load_fixture_dir(dir)? {
        let manifest = dir.join(format!("{}.manifest", behavior.service_id));
        let descriptor = if manifest.exists() {
            parse_manifest(&read(&manifest)?).map_err(|source| HarnessError::Manifest { path: manifest, source })?
        } else {
            ServiceDescriptor::local(behavior.service_id.as_str(), behavior.contract.as_str())
        };
        let h = registry.register_service(descriptor, move || Box::new(StubService::new(behavior.clone())))?;
        registry.start(&h)?;
    }
    Ok(())
}

/// Replays `script_file` against the stubs in `fixture_dir` with the rules
/// in `rule_file` attached, waiting for the system to settle after each step.
pub fn run_scenario(rule_file: &Path, fixture_dir: &Path, script_file: &Path) -> Result<TraceLog, HarnessError> {
    let rules = parse_rules(&read(rule_file)?)?;
    let steps = parse_sensor_script(&read(script_file)?)?;

    let bus = Bus::new();
    let registry = Registry::new(&bus);
    register_stubs(&registry, fixture_dir)?;

    let trace = Arc::new(Mutex::new(Vec::new()));
    let t = Arc::clone(&trace);
    let tap = bus.intercept("scenario-trace", move |event| {
        let Some(rest) = event.topic().strip_prefix(DISPATCH_NAMESPACE).and_then(|r| r.strip_prefix('.')) else {
            return;
        };
        if !matches!(event.kind(), EventKind::Invoke | EventKind::Request) {
            return;
        }
        if let Some((service_id, method)) = rest.rsplit_once('.') {
            t.lock().push(TraceEntry::Dispatched {
                service_id: service_id.to_string(),
                method: method.to_string(),
                params: event.params().to_vec(),
            });
        }
    })?;

    let actions = ActionLog::new();
    let t = Arc::clone(&trace);
    actions.on_append(move |entry| {
        t.lock().push(TraceEntry::Effector {
            effector: entry.effector.clone(),
            payload: entry.payload.clone(),
        })
    });
    let tts = TtsEffector::attach(&bus, actions)?;

    let t = Arc::clone(&trace);
    let dre = attach_with_observer(&bus, rules, move |rule| {
        t.lock().push(TraceEntry::RuleFired { rule: rule.to_string() })
    })?;

    let cache = HandleCache::new(256).map_err(|e| HarnessError::ServiceSetupFailed(e.to_string()))?;
    let rig = SensorRig::new(&bus, Arc::new(cache));
    let mut settled = true;
    rig.replay(&steps, false, |_| settled &= bus.wait_idle(SETTLE))?;
    if !settled {
        return Err(HarnessError::Unsettled(SETTLE));
    }

    let errors = dre.errors().iter().map(ToString::to_string).collect();
    dre.detach();
    tts.detach();
    bus.remove_tap(tap);
    bus.shutdown();
    let entries = std::mem::take(&mut *trace.lock());
    Ok(TraceLog { entries, errors })
}
