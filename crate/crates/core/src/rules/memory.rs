use std::collections::HashMap;
use std::sync::Arc;

use crate::bus::Event;
use crate::value::Value;

use super::RuleError;

/// Dotted identifier path: non-empty segments of letters, digits, `_` or `-`.
pub fn is_valid_path(path: &str) -> bool {
    !path.is_empty()
        && path
            .split('.')
            .all(|s| !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-'))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub value: Value,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactDelta {
    pub changed: bool,
    pub timestamp: u64,
}

/// Where a matched value came from. Bindings are built from these.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Event(u64),
    Fact { path: String, timestamp: u64 },
}

impl Source {
    pub fn timestamp(&self) -> u64 {
        match self {
            Source::Event(seq) => *seq,
            Source::Fact { timestamp, .. } => *timestamp,
        }
    }
}

struct EventSlot {
    event: Arc<Event>,
    seq: u64,
    fields: HashMap<String, Value>,
}

/// Every dotted suffix of a namespace: `Service.ER` gives `Service.ER` and `ER`.
pub(crate) fn namespace_suffixes(ns: &str) -> Vec<&str> {
    if ns.is_empty() {
        return Vec::new();
    }
    let mut out = vec![ns];
    let mut rest = ns;
    while let Some((_, tail)) = rest.split_once('.') {
        out.push(tail);
        rest = tail;
    }
    out
}

fn event_fields(event: &Event) -> HashMap<String, Value> {
    let mut fields = HashMap::new();
    fields.insert("Event.what".to_string(), Value::text(event.what()));
    fields.insert("Event.topic".to_string(), Value::text(event.topic()));
    fields.insert("Event.source".to_string(), Value::text(event.source()));
    fields.insert("Event.payload".to_string(), event.payload().clone());
    // State payloads become facts instead.
    if event.leaf() == "state" {
        return fields;
    }
    if let Value::Record(map) = event.payload() {
        for ns in namespace_suffixes(event.namespace()) {
            for (k, v) in map {
                fields.insert(format!("{ns}.{k}"), v.clone());
            }
        }
    }
    fields
}

/// Facts carried by a state event: a record payload on a topic ending in
/// `.state`, e.g. `Sensor.WiFi.state {turnedOn: false}` yields
/// `Sensor.WiFi.turnedOn` and `WiFi.turnedOn`.
pub(crate) fn state_facts(event: &Event) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    if event.leaf() != "state" {
        return out;
    }
    if let Value::Record(map) = event.payload() {
        for ns in namespace_suffixes(event.namespace()) {
            for (k, v) in map {
                out.push((format!("{ns}.{k}"), v.clone()));
            }
        }
    }
    out
}

/// Facts plus the current event. Lookups see event fields before facts.
#[derive(Default)]
pub struct WorkingMemory {
    facts: HashMap<String, Fact>,
    clock: u64,
    event: Option<EventSlot>,
}

impl WorkingMemory {
    pub fn new() -> Self {
        Self::default()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Stores `value` at `path` with a fresh timestamp.
    pub fn assert_fact(&mut self, path: &str, value: Value) -> Result<FactDelta, RuleError> {
        if !is_valid_path(path) {
            return Err(RuleError::BadPath(path.to_string()));
        }
        let timestamp = self.tick();
        let previous = self.facts.insert(path.to_string(), Fact { value: value.clone(), timestamp });
        Ok(FactDelta {
            changed: previous.is_none_or(|f| f.value != value),
            timestamp,
        })
    }

    pub fn retract(&mut self, path: &str) -> bool {
        self.facts.remove(path).is_some()
    }

    pub fn fact(&self, path: &str) -> Option<&Fact> {
        self.facts.get(path)
    }

    pub fn facts(&self) -> impl Iterator<Item = (&str, &Fact)> {
        self.facts.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Replaces the current event. Returns its sequence number and every
    /// path whose event-derived value may have changed.
    pub fn set_event(&mut self, event: Arc<Event>) -> (u64, Vec<String>) {
        let seq = self.tick();
        let fields = event_fields(&event);
        let mut touched: Vec<String> = fields.keys().cloned().collect();
        if let Some(old) = self.event.take() {
            touched.extend(old.fields.into_keys().filter(|k| !fields.contains_key(k)));
        }
        self.event = Some(EventSlot { event, seq, fields });
        (seq, touched)
    }

    pub fn current_event(&self) -> Option<&Arc<Event>> {
        self.event.as_ref().map(|s| &s.event)
    }

    pub fn event_seq(&self) -> Option<u64> {
        self.event.as_ref().map(|s| s.seq)
    }

    pub fn event_value(&self, path: &str) -> Option<&Value> {
        self.event.as_ref().and_then(|s| s.fields.get(path))
    }

    pub fn lookup(&self, path: &str) -> Option<(&Value, Source)> {
        if let Some(slot) = &self.event {
            if let Some(v) = slot.fields.get(path) {
                return Some((v, Source::Event(slot.seq)));
            }
        }
        self.facts.get(path).map(|f| {
            (
                &f.value,
                Source::Fact {
                    path: path.to_string(),
                    timestamp: f.timestamp,
                },
            )
        })
    }

    /// Whether a binding source still describes the current memory.
    pub fn is_current(&self, source: &Source) -> bool {
        match source {
            Source::Event(seq) => self.event_seq() == Some(*seq),
            Source::Fact { path, timestamp } => self.facts.get(path).is_some_and(|f| f.timestamp == *timestamp),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assert_reports_change_and_fresh_timestamps() {
        let mut wm = WorkingMemory::new();
        let a = wm.assert_fact("WiFi.turnedOn", Value::Bool(false)).unwrap();
        assert!(a.changed);
        let b = wm.assert_fact("WiFi.turnedOn", Value::Bool(false)).unwrap();
        assert!(!b.changed);
        assert!(b.timestamp > a.timestamp);
        assert!(wm.assert_fact("WiFi.turnedOn", Value::Bool(true)).unwrap().changed);
        assert_eq!(wm.assert_fact("bad..path", Value::Null), Err(RuleError::BadPath("bad..path".into())));
        assert!(wm.retract("WiFi.turnedOn"));
        assert!(wm.is_empty());
    }

    #[test]
    fn event_fields_shadow_facts() {
        let mut wm = WorkingMemory::new();
        wm.assert_fact("ER.Emotion", Value::text("Emotion.HAPPY")).unwrap();
        let ev = Event::new("Service.ER.response", "er")
            .unwrap()
            .with_payload(Value::record([("Emotion", Value::text("Emotion.SAD"))]));
        let (seq, touched) = wm.set_event(Arc::new(ev));
        assert!(touched.contains(&"Service.ER.Emotion".to_string()));
        let (v, src) = wm.lookup("ER.Emotion").unwrap();
        assert_eq!((v, src), (&Value::text("Emotion.SAD"), Source::Event(seq)));
        assert_eq!(wm.lookup("Event.what").unwrap().0, &Value::text("Service.ER.response"));

        let (_, touched) = wm.set_event(Arc::new(Event::new("Other", "x").unwrap()));
        assert!(touched.contains(&"ER.Emotion".to_string()));
        assert_eq!(wm.lookup("ER.Emotion").unwrap().0, &Value::text("Emotion.HAPPY"));
    }

    #[test]
    fn suffixes_and_state_facts() {
        assert_eq!(namespace_suffixes("Sensor.WiFi"), vec!["Sensor.WiFi", "WiFi"]);
        assert!(namespace_suffixes("").is_empty());
        let ev = Event::new("Sensor.WiFi.state", "wifi")
            .unwrap()
            .with_payload(Value::record([("turnedOn", Value::Bool(false))]));
        let facts = state_facts(&ev);
        assert_eq!(
            facts,
            vec![
                ("Sensor.WiFi.turnedOn".to_string(), Value::Bool(false)),
                ("WiFi.turnedOn".to_string(), Value::Bool(false))
            ]
        );
        assert!(state_facts(&Event::new("Sensor.WiFi.other", "w").unwrap()).is_empty());
    }
}
