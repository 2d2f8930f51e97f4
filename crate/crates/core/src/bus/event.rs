use std::fmt;
use std::sync::OnceLock;
use std::time::Instant;

use crate::value::Value;

use super::BusError;

/// Nanoseconds since the first call in this process. Monotonic.
pub fn monotonic_ns() -> u64 {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed().as_nanos() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CorrelationId(pub u64);

impl fmt::Display for CorrelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What role an event plays in an exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// Plain publish/subscribe traffic.
    Notify,
    /// A method call addressed to a contract or implementation, no reply expected by the caller.
    Invoke,
    /// Half of a request/response or router/dealer exchange; carries a correlation id.
    Request,
    /// Answer to a `Request`; carries the same correlation id.
    Reply,
}

impl EventKind {
    pub fn is_correlated(self) -> bool {
        matches!(self, EventKind::Request | EventKind::Reply)
    }
}

/// The unit of bus traffic. Immutable once built; shared as `Arc<Event>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    topic: String,
    what: String,
    kind: EventKind,
    payload: Value,
    correlation_id: Option<CorrelationId>,
    source: String,
    timestamp: u64,
}

/// Topics are dotted, non-empty segments with no whitespace and no wildcard.
pub fn validate_topic(topic: &str) -> Result<(), BusError> {
    let ok = !topic.is_empty()
        && !topic.chars().any(char::is_whitespace)
        && topic.split('.').all(|s| !s.is_empty() && s != "*");
    if ok {
        Ok(())
    } else {
        Err(BusError::BadTopic(topic.to_string()))
    }
}

impl Event {
    /// A `Notify` event whose `what` equals its topic.
    pub fn new(topic: impl Into<String>, source: impl Into<String>) -> Result<Self, BusError> {
        Self::with_kind(topic, source, EventKind::Notify, None)
    }

    pub fn invoke(topic: impl Into<String>, source: impl Into<String>, params: Vec<Value>) -> Result<Self, BusError> {
        Ok(Self::with_kind(topic, source, EventKind::Invoke, None)?.with_payload(Value::List(params)))
    }

    pub(crate) fn correlated(
        topic: impl Into<String>,
        source: impl Into<String>,
        kind: EventKind,
        id: CorrelationId,
    ) -> Result<Self, BusError> {
        debug_assert!(kind.is_correlated());
        Self::with_kind(topic, source, kind, Some(id))
    }

    fn with_kind(
        topic: impl Into<String>,
        source: impl Into<String>,
        kind: EventKind,
        correlation_id: Option<CorrelationId>,
    ) -> Result<Self, BusError> {
        let topic = topic.into();
        validate_topic(&topic)?;
        Ok(Event {
            what: topic.clone(),
            topic,
            kind,
            payload: Value::Null,
            correlation_id,
            source: source.into(),
            timestamp: monotonic_ns(),
        })
    }

    /// Reply to `request`, keeping its correlation id when it has one.
    pub fn reply_to(request: &Event, topic: impl Into<String>, source: impl Into<String>) -> Result<Self, BusError> {
        match request.correlation_id {
            Some(id) => Self::correlated(topic, source, EventKind::Reply, id),
            None => Self::new(topic, source),
        }
    }

    pub fn with_payload(mut self, payload: Value) -> Self {
        self.payload = payload;
        self
    }

    pub fn with_what(mut self, what: impl Into<String>) -> Self {
        self.what = what.into();
        self
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn what(&self) -> &str {
        &self.what
    }

    pub fn kind(&self) -> EventKind {
        self.kind
    }

    pub fn payload(&self) -> &Value {
        &self.payload
    }

    pub fn correlation_id(&self) -> Option<CorrelationId> {
        self.correlation_id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    /// Topic without its last segment: `Service.ASR` for `Service.ASR.response`.
    pub fn namespace(&self) -> &str {
        match self.topic.rfind('.') {
            Some(i) => &self.topic[..i],
            None => "",
        }
    }

    /// Last topic segment: `response` for `Service.ASR.response`.
    pub fn leaf(&self) -> &str {
        match self.topic.rfind('.') {
            Some(i) => &self.topic[i + 1..],
            None => &self.topic,
        }
    }

    /// Positional parameters of an `Invoke`/`Request` event.
    pub fn params(&self) -> &[Value] {
        self.payload.as_list().unwrap_or(&[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_rules() {
        assert!(Event::new("Sensor.MIC.recording", "mic").is_ok());
        assert!(Event::new("", "x").is_err());
        assert!(Event::new("A B", "x").is_err());
        assert!(Event::new("A..B", "x").is_err());
        assert!(Event::new("A.*", "x").is_err());
    }

    #[test]
    fn correlation_only_on_exchanges() {
        let e = Event::new("A.B", "s").unwrap();
        assert_eq!(e.correlation_id(), None);
        let r = Event::correlated("A.B", "s", EventKind::Request, CorrelationId(7)).unwrap();
        let reply = Event::reply_to(&r, "A.C", "t").unwrap();
        assert_eq!(reply.kind(), EventKind::Reply);
        assert_eq!(reply.correlation_id(), Some(CorrelationId(7)));
        let plain = Event::reply_to(&e, "A.C", "t").unwrap();
        assert_eq!(plain.kind(), EventKind::Notify);
    }

    #[test]
    fn timestamps_monotone() {
        let a = Event::new("A", "s").unwrap();
        let b = Event::new("A", "s").unwrap();
        assert!(b.timestamp() >= a.timestamp());
    }

    #[test]
    fn namespace_and_leaf() {
        let e = Event::new("Service.ASR.response", "asr").unwrap();
        assert_eq!(e.namespace(), "Service.ASR");
        assert_eq!(e.leaf(), "response");
    }
}
