use std::sync::Arc;

use parking_lot::Mutex;

use crate::bus::{monotonic_ns, Bus, BusError, DeliveryMode, Subscription};
use crate::value::Value;

pub const TTS_SPOKEN_TOPIC: &str = "Service.TTS.spoken";

#[derive(Debug, Clone, PartialEq)]
pub struct ActionLogEntry {
    pub effector: String,
    pub payload: Value,
    pub t: u64,
}

type AppendHook = Arc<dyn Fn(&ActionLogEntry) + Send + Sync>;

/// Append-only, shared log of effector actions.
#[derive(Clone, Default)]
pub struct ActionLog {
    entries: Arc<Mutex<Vec<ActionLogEntry>>>,
    hooks: Arc<Mutex<Vec<AppendHook>>>,
}

impl std::fmt::Debug for ActionLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActionLog").field("entries", &*self.entries.lock()).finish()
    }
}

impl ActionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, effector: &str, payload: Value) -> ActionLogEntry {
        let entry = ActionLogEntry {
            effector: effector.to_string(),
            payload,
            t: monotonic_ns(),
        };
        self.entries.lock().push(entry.clone());
        let hooks = self.hooks.lock().clone();
        for hook in hooks {
            hook(&entry);
        }
        entry
    }

    /// Runs `hook` on every later append, on the appending thread.
    pub fn on_append<F>(&self, hook: F)
    where
        F: Fn(&ActionLogEntry) + Send + Sync + 'static,
    {
        self.hooks.lock().push(Arc::new(hook));
    }

    pub fn entries(&self) -> Vec<ActionLogEntry> {
        self.entries.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stands in for audio output: speaking appends to the log.
pub fn tts_speak(log: &ActionLog, utterance: &str) -> ActionLogEntry {
    log.append("TTS", Value::text(utterance))
}

/// Speaks the `text` field of every `Service.TTS.spoken` event.
pub struct TtsEffector {
    bus: Bus,
    subscription: Subscription,
}

impl TtsEffector {
    pub fn attach(bus: &Bus, log: ActionLog) -> Result<Self, BusError> {
        let subscription = bus.subscribe("effector.tts", TTS_SPOKEN_TOPIC, DeliveryMode::Posting, move |e| {
            let text = e.payload().field("text").map(Value::key_text).unwrap_or_default();
            tts_speak(&log, &text);
        })?;
        Ok(TtsEffector {
            bus: bus.clone(),
            subscription,
        })
    }

    pub fn detach(self) {
        self.bus.unsubscribe(&self.subscription);
    }
}
