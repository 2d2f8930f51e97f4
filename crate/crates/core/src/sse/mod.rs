//! Simulated sensors and effectors. Every emission goes through the bus.

mod accel;
mod effector;
mod location;
mod mic;
mod script;

use thiserror::Error;

use crate::bus::{BusError, Event};
use crate::value::Value;

pub use accel::{is_free_fall, AccelSample, FreeFallDetector, DEFAULT_FREEFALL_EPSILON, FREEFALL_TOPIC};
pub use effector::{tts_speak, ActionLog, ActionLogEntry, TtsEffector, TTS_SPOKEN_TOPIC};
pub use location::{
    LocationFix, LocationTracker, Signal, DEFAULT_HISTORY_CAPACITY, LOCATION_UNAVAILABLE_TOPIC, LOCATION_UPDATE_TOPIC,
};
pub use mic::{Microphone, MIC_RECORDING_TOPIC, MIC_STOPPED_TOPIC};
pub use script::{parse_sensor_script, ScriptStep, SensorCommand, SensorRig};

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("sensor source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("invalid sample: {0}")]
    BadSample(String),
    #[error("script line {line}: {msg}")]
    Script { line: usize, msg: String },
    #[error(transparent)]
    Bus(#[from] BusError),
}

pub const WIFI_STATE_TOPIC: &str = "Sensor.WiFi.state";

/// WiFi state as a state event: the engine asserts `WiFi.turnedOn`.
pub fn wifi_state_event(turned_on: bool) -> Event {
    Event::new(WIFI_STATE_TOPIC, "sensor.wifi")
        .expect("constant topic")
        .with_payload(Value::record([("turnedOn", Value::Bool(turned_on))]))
}
