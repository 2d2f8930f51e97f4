use std::collections::VecDeque;

use crate::bus::{monotonic_ns, Event};
use crate::value::Value;

use super::SensorError;

pub const LOCATION_UPDATE_TOPIC: &str = "Sensor.LOCATION.update";
pub const LOCATION_UNAVAILABLE_TOPIC: &str = "Sensor.LOCATION.unavailable";
pub const DEFAULT_HISTORY_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Ok,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationFix {
    pub lat: f64,
    pub lon: f64,
    /// Meters.
    pub accuracy: f64,
    pub t: u64,
    pub signal: Signal,
}

impl LocationFix {
    pub fn ok(lat: f64, lon: f64, accuracy: f64) -> Result<Self, SensorError> {
        let fix = LocationFix {
            lat,
            lon,
            accuracy,
            t: monotonic_ns(),
            signal: Signal::Ok,
        };
        fix.validate()?;
        Ok(fix)
    }

    pub fn no_signal() -> Self {
        LocationFix {
            lat: 0.0,
            lon: 0.0,
            accuracy: 0.0,
            t: monotonic_ns(),
            signal: Signal::None,
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(SensorError::BadSample(format!("latitude {} out of range", self.lat)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(SensorError::BadSample(format!("longitude {} out of range", self.lon)));
        }
        if self.accuracy.is_nan() || self.accuracy < 0.0 {
            return Err(SensorError::BadSample(format!("accuracy {} is negative", self.accuracy)));
        }
        Ok(())
    }

    fn to_value(self, stale: bool) -> Value {
        Value::record([
            ("lat", Value::Float(self.lat)),
            ("lon", Value::Float(self.lon)),
            ("accuracy", Value::Float(self.accuracy)),
            ("t", Value::Int(self.t as i64)),
            ("stale", Value::Bool(stale)),
        ])
    }
}

/// Bounded history of good fixes; falls back to the latest one without signal.
#[derive(Debug)]
pub struct LocationTracker {
    history: VecDeque<LocationFix>,
    capacity: usize,
}

impl Default for LocationTracker {
    fn default() -> Self {
        LocationTracker::new(DEFAULT_HISTORY_CAPACITY)
    }
}

impl LocationTracker {
    pub fn new(capacity: usize) -> Self {
        LocationTracker {
            history: VecDeque::with_capacity(capacity.min(1024)),
            capacity: capacity.max(1),
        }
    }

    pub fn history(&self) -> impl Iterator<Item = &LocationFix> {
        self.history.iter()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Records `fix` and returns the event to post.
    pub fn update(&mut self, fix: LocationFix) -> Result<Event, SensorError> {
        let event = |topic: &str| Event::new(topic, "sensor.location").expect("constant topic");
        match fix.signal {
            Signal::Ok => {
                fix.validate()?;
                if self.history.len() == self.capacity {
                    self.history.pop_front();
                }
                self.history.push_back(fix);
                Ok(event(LOCATION_UPDATE_TOPIC).with_payload(fix.to_value(false)))
            }
            Signal::None => Ok(match self.history.back() {
                Some(last) => event(LOCATION_UPDATE_TOPIC).with_payload(last.to_value(true)),
                None => event(LOCATION_UNAVAILABLE_TOPIC),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ok_then_none_then_unavailable() {
        let mut tr = LocationTracker::default();
        let e = tr.update(LocationFix::no_signal()).unwrap();
        assert_eq!(e.topic(), LOCATION_UNAVAILABLE_TOPIC);
        let e = tr.update(LocationFix::ok(40.44, -79.95, 5.0).unwrap()).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(e.payload().field("lat"), Some(&Value::Float(40.44)));
        assert_eq!(e.payload().field("stale"), Some(&Value::Bool(false)));
        let e = tr.update(LocationFix::no_signal()).unwrap();
        assert_eq!(e.topic(), LOCATION_UPDATE_TOPIC);
        assert_eq!(e.payload().field("lon"), Some(&Value::Float(-79.95)));
        assert_eq!(e.payload().field("stale"), Some(&Value::Bool(true)));
        assert_eq!(tr.len(), 1);
    }

    #[test]
    fn bounded_history() {
        let mut tr = LocationTracker::new(3);
        for i in 0..10 {
            tr.update(LocationFix::ok(i as f64, 0.0, 1.0).unwrap()).unwrap();
            assert!(tr.len() <= 3);
        }
        let lats: Vec<f64> = tr.history().map(|f| f.lat).collect();
        assert_eq!(lats, [7.0, 8.0, 9.0]);
    }

    #[test]
    fn invalid_fixes() {
        assert!(LocationFix::ok(91.0, 0.0, 1.0).is_err());
        assert!(LocationFix::ok(0.0, -181.0, 1.0).is_err());
        assert!(LocationFix::ok(0.0, 0.0, -1.0).is_err());
        assert!(LocationFix::ok(0.0, 0.0, f64::NAN).is_err());
    }
}
