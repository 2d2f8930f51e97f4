use crate::bus::{monotonic_ns, Event};
use crate::value::Value;

use super::SensorError;

pub const FREEFALL_TOPIC: &str = "Sensor.ACCEL.freefall";
/// m/s².
pub const DEFAULT_FREEFALL_EPSILON: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelSample {
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub t: u64,
}

impl AccelSample {
    pub fn new(ax: f64, ay: f64, az: f64) -> Result<Self, SensorError> {
        if ![ax, ay, az].iter().all(|v| v.is_finite()) {
            return Err(SensorError::BadSample(format!("non-finite acceleration ({ax}, {ay}, {az})")));
        }
        Ok(AccelSample {
            ax,
            ay,
            az,
            t: monotonic_ns(),
        })
    }

    pub fn magnitude(&self) -> f64 {
        (self.ax * self.ax + self.ay * self.ay + self.az * self.az).sqrt()
    }
}

pub fn is_free_fall(sample: &AccelSample, epsilon: f64) -> bool {
    sample.magnitude() < epsilon
}

/// Emits one freefall event per run of samples below epsilon.
#[derive(Debug, Clone)]
pub struct FreeFallDetector {
    epsilon: f64,
    falling: bool,
}

impl Default for FreeFallDetector {
    fn default() -> Self {
        FreeFallDetector::new(DEFAULT_FREEFALL_EPSILON).expect("default epsilon is positive")
    }
}

impl FreeFallDetector {
    pub fn new(epsilon: f64) -> Result<Self, SensorError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(SensorError::BadSample(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(FreeFallDetector { epsilon, falling: false })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn observe(&mut self, sample: &AccelSample) -> Option<Event> {
        let below = is_free_fall(sample, self.epsilon);
        let fire = below && !self.falling;
        self.falling = below;
        fire.then(|| {
            Event::new(FREEFALL_TOPIC, "sensor.accel")
                .expect("constant topic")
                .with_payload(Value::record([
                    ("magnitude", Value::Float(sample.magnitude())),
                    ("t", Value::Int(sample.t as i64)),
                ]))
        })
    }
}
