//! Sensor replay scripts, one step per line:
//!
//! ```text
//! # t_offset_ms  sensor  value...
//! 0    WIFI   false
//! 0    STATE  Service.NEWS isOpen=true
//! 10   MIC    hello-audio
//! 20   ACCEL  0.0 0.1 0.0
//! 30   LOC    40.44 -79.95 5
//! 40   LOC    NONE
//! 50   EVENT  Service.FR.response AU=AU4,AU15
//! 60   INVOKE Service.FR.process frame-sad
//! ```
//!
//! `MIC` posts the rest of the line as one chunk followed by the stop event.
//! Offsets must not decrease.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::bus::{validate_topic, Bus, Event};
use crate::cache::HandleCache;
use crate::value::Value;

use super::{wifi_state_event, AccelSample, FreeFallDetector, LocationFix, LocationTracker, Microphone, SensorError};

#[derive(Debug, Clone, PartialEq)]
pub enum SensorCommand {
    Mic(Vec<u8>),
    Accel { ax: f64, ay: f64, az: f64 },
    Location(Option<(f64, f64, f64)>),
    Wifi(bool),
    State { namespace: String, fields: Value },
    Event { topic: String, payload: Value },
    Invoke { topic: String, params: Vec<Value> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub offset_ms: u64,
    pub line: usize,
    pub command: SensorCommand,
}

fn parse_record(raw: &str) -> Result<Value, String> {
    let mut map = BTreeMap::new();
    for field in raw.split(';').map(str::trim).filter(|f| !f.is_empty()) {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| format!("expected field=value, got `{field}`"))?;
        map.insert(k.trim().to_string(), Value::parse_literal(v.trim()));
    }
    Ok(Value::Record(map))
}

fn parse_f64(raw: &str) -> Result<f64, String> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{raw}` is not a finite number"))
}

fn parse_command(sensor: &str, rest: &str) -> Result<SensorCommand, String> {
    let args: Vec<&str> = rest.split_whitespace().collect();
    let topic = |raw: &str| -> Result<String, String> {
        validate_topic(raw).map_err(|e| e.to_string())?;
        Ok(raw.to_string())
    };
    Ok(match sensor {
        "MIC" => SensorCommand::Mic(rest.as_bytes().to_vec()),
        "ACCEL" => match args[..] {
            [ax, ay, az] => SensorCommand::Accel {
                ax: parse_f64(ax)?,
                ay: parse_f64(ay)?,
                az: parse_f64(az)?,
            },
            _ => return Err("ACCEL takes three numbers".into()),
        },
        "LOC" => match args[..] {
            ["NONE"] => SensorCommand::Location(None),
            [lat, lon] => SensorCommand::Location(Some((parse_f64(lat)?, parse_f64(lon)?, 0.0))),
            [lat, lon, acc] => SensorCommand::Location(Some((parse_f64(lat)?, parse_f64(lon)?, parse_f64(acc)?))),
            _ => return Err("LOC takes `lat lon [accuracy]` or NONE".into()),
        },
        "WIFI" => match args[..] {
            ["true"] => SensorCommand::Wifi(true),
            ["false"] => SensorCommand::Wifi(false),
            _ => return Err("WIFI takes true or false".into()),
        },
        "STATE" => match rest.split_once(char::is_whitespace) {
            Some((ns, fields)) => SensorCommand::State {
                namespace: topic(ns)?,
                fields: parse_record(fields)?,
            },
            None => return Err("STATE takes a namespace and field=value pairs".into()),
        },
        "EVENT" => {
            let (t, fields) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            SensorCommand::Event {
                topic: topic(t)?,
                payload: if fields.trim().is_empty() {
                    Value::Null
                } else {
                    parse_record(fields)?
                },
            }
        }
        "INVOKE" => match args.split_first() {
            Some((t, params)) => SensorCommand::Invoke {
                topic: topic(t)?,
                params: params.iter().map(|p| Value::parse_literal(p)).collect(),
            },
            None => return Err("INVOKE takes a topic".into()),
        },
        other => return Err(format!("unknown sensor `{other}`")),
    })
}

pub fn parse_sensor_script(text: &str) -> Result<Vec<ScriptStep>, SensorError> {
    let mut steps = Vec::new();
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| SensorError::Script { line, msg };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.splitn(3, char::is_whitespace);
        let offset = parts.next().unwrap_or_default();
        let offset_ms: u64 = offset
            .parse()
            .map_err(|_| err(format!("offset `{offset}` is not a whole number of milliseconds")))?;
        if offset_ms < last {
            return Err(err(format!("offset {offset_ms} is before the previous step ({last})")));
        }
        last = offset_ms;
        let sensor = parts.next().ok_or_else(|| err("missing sensor name".into()))?;
        let rest = parts.next().unwrap_or("").trim();
        let command = parse_command(sensor, rest).map_err(err)?;
        steps.push(ScriptStep {
            offset_ms,
            line,
            command,
        });
    }
    Ok(steps)
}

/// One of each simulated sensor, posting to a shared bus.
pub struct SensorRig {
    bus: Bus,
    mic: Microphone,
    accel: Mutex<FreeFallDetector>,
    location: Mutex<LocationTracker>,
}

impl SensorRig {
    pub fn new(bus: &Bus, cache: Arc<HandleCache>) -> Self {
        SensorRig {
            bus: bus.clone(),
            mic: Microphone::new(bus.clone(), cache),
            accel: Mutex::new(FreeFallDetector::default()),
            location: Mutex::new(LocationTracker::default()),
        }
    }

    pub fn apply(&self, command: &SensorCommand) -> Result<(), SensorError> {
        match command {
            SensorCommand::Mic(bytes) => {
                self.mic.post_chunk(bytes.clone())?;
                self.mic.post_stopped()?;
            }
            SensorCommand::Accel { ax, ay, az } => {
                let sample = AccelSample::new(*ax, *ay, *az)?;
                if let Some(e) = self.accel.lock().observe(&sample) {
                    self.bus.post(e)?;
                }
            }
            SensorCommand::Location(fix) => {
                let fix = match fix {
                    Some((lat, lon, acc)) => LocationFix::ok(*lat, *lon, *acc)?,
                    None => LocationFix::no_signal(),
                };
                let event = self.location.lock().update(fix)?;
                self.bus.post(event)?;
            }
            SensorCommand::Wifi(on) => {
                self.bus.post(wifi_state_event(*on))?;
            }
            SensorCommand::State { namespace, fields } => {
                let event = Event::new(format!("{namespace}.state"), "script")?.with_payload(fields.clone());
                self.bus.post(event)?;
            }
            SensorCommand::Event { topic, payload } => {
                self.bus.post(Event::new(topic.as_str(), "script")?.with_payload(payload.clone()))?;
            }
            SensorCommand::Invoke { topic, params } => {
                self.bus.post(Event::invoke(topic.as_str(), "script", params.clone())?)?;
            }
        }
        Ok(())
    }

    /// Applies each step, calling `after` once it has been posted. With
    /// `realtime`, steps wait for their offsets.
    pub fn replay<F>(&self, steps: &[ScriptStep], realtime: bool, mut after: F) -> Result<(), SensorError>
    where
        F: FnMut(&ScriptStep),
    {
        let start = Instant::now();
        for step in steps {
            if realtime {
                let due = start + Duration::from_millis(step.offset_ms);
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
            }
            self.apply(&step.command)?;
            after(step);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_sensor() {
        let steps = parse_sensor_script(
            "# demo\n0 WIFI false\n0 STATE Service.NEWS isOpen=true\n10 MIC hello audio\n20 ACCEL 0 0.1 0\n30 LOC 40.44 -79.95 5\n40 LOC NONE\n50 EVENT Service.FR.response AU=AU4,AU15\n60 INVOKE Service.FR.process frame-sad\n",
        )
        .unwrap();
        assert_eq!(steps.len(), 8);
        assert_eq!(steps[1].command, SensorCommand::State {
            namespace: "Service.NEWS".into(),
            fields: Value::record([("isOpen", Value::Bool(true))]),
        });
        assert_eq!(steps[2].command, SensorCommand::Mic(b"hello audio".to_vec()));
        assert_eq!(steps[5].command, SensorCommand::Location(None));
        assert_eq!(steps[6].command, SensorCommand::Event {
            topic: "Service.FR.response".into(),
            payload: Value::record([("AU", Value::text("AU4,AU15"))]),
        });
        assert_eq!(steps[7].line, 9);
    }

    #[test]
    fn script_errors() {
        for bad in ["x WIFI true", "0 WIFI maybe", "0 ACCEL 1 2", "0 TELEPORT", "5 WIFI true\n1 WIFI false", "0 EVENT bad..topic"] {
            assert!(matches!(parse_sensor_script(bad), Err(SensorError::Script { .. })), "{bad}");
        }
        assert!(parse_sensor_script("").unwrap().is_empty());
    }

    #[test]
    fn rig_posts_to_bus() {
        let bus = Bus::new();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let s = Arc::clone(&seen);
        bus.intercept("t", move |e| s.lock().push(e.topic().to_string())).unwrap();
        let rig = SensorRig::new(&bus, Arc::new(HandleCache::new(8).unwrap()));
        let steps = parse_sensor_script("0 MIC hi\n0 ACCEL 0 0 0\n0 ACCEL 0 0 0\n0 LOC NONE\n0 WIFI true").unwrap();
        let mut n = 0;
        rig.replay(&steps, false, |_| n += 1).unwrap();
        assert_eq!(n, 5);
        assert_eq!(
            *seen.lock(),
            [
                "Sensor.MIC.recording",
                "Sensor.MIC.stopped",
                "Sensor.ACCEL.freefall",
                "Sensor.LOCATION.unavailable",
                "Sensor.WiFi.state"
            ]
        );
    }
}
