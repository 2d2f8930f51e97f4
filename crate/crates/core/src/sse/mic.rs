use std::io::{ErrorKind, Read};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::bus::{Bus, Event};
use crate::cache::HandleCache;
use crate::value::{Handle, Value};

use super::SensorError;

pub const MIC_RECORDING_TOPIC: &str = "Sensor.MIC.recording";
pub const MIC_STOPPED_TOPIC: &str = "Sensor.MIC.stopped";

/// Posts audio chunks as cache handles.
pub struct Microphone {
    bus: Bus,
    cache: Arc<HandleCache>,
    next: AtomicU64,
}

impl Microphone {
    pub fn new(bus: Bus, cache: Arc<HandleCache>) -> Self {
        Microphone {
            bus,
            cache,
            next: AtomicU64::new(0),
        }
    }

    pub fn cache(&self) -> &Arc<HandleCache> {
        &self.cache
    }

    /// Posts one chunk; the payload's `bytes` field is a handle into the cache.
    pub fn post_chunk(&self, bytes: Vec<u8>) -> Result<Handle, SensorError> {
        let key = format!("mic-{}", self.next.fetch_add(1, Ordering::Relaxed));
        let handle = Handle::new(key.clone(), bytes);
        self.cache.put(key, handle.clone());
        let event = Event::new(MIC_RECORDING_TOPIC, "sensor.mic")?
            .with_payload(Value::record([("bytes", Value::Handle(handle.clone()))]));
        self.bus.post(event)?;
        Ok(handle)
    }

    pub fn post_stopped(&self) -> Result<(), SensorError> {
        self.bus.post(Event::new(MIC_STOPPED_TOPIC, "sensor.mic")?)?;
        Ok(())
    }

    /// Reads `source` to the end in `chunk_size` pieces, posting each, then
    /// posts the stop event. Returns the number of chunks.
    pub fn record(&self, source: &mut dyn Read, chunk_size: usize) -> Result<usize, SensorError> {
        if chunk_size == 0 {
            return Err(SensorError::BadSample("chunk size must be positive".into()));
        }
        let mut chunks = 0;
        loop {
            let mut buf = vec![0u8; chunk_size];
            let mut filled = 0;
            while filled < chunk_size {
                match source.read(&mut buf[filled..]) {
                    Ok(0) => break,
                    Ok(n) => filled += n,
                    Err(e) if e.kind() == ErrorKind::Interrupted => {}
                    Err(e) => return Err(SensorError::SourceUnavailable(e.to_string())),
                }
            }
            if filled == 0 {
                break;
            }
            buf.truncate(filled);
            self.post_chunk(buf)?;
            chunks += 1;
            if filled < chunk_size {
                break;
            }
        }
        self.post_stopped()?;
        Ok(chunks)
    }

    /// [`record`](Self::record) on a producer thread.
    pub fn spawn_recording(
        self: &Arc<Self>,
        mut source: Box<dyn Read + Send>,
        chunk_size: usize,
    ) -> JoinHandle<Result<usize, SensorError>> {
        let mic = Arc::clone(self);
        std::thread::spawn(move || mic.record(&mut source, chunk_size))
    }
}
