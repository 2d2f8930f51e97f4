//! Table-driven stand-ins for the AI services (ASR, NLU, DM, NLG, TTS, FR, ER, ...).
//!
//! Fixture format, one row per line, tab-separated:
//!
//! ```text
//! input_topic  input_key  output_topic  output_payload
//! ```
//!
//! `input_topic` is `Service.<contract>.<method>`; `input_key` is matched
//! against the first call parameter (`*` matches anything, an empty column
//! matches an empty input, comma lists are compared as sets);
//! `output_topic` is `Service.<contract>.<reply-kind>`; `output_payload` is
//! `field=value;field=value`, where `$in` expands to the input key. Lines
//! starting with `#` are comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::value::Value;

use super::{Call, GenericService, Reply, ServiceContext, ServiceError};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
    #[error("{file}: rows name more than one contract ({a}, {b})")]
    MixedContracts { file: String, a: String, b: String },
    #[error("{0}: fixture has no rows")]
    Empty(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubRow {
    pub method: String,
    /// `None` is the `*` wildcard.
    pub input_key: Option<String>,
    pub reply_kind: String,
    /// Raw `field=value;...` template.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubBehavior {
    pub service_id: String,
    pub contract: String,
    pub rows: Vec<StubRow>,
    pub fixed_latency: Duration,
}

fn canonical_key(raw: &str) -> String {
    if raw.contains(',') {
        let mut parts: Vec<&str> = raw.split(',').map(str::trim).collect();
        parts.sort_unstable();
        parts.join(",")
    } else {
        raw.to_string()
    }
}

fn split_service_topic(topic: &str) -> Option<(&str, &str)> {
    let rest = topic.strip_prefix("Service.")?;
    let (contract, leaf) = rest.split_once('.')?;
    (!contract.is_empty() && !leaf.is_empty() && !leaf.contains('.')).then_some((contract, leaf))
}

pub fn parse_stub_fixture(service_id: &str, text: &str) -> Result<StubBehavior, FixtureError> {
    let malformed = |line: usize, msg: String| FixtureError::Malformed {
        file: service_id.to_string(),
        line,
        msg,
    };
    let mut contract: Option<String> = None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 4 {
            return Err(malformed(lineno, format!("expected 4 tab-separated columns, got {}", cols.len())));
        }
        let (in_contract, method) = split_service_topic(cols[0])
            .ok_or_else(|| malformed(lineno, format!("input topic `{}` is not Service.<contract>.<method>", cols[0])))?;
        let (out_contract, kind) = split_service_topic(cols[2])
            .ok_or_else(|| malformed(lineno, format!("output topic `{}` is not Service.<contract>.<kind>", cols[2])))?;
        if in_contract != out_contract {
            return Err(malformed(lineno, "input and output contracts differ".into()));
        }
        match &contract {
            None => contract = Some(in_contract.to_string()),
            Some(c) if c != in_contract => {
                return Err(FixtureError::MixedContracts {
                    file: service_id.to_string(),
                    a: c.clone(),
                    b: in_contract.to_string(),
                })
            }
            _ => {}
        }
        rows.push(StubRow {
            method: method.to_string(),
            input_key: (cols[1] != "*").then(|| canonical_key(cols[1])),
            reply_kind: kind.to_string(),
            output: cols[3].to_string(),
        });
    }
    let contract = contract.ok_or_else(|| FixtureError::Empty(service_id.to_string()))?;
    Ok(StubBehavior {
        service_id: service_id.to_string(),
        contract,
        rows,
        fixed_latency: Duration::ZERO,
    })
}

/// Loads every `*.tsv` in `dir` (sorted by file name); the file stem is the service id.
pub fn load_fixture_dir(dir: &Path) -> Result<Vec<StubBehavior>, FixtureError> {
    let io = |path: &Path, source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| io(p, e))?;
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            parse_stub_fixture(id, &text)
        })
        .collect()
}

const PIPELINE: &[(&str, &str)] = &[
    ("ASR_Local", include_str!("../../fixtures/stubs/ASR_Local.tsv")),
    ("ASR_Remote", include_str!("../../fixtures/stubs/ASR_Remote.tsv")),
    ("DM", include_str!("../../fixtures/stubs/DM.tsv")),
    ("ER", include_str!("../../fixtures/stubs/ER.tsv")),
    ("FR", include_str!("../../fixtures/stubs/FR.tsv")),
    ("MR", include_str!("../../fixtures/stubs/MR.tsv")),
    ("NEWS", include_str!("../../fixtures/stubs/NEWS.tsv")),
    ("NLG", include_str!("../../fixtures/stubs/NLG.tsv")),
    ("NLU", include_str!("../../fixtures/stubs/NLU.tsv")),
    ("NVB", include_str!("../../fixtures/stubs/NVB.tsv")),
    ("TTS", include_str!("../../fixtures/stubs/TTS.tsv")),
];

/// The canonical stub set shipped with the crate.
pub fn stub_pipeline_table() -> Vec<StubBehavior> {
    PIPELINE
        .iter()
        .map(|(id, text)| parse_stub_fixture(id, text).expect("bundled fixture parses"))
        .collect()
}

impl StubBehavior {
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.fixed_latency = latency;
        self
    }

    pub fn methods(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.method.as_str())
    }

    /// Pure lookup: the reply for `method` applied to `params`.
    pub fn respond(&self, method: &str, params: &[Value]) -> Result<Option<Reply>, ServiceError> {
        if !self.rows.iter().any(|r| r.method == method) {
            return Err(ServiceError::NoSuchMethod(method.to_string()));
        }
        let key = canonical_key(&params.first().map(Value::key_text).unwrap_or_default());
        let row = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .find(|r| r.input_key.as_deref() == Some(key.as_str()))
            .or_else(|| self.rows.iter().find(|r| r.method == method && r.input_key.is_none()));
        Ok(row.map(|r| Reply::new(r.reply_kind.clone(), render_output(&r.output, &key))))
    }
}

fn render_output(template: &str, input: &str) -> Value {
    if template.is_empty() {
        return Value::Null;
    }
    if !template.contains('=') {
        return Value::parse_literal(&template.replace("$in", input));
    }
    let fields: BTreeMap<String, Value> = template
        .split(';')
        .filter(|f| !f.is_empty())
        .map(|f| {
            let (k, v) = f.split_once('=').unwrap_or((f, ""));
            (k.trim().to_string(), Value::parse_literal(&v.replace("$in", input)))
        })
        .collect();
    Value::Record(fields)
}

/// A service driven by a [`StubBehavior`] table.
pub struct StubService {
    behavior: StubBehavior,
}

impl StubService {
    pub fn new(behavior: StubBehavior) -> Self {
        StubService { behavior }
    }
}

impl GenericService for StubService {
    fn on_event(&mut self, _ctx: &ServiceContext, call: &Call<'_>) -> Result<Option<Reply>, ServiceError> {
        if !self.behavior.fixed_latency.is_zero() {
            std::thread::sleep(self.behavior.fixed_latency);
        }
        let reply = self.behavior.respond(call.method, call.params)?;
        if reply.is_none() {
            log::debug!("{}: no stub row for {}({:?})", self.behavior.service_id, call.method, call.params);
        }
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Handle;

    fn table(id: &str) -> StubBehavior {
        stub_pipeline_table().into_iter().find(|b| b.service_id == id).unwrap()
    }

    #[test]
    fn asr_transcribes_tagged_audio() {
        let asr = table("ASR_Local");
        assert_eq!(asr.contract, "ASR");
        let audio = Value::Handle(Handle::new("mic-0", b"hello-audio".to_vec()));
        let r = asr.respond("process", &[audio]).unwrap().unwrap();
        assert_eq!(r.kind, "response");
        assert_eq!(r.payload.field("utterance"), Some(&Value::text("hello")));
    }

    #[test]
    fn empty_audio_gives_empty_text_and_no_intent() {
        let asr = table("ASR_Local");
        let r = asr.respond("process", &[Value::Bytes(Vec::new().into())]).unwrap().unwrap();
        assert_eq!(r.payload.field("utterance"), Some(&Value::text("")));
        let nlu = table("NLU");
        assert_eq!(nlu.respond("getIntent", &[Value::text("")]).unwrap(), None);
    }

    #[test]
    fn er_maps_sad_action_units_regardless_of_order() {
        let er = table("ER");
        for key in ["AU4,AU15", "AU15,AU4"] {
            let r = er.respond("process", &[Value::text(key)]).unwrap().unwrap();
            assert_eq!(r.payload.field("Emotion"), Some(&Value::text("Emotion.SAD")));
        }
    }

    #[test]
    fn nlg_greets() {
        let r = table("NLG").respond("realize", &[Value::text("greet")]).unwrap().unwrap();
        assert_eq!((r.kind.as_str(), r.payload.field("utterance")), ("utterance", Some(&Value::text("hello"))));
    }

    #[test]
    fn tts_template_substitutes_input() {
        let r = table("TTS").respond("realize", &[Value::text("hello")]).unwrap().unwrap();
        assert_eq!(r.payload.field("text"), Some(&Value::text("hello")));
    }

    #[test]
    fn unknown_method() {
        assert_eq!(
            table("NLU").respond("translate", &[]),
            Err(ServiceError::NoSuchMethod("translate".into()))
        );
    }

    #[test]
    fn purity_over_repetitions() {
        let nvb = table("NVB");
        let first = nvb.respond("processAF", &[Value::text("x")]).unwrap();
        for _ in 0..100 {
            assert_eq!(nvb.respond("processAF", &[Value::text("x")]).unwrap(), first);
        }
    }

    #[test]
    fn malformed_rows() {
        assert!(parse_stub_fixture("x", "Service.A.m\tk\tService.A.r").is_err());
        assert!(parse_stub_fixture("x", "Foo.m\tk\tService.A.r\tv").is_err());
        assert!(matches!(
            parse_stub_fixture("x", "Service.A.m\tk\tService.A.r\tv\nService.B.m\tk\tService.B.r\tv"),
            Err(FixtureError::MixedContracts { .. })
        ));
        assert!(matches!(parse_stub_fixture("x", "# nothing\n"), Err(FixtureError::Empty(_))));
    }
}
