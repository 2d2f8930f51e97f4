use std::path::PathBuf;
use std::sync::Arc;

use sensebus::rules::{parse_rules, ActionCall, Engine, RuleBody};
use sensebus::{Event, Value};

fn fixture(rel: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/rules").join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn bundled_rule_files_match_golden_dumps() {
    for (name, count) in [("conversation", 5), ("asr_activation", 1), ("emotion_composite", 4)] {
        let rb = parse_rules(&fixture(&format!("{name}.rules"))).unwrap();
        assert_eq!(rb.len(), count, "{name}");
        assert_eq!(rb.dump(), fixture(&format!("golden/{name}.txt")), "{name}");
    }
}

#[test]
fn conversation_rule1_has_two_equivalent_actions() {
    let rb = parse_rules(&fixture("conversation.rules")).unwrap();
    let RuleBody::Actions(actions) = &rb.rules()[0].body else {
        panic!("flat body expected")
    };
    assert_eq!(actions.len(), 2);
    assert_eq!((actions[0].component.as_str(), actions[0].method.as_str()), ("Service.ASR", "process"));
    assert_eq!(actions[0].params, actions[1].params);
}

fn event(topic: &str, fields: &[(&str, Value)]) -> Arc<Event> {
    let payload = Value::record(fields.iter().cloned());
    Arc::new(Event::new(topic, "test").unwrap().with_payload(payload))
}

#[test]
fn asr_choice_follows_wifi_state() {
    for (on, expected) in [(false, "ASR.Local"), (true, "ASR.Remote")] {
        let mut engine = Engine::new(parse_rules(&fixture("asr_activation.rules")).unwrap());
        let mut sink: Vec<ActionCall> = Vec::new();
        engine
            .on_event(event("Sensor.WiFi.state", &[("turnedOn", Value::Bool(on))]), &mut sink)
            .unwrap();
        engine
            .on_event(event("Sensor.MIC.recording", &[("bytes", Value::text("hello-audio"))]), &mut sink)
            .unwrap();
        assert_eq!(sink.len(), 1);
        assert_eq!(sink[0].topic(), "Service.ASR.process");
        assert_eq!(sink[0].params[0], Value::text(expected));
    }
}

#[test]
fn sad_user_gets_encouraging_news_and_comedies() {
    let mut engine = Engine::new(parse_rules(&fixture("emotion_composite.rules")).unwrap());
    let mut sink: Vec<ActionCall> = Vec::new();
    engine
        .on_event(event("Service.NEWS.state", &[("isOpen", Value::Bool(true))]), &mut sink)
        .unwrap();
    engine
        .on_event(event("Service.FR.response", &[("AU", Value::text("AU4,AU15"))]), &mut sink)
        .unwrap();
    assert_eq!(sink.last().unwrap().topic(), "Service.ER.process");
    let fired = engine
        .on_event(event("Service.ER.response", &[("Emotion", Value::text("Emotion.SAD"))]), &mut sink)
        .unwrap();
    let names: Vec<&str> = fired.iter().map(|f| f.rule.as_str()).collect();
    assert_eq!(names, ["Rule2", "Rule3"]);
    let last = sink.last().unwrap();
    assert_eq!((last.topic().as_str(), &last.params[..]), ("Service.NEWS.filter", &[Value::text("NEWS.Encouraging")][..]));

    let fired = engine
        .on_event(event("Service.MR.state", &[("isOpen", Value::Bool(true))]), &mut sink)
        .unwrap();
    assert_eq!(fired.len(), 1);
    let last = sink.last().unwrap();
    assert_eq!((last.topic().as_str(), &last.params[..]), ("Service.MR.recommend", &[Value::text("MR.comedy")][..]));
}
