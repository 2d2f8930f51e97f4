use std::hint::black_box;
use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};

use sensebus::bus::TopicPattern;
use sensebus::gateway::{encode_frame, FormatTag, FrameDecoder, WireMessage};
use sensebus::rules::{parse_rules, Engine};
use sensebus::services::EchoService;
use sensebus::{Bus, DeliveryMode, Event, Registry, ServiceDescriptor, Value};

fn bus(c: &mut Criterion) {
    let bus = Bus::new();
    for i in 0..20 {
        bus.subscribe(&format!("s{i}"), &format!("Noise.t{i}.*"), DeliveryMode::Posting, |_| {})
            .unwrap();
    }
    bus.subscribe("hit", "Bench.ping", DeliveryMode::Posting, |e| {
        black_box(e);
    })
    .unwrap();
    c.bench_function("post_inline", |b| {
        b.iter(|| bus.post(Event::new("Bench.ping", "bench").unwrap()).unwrap())
    });

    let reg = Registry::new(&bus);
    let h = reg
        .register_service(ServiceDescriptor::local("E", "Echo"), || Box::new(EchoService))
        .unwrap();
    reg.start(&h).unwrap();
    c.bench_function("request_round_trip", |b| {
        b.iter(|| bus.request("Echo", "echo", vec![Value::Int(1)], Duration::from_secs(5)).unwrap())
    });

    let p = TopicPattern::parse("Service.ASR.*").unwrap();
    c.bench_function("pattern_match", |b| b.iter(|| p.matches(black_box("Service.ASR.process"))));
}

fn frames(c: &mut Criterion) {
    let msg = WireMessage::new("Service.Echo.echo", "echo")
        .with_correlation("42")
        .with_payload(Value::record([("text", Value::text("x".repeat(512))), ("n", Value::Int(7))]));
    let bytes = encode_frame(&msg, FormatTag::Json).unwrap();
    c.bench_function("frame_encode", |b| b.iter(|| encode_frame(black_box(&msg), FormatTag::Json).unwrap()));
    c.bench_function("frame_decode", |b| {
        b.iter(|| {
            let mut d = FrameDecoder::new();
            d.push(black_box(&bytes));
            d.next_message().unwrap().unwrap()
        })
    });
}

fn rules(c: &mut Criterion) {
    let text: String = (0..50)
        .map(|i| format!("RULE: R{i}\nIF Event.what equals Bench.e{i} AND S.k equals {i}\nTHEN Event.post : X : m : [S.k]\n"))
        .collect();
    let mut engine = Engine::new(parse_rules(&text).unwrap());
    engine.assert_fact("S.k", Value::Int(7)).unwrap();
    let events: Vec<Arc<Event>> = (0..50).map(|i| Arc::new(Event::new(format!("Bench.e{i}"), "b").unwrap())).collect();
    let mut i = 0;
    c.bench_function("rule_on_event_50_rules", |b| {
        b.iter(|| {
            let mut sink = Vec::new();
            i = (i + 1) % events.len();
            engine.on_event(Arc::clone(&events[i]), &mut sink).unwrap()
        })
    });
}

criterion_group!(benches, bus, frames, rules);
criterion_main!(benches);
