//! Property checks shared by the property suite and the acceptance run.
//! Every oracle here is written independently of the crate's own logic.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use sensebus::bus::{BusConfig, TopicPattern};
use sensebus::cache::LruCache;
use sensebus::gateway::{encode_frame, FormatTag, FrameDecoder, WireMessage};
use sensebus::rules::{parse_rules, Engine};
use sensebus::{Bus, DeliveryMode, Event, Value};

pub const CASES: u32 = 10_000;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn check<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

// ---- topic patterns -------------------------------------------------------

/// Segment-wise oracle: `*` matches all; `a.b.*` matches topics whose first
/// segments are `a`, `b` and that have at least one more segment.
pub fn oracle_matches(pattern: &str, topic: &str) -> bool {
    if pattern == "*" {
        return true;
    }
    let p: Vec<&str> = pattern.split('.').collect();
    let t: Vec<&str> = topic.split('.').collect();
    if p.last() == Some(&"*") {
        let head = &p[..p.len() - 1];
        t.len() > head.len() && t[..head.len()] == *head
    } else {
        p == t
    }
}

fn topic_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "ab", "ba"]), 1..5).prop_map(|s| s.join("."))
}

fn pattern_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        1 => Just("*".to_string()),
        3 => topic_strategy(),
        3 => topic_strategy().prop_map(|t| format!("{t}.*")),
    ]
}

/// The parsed pattern and the bus's subscription index both agree with
/// the oracle.
pub fn pattern_matching(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(pattern_strategy(), 1..6), prop::collection::vec(topic_strategy(), 1..8));
    check(runner(cases).run(&strategy, |(patterns, topics)| {
        let bus = Bus::with_config(BusConfig {
            mailbox_capacity: 16,
            worker_threads: 1,
        });
        let hits = Arc::new(Mutex::new(Vec::new()));
        for (i, p) in patterns.iter().enumerate() {
            let h = Arc::clone(&hits);
            // Duplicate patterns get distinct subscriber ids.
            bus.subscribe(&format!("s{i}"), p, DeliveryMode::Posting, move |e| h.lock().push((i, e.topic().to_string())))
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
        }
        for t in &topics {
            for p in &patterns {
                let parsed = TopicPattern::parse(p).map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(parsed.matches(t), oracle_matches(p, t), "{} vs {}", p, t);
            }
            hits.lock().clear();
            bus.post(Event::new(t.as_str(), "prop").unwrap()).unwrap();
            let mut got: Vec<usize> = hits.lock().iter().map(|(i, _)| *i).collect();
            got.sort_unstable();
            let want: Vec<usize> = (0..patterns.len()).filter(|&i| oracle_matches(&patterns[i], t)).collect();
            prop_assert_eq!(got, want, "topic {}", t);
        }
        bus.shutdown();
        Ok(())
    }))
}

// ---- bus delivery ---------------------------------------------------------

const BUS_TOPICS: [&str; 5] = ["P.t0", "P.t1", "P.t2", "P.t2.x", "Q.t0"];
const BUS_PATTERNS: [&str; 5] = ["P.t0", "P.*", "P.t1", "*", "P.t2.*"];

fn mode(i: u8) -> DeliveryMode {
    match i % 3 {
        0 => DeliveryMode::Posting,
        1 => DeliveryMode::Dispatcher,
        _ => DeliveryMode::Background,
    }
}

/// Every subscriber sees each matching post exactly once, in post order.
pub fn bus_exactly_once_fifo(cases: u32) -> Result<(), String> {
    let strategy = (
        prop::collection::vec(0..BUS_TOPICS.len(), 0..40),
        prop::array::uniform5(0u8..3),
    );
    check(runner(cases).run(&strategy, |(posts, modes)| {
        let bus = Bus::with_config(BusConfig {
            mailbox_capacity: 8,
            worker_threads: 2,
        });
        type Seen = Arc<Mutex<Vec<(String, i64)>>>;
        let seen: Vec<Seen> = (0..BUS_PATTERNS.len()).map(|_| Arc::default()).collect();
        for (i, p) in BUS_PATTERNS.iter().enumerate() {
            let s = Arc::clone(&seen[i]);
            bus.subscribe(&format!("s{i}"), p, mode(modes[i]), move |e| {
                let n = match e.payload() {
                    Value::Int(n) => *n,
                    _ => -1,
                };
                s.lock().push((e.topic().to_string(), n));
            })
            .unwrap();
        }
        for (n, &t) in posts.iter().enumerate() {
            bus.post(Event::new(BUS_TOPICS[t], "prop").unwrap().with_payload(Value::Int(n as i64)))
                .unwrap();
        }
        prop_assert!(bus.wait_idle(Duration::from_secs(10)));
        for (i, p) in BUS_PATTERNS.iter().enumerate() {
            let want: Vec<(String, i64)> = posts
                .iter()
                .enumerate()
                .filter(|(_, &t)| oracle_matches(p, BUS_TOPICS[t]))
                .map(|(n, &t)| (BUS_TOPICS[t].to_string(), n as i64))
                .collect();
            prop_assert_eq!(&*seen[i].lock(), &want, "subscriber {} ({:?})", p, mode(modes[i]));
        }
        bus.shutdown();
        Ok(())
    }))
}

// ---- LRU ------------------------------------------------------------------

#[derive(Debug, Clone)]
enum CacheOp {
    Put(u8, u32),
    Get(u8),
    Remove(u8),
}

/// Naive LRU: a vector ordered least to most recent.
#[derive(Default)]
struct NaiveLru {
    cap: usize,
    items: Vec<(String, u32)>,
}

impl NaiveLru {
    fn put(&mut self, k: String, v: u32) -> Option<String> {
        if let Some(pos) = self.items.iter().position(|(key, _)| *key == k) {
            self.items.remove(pos);
            self.items.push((k, v));
            return None;
        }
        self.items.push((k, v));
        (self.items.len() > self.cap).then(|| self.items.remove(0).0)
    }

    fn get(&mut self, k: &str) -> Option<u32> {
        let pos = self.items.iter().position(|(key, _)| key == k)?;
        let item = self.items.remove(pos);
        let v = item.1;
        self.items.push(item);
        Some(v)
    }

    fn remove(&mut self, k: &str) -> Option<u32> {
        let pos = self.items.iter().position(|(key, _)| key == k)?;
        Some(self.items.remove(pos).1)
    }
}

pub fn lru_vs_naive(cases: u32) -> Result<(), String> {
    let op = prop_oneof![
        3 => (0u8..24, any::<u32>()).prop_map(|(k, v)| CacheOp::Put(k, v)),
        3 => (0u8..24).prop_map(CacheOp::Get),
        1 => (0u8..24).prop_map(CacheOp::Remove),
    ];
    let strategy = (1usize..=16, prop::collection::vec(op, 0..200));
    check(runner(cases).run(&strategy, |(cap, ops)| {
        let lru = LruCache::<u32>::new(cap).unwrap();
        let mut naive = NaiveLru { cap, items: Vec::new() };
        for op in ops {
            match op {
                CacheOp::Put(k, v) => prop_assert_eq!(lru.put(k.to_string(), v), naive.put(k.to_string(), v)),
                CacheOp::Get(k) => prop_assert_eq!(lru.get(&k.to_string()), naive.get(&k.to_string())),
                CacheOp::Remove(k) => prop_assert_eq!(lru.remove(&k.to_string()), naive.remove(&k.to_string())),
            }
            let want: Vec<String> = naive.items.iter().map(|(k, _)| k.clone()).collect();
            prop_assert_eq!(lru.keys_by_recency(), want);
            prop_assert!(lru.len() <= cap);
        }
        Ok(())
    }))
}

// ---- rule matching --------------------------------------------------------

const COND_PATHS: [&str; 4] = ["X.a", "Ns.X.a", "Y.b", "Event.what"];
const EVENT_TOPICS: [&str; 2] = ["Ns.X.ev0", "Ns.X.ev1"];

#[derive(Debug, Clone)]
struct Cond {
    path: usize,
    negated: bool,
    value: i64,
}

impl Cond {
    fn source(&self) -> String {
        let op = if self.negated { "notEquals" } else { "equals" };
        if COND_PATHS[self.path] == "Event.what" {
            format!("Event.what {op} {}", EVENT_TOPICS[self.value as usize % 2])
        } else {
            format!("{} {op} {}", COND_PATHS[self.path], self.value)
        }
    }
}

#[derive(Debug, Clone)]
enum MemOp {
    Assert(usize, i64),
    Retract(usize),
    Event(usize, Option<i64>),
}

const FACT_PATHS: [&str; 3] = ["X.a", "Ns.X.a", "Y.b"];

/// Brute-force view: event fields shadow facts; a missing left side fails
/// the condition whatever the operator.
#[derive(Default)]
struct Oracle {
    facts: BTreeMap<String, i64>,
    event: Option<(usize, Option<i64>)>,
}

enum Seen {
    Int(i64),
    Text(String),
}

impl Oracle {
    fn lookup(&self, path: &str) -> Option<Seen> {
        if let Some((topic, field)) = self.event {
            if path == "Event.what" {
                return Some(Seen::Text(EVENT_TOPICS[topic].to_string()));
            }
            if let Some(v) = field {
                if path == "X.a" || path == "Ns.X.a" {
                    return Some(Seen::Int(v));
                }
            }
        }
        self.facts.get(path).map(|v| Seen::Int(*v))
    }

    fn holds(&self, c: &Cond) -> bool {
        let path = COND_PATHS[c.path];
        let Some(seen) = self.lookup(path) else { return false };
        let eq = match seen {
            Seen::Int(v) => path != "Event.what" && v == c.value,
            Seen::Text(t) => t == EVENT_TOPICS[c.value as usize % 2],
        };
        eq != c.negated
    }
}

pub fn rule_match_vs_rescan(cases: u32) -> Result<(), String> {
    let cond = (0..COND_PATHS.len(), any::<bool>(), 0i64..3).prop_map(|(path, negated, value)| Cond { path, negated, value });
    let rule = prop::collection::vec(cond, 1..4);
    let op = prop_oneof![
        3 => (0..FACT_PATHS.len(), 0i64..3).prop_map(|(p, v)| MemOp::Assert(p, v)),
        1 => (0..FACT_PATHS.len()).prop_map(MemOp::Retract),
        2 => (0..2usize, prop::option::of(0i64..3)).prop_map(|(t, v)| MemOp::Event(t, v)),
    ];
    let strategy = (prop::collection::vec(rule, 1..7), prop::collection::vec(op, 0..30));
    check(runner(cases).run(&strategy, |(rules, ops)| {
        let text: String = rules
            .iter()
            .enumerate()
            .map(|(i, conds)| {
                let conds: Vec<String> = conds.iter().map(Cond::source).collect();
                format!("RULE: R{i}\nIF {}\nTHEN Event.post : S : m : []\n", conds.join(" AND "))
            })
            .collect();
        let mut engine = Engine::new(parse_rules(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?);
        let mut oracle = Oracle::default();
        for op in ops {
            match op {
                MemOp::Assert(p, v) => {
                    engine.assert_fact(FACT_PATHS[p], Value::Int(v)).unwrap();
                    oracle.facts.insert(FACT_PATHS[p].to_string(), v);
                }
                MemOp::Retract(p) => {
                    engine.retract(FACT_PATHS[p]);
                    oracle.facts.remove(FACT_PATHS[p]);
                }
                MemOp::Event(t, v) => {
                    let mut e = Event::new(EVENT_TOPICS[t], "prop").unwrap();
                    if let Some(v) = v {
                        e = e.with_payload(Value::record([("a", Value::Int(v))]));
                    }
                    engine.load_event(Arc::new(e)).unwrap();
                    oracle.event = Some((t, v));
                }
            }
            let got: BTreeSet<String> = engine.matches().into_iter().map(|m| m.rule).collect();
            let want: BTreeSet<String> = rules
                .iter()
                .enumerate()
                .filter(|(_, conds)| conds.iter().all(|c| oracle.holds(c)))
                .map(|(i, _)| format!("R{i}"))
                .collect();
            prop_assert_eq!(got, want, "\n{}", text);
        }
        Ok(())
    }))
}

// ---- frames ---------------------------------------------------------------

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        (-1e9f64..1e9).prop_map(Value::Float),
        "[a-zA-Z0-9 é.,]{0,12}".prop_map(Value::Text),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
            prop::collection::btree_map("[a-z]{1,4}", inner, 0..4).prop_map(Value::Record),
        ]
    })
}

fn message() -> impl Strategy<Value = (WireMessage, FormatTag)> {
    let json = ("[A-Z][a-z]{0,5}(\\.[A-Za-z]{1,5}){0,2}", "[a-z]{0,6}", prop::option::of("[0-9]{1,6}"), json_value())
        .prop_map(|(topic, what, cid, payload)| {
            let mut m = WireMessage::new(topic, what).with_payload(payload);
            if let Some(c) = cid {
                m = m.with_correlation(c);
            }
            (m, FormatTag::Json)
        });
    let binary = prop::collection::vec(any::<u8>(), 0..64).prop_map(|b| (WireMessage::binary(b), FormatTag::Binary));
    prop_oneof![3 => json, 1 => binary]
}

/// Frames concatenated and cut at arbitrary points decode to the originals.
pub fn frame_roundtrip_chunked(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(message(), 1..6), prop::collection::vec(1usize..40, 1..30));
    check(runner(cases).run(&strategy, |(msgs, cuts)| {
        let mut stream = Vec::new();
        for (m, tag) in &msgs {
            stream.extend(encode_frame(m, *tag).map_err(|e| TestCaseError::fail(e.to_string()))?);
        }
        let mut decoder = FrameDecoder::new();
        let mut out = Vec::new();
        let mut rest = stream.as_slice();
        let mut i = 0;
        while !rest.is_empty() {
            let n = cuts[i % cuts.len()].min(rest.len());
            i += 1;
            decoder.push(&rest[..n]);
            rest = &rest[n..];
            while let Some(m) = decoder.next_message().map_err(|e| TestCaseError::fail(e.to_string()))? {
                out.push(m);
            }
        }
        let want: Vec<WireMessage> = msgs.into_iter().map(|(m, _)| m).collect();
        prop_assert_eq!(out, want);
        prop_assert_eq!(decoder.buffered(), 0);
        Ok(())
    }))
}
