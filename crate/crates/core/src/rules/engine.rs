use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use crate::bus::Event;
use crate::value::Value;

use super::memory::{state_facts, FactDelta, Source, WorkingMemory};
use super::{Action, Condition, Operand, Operator, RuleBase, RuleBody, RuleError};

pub const DEFAULT_CYCLE_CAP: usize = 1000;

const USER_MODEL: &str = "UserModel";

/// An action after parameter resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionCall {
    pub rule: String,
    pub component: String,
    pub method: String,
    pub params: Vec<Value>,
}

impl ActionCall {
    pub fn topic(&self) -> String {
        format!("{}.{}", self.component, self.method)
    }
}

/// Receives the actions fired rules emit.
pub trait ActionSink {
    /// Called when a rule fires, before any of its actions.
    fn rule_fired(&mut self, _rule: &str) {}

    fn post(&mut self, call: &ActionCall) -> Result<(), RuleError>;
}

impl ActionSink for Vec<ActionCall> {
    fn post(&mut self, call: &ActionCall) -> Result<(), RuleError> {
        self.push(call.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Firing {
    pub rule: String,
    /// True when the nested block's ELSE branch ran.
    pub else_branch: bool,
    pub actions: Vec<ActionCall>,
    pub fact_updates: Vec<(String, Value)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instantiation {
    pub rule: String,
    pub priority: i64,
    /// Sorted sources of the values the rule's conditions matched.
    pub binding: Vec<Source>,
    pub recency: u64,
    idx: usize,
}

pub(crate) fn resolve_operand<'a>(wm: &'a WorkingMemory, op: &'a Operand) -> (std::borrow::Cow<'a, Value>, Option<Source>) {
    use std::borrow::Cow;
    match op {
        Operand::Literal(v) => (Cow::Borrowed(v), None),
        Operand::Symbol(s) => match wm.lookup(s) {
            Some((v, src)) => (Cow::Borrowed(v), Some(src)),
            None => (Cow::Owned(Value::text(s.as_str())), None),
        },
    }
}

/// Sources of a satisfied condition list, or `None`.
pub(crate) fn evaluate(wm: &WorkingMemory, conds: &[Condition]) -> Option<Vec<Source>> {
    let mut sources = Vec::new();
    for c in conds {
        let (left, ls) = wm.lookup(&c.left)?;
        // The right-hand side is a constant; a bare symbol is its own text.
        let eq = match &c.right {
            Operand::Literal(v) => left.loosely_equals(v),
            Operand::Symbol(s) => left.loosely_equals(&Value::text(s.as_str())),
        };
        let holds = match c.op {
            Operator::Equals => eq,
            Operator::NotEquals => !eq,
        };
        if !holds {
            return None;
        }
        sources.push(ls);
    }
    sources.sort();
    sources.dedup();
    Some(sources)
}

/// Forward-chaining engine with incremental matching.
pub struct Engine {
    rules: Arc<RuleBase>,
    memory: WorkingMemory,
    index: HashMap<String, Vec<usize>>,
    event_rules: Vec<usize>,
    agenda: Vec<Option<Instantiation>>,
    dirty: BTreeSet<usize>,
    refracted: HashSet<(usize, Vec<Source>)>,
    cycle_cap: usize,
}

impl Engine {
    pub fn new(rules: RuleBase) -> Self {
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        let mut event_rules = Vec::new();
        for (i, rule) in rules.rules().iter().enumerate() {
            let mut paths = rule.referenced_paths();
            paths.sort_unstable();
            paths.dedup();
            if paths.iter().any(|p| p.starts_with("Event.")) {
                event_rules.push(i);
            }
            for p in paths {
                index.entry(p.to_string()).or_default().push(i);
            }
        }
        let n = rules.len();
        Engine {
            rules: Arc::new(rules),
            memory: WorkingMemory::new(),
            index,
            event_rules,
            agenda: vec![None; n],
            dirty: (0..n).collect(),
            refracted: HashSet::new(),
            cycle_cap: DEFAULT_CYCLE_CAP,
        }
    }

    pub fn with_cycle_cap(mut self, cap: usize) -> Self {
        self.cycle_cap = cap;
        self
    }

    pub fn rules(&self) -> &RuleBase {
        &self.rules
    }

    pub fn memory(&self) -> &WorkingMemory {
        &self.memory
    }

    fn touch(&mut self, path: &str) {
        if let Some(rules) = self.index.get(path) {
            self.dirty.extend(rules.iter().copied());
        }
    }

    pub fn assert_fact(&mut self, path: &str, value: Value) -> Result<FactDelta, RuleError> {
        let delta = self.memory.assert_fact(path, value)?;
        self.touch(path);
        Ok(delta)
    }

    pub fn retract(&mut self, path: &str) -> bool {
        let removed = self.memory.retract(path);
        if removed {
            self.touch(path);
        }
        removed
    }

    /// Loads an event: state events assert their fields, then the event
    /// becomes current. Does not fire anything.
    pub fn load_event(&mut self, event: Arc<Event>) -> Result<(), RuleError> {
        for (path, value) in state_facts(&event) {
            self.assert_fact(&path, value)?;
        }
        let (_, touched) = self.memory.set_event(event);
        self.dirty.extend(self.event_rules.iter().copied());
        for p in touched {
            self.touch(&p);
        }
        Ok(())
    }

    /// [`load_event`](Self::load_event) followed by [`run_cycle`](Self::run_cycle).
    pub fn on_event(&mut self, event: Arc<Event>, sink: &mut dyn ActionSink) -> Result<Vec<Firing>, RuleError> {
        self.load_event(event)?;
        self.run_cycle(sink)
    }

    fn rematch(&mut self) {
        let dirty = std::mem::take(&mut self.dirty);
        for i in dirty {
            let rule = &self.rules.rules()[i];
            self.agenda[i] = evaluate(&self.memory, &rule.conditions).map(|binding| Instantiation {
                rule: rule.name.clone(),
                priority: rule.priority,
                recency: binding.iter().map(Source::timestamp).max().unwrap_or(0),
                binding,
                idx: i,
            });
        }
    }

    /// Every satisfied instantiation, refracted or not, in rule order.
    pub fn matches(&mut self) -> Vec<Instantiation> {
        self.rematch();
        self.agenda.iter().flatten().cloned().collect()
    }

    /// Satisfied instantiations that have not fired yet, best first.
    pub fn conflict_set(&mut self) -> Vec<Instantiation> {
        let mut set: Vec<Instantiation> = self
            .matches()
            .into_iter()
            .filter(|inst| !self.refracted.contains(&(inst.idx, inst.binding.clone())))
            .collect();
        set.sort_by_key(|i| Reverse((i.priority, i.recency, Reverse(i.rule.clone()))));
        set
    }

    fn select(&self) -> Option<Instantiation> {
        self.agenda
            .iter()
            .flatten()
            .filter(|inst| !self.refracted.contains(&(inst.idx, inst.binding.clone())))
            .max_by(|a, b| {
                (a.priority, a.recency)
                    .cmp(&(b.priority, b.recency))
                    .then_with(|| b.rule.cmp(&a.rule))
            })
            .cloned()
    }

    fn prune_refraction(&mut self) {
        let memory = &self.memory;
        self.refracted
            .retain(|(_, binding)| binding.iter().all(|s| memory.is_current(s)));
    }

    /// Fires the best instantiation until none remain.
    pub fn run_cycle(&mut self, sink: &mut dyn ActionSink) -> Result<Vec<Firing>, RuleError> {
        self.prune_refraction();
        let mut firings = Vec::new();
        loop {
            self.rematch();
            let Some(inst) = self.select() else { break };
            if firings.len() >= self.cycle_cap {
                return Err(RuleError::CycleCapExceeded(self.cycle_cap));
            }
            self.refracted.insert((inst.idx, inst.binding));
            firings.push(self.fire(inst.idx, sink)?);
        }
        Ok(firings)
    }

    fn fire(&mut self, idx: usize, sink: &mut dyn ActionSink) -> Result<Firing, RuleError> {
        let rules = Arc::clone(&self.rules);
        let rule = &rules.rules()[idx];
        let (actions, else_branch): (&[Action], bool) = match &rule.body {
            RuleBody::Actions(a) => (a, false),
            RuleBody::Nested(n) => {
                if evaluate(&self.memory, &n.conditions).is_some() {
                    (&n.actions, false)
                } else {
                    (n.else_actions.as_deref().unwrap_or(&[]), true)
                }
            }
        };
        sink.rule_fired(&rule.name);
        let mut firing = Firing {
            rule: rule.name.clone(),
            else_branch,
            actions: Vec::new(),
            fact_updates: Vec::new(),
        };
        for action in actions {
            let params = action
                .params
                .iter()
                .map(|p| self.resolve_param(&rule.name, p))
                .collect::<Result<Vec<_>, _>>()?;
            if action.component == USER_MODEL {
                let path = user_model_path(&action.method)
                    .ok_or_else(|| RuleError::UnsupportedAction(format!("{} : {}", action.component, action.method)))?;
                let value = params.into_iter().next().unwrap_or_default();
                self.assert_fact(&path, value.clone())?;
                firing.fact_updates.push((path, value));
            } else {
                let call = ActionCall {
                    rule: rule.name.clone(),
                    component: action.component.clone(),
                    method: action.method.clone(),
                    params,
                };
                sink.post(&call)?;
                firing.actions.push(call);
            }
        }
        Ok(firing)
    }

    fn resolve_param(&self, rule: &str, p: &Operand) -> Result<Value, RuleError> {
        match p {
            Operand::Symbol(s) if s.starts_with("Event.") && self.memory.lookup(s).is_none() => {
                Err(RuleError::UnresolvedParam {
                    rule: rule.to_string(),
                    param: s.clone(),
                })
            }
            _ => Ok(resolve_operand(&self.memory, p).0.into_owned()),
        }
    }
}

/// `setEmotion` maps to `UserModel.emotion`.
fn user_model_path(method: &str) -> Option<String> {
    let field = method.strip_prefix("set").filter(|f| !f.is_empty())?;
    let mut chars = field.chars();
    let first = chars.next()?.to_lowercase();
    Some(format!("{USER_MODEL}.{}{}", first, chars.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parse_rules;

    fn engine(text: &str) -> Engine {
        Engine::new(parse_rules(text).unwrap())
    }

    fn ev(topic: &str, payload: Value) -> Arc<Event> {
        Arc::new(Event::new(topic, "test").unwrap().with_payload(payload))
    }

    #[test]
    fn fires_once_per_event_binding() {
        let mut e = engine("RULE: R IF Event.what equals Sensor.MIC.recording THEN Event.post : Service.ASR.process : [MIC.bytes]");
        let mut sink = Vec::new();
        let payload = Value::record([("bytes", Value::text("audio"))]);
        let f = e.on_event(ev("Sensor.MIC.recording", payload.clone()), &mut sink).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(sink[0].topic(), "Service.ASR.process");
        assert_eq!(sink[0].params, vec![Value::text("audio")]);
        assert!(e.run_cycle(&mut sink).unwrap().is_empty());
        e.on_event(ev("Sensor.MIC.recording", payload), &mut sink).unwrap();
        assert_eq!(sink.len(), 2);
    }

    #[test]
    fn fact_rule_fires_on_reassertion_only() {
        let mut e = engine("RULE: R IF a.b equals 1 THEN Event.post : X : m : [a.b]");
        let mut sink = Vec::new();
        assert!(e.run_cycle(&mut sink).unwrap().is_empty());
        e.assert_fact("a.b", Value::Int(1)).unwrap();
        assert_eq!(e.run_cycle(&mut sink).unwrap().len(), 1);
        assert!(e.run_cycle(&mut sink).unwrap().is_empty());
        e.assert_fact("a.b", Value::Int(1)).unwrap();
        assert_eq!(e.run_cycle(&mut sink).unwrap().len(), 1);
        assert_eq!(sink[1].params, vec![Value::Int(1)]);
    }

    #[test]
    fn conflict_resolution_order() {
        let mut e = engine(
            "RULE: B IF x equals 1 THEN Event.post : X : b : []\n\
             RULE: A IF x equals 1 THEN Event.post : X : a : []\n\
             RULE: Newer IF y equals 1 THEN Event.post : X : n : []\n\
             RULE: Urgent PRIORITY: 5 IF x equals 1 THEN Event.post : X : u : []",
        );
        e.assert_fact("x", Value::Int(1)).unwrap();
        e.assert_fact("y", Value::Int(1)).unwrap();
        let order: Vec<String> = e.conflict_set().into_iter().map(|i| i.rule).collect();
        assert_eq!(order, ["Urgent", "Newer", "A", "B"]);
        let mut sink = Vec::new();
        let fired: Vec<String> = e.run_cycle(&mut sink).unwrap().into_iter().map(|f| f.rule).collect();
        assert_eq!(fired, order);
    }

    #[test]
    fn missing_left_path_fails_both_operators() {
        let mut e = engine("RULE: R IF nope notEquals 1 THEN Event.post : X : m : []");
        assert!(e.run_cycle(&mut Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn symbol_rhs_falls_back_to_text() {
        let mut e = engine("RULE: R IF ER.Emotion equals Emotion.SAD THEN Event.post : UserModel : setEmotion : [SAD]");
        let mut sink = Vec::new();
        let f = e
            .on_event(ev("Service.ER.response", Value::record([("Emotion", Value::text("Emotion.SAD"))])), &mut sink)
            .unwrap();
        assert!(sink.is_empty());
        assert_eq!(f[0].fact_updates, vec![("UserModel.emotion".to_string(), Value::text("SAD"))]);
        assert_eq!(e.memory().fact("UserModel.emotion").unwrap().value, Value::text("SAD"));
    }

    #[test]
    fn nested_else_and_unresolved_params() {
        let mut e = engine(
            "RULE: R IF Event.what equals go THEN IF WiFi.turnedOn equals false THEN Event.post : A : local : [MIC.bytes] ELSE Event.post : A : remote : [MIC.byte]",
        );
        let mut sink = Vec::new();
        e.assert_fact("WiFi.turnedOn", Value::Bool(true)).unwrap();
        let f = e.on_event(ev("go", Value::Null), &mut sink).unwrap();
        assert!(f[0].else_branch);
        assert_eq!(sink[0].method, "remote");
        assert_eq!(sink[0].params, vec![Value::text("MIC.byte")]);

        let mut e = engine("RULE: R IF Event.what equals go THEN Event.post : A : m : [Event.missing]");
        assert!(matches!(
            e.on_event(ev("go", Value::Null), &mut Vec::new()),
            Err(RuleError::UnresolvedParam { .. })
        ));
    }

    #[test]
    fn cycle_cap() {
        let mut e = engine(
            "RULE: Ping IF UserModel.x equals a THEN Event.post : UserModel : setX : [b]\n\
             RULE: Pong IF UserModel.x equals b THEN Event.post : UserModel : setX : [a]",
        )
        .with_cycle_cap(50);
        e.assert_fact("UserModel.x", Value::text("a")).unwrap();
        assert_eq!(e.run_cycle(&mut Vec::new()), Err(RuleError::CycleCapExceeded(50)));
    }

    #[test]
    fn state_event_asserts_facts() {
        let mut e = engine("RULE: R IF WiFi.turnedOn equals false THEN Event.post : X : m : []");
        let f = e
            .on_event(ev("Sensor.WiFi.state", Value::record([("turnedOn", Value::Bool(false))])), &mut Vec::new())
            .unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(e.memory().fact("Sensor.WiFi.turnedOn").unwrap().value, Value::Bool(false));
    }

    #[test]
    fn refraction_pruned_when_bindings_go_stale() {
        let mut e = engine("RULE: R IF Event.what equals go THEN Event.post : X : m : []");
        for _ in 0..100 {
            e.on_event(ev("go", Value::Null), &mut Vec::new()).unwrap();
        }
        e.run_cycle(&mut Vec::new()).unwrap();
        assert!(e.refracted.len() <= 1);
    }

    #[test]
    fn user_model_paths() {
        assert_eq!(user_model_path("setEmotion").as_deref(), Some("UserModel.emotion"));
        assert_eq!(user_model_path("set"), None);
        assert_eq!(user_model_path("emotion"), None);
    }
}
