//! Decision rule engine: rule language, working memory and the
//! match / conflict-resolution / fire loop.
//!
//! Rule files look like this:
//!
//! ```text
//! RULE: Rule1
//!   IF      Event.what equals Sensor.MIC.recording
//!   THEN    Event.post : Service.ASR.process : [MIC.bytes] AND
//!           Event.post : Service.NVB : processAF : [MIC.bytes]
//! ```
//!
//! Conditions are `<path> equals|notEquals <value>`, joined by `AND`.
//! Actions are `Event.post : <component> [: <method>] : [<params>]`; the
//! fused three-part form `Service.ASR.process` and the four-part form
//! `Service.ASR : process` normalize to the same action. A rule body may hold
//! one nested `IF ... THEN ... [ELSE ...]` block. An optional
//! `PRIORITY: <int>` may follow the rule name. `#` starts a comment line.

mod attach;
mod engine;
mod memory;
mod parse;

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::value::Value;

pub use attach::{attach_to_bus, attach_with_observer, AttachedEngine, BusSink, DRE_SOURCE};
pub use engine::{ActionCall, ActionSink, Engine, Firing, Instantiation, DEFAULT_CYCLE_CAP};
pub use memory::{is_valid_path, Fact, FactDelta, Source, WorkingMemory};
pub use parse::parse_rules;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("{line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("duplicate rule name `{0}`")]
    DuplicateRuleName(String),
    #[error("invalid fact path `{0}`")]
    BadPath(String),
    #[error("rule cycle cap of {0} firings exceeded")]
    CycleCapExceeded(usize),
    #[error("parameter `{param}` of rule `{rule}` has no value")]
    UnresolvedParam { rule: String, param: String },
    #[error("unsupported action {0}")]
    UnsupportedAction(String),
    #[error("action sink failed: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Equals,
    NotEquals,
}

impl Operator {
    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Equals => "equals",
            Operator::NotEquals => "notEquals",
        }
    }
}

/// Right-hand side of a condition, or an action parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    /// A bare word: resolved as a path (event field, then fact), falling back to its own text.
    Symbol(String),
    /// `true`/`false`, a number, or a quoted string.
    Literal(Value),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Symbol(s) => f.write_str(s),
            Operand::Literal(Value::Text(s)) => write!(f, "{s:?}"),
            Operand::Literal(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub left: String,
    pub op: Operator,
    pub right: Operand,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.left, self.op.as_str(), self.right)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub verb: String,
    pub component: String,
    pub method: String,
    pub params: Vec<Operand>,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<String> = self.params.iter().map(ToString::to_string).collect();
        write!(
            f,
            "{} : {} : {} : [{}]",
            self.verb,
            self.component,
            self.method,
            params.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedBlock {
    pub conditions: Vec<Condition>,
    pub actions: Vec<Action>,
    pub else_actions: Option<Vec<Action>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleBody {
    Actions(Vec<Action>),
    Nested(NestedBlock),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub priority: i64,
    pub conditions: Vec<Condition>,
    pub body: RuleBody,
}

impl Rule {
    /// Paths read by the outer conditions: left sides and symbol operands.
    pub(crate) fn referenced_paths(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for c in &self.conditions {
            out.push(c.left.as_str());
            if let Operand::Symbol(s) = &c.right {
                out.push(s.as_str());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleBase {
    rules: Vec<Rule>,
}

impl RuleBase {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RuleError> {
        let mut seen = std::collections::HashSet::new();
        for r in &rules {
            if !seen.insert(r.name.as_str()) {
                return Err(RuleError::DuplicateRuleName(r.name.clone()));
            }
        }
        Ok(RuleBase { rules })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    /// Canonical text form; stable across whitespace and action-form differences.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for rule in &self.rules {
            let _ = writeln!(out, "RULE {} priority={}", rule.name, rule.priority);
            write_block(&mut out, "  ", &rule.conditions);
            match &rule.body {
                RuleBody::Actions(actions) => write_actions(&mut out, "  ", "THEN", actions),
                RuleBody::Nested(n) => {
                    let _ = writeln!(out, "  THEN");
                    write_block(&mut out, "    ", &n.conditions);
                    write_actions(&mut out, "    ", "THEN", &n.actions);
                    if let Some(e) = &n.else_actions {
                        write_actions(&mut out, "    ", "ELSE", e);
                    }
                }
            }
        }
        out
    }
}

fn write_block(out: &mut String, indent: &str, conds: &[Condition]) {
    for (i, c) in conds.iter().enumerate() {
        let kw = if i == 0 { "IF" } else { "AND" };
        let _ = writeln!(out, "{indent}{kw} {c}");
    }
}

fn write_actions(out: &mut String, indent: &str, head: &str, actions: &[Action]) {
    for (i, a) in actions.iter().enumerate() {
        let kw = if i == 0 { head } else { "AND" };
        let _ = writeln!(out, "{indent}{kw} {a}");
    }
}
