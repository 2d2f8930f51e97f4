use crate::value::Value;

use super::memory::is_valid_path;
use super::{Action, Condition, NestedBlock, Operand, Operator, Rule, RuleBase, RuleBody, RuleError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Colon,
    Open,
    Close,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const KEYWORDS: &[&str] = &["RULE", "IF", "THEN", "ELSE", "AND", "PRIORITY"];

fn is_keyword(w: &str) -> bool {
    KEYWORDS.contains(&w)
}

fn err(line: usize, col: usize, msg: impl Into<String>) -> RuleError {
    RuleError::Parse {
        line,
        col,
        msg: msg.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>, RuleError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let lineno = li + 1;
        if line.trim_start().starts_with('#') {
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let single = match c {
                ':' => Some(Tok::Colon),
                '[' => Some(Tok::Open),
                ']' => Some(Tok::Close),
                ',' => Some(Tok::Comma),
                _ => None,
            };
            if c.is_whitespace() {
                i += 1;
            } else if let Some(tok) = single {
                out.push(Token { tok, line: lineno, col });
                i += 1;
            } else if c == '"' {
                let start = i + 1;
                let end = chars[start..]
                    .iter()
                    .position(|&c| c == '"')
                    .map(|p| start + p)
                    .ok_or_else(|| err(lineno, col, "unterminated string"))?;
                out.push(Token {
                    tok: Tok::Quoted(chars[start..end].iter().collect()),
                    line: lineno,
                    col,
                });
                i = end + 1;
            } else {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() && !":[],\"".contains(chars[i]) {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Word(chars[start..i].iter().collect()),
                    line: lineno,
                    col,
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Word(w), .. }) if w == kw)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map(|t| (t.line, t.col)).unwrap_or(self.end)
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, RuleError> {
        let (line, col) = self.here();
        Err(err(line, col, msg))
    }

    fn describe(&self) -> String {
        match self.peek().map(|t| &t.tok) {
            None => "end of input".into(),
            Some(Tok::Word(w)) => format!("`{w}`"),
            Some(Tok::Quoted(s)) => format!("{s:?}"),
            Some(Tok::Colon) => "`:`".into(),
            Some(Tok::Open) => "`[`".into(),
            Some(Tok::Close) => "`]`".into(),
            Some(Tok::Comma) => "`,`".into(),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), RuleError> {
        if self.peek_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected `{kw}`, found {}", self.describe()))
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), RuleError> {
        if self.peek().map(|t| &t.tok) == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {what}, found {}", self.describe()))
        }
    }

    /// A non-keyword word.
    fn word(&mut self, what: &str) -> Result<String, RuleError> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Word(w)) if !is_keyword(w) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => self.fail(format!("expected {what}, found {}", self.describe())),
        }
    }

    fn path(&mut self, what: &str) -> Result<String, RuleError> {
        let at = self.here();
        let w = self.word(what)?;
        if !is_valid_path(&w) {
            return Err(err(at.0, at.1, format!("`{w}` is not a valid {what}")));
        }
        Ok(w)
    }

    fn operand(&mut self, what: &str) -> Result<Operand, RuleError> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Quoted(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(Operand::Literal(Value::Text(s)))
            }
            _ => {
                let w = self.word(what)?;
                Ok(match Value::parse_literal(&w) {
                    Value::Text(_) => Operand::Symbol(w),
                    v => Operand::Literal(v),
                })
            }
        }
    }

    fn rule(&mut self) -> Result<Rule, RuleError> {
        self.expect_keyword("RULE")?;
        self.expect(Tok::Colon, "`:` after RULE")?;
        let name = self.word("rule name")?;
        let mut priority = 0;
        if self.peek_keyword("PRIORITY") {
            self.pos += 1;
            self.expect(Tok::Colon, "`:` after PRIORITY")?;
            let at = self.here();
            let raw = self.word("priority value")?;
            priority = raw
                .parse()
                .map_err(|_| err(at.0, at.1, format!("priority `{raw}` is not an integer")))?;
        }
        self.expect_keyword("IF")?;
        let conditions = self.conditions()?;
        self.expect_keyword("THEN")?;
        let body = if self.peek_keyword("IF") {
            self.pos += 1;
            let conditions = self.conditions()?;
            self.expect_keyword("THEN")?;
            if self.peek_keyword("IF") {
                return self.fail("rules nest at most one IF block deep");
            }
            let actions = self.actions()?;
            let else_actions = if self.peek_keyword("ELSE") {
                self.pos += 1;
                Some(self.actions()?)
            } else {
                None
            };
            RuleBody::Nested(NestedBlock {
                conditions,
                actions,
                else_actions,
            })
        } else {
            RuleBody::Actions(self.actions()?)
        };
        if self.peek_keyword("ELSE") {
            return self.fail("ELSE is only allowed after a nested IF block");
        }
        Ok(Rule {
            name,
            priority,
            conditions,
            body,
        })
    }

    fn conditions(&mut self) -> Result<Vec<Condition>, RuleError> {
        let mut out = vec![self.condition()?];
        while self.peek_keyword("AND") {
            self.pos += 1;
            out.push(self.condition()?);
        }
        Ok(out)
    }

    fn condition(&mut self) -> Result<Condition, RuleError> {
        let left = self.path("condition path")?;
        let op = match self.peek().map(|t| &t.tok) {
            Some(Tok::Word(w)) if w == "equals" => Operator::Equals,
            Some(Tok::Word(w)) if w == "notEquals" => Operator::NotEquals,
            _ => return self.fail(format!("expected `equals` or `notEquals`, found {}", self.describe())),
        };
        self.pos += 1;
        let right = self.operand("right-hand value")?;
        Ok(Condition { left, op, right })
    }

    fn actions(&mut self) -> Result<Vec<Action>, RuleError> {
        let mut out = vec![self.action()?];
        while self.peek_keyword("AND") {
            self.pos += 1;
            out.push(self.action()?);
        }
        Ok(out)
    }

    fn action(&mut self) -> Result<Action, RuleError> {
        let at = self.here();
        let verb = self.path("action verb")?;
        if verb != "Event.post" {
            return Err(err(at.0, at.1, format!("unknown action verb `{verb}`")));
        }
        self.expect(Tok::Colon, "`:` after action verb")?;
        let comp_at = self.here();
        let target = self.path("action target")?;
        self.expect(Tok::Colon, "`:` after action target")?;
        let (component, method) = if matches!(self.peek().map(|t| &t.tok), Some(Tok::Open)) {
            match target.rsplit_once('.') {
                Some((c, m)) => (c.to_string(), m.to_string()),
                None => {
                    return Err(err(
                        comp_at.0,
                        comp_at.1,
                        format!("`{target}` names no method; write `{target} : <method>`"),
                    ))
                }
            }
        } else {
            let method = self.word("method name")?;
            self.expect(Tok::Colon, "`:` after method name")?;
            (target, method)
        };
        self.expect(Tok::Open, "`[`")?;
        let mut params = Vec::new();
        if !matches!(self.peek().map(|t| &t.tok), Some(Tok::Close)) {
            params.push(self.operand("parameter")?);
            while matches!(self.peek().map(|t| &t.tok), Some(Tok::Comma)) {
                self.pos += 1;
                params.push(self.operand("parameter")?);
            }
        }
        self.expect(Tok::Close, "`]` or `,`")?;
        Ok(Action {
            verb,
            component,
            method,
            params,
        })
    }
}

/// Parses rule text into a [`RuleBase`]. Empty text gives an empty base.
pub fn parse_rules(text: &str) -> Result<RuleBase, RuleError> {
    let toks = tokenize(text)?;
    let lines = text.lines().count();
    let end = (lines.max(1), text.lines().last().map_or(0, |l| l.chars().count()) + 1);
    let mut p = Parser { toks, pos: 0, end };
    let mut rules = Vec::new();
    while p.peek().is_some() {
        rules.push(p.rule()?);
    }
    RuleBase::new(rules)
}
