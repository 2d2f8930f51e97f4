use std::fmt;

use super::BusError;

/// A subscription pattern: an exact topic, a trailing-wildcard prefix
/// (`Service.ASR.*`), or `*` for every topic.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TopicPattern {
    Exact(String),
    /// Stored without the trailing `.*`.
    Prefix(String),
    Any,
}

impl TopicPattern {
    pub fn parse(raw: &str) -> Result<Self, BusError> {
        let bad = || BusError::BadPattern(raw.to_string());
        if raw.is_empty() || raw.chars().any(char::is_whitespace) {
            return Err(bad());
        }
        if raw == "*" {
            return Ok(TopicPattern::Any);
        }
        let segments: Vec<&str> = raw.split('.').collect();
        let (last, init) = segments.split_last().ok_or_else(bad)?;
        if init.iter().any(|s| s.is_empty() || s.contains('*')) {
            return Err(bad());
        }
        if *last == "*" {
            Ok(TopicPattern::Prefix(init.join(".")))
        } else if last.is_empty() || last.contains('*') {
            Err(bad())
        } else {
            Ok(TopicPattern::Exact(raw.to_string()))
        }
    }

    pub fn matches(&self, topic: &str) -> bool {
        match self {
            TopicPattern::Any => true,
            TopicPattern::Exact(t) => t == topic,
            TopicPattern::Prefix(p) => {
                topic.len() > p.len() + 1 && topic.starts_with(p.as_str()) && topic.as_bytes()[p.len()] == b'.'
            }
        }
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopicPattern::Exact(t) => f.write_str(t),
            TopicPattern::Prefix(p) => write!(f, "{p}.*"),
            TopicPattern::Any => f.write_str("*"),
        }
    }
}

/// Proper prefixes of `topic` at segment boundaries, shortest first:
/// `A.B.C` yields `A`, `A.B`.
pub(crate) fn segment_prefixes(topic: &str) -> impl Iterator<Item = &str> {
    topic
        .char_indices()
        .filter(|&(_, c)| c == '.')
        .map(move |(i, _)| &topic[..i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(TopicPattern::parse("A.B").unwrap(), TopicPattern::Exact("A.B".into()));
        assert_eq!(TopicPattern::parse("Service.ASR.*").unwrap(), TopicPattern::Prefix("Service.ASR".into()));
        assert_eq!(TopicPattern::parse("*").unwrap(), TopicPattern::Any);
        for bad in ["A.*.B", "", "A.", ".A", "A.B*", "A. B", "*.*", "A.**"] {
            assert!(TopicPattern::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn prefix_matching() {
        let p = TopicPattern::parse("A.B.*").unwrap();
        assert!(p.matches("A.B.C"));
        assert!(p.matches("A.B.C.D"));
        assert!(!p.matches("A.B"));
        assert!(!p.matches("A.X.C"));
        assert!(!p.matches("A.BC.D"));
    }

    #[test]
    fn prefixes() {
        let v: Vec<_> = segment_prefixes("A.B.C").collect();
        assert_eq!(v, vec!["A", "A.B"]);
        assert_eq!(segment_prefixes("A").count(), 0);
    }
}
