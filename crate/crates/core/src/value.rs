//! Payload values carried by events, rule facts and wire messages.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// A shared reference to an in-memory object.
///
/// Handles are what travel on the bus instead of serialized bytes: cloning a
/// handle clones the `Arc`, never the object. Two handles are equal only when
/// they point at the same allocation.
#[derive(Clone)]
pub struct Handle {
    key: Arc<str>,
    object: Arc<dyn Any + Send + Sync>,
}

impl Handle {
    pub fn new<T: Any + Send + Sync>(key: impl Into<Arc<str>>, object: T) -> Self {
        Handle {
            key: key.into(),
            object: Arc::new(object),
        }
    }

    pub fn from_arc(key: impl Into<Arc<str>>, object: Arc<dyn Any + Send + Sync>) -> Self {
        Handle {
            key: key.into(),
            object,
        }
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn object(&self) -> &Arc<dyn Any + Send + Sync> {
        &self.object
    }

    pub fn downcast_ref<T: Any>(&self) -> Option<&T> {
        self.object.downcast_ref::<T>()
    }

    /// Bytes behind the handle, when the object is a `Vec<u8>`.
    pub fn as_bytes(&self) -> Option<&[u8]> {
        self.downcast_ref::<Vec<u8>>().map(Vec::as_slice)
    }

    pub fn ptr_eq(&self, other: &Handle) -> bool {
        Arc::ptr_eq(&self.object, &other.object)
    }
}

impl PartialEq for Handle {
    fn eq(&self, other: &Self) -> bool {
        self.ptr_eq(other)
    }
}

impl fmt::Debug for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handle({})", self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Bytes(Arc<[u8]>),
    Handle(Handle),
    List(Vec<Value>),
    Record(BTreeMap<String, Value>),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn record<K, I>(fields: I) -> Self
    where
        K: Into<String>,
        I: IntoIterator<Item = (K, Value)>,
    {
        Value::Record(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    /// Parses a bare literal the way rule files and fixtures write them:
    /// `true`/`false`, integers, floats, and otherwise text.
    pub fn parse_literal(raw: &str) -> Self {
        match raw {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => {
                if let Ok(i) = raw.parse::<i64>() {
                    Value::Int(i)
                } else if let Some(f) = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|f| f.is_finite() && raw.contains(['.', 'e', 'E']))
                {
                    Value::Float(f)
                } else {
                    Value::Text(raw.to_string())
                }
            }
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_handle(&self) -> Option<&Handle> {
        match self {
            Value::Handle(h) => Some(h),
            _ => None,
        }
    }

    pub fn field(&self, name: &str) -> Option<&Value> {
        match self {
            Value::Record(m) => m.get(name),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Text used as a lookup key: scalars render plainly, byte buffers
    /// (inline or behind a handle) decode as UTF-8, lists join with `,`.
    pub fn key_text(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => f.to_string(),
            Value::Text(s) => s.clone(),
            Value::Bytes(b) => String::from_utf8_lossy(b).into_owned(),
            Value::Handle(h) => match h.as_bytes() {
                Some(b) => String::from_utf8_lossy(b).into_owned(),
                None => h.key().to_string(),
            },
            Value::List(items) => items
                .iter()
                .map(Value::key_text)
                .collect::<Vec<_>>()
                .join(","),
            Value::Record(m) => m
                .iter()
                .map(|(k, v)| format!("{k}={}", v.key_text()))
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    /// Equality used by rule conditions. Numbers compare numerically across
    /// int/float, handles by identity, text against scalars by rendering.
    pub fn loosely_equals(&self, other: &Value) -> bool {
        use Value::*;
        match (self, other) {
            (Int(a), Float(b)) | (Float(b), Int(a)) => (*a as f64) == *b,
            (Text(a), Bool(_) | Int(_) | Float(_)) => *a == other.key_text(),
            (Bool(_) | Int(_) | Float(_), Text(b)) => self.key_text() == *b,
            _ => self == other,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Bytes(b) => write!(f, "<{} bytes>", b.len()),
            Value::Handle(h) => write!(f, "<handle {}>", h.key()),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            Value::Record(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{k}={v}")?;
                }
                f.write_str("}")
            }
            other => f.write_str(&other.key_text()),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<f64> for Value {
    fn from(f: f64) -> Self {
        Value::Float(f)
    }
}

impl From<Handle> for Value {
    fn from(h: Handle) -> Self {
        Value::Handle(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_parsing() {
        assert_eq!(Value::parse_literal("true"), Value::Bool(true));
        assert_eq!(Value::parse_literal("42"), Value::Int(42));
        assert_eq!(Value::parse_literal("1.5"), Value::Float(1.5));
        assert_eq!(Value::parse_literal("Emotion.SAD"), Value::text("Emotion.SAD"));
        assert_eq!(Value::parse_literal("inf"), Value::text("inf"));
    }

    #[test]
    fn handle_equality_is_identity() {
        let a = Handle::new("k", vec![1u8, 2, 3]);
        let b = Handle::new("k", vec![1u8, 2, 3]);
        assert_ne!(a, b);
        assert_eq!(a, a.clone());
        assert_eq!(a.as_bytes(), Some(&[1u8, 2, 3][..]));
    }

    #[test]
    fn loose_equality() {
        assert!(Value::Int(2).loosely_equals(&Value::Float(2.0)));
        assert!(Value::text("true").loosely_equals(&Value::Bool(true)));
        assert!(!Value::text("SAD").loosely_equals(&Value::text("HAPPY")));
    }
}
