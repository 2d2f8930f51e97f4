//! Wire framing: `[length: u32 BE][tag: u8][payload]`, where `length`
//! counts the tag byte plus the payload.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::value::Value;

use super::GatewayError;

pub const TAG_JSON: u8 = 0x01;
pub const TAG_BINARY: u8 = 0x02;
/// Largest accepted value of the length field.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;
const HEADER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatTag {
    Json,
    Binary,
}

impl FormatTag {
    pub fn byte(self) -> u8 {
        match self {
            FormatTag::Json => TAG_JSON,
            FormatTag::Binary => TAG_BINARY,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, GatewayError> {
        match b {
            TAG_JSON => Ok(FormatTag::Json),
            TAG_BINARY => Ok(FormatTag::Binary),
            other => Err(GatewayError::BadTag(other)),
        }
    }
}

/// A message as it travels between processes. Binary frames carry only
/// raw bytes: empty topic and what, no correlation id, `Bytes` payload.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WireMessage {
    pub topic: String,
    pub what: String,
    pub correlation_id: Option<String>,
    pub payload: Value,
}

impl WireMessage {
    pub fn new(topic: impl Into<String>, what: impl Into<String>) -> Self {
        WireMessage {
            topic: topic.into(),
            what: what.into(),
            ..Default::default()
        }
    }

    pub fn binary(bytes: Vec<u8>) -> Self {
        WireMessage {
            payload: Value::Bytes(bytes.into()),
            ..Default::default()
        }
    }

    pub fn with_correlation(mut self, id: impl Into<String>) -> Self {
        self.correlation_id = Some(id.into());
        self
    }

    pub fn with_payload(mut self, payload: Value) -> Self {
        self.payload = payload;
        self
    }
}

#[derive(Serialize, Deserialize)]
struct JsonEnvelope {
    topic: String,
    what: String,
    correlation_id: Option<String>,
    payload: serde_json::Value,
}

fn to_json(v: &Value) -> Result<serde_json::Value, GatewayError> {
    use serde_json::Value as J;
    Ok(match v {
        Value::Null => J::Null,
        Value::Bool(b) => J::Bool(*b),
        Value::Int(i) => J::from(*i),
        Value::Float(f) => serde_json::Number::from_f64(*f)
            .map(J::Number)
            .ok_or_else(|| GatewayError::Unrepresentable(format!("non-finite number {f}")))?,
        Value::Text(s) => J::String(s.clone()),
        Value::Bytes(_) => return Err(GatewayError::Unrepresentable("raw bytes under the json tag".into())),
        Value::Handle(h) => {
            return Err(GatewayError::Unrepresentable(format!("cache handle `{}` under the json tag", h.key())))
        }
        Value::List(items) => J::Array(items.iter().map(to_json).collect::<Result<_, _>>()?),
        Value::Record(m) => J::Object(
            m.iter()
                .map(|(k, v)| Ok((k.clone(), to_json(v)?)))
                .collect::<Result<_, GatewayError>>()?,
        ),
    })
}

fn from_json(v: serde_json::Value) -> Value {
    use serde_json::Value as J;
    match v {
        J::Null => Value::Null,
        J::Bool(b) => Value::Bool(b),
        J::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64().unwrap_or(f64::NAN)),
        },
        J::String(s) => Value::Text(s),
        J::Array(items) => Value::List(items.into_iter().map(from_json).collect()),
        J::Object(m) => Value::Record(m.into_iter().map(|(k, v)| (k, from_json(v))).collect::<BTreeMap<_, _>>()),
    }
}

pub fn encode_frame(message: &WireMessage, tag: FormatTag) -> Result<Vec<u8>, GatewayError> {
    let body = match tag {
        FormatTag::Json => serde_json::to_vec(&JsonEnvelope {
            topic: message.topic.clone(),
            what: message.what.clone(),
            correlation_id: message.correlation_id.clone(),
            payload: to_json(&message.payload)?,
        })
        .map_err(|e| GatewayError::Unrepresentable(e.to_string()))?,
        FormatTag::Binary => {
            if !message.topic.is_empty() || !message.what.is_empty() || message.correlation_id.is_some() {
                return Err(GatewayError::Unrepresentable(
                    "binary frames carry no topic, what or correlation id".into(),
                ));
            }
            match &message.payload {
                Value::Bytes(b) => b.to_vec(),
                other => return Err(GatewayError::Unrepresentable(format!("binary frame payload {other:?}"))),
            }
        }
    };
    let len = body.len() + 1;
    if len > MAX_FRAME_LEN {
        return Err(GatewayError::FrameTooLarge(len));
    }
    let mut out = Vec::with_capacity(HEADER + len);
    out.extend_from_slice(&(len as u32).to_be_bytes());
    out.push(tag.byte());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes the first frame in `bytes`, returning it and the bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(WireMessage, usize), GatewayError> {
    if bytes.len() < HEADER {
        return Err(GatewayError::NeedMoreBytes(HEADER - bytes.len()));
    }
    let len = u32::from_be_bytes(bytes[..HEADER].try_into().expect("four bytes")) as usize;
    if len == 0 {
        return Err(GatewayError::MalformedPayload("zero frame length".into()));
    }
    if len > MAX_FRAME_LEN {
        return Err(GatewayError::FrameTooLarge(len));
    }
    let total = HEADER + len;
    if bytes.len() < total {
        return Err(GatewayError::NeedMoreBytes(total - bytes.len()));
    }
    let body = &bytes[HEADER + 1..total];
    let message = match FormatTag::from_byte(bytes[HEADER])? {
        FormatTag::Json => {
            let env: JsonEnvelope =
                serde_json::from_slice(body).map_err(|e| GatewayError::MalformedPayload(e.to_string()))?;
            WireMessage {
                topic: env.topic,
                what: env.what,
                correlation_id: env.correlation_id,
                payload: from_json(env.payload),
            }
        }
        FormatTag::Binary => WireMessage::binary(body.to_vec()),
    };
    Ok((message, total))
}

/// Reassembles frames from arbitrarily split reads.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// The next complete frame, if one is buffered.
    pub fn next_message(&mut self) -> Result<Option<WireMessage>, GatewayError> {
        match decode_frame(&self.buf) {
            Ok((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            Err(GatewayError::NeedMoreBytes(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Handle;

    #[test]
    fn json_header_is_bit_exact() {
        let bytes = encode_frame(&WireMessage::new("a", "b"), FormatTag::Json).unwrap();
        let text = r#"{"topic":"a","what":"b","correlation_id":null,"payload":null}"#;
        assert_eq!(text.len(), 61);
        assert_eq!(&bytes[..5], &[0x00, 0x00, 0x00, 62, 0x01]);
        assert_eq!(&bytes[5..], text.as_bytes());
    }

    #[test]
    fn empty_binary_is_tag_only() {
        let bytes = encode_frame(&WireMessage::binary(Vec::new()), FormatTag::Binary).unwrap();
        assert_eq!(bytes, [0, 0, 0, 1, TAG_BINARY]);
        assert_eq!(decode_frame(&bytes).unwrap(), (WireMessage::binary(Vec::new()), 5));
    }

    #[test]
    fn oversized_payload_rejected() {
        let big = WireMessage::binary(vec![0; 17 * 1024 * 1024]);
        assert!(matches!(encode_frame(&big, FormatTag::Binary), Err(GatewayError::FrameTooLarge(_))));
        let header = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes();
        assert!(matches!(decode_frame(&header), Err(GatewayError::FrameTooLarge(_))));
    }

    #[test]
    fn roundtrips() {
        let msgs = [
            WireMessage::new("a", "b"),
            WireMessage::binary(Vec::new()),
            WireMessage::new("Service.X.echo", "echo").with_correlation("7").with_payload(Value::List(vec![
                Value::text("x"),
                Value::Float(1.5),
                Value::Int(-3),
                Value::record([("k", Value::Bool(true))]),
            ])),
        ];
        for m in msgs {
            let tag = if m.topic.is_empty() { FormatTag::Binary } else { FormatTag::Json };
            let bytes = encode_frame(&m, tag).unwrap();
            assert_eq!(decode_frame(&bytes).unwrap(), (m, bytes.len()));
        }
    }

    #[test]
    fn decode_errors() {
        let mut truncated = 10u32.to_be_bytes().to_vec();
        truncated.extend_from_slice(&[1, 2, 3, 4]);
        assert_eq!(decode_frame(&truncated[..4]), Err(GatewayError::NeedMoreBytes(10)));
        assert_eq!(decode_frame(&truncated), Err(GatewayError::NeedMoreBytes(6)));
        assert_eq!(decode_frame(&[0, 0, 0, 1, 0x09]), Err(GatewayError::BadTag(0x09)));
        assert!(matches!(decode_frame(&[0, 0, 0, 2, 1, b'{']), Err(GatewayError::MalformedPayload(_))));
        assert!(matches!(decode_frame(&[0, 0, 0, 0]), Err(GatewayError::MalformedPayload(_))));
    }

    #[test]
    fn unrepresentable() {
        let h = WireMessage::new("a", "b").with_payload(Value::Handle(Handle::new("k", vec![1u8])));
        assert!(matches!(encode_frame(&h, FormatTag::Json), Err(GatewayError::Unrepresentable(_))));
        let nan = WireMessage::new("a", "b").with_payload(Value::Float(f64::NAN));
        assert!(matches!(encode_frame(&nan, FormatTag::Json), Err(GatewayError::Unrepresentable(_))));
        assert!(matches!(
            encode_frame(&WireMessage::new("a", "b"), FormatTag::Binary),
            Err(GatewayError::Unrepresentable(_))
        ));
    }

    #[test]
    fn decoder_reassembles_byte_by_byte() {
        let a = WireMessage::new("t.a", "a");
        let b = WireMessage::binary(vec![1, 2, 3]);
        let mut stream = encode_frame(&a, FormatTag::Json).unwrap();
        stream.extend(encode_frame(&b, FormatTag::Binary).unwrap());
        let mut d = FrameDecoder::new();
        let mut out = Vec::new();
        for byte in stream {
            d.push(&[byte]);
            while let Some(m) = d.next_message().unwrap() {
                out.push(m);
            }
        }
        assert_eq!(out, [a, b]);
        assert_eq!(d.buffered(), 0);
    }
}
