//! Messaging gateway: the only place that knows about wire encoding.
//!
//! Remote services are bridged onto the bus as REMOTE registry entries.
//! Calls to them are framed and written to a TCP peer; correlated replies
//! are re-posted on the bus.

mod adapter;
mod frame;
mod peer;

use thiserror::Error;

use crate::registry::RegistryError;

pub use adapter::{
    backoff_delays, parse_adapter_manifest, AdapterConfig, Gateway, LinkStatus, MessagingPattern, BACKOFF_CAP,
    BACKOFF_START, HELLO_TOPIC, SEND_QUEUE_CAPACITY,
};
pub use frame::{decode_frame, encode_frame, FormatTag, FrameDecoder, WireMessage, MAX_FRAME_LEN, TAG_BINARY, TAG_JSON};
pub use peer::{EchoPeer, PeerOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("message not representable: {0}")]
    Unrepresentable(String),
    #[error("frame length {0} exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("incomplete frame: {0} more bytes needed")]
    NeedMoreBytes(usize),
    #[error("unknown format tag 0x{0:02x}")]
    BadTag(u8),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("cannot connect to {endpoint}: {reason}")]
    ConnectFailed { endpoint: String, reason: String },
    #[error("peer speaks {theirs}, adapter expects {ours}")]
    PatternMismatch { ours: String, theirs: String },
    #[error("adapter config: {0}")]
    Config(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}
