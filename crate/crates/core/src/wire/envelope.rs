//! Newline-delimited JSON envelope for protocol messages.
//!
//! Each record is one JSON object on one line:
//! `{"correlation_id":..,"kind":..,"payload":{..},"sender":..,"v":1}`.
//! Keys are emitted in sorted order so traces diff cleanly.

use serde_json::Value;
use thiserror::Error;

use super::message::{MessageKind, ProtocolMessage};

pub const ENVELOPE_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("record is not valid UTF-8")]
    Encoding,
    #[error("record spans more than one line")]
    MultiLine,
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unsupported envelope version {0}")]
    UnsupportedVersion(u64),
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<EnvelopeError>,
    },
}

pub fn encode_envelope(msg: &ProtocolMessage) -> Vec<u8> {
    let mut value = serde_json::to_value(msg).expect("protocol messages always serialize");
    if let Value::Object(map) = &mut value {
        map.insert("v".to_owned(), Value::from(ENVELOPE_VERSION));
    }
    let mut out = serde_json::to_vec(&value).expect("json value always serializes");
    out.push(b'\n');
    out
}

/// Decodes exactly one record. A single trailing newline is accepted.
pub fn decode_envelope(bytes: &[u8]) -> Result<ProtocolMessage, EnvelopeError> {
    let text = std::str::from_utf8(bytes).map_err(|_| EnvelopeError::Encoding)?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let text = text.strip_suffix('\r').unwrap_or(text);
    if text.contains('\n') {
        return Err(EnvelopeError::MultiLine);
    }
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| EnvelopeError::Malformed(e.to_string()))?;
    let map = value
        .as_object_mut()
        .ok_or_else(|| EnvelopeError::Malformed("record is not an object".into()))?;
    match map.remove("v") {
        Some(v) => match v.as_u64() {
            Some(ENVELOPE_VERSION) => {}
            Some(other) => return Err(EnvelopeError::UnsupportedVersion(other)),
            None => return Err(EnvelopeError::Malformed("`v` is not an integer".into())),
        },
        None => return Err(EnvelopeError::Malformed("missing `v`".into())),
    }
    let kind = map
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| EnvelopeError::Malformed("missing `kind`".into()))?;
    if MessageKind::from_name(kind).is_none() {
        return Err(EnvelopeError::UnknownKind(kind.to_owned()));
    }
    serde_json::from_value(value).map_err(|e| EnvelopeError::Malformed(e.to_string()))
}

/// Decodes a whole trace dump; blank lines are skipped.
pub fn decode_stream(text: &str) -> Result<Vec<ProtocolMessage>, EnvelopeError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            decode_envelope(line.as_bytes())
                .map_err(|e| EnvelopeError::AtLine { line: i + 1, source: Box::new(e) })
        })
        .collect()
}

pub fn encode_stream<'a>(msgs: impl IntoIterator<Item = &'a ProtocolMessage>) -> Vec<u8> {
    msgs.into_iter().flat_map(encode_envelope).collect()
}
