//! Canonical checksummed text form of the governor databases.
//!
//! ```text
//! momcc-snapshot v1
//! sha256 <hex digest of everything after this line>
//! { pretty-printed JSON body }
//! ```
//!
//! Maps are ordered, so the same state always produces the same bytes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::billing::Billing;
use super::hosts::HostDatabase;
use super::profiler::Escalation;
use super::registry::ServiceDatabase;

pub const SNAPSHOT_HEADER: &str = "momcc-snapshot v1";
pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernorState {
    pub format_version: u32,
    pub services: ServiceDatabase,
    pub hosts: HostDatabase,
    pub billing: Billing,
    pub escalations: Vec<Escalation>,
}

impl GovernorState {
    /// Rebuilds the lookup indexes that are not persisted.
    pub fn reindex(&mut self) {
        self.services.reindex();
        self.hosts.reindex();
        self.billing.reindex();
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a snapshot: expected header `{SNAPSHOT_HEADER}`")]
    MissingHeader,
    #[error("snapshot has no checksum line")]
    MissingChecksum,
    #[error("integrity check failed: checksum {expected} but content hashes to {actual}")]
    Integrity { expected: String, actual: String },
    #[error("unsupported snapshot format_version {0}")]
    UnsupportedVersion(u32),
    #[error("snapshot body: {0}")]
    Body(#[from] serde_json::Error),
}

fn digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

pub fn encode_snapshot(state: &GovernorState) -> String {
    let mut body = serde_json::to_string_pretty(state).expect("governor state is always serializable");
    body.push('\n');
    format!("{SNAPSHOT_HEADER}\nsha256 {}\n{body}", digest(&body))
}

pub fn decode_snapshot(text: &str) -> Result<GovernorState, SnapshotError> {
    let rest = text.strip_prefix(SNAPSHOT_HEADER).and_then(|r| r.strip_prefix('\n')).ok_or(SnapshotError::MissingHeader)?;
    let (checksum_line, body) = rest.split_once('\n').ok_or(SnapshotError::MissingChecksum)?;
    let expected = checksum_line.strip_prefix("sha256 ").ok_or(SnapshotError::MissingChecksum)?.trim().to_owned();
    let actual = digest(body);
    if expected != actual {
        return Err(SnapshotError::Integrity { expected, actual });
    }
    let mut state: GovernorState = serde_json::from_str(body)?;
    if state.format_version != SNAPSHOT_FORMAT_VERSION {
        return Err(SnapshotError::UnsupportedVersion(state.format_version));
    }
    state.reindex();
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::governor::billing::BillingPolicy;

    fn empty() -> GovernorState {
        GovernorState {
            format_version: SNAPSHOT_FORMAT_VERSION,
            services: ServiceDatabase::new(),
            hosts: HostDatabase::new(),
            billing: Billing::new(BillingPolicy::default()),
            escalations: vec![],
        }
    }

    #[test]
    fn empty_state_round_trips() {
        let text = encode_snapshot(&empty());
        assert!(text.starts_with("momcc-snapshot v1\nsha256 "));
        assert_eq!(decode_snapshot(&text).unwrap(), empty());
    }

    #[test]
    fn truncation_and_tampering_are_integrity_errors() {
        let text = encode_snapshot(&empty());
        let truncated = &text[..text.len() - 10];
        assert!(matches!(decode_snapshot(truncated), Err(SnapshotError::Integrity { .. })));
        let tampered = text.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(decode_snapshot(&tampered), Err(SnapshotError::Integrity { .. })));
        assert!(matches!(decode_snapshot("hello"), Err(SnapshotError::MissingHeader)));
        assert!(matches!(decode_snapshot("momcc-snapshot v1\n"), Err(SnapshotError::MissingChecksum)));
    }
}
