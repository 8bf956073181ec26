//! Conformance of recorded allocation sub-traces to the hosting handshake.
//!
//! The accepted language, over message kinds, is
//!
//! ```text
//! HostingRequest AllocationDenied
//! HostingRequest ScQuery (ScReply | TrustEstablish ScIssued) (AllocationConfirm | AllocationDenied)
//! ```
//!
//! The first line covers requests refused before the certificate step
//! (negotiation, platform, resources and the like); the second covers a
//! confirmed allocation or a refusal on security level.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::wire::{MessageKind, ProtocolMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Start,
    Requested,
    Queried,
    Establishing,
    Certified,
    Confirmed,
    Denied,
}

fn step(state: State, kind: MessageKind) -> Option<State> {
    use MessageKind as K;
    use State as S;
    Some(match (state, kind) {
        (S::Start, K::HostingRequest) => S::Requested,
        (S::Requested, K::ScQuery) => S::Queried,
        (S::Requested, K::AllocationDenied) => S::Denied,
        (S::Queried, K::ScReply) => S::Certified,
        (S::Queried, K::TrustEstablish) => S::Establishing,
        (S::Establishing, K::ScIssued) => S::Certified,
        (S::Certified, K::AllocationConfirm) => S::Confirmed,
        (S::Certified, K::AllocationDenied) => S::Denied,
        _ => return None,
    })
}

/// Kinds that belong to the allocation handshake.
pub fn is_allocation_kind(kind: MessageKind) -> bool {
    use MessageKind as K;
    matches!(
        kind,
        K::HostingRequest
            | K::ScQuery
            | K::ScReply
            | K::TrustEstablish
            | K::ScIssued
            | K::AllocationConfirm
            | K::AllocationDenied
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Confirmed,
    Denied,
    /// `position` is the index of the first offending kind, or the trace
    /// length when the trace stopped early.
    Violation { position: usize, found: Option<MessageKind> },
}

pub fn check_allocation(kinds: &[MessageKind]) -> Verdict {
    let mut state = State::Start;
    for (i, &k) in kinds.iter().enumerate() {
        match step(state, k) {
            Some(next) => state = next,
            None => return Verdict::Violation { position: i, found: Some(k) },
        }
    }
    match state {
        State::Confirmed => Verdict::Confirmed,
        State::Denied => Verdict::Denied,
        _ => Verdict::Violation { position: kinds.len(), found: None },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub allocations: usize,
    pub confirmed: usize,
    pub denied: usize,
    pub violations: Vec<(String, Verdict)>,
}

/// Groups allocation messages by correlation id, in order of first
/// appearance, and checks each group.
pub fn check_trace<'a>(messages: impl IntoIterator<Item = &'a ProtocolMessage>) -> ConformanceReport {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<MessageKind>> = BTreeMap::new();
    for m in messages {
        if !is_allocation_kind(m.kind()) {
            continue;
        }
        let group = groups.entry(m.correlation_id.as_str()).or_insert_with(|| {
            order.push(m.correlation_id.as_str());
            Vec::new()
        });
        group.push(m.kind());
    }
    let mut report = ConformanceReport { allocations: order.len(), ..Default::default() };
    for id in order {
        match check_allocation(&groups[id]) {
            Verdict::Confirmed => report.confirmed += 1,
            Verdict::Denied => report.denied += 1,
            v => report.violations.push((id.to_owned(), v)),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use MessageKind as K;

    #[test]
    fn accepts_both_certificate_paths() {
        assert_eq!(check_allocation(&[K::HostingRequest, K::ScQuery, K::ScReply, K::AllocationConfirm]), Verdict::Confirmed);
        assert_eq!(
            check_allocation(&[K::HostingRequest, K::ScQuery, K::TrustEstablish, K::ScIssued, K::AllocationConfirm]),
            Verdict::Confirmed
        );
        assert_eq!(check_allocation(&[K::HostingRequest, K::AllocationDenied]), Verdict::Denied);
        assert_eq!(check_allocation(&[K::HostingRequest, K::ScQuery, K::ScReply, K::AllocationDenied]), Verdict::Denied);
    }

    #[test]
    fn rejects_skipped_or_extra_steps() {
        assert_eq!(
            check_allocation(&[K::HostingRequest, K::ScReply, K::AllocationConfirm]),
            Verdict::Violation { position: 1, found: Some(K::ScReply) }
        );
        assert_eq!(
            check_allocation(&[K::HostingRequest, K::ScQuery, K::TrustEstablish, K::AllocationConfirm]),
            Verdict::Violation { position: 3, found: Some(K::AllocationConfirm) }
        );
        assert_eq!(
            check_allocation(&[K::HostingRequest, K::ScQuery]),
            Verdict::Violation { position: 2, found: None }
        );
        assert_eq!(check_allocation(&[]), Verdict::Violation { position: 0, found: None });
    }

    #[test]
    fn empty_trace_has_no_allocations() {
        assert_eq!(check_trace(&[]), ConformanceReport::default());
    }
}
