//! Protocol messages exchanged between developers, hosts, requesters and
//! the governor.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{
    ExecutionReport, HostId, Money, Outcome, Platform, Pseudonym, PublicServiceDescription,
    ResourceVector, SecurityCertificate, SecurityLevel, ServiceId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Developer,
    Host,
    Requester,
    Governor,
}

/// Why the host registry refused an allocation. Ordered by check order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenialReason {
    HostOffline,
    ServiceInactive,
    AlreadyHosted,
    Negotiation,
    Platform,
    Resources,
    Security,
}

impl fmt::Display for DenialReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DenialReason::HostOffline => "host_offline",
            DenialReason::ServiceInactive => "service_inactive",
            DenialReason::AlreadyHosted => "already_hosted",
            DenialReason::Negotiation => "negotiation",
            DenialReason::Platform => "platform",
            DenialReason::Resources => "resources",
            DenialReason::Security => "security",
        };
        f.write_str(s)
    }
}

/// A hostable service as offered to a browsing host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceListing {
    pub service: PublicServiceDescription,
    /// What the host earns per successful invocation under current terms.
    pub host_revenue: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostEndpoint {
    pub host_id: HostId,
    pub level: SecurityLevel,
    pub trust_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub service: PublicServiceDescription,
    /// Live hosts of the service, best first.
    pub hosts: Vec<HostEndpoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    ListServicesRequest,
    ListServicesReply,
    HostingRequest,
    ScQuery,
    ScReply,
    TrustEstablish,
    ScIssued,
    AllocationConfirm,
    AllocationDenied,
    DiscoveryQuery,
    DiscoveryReply,
    Invoke,
    InvokeResult,
    ExecutionReportMsg,
    RateService,
}

impl MessageKind {
    pub const ALL: [MessageKind; 15] = [
        MessageKind::ListServicesRequest,
        MessageKind::ListServicesReply,
        MessageKind::HostingRequest,
        MessageKind::ScQuery,
        MessageKind::ScReply,
        MessageKind::TrustEstablish,
        MessageKind::ScIssued,
        MessageKind::AllocationConfirm,
        MessageKind::AllocationDenied,
        MessageKind::DiscoveryQuery,
        MessageKind::DiscoveryReply,
        MessageKind::Invoke,
        MessageKind::InvokeResult,
        MessageKind::ExecutionReportMsg,
        MessageKind::RateService,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::ListServicesRequest => "ListServicesRequest",
            MessageKind::ListServicesReply => "ListServicesReply",
            MessageKind::HostingRequest => "HostingRequest",
            MessageKind::ScQuery => "ScQuery",
            MessageKind::ScReply => "ScReply",
            MessageKind::TrustEstablish => "TrustEstablish",
            MessageKind::ScIssued => "ScIssued",
            MessageKind::AllocationConfirm => "AllocationConfirm",
            MessageKind::AllocationDenied => "AllocationDenied",
            MessageKind::DiscoveryQuery => "DiscoveryQuery",
            MessageKind::DiscoveryReply => "DiscoveryReply",
            MessageKind::Invoke => "Invoke",
            MessageKind::InvokeResult => "InvokeResult",
            MessageKind::ExecutionReportMsg => "ExecutionReportMsg",
            MessageKind::RateService => "RateService",
        }
    }

    pub fn from_name(name: &str) -> Option<MessageKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum MessageBody {
    ListServicesRequest { host_id: HostId, free: ResourceVector, platform: Platform },
    ListServicesReply { services: Vec<ServiceListing> },
    HostingRequest { host_id: HostId, service_id: ServiceId },
    ScQuery { host_id: HostId },
    ScReply { certificate: SecurityCertificate },
    TrustEstablish { host_id: HostId },
    ScIssued { certificate: SecurityCertificate },
    AllocationConfirm { host_id: HostId, service_id: ServiceId },
    AllocationDenied { host_id: HostId, service_id: ServiceId, reason: DenialReason },
    DiscoveryQuery { query: String, requester: Pseudonym },
    DiscoveryReply { results: Vec<DiscoveryResult> },
    Invoke { service_id: ServiceId, host_id: HostId, requester: Pseudonym },
    InvokeResult { service_id: ServiceId, host_id: HostId, outcome: Outcome, duration_ms: u64 },
    ExecutionReportMsg { report: ExecutionReport },
    RateService { service_id: ServiceId, host_id: HostId, rating: u8 },
}

impl MessageBody {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessageBody::ListServicesRequest { .. } => MessageKind::ListServicesRequest,
            MessageBody::ListServicesReply { .. } => MessageKind::ListServicesReply,
            MessageBody::HostingRequest { .. } => MessageKind::HostingRequest,
            MessageBody::ScQuery { .. } => MessageKind::ScQuery,
            MessageBody::ScReply { .. } => MessageKind::ScReply,
            MessageBody::TrustEstablish { .. } => MessageKind::TrustEstablish,
            MessageBody::ScIssued { .. } => MessageKind::ScIssued,
            MessageBody::AllocationConfirm { .. } => MessageKind::AllocationConfirm,
            MessageBody::AllocationDenied { .. } => MessageKind::AllocationDenied,
            MessageBody::DiscoveryQuery { .. } => MessageKind::DiscoveryQuery,
            MessageBody::DiscoveryReply { .. } => MessageKind::DiscoveryReply,
            MessageBody::Invoke { .. } => MessageKind::Invoke,
            MessageBody::InvokeResult { .. } => MessageKind::InvokeResult,
            MessageBody::ExecutionReportMsg { .. } => MessageKind::ExecutionReportMsg,
            MessageBody::RateService { .. } => MessageKind::RateService,
        }
    }
}

/// One message on the wire. Replies reuse the request's `correlation_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub sender: Role,
    pub correlation_id: String,
    #[serde(flatten)]
    pub body: MessageBody,
}

impl ProtocolMessage {
    pub fn new(sender: Role, correlation_id: impl Into<String>, body: MessageBody) -> Self {
        Self { sender, correlation_id: correlation_id.into(), body }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    /// Builds a reply that carries this message's correlation id.
    pub fn reply(&self, sender: Role, body: MessageBody) -> ProtocolMessage {
        ProtocolMessage::new(sender, self.correlation_id.clone(), body)
    }
}
