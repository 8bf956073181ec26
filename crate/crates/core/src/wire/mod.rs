//! Wire formats: the host-requirements XML and the protocol envelope.

pub mod envelope;
pub mod message;
pub mod xml;

pub use envelope::{decode_envelope, decode_stream, encode_envelope, encode_stream, EnvelopeError};
pub use message::{
    DenialReason, DiscoveryResult, HostEndpoint, MessageBody, MessageKind, ProtocolMessage, Role,
    ServiceListing,
};
pub use xml::{decode_requirements, encode_requirements, HostRequirementsMessage, XmlError};
