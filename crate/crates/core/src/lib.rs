//! Market-oriented mobile service hosting: a service governor (registry,
//! host registry and profiler, security governor, billing, service
//! profiler), the message protocol between market participants, and a
//! deterministic discrete-event simulator of hosts and requesters.

pub mod agents;
pub mod conformance;
pub mod domain;
pub mod engine;
pub mod governor;
pub mod wire;
