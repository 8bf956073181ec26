#![allow(dead_code)]

use momcc_core::domain::{
    DeveloperId, ExecutionReport, HostId, Money, Outcome, Platform, PlatformRequirement, Pseudonym, ResourceVector,
    SecurityLevel, ServiceDescription, ServiceId, Share, SimTime, Version,
};
use proptest::prelude::*;

pub fn service(id: &str, level: SecurityLevel, need: ResourceVector) -> ServiceDescription {
    ServiceDescription {
        service_id: ServiceId::new(id),
        developer_id: DeveloperId::new("dev"),
        name: format!("{id} service"),
        description: format!("does {id}"),
        functionality_tag: id.to_owned(),
        input_spec: "text".into(),
        output_spec: "text".into(),
        binding_method: "rest".into(),
        security_level: level,
        platform: PlatformRequirement { os_name: "Android".into(), min_version: "2.0".parse().unwrap() },
        min_resources: need,
        price_per_invocation: Money::from_minor(100),
        developer_share: Share::from_fraction(0.4).unwrap(),
        dependencies: vec![],
        exec_ms: 5,
    }
}

pub fn android(version: &str) -> Platform {
    Platform { os_name: "Android".into(), version: version.parse().unwrap() }
}

pub fn report(id: &str, host: &str, service: &str, outcome: Outcome, rating: Option<u8>) -> ExecutionReport {
    ExecutionReport {
        report_id: id.to_owned(),
        host_id: HostId::new(host),
        service_id: ServiceId::new(service),
        requester_pseudonym: Pseudonym::new("anon-0"),
        started_at: SimTime::ZERO,
        duration_ms: 10,
        energy_used_mwh: 1,
        outcome,
        rating,
    }
}

pub fn resource_vector(max: u64) -> impl Strategy<Value = ResourceVector> {
    (0..=max, 0..=max, 0..=max, 0..=max).prop_map(|(c, m, s, e)| ResourceVector::new(c, m, s, e))
}

pub fn version_parts() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..20, 1..=3)
}

pub fn version() -> impl Strategy<Value = Version> {
    version_parts().prop_map(|p| Version::new(&p).unwrap())
}

pub fn level() -> impl Strategy<Value = SecurityLevel> {
    prop::sample::select(SecurityLevel::ALL.to_vec())
}

pub fn outcome() -> impl Strategy<Value = Outcome> {
    use momcc_core::domain::FailureReason::*;
    prop_oneof![
        3 => Just(Outcome::Success),
        1 => prop::sample::select(vec![Energy, Security, Dependency, Execution, NotHosted]).prop_map(Outcome::Failure),
    ]
}

pub fn rating() -> impl Strategy<Value = Option<u8>> {
    prop::option::of(1u8..=5)
}
