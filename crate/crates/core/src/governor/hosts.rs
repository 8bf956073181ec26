//! Host registry and host profiler over the shared host database.
//!
//! The host database is also where the security governor keeps
//! certificates, so allocation, report ingestion and trust updates all go
//! through this one store.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::registry::ServiceDatabase;
use super::security::{self, TrustPolicy};
use crate::domain::{
    level_admits, ExecutionReport, HostId, HostProfile, Platform, ResourceVector, SecurityCertificate,
    ServiceDescription, ServiceId, SimTime,
};
use crate::wire::{DenialReason, MessageBody, MessageKind, ProtocolMessage, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("host {0} is already registered")]
    DuplicateHost(HostId),
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("host {host} does not host {service}")]
    NotHosted { host: HostId, service: ServiceId },
    #[error("host {0} already holds a certificate")]
    CertificateExists(HostId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "reason")]
pub enum AllocationOutcome {
    Confirmed,
    Denied(DenialReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationDecision {
    pub outcome: AllocationOutcome,
    /// Every message exchanged while deciding, request first.
    pub trace: Vec<ProtocolMessage>,
}

impl AllocationDecision {
    pub fn is_confirmed(&self) -> bool {
        self.outcome == AllocationOutcome::Confirmed
    }

    pub fn kinds(&self) -> Vec<MessageKind> {
        self.trace.iter().map(ProtocolMessage::kind).collect()
    }

    /// A denial decided before the host registry checks run.
    pub fn denied_early(host_id: &HostId, service_id: &ServiceId, correlation_id: &str, reason: DenialReason) -> Self {
        let request = hosting_request(host_id, service_id, correlation_id);
        let denied = denial(&request, host_id, service_id, reason);
        AllocationDecision { outcome: AllocationOutcome::Denied(reason), trace: vec![request, denied] }
    }
}

fn hosting_request(host_id: &HostId, service_id: &ServiceId, correlation_id: &str) -> ProtocolMessage {
    ProtocolMessage::new(
        Role::Host,
        correlation_id,
        MessageBody::HostingRequest { host_id: host_id.clone(), service_id: service_id.clone() },
    )
}

fn denial(req: &ProtocolMessage, host_id: &HostId, service_id: &ServiceId, reason: DenialReason) -> ProtocolMessage {
    req.reply(
        Role::Governor,
        MessageBody::AllocationDenied { host_id: host_id.clone(), service_id: service_id.clone(), reason },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EfficiencyWeights {
    pub availability: f64,
    pub rating: f64,
    pub trust: f64,
}

impl Default for EfficiencyWeights {
    fn default() -> Self {
        Self { availability: 0.5, rating: 0.3, trust: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostAssessment {
    pub host_id: HostId,
    /// `None` means unassessed: no reports yet.
    pub efficiency: Option<f64>,
    pub reports_considered: usize,
    /// Hosted services whose sensitivity exceeds the host's current level,
    /// typically after a demotion.
    pub over_level: Vec<ServiceId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Recorded,
    /// The report id was seen before; nothing changed.
    Duplicate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HostDatabase {
    hosts: BTreeMap<HostId, HostProfile>,
    reports: Vec<ExecutionReport>,
    #[serde(skip)]
    seen_reports: HashSet<String>,
}

impl HostDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reindex(&mut self) {
        self.seen_reports = self.reports.iter().map(|r| r.report_id.clone()).collect();
    }

    pub fn get(&self, id: &HostId) -> Option<&HostProfile> {
        self.hosts.get(id)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &HostProfile> + Clone {
        self.hosts.values()
    }

    pub fn reports(&self) -> &[ExecutionReport] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.hosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.is_empty()
    }

    pub fn register_host(
        &mut self,
        host_id: HostId,
        platform: Platform,
        capacity: ResourceVector,
        battery_mwh: u64,
        identity_attested: bool,
    ) -> Result<&HostProfile, HostError> {
        if self.hosts.contains_key(&host_id) {
            return Err(HostError::DuplicateHost(host_id));
        }
        let profile = HostProfile {
            host_id: host_id.clone(),
            platform,
            capacity,
            committed: ResourceVector::ZERO,
            battery_mwh,
            certificate: None,
            identity_attested,
            hosted: BTreeSet::new(),
            attempts: 0,
            successes: 0,
            availability_ratio: 0.0,
            rating_count: 0,
            mean_rating: None,
            alive: true,
        };
        Ok(self.hosts.entry(host_id).or_insert(profile))
    }

    pub fn get_certificate(&self, host_id: &HostId) -> Option<SecurityCertificate> {
        self.hosts.get(host_id).and_then(|h| h.certificate.clone())
    }

    pub fn issue_certificate(
        &mut self,
        host_id: &HostId,
        now: SimTime,
        policy: &TrustPolicy,
    ) -> Result<SecurityCertificate, HostError> {
        let host = self.hosts.get_mut(host_id).ok_or_else(|| HostError::UnknownHost(host_id.clone()))?;
        if host.certificate.is_some() {
            return Err(HostError::CertificateExists(host_id.clone()));
        }
        let cert = security::issue_certificate(host_id.clone(), host.identity_attested, now, policy);
        host.certificate = Some(cert.clone());
        Ok(cert)
    }

    /// Validates a hosting request: platform, then resources, then the
    /// certificate (issuing one if the host has none), then the level check.
    /// A denial leaves the database untouched apart from a newly issued
    /// certificate.
    pub fn request_hosting(
        &mut self,
        host_id: &HostId,
        service: &ServiceDescription,
        service_active: bool,
        correlation_id: &str,
        now: SimTime,
        policy: &TrustPolicy,
    ) -> Result<AllocationDecision, HostError> {
        let service_id = &service.service_id;
        let host = self.hosts.get(host_id).ok_or_else(|| HostError::UnknownHost(host_id.clone()))?;
        let request = hosting_request(host_id, service_id, correlation_id);
        let mut trace = vec![request.clone()];
        let deny = |mut trace: Vec<ProtocolMessage>, reason| {
            trace.push(denial(&request, host_id, service_id, reason));
            Ok(AllocationDecision { outcome: AllocationOutcome::Denied(reason), trace })
        };

        if !host.alive {
            return deny(trace, DenialReason::HostOffline);
        }
        if !service_active {
            return deny(trace, DenialReason::ServiceInactive);
        }
        if host.hosted.contains(service_id) {
            return deny(trace, DenialReason::AlreadyHosted);
        }
        if !host.platform.satisfies(&service.platform) {
            return deny(trace, DenialReason::Platform);
        }
        if !host.free().covers(&service.min_resources) {
            return deny(trace, DenialReason::Resources);
        }

        trace.push(request.reply(Role::Governor, MessageBody::ScQuery { host_id: host_id.clone() }));
        let cert = match host.certificate.clone() {
            Some(cert) => {
                trace.push(request.reply(Role::Governor, MessageBody::ScReply { certificate: cert.clone() }));
                cert
            }
            None => {
                trace.push(request.reply(Role::Governor, MessageBody::TrustEstablish { host_id: host_id.clone() }));
                let cert = self.issue_certificate(host_id, now, policy)?;
                trace.push(request.reply(Role::Governor, MessageBody::ScIssued { certificate: cert.clone() }));
                cert
            }
        };
        if !level_admits(cert.level, service.security_level) {
            return deny(trace, DenialReason::Security);
        }

        let host = self.hosts.get_mut(host_id).expect("checked above");
        host.hosted.insert(service_id.clone());
        host.committed = host.committed.saturating_add(&service.min_resources);
        trace.push(request.reply(
            Role::Governor,
            MessageBody::AllocationConfirm { host_id: host_id.clone(), service_id: service_id.clone() },
        ));
        Ok(AllocationDecision { outcome: AllocationOutcome::Confirmed, trace })
    }

    pub fn unhost(&mut self, host_id: &HostId, service: &ServiceDescription) -> Result<(), HostError> {
        let host = self.hosts.get_mut(host_id).ok_or_else(|| HostError::UnknownHost(host_id.clone()))?;
        if !host.hosted.remove(&service.service_id) {
            return Err(HostError::NotHosted { host: host_id.clone(), service: service.service_id.clone() });
        }
        host.committed = host
            .committed
            .checked_sub(&service.min_resources)
            .expect("committed always includes every hosted service");
        Ok(())
    }

    /// Marks a host gone and releases everything it hosted.
    pub fn mark_departed(&mut self, host_id: &HostId, services: &ServiceDatabase) -> Result<Vec<ServiceId>, HostError> {
        let hosted: Vec<ServiceId> = self
            .hosts
            .get(host_id)
            .ok_or_else(|| HostError::UnknownHost(host_id.clone()))?
            .hosted
            .iter()
            .cloned()
            .collect();
        for id in &hosted {
            if let Some(desc) = services.description(id) {
                self.unhost(host_id, desc)?;
            }
        }
        let host = self.hosts.get_mut(host_id).expect("checked above");
        host.hosted.clear();
        host.committed = ResourceVector::ZERO;
        host.alive = false;
        Ok(hosted)
    }

    pub fn set_battery(&mut self, host_id: &HostId, battery_mwh: u64) -> Result<(), HostError> {
        let host = self.hosts.get_mut(host_id).ok_or_else(|| HostError::UnknownHost(host_id.clone()))?;
        host.battery_mwh = battery_mwh;
        Ok(())
    }

    /// Appends a report and updates the host's counters and certificate.
    /// Service existence is checked by the caller.
    pub fn ingest_report(&mut self, report: ExecutionReport, policy: &TrustPolicy) -> Result<IngestOutcome, HostError> {
        let host = self
            .hosts
            .get_mut(&report.host_id)
            .ok_or_else(|| HostError::UnknownHost(report.host_id.clone()))?;
        if !self.seen_reports.insert(report.report_id.clone()) {
            return Ok(IngestOutcome::Duplicate);
        }
        host.attempts += 1;
        if report.outcome.is_success() {
            host.successes += 1;
        }
        host.availability_ratio = host.successes as f64 / host.attempts as f64;
        if let Some(r) = report.rating {
            let r = f64::from(r.clamp(1, 5));
            let n = host.rating_count as f64;
            host.mean_rating = Some(host.mean_rating.map_or(r, |m| (m * n + r) / (n + 1.0)));
            host.rating_count += 1;
        }
        if let Some(cert) = &host.certificate {
            host.certificate =
                Some(security::update_trust(cert, &report, policy).expect("report routed to its own host"));
        }
        self.reports.push(report);
        Ok(IngestOutcome::Recorded)
    }

    /// Efficiency per host over its last `window` reports, in host id order.
    ///
    /// The rating term is the mean normalized rating of rated reports in the
    /// window; with no ratings it falls back to the window's success ratio.
    pub fn assess_hosts(
        &self,
        window: usize,
        weights: &EfficiencyWeights,
        services: &ServiceDatabase,
    ) -> Vec<HostAssessment> {
        let mut per_host: BTreeMap<&HostId, Vec<&ExecutionReport>> = BTreeMap::new();
        for report in self.reports.iter().rev() {
            let bucket = per_host.entry(&report.host_id).or_default();
            if bucket.len() < window {
                bucket.push(report);
            }
        }
        let weight_sum = weights.availability + weights.rating + weights.trust;
        self.hosts
            .values()
            .map(|host| {
                let recent = per_host.get(&host.host_id).map(Vec::as_slice).unwrap_or_default();
                let efficiency = (!recent.is_empty() && weight_sum > 0.0).then(|| {
                    let n = recent.len() as f64;
                    let availability = recent.iter().filter(|r| r.outcome.is_success()).count() as f64 / n;
                    let ratings: Vec<f64> =
                        recent.iter().filter_map(|r| r.rating).map(|r| (f64::from(r.clamp(1, 5)) - 1.0) / 4.0).collect();
                    let rating = if ratings.is_empty() {
                        availability
                    } else {
                        ratings.iter().sum::<f64>() / ratings.len() as f64
                    };
                    let trust = host.certificate.as_ref().map_or(0.0, |c| c.trust_score);
                    (weights.availability * availability + weights.rating * rating + weights.trust * trust) / weight_sum
                });
                let level = host.certificate.as_ref().map(|c| c.level);
                let over_level = host
                    .hosted
                    .iter()
                    .filter(|id| {
                        services
                            .description(id)
                            .is_some_and(|d| level.is_none_or(|l| !level_admits(l, d.security_level)))
                    })
                    .cloned()
                    .collect();
                HostAssessment {
                    host_id: host.host_id.clone(),
                    efficiency,
                    reports_considered: recent.len(),
                    over_level,
                }
            })
            .collect()
    }

    /// Violations of the database invariants, as readable strings.
    pub fn invariant_violations(&self, services: &ServiceDatabase) -> Vec<String> {
        let mut out = Vec::new();
        for h in self.hosts.values() {
            if !h.capacity.covers(&h.committed) {
                out.push(format!("{}: committed {} exceeds capacity {}", h.host_id, h.committed, h.capacity));
            }
            let expected = h
                .hosted
                .iter()
                .filter_map(|id| services.description(id))
                .fold(ResourceVector::ZERO, |acc, d| acc.saturating_add(&d.min_resources));
            if expected != h.committed {
                out.push(format!("{}: committed {} != sum of hosted minimums {}", h.host_id, h.committed, expected));
            }
            if h.successes > h.attempts {
                out.push(format!("{}: successes exceed attempts", h.host_id));
            }
            if let Some(c) = &h.certificate {
                if !(0.0..=1.0).contains(&c.trust_score) {
                    out.push(format!("{}: trust score {} out of range", h.host_id, c.trust_score));
                }
                if c.successes > c.attempts {
                    out.push(format!("{}: certificate successes exceed attempts", h.host_id));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        DeveloperId, FailureReason, Money, Outcome, PlatformRequirement, Pseudonym, SecurityLevel, Share,
    };

    fn service(id: &str, level: SecurityLevel, need: ResourceVector) -> ServiceDescription {
        ServiceDescription {
            service_id: ServiceId::new(id),
            developer_id: DeveloperId::new("dev"),
            name: id.into(),
            description: String::new(),
            functionality_tag: id.into(),
            input_spec: String::new(),
            output_spec: String::new(),
            binding_method: String::new(),
            security_level: level,
            platform: PlatformRequirement { os_name: "Android".into(), min_version: "3.2".parse().unwrap() },
            min_resources: need,
            price_per_invocation: Money(1000),
            developer_share: Share::from_fraction(0.4).unwrap(),
            dependencies: vec![],
            exec_ms: 0,
        }
    }

    fn android() -> Platform {
        Platform { os_name: "Android".into(), version: "4.1".parse().unwrap() }
    }

    fn db_with_host(capacity: ResourceVector) -> HostDatabase {
        let mut db = HostDatabase::new();
        db.register_host(HostId::new("h"), android(), capacity, 10_000, false).unwrap();
        db
    }

    fn report(id: &str, success: bool, rating: Option<u8>) -> ExecutionReport {
        ExecutionReport {
            report_id: id.into(),
            host_id: HostId::new("h"),
            service_id: ServiceId::new("s"),
            requester_pseudonym: Pseudonym::new("anon-1"),
            started_at: SimTime::ZERO,
            duration_ms: 10,
            energy_used_mwh: 5,
            outcome: if success { Outcome::Success } else { Outcome::Failure(FailureReason::Execution) },
            rating,
        }
    }

    const BIG: ResourceVector = ResourceVector::new(4096, 512, 512, 10_000);

    #[test]
    fn new_host_has_empty_state() {
        let db = db_with_host(BIG);
        let h = db.get(&HostId::new("h")).unwrap();
        assert!(h.hosted.is_empty());
        assert_eq!(h.committed, ResourceVector::ZERO);
        assert!(h.certificate.is_none());
    }

    #[test]
    fn duplicate_registration_fails() {
        let mut db = db_with_host(BIG);
        assert_eq!(
            db.register_host(HostId::new("h"), android(), BIG, 1, false).unwrap_err(),
            HostError::DuplicateHost(HostId::new("h"))
        );
    }

    #[test]
    fn fresh_host_gets_trust_established_for_low_service() {
        let mut db = db_with_host(BIG);
        let s = service("s", SecurityLevel::Low, ResourceVector::new(512, 2, 5, 500));
        let d = db
            .request_hosting(&HostId::new("h"), &s, true, "c1", SimTime::ZERO, &TrustPolicy::default())
            .unwrap();
        assert!(d.is_confirmed());
        assert_eq!(
            d.kinds(),
            [
                MessageKind::HostingRequest,
                MessageKind::ScQuery,
                MessageKind::TrustEstablish,
                MessageKind::ScIssued,
                MessageKind::AllocationConfirm
            ]
        );
        assert!(d.trace.iter().all(|m| m.correlation_id == "c1"));
        assert_eq!(db.get(&HostId::new("h")).unwrap().committed, s.min_resources);
    }

    #[test]
    fn fresh_host_cannot_take_medium_service() {
        let mut db = db_with_host(BIG);
        let s = service("s", SecurityLevel::Medium, ResourceVector::new(1, 1, 1, 1));
        let d = db
            .request_hosting(&HostId::new("h"), &s, true, "c1", SimTime::ZERO, &TrustPolicy::default())
            .unwrap();
        assert_eq!(d.outcome, AllocationOutcome::Denied(DenialReason::Security));
        let h = db.get(&HostId::new("h")).unwrap();
        assert!(h.hosted.is_empty());
        assert_eq!(h.committed, ResourceVector::ZERO);
        // second attempt reuses the certificate
        let d = db
            .request_hosting(&HostId::new("h"), &s, true, "c2", SimTime::ZERO, &TrustPolicy::default())
            .unwrap();
        assert!(d.kinds().contains(&MessageKind::ScReply));
    }

    #[test]
    fn one_mb_host_is_denied_two_mb_service() {
        let mut db = db_with_host(ResourceVector::new(4096, 1, 512, 10_000));
        let s = service("s", SecurityLevel::Low, ResourceVector::new(0, 2, 0, 0));
        let d = db
            .request_hosting(&HostId::new("h"), &s, true, "c1", SimTime::ZERO, &TrustPolicy::default())
            .unwrap();
        assert_eq!(d.outcome, AllocationOutcome::Denied(DenialReason::Resources));
        assert_eq!(d.kinds(), [MessageKind::HostingRequest, MessageKind::AllocationDenied]);
    }

    #[test]
    fn platform_checked_before_resources() {
        let mut db = db_with_host(ResourceVector::ZERO);
        let mut s = service("s", SecurityLevel::Low, ResourceVector::new(1, 1, 1, 1));
        s.platform.min_version = "9.0".parse().unwrap();
        let d = db
            .request_hosting(&HostId::new("h"), &s, true, "c", SimTime::ZERO, &TrustPolicy::default())
            .unwrap();
        assert_eq!(d.outcome, AllocationOutcome::Denied(DenialReason::Platform));
    }

    #[test]
    fn unknown_host_is_an_error_not_a_denial() {
        let mut db = HostDatabase::new();
        let s = service("s", SecurityLevel::Low, ResourceVector::ZERO);
        assert!(db
            .request_hosting(&HostId::new("ghost"), &s, true, "c", SimTime::ZERO, &TrustPolicy::default())
            .is_err());
    }

    #[test]
    fn unhost_restores_commitment_and_rejects_repeats() {
        let mut db = db_with_host(BIG);
        let s = service("s", SecurityLevel::Low, ResourceVector::new(10, 2, 3, 4));
        db.request_hosting(&HostId::new("h"), &s, true, "c", SimTime::ZERO, &TrustPolicy::default())
            .unwrap();
        db.unhost(&HostId::new("h"), &s).unwrap();
        assert_eq!(db.get(&HostId::new("h")).unwrap().committed, ResourceVector::ZERO);
        assert!(matches!(db.unhost(&HostId::new("h"), &s), Err(HostError::NotHosted { .. })));
    }

    #[test]
    fn availability_and_rating_counters() {
        let mut db = db_with_host(BIG);
        let p = TrustPolicy::default();
        db.ingest_report(report("r1", true, Some(5)), &p).unwrap();
        let h = db.get(&HostId::new("h")).unwrap();
        assert_eq!(h.availability_ratio, 1.0);
        assert_eq!(h.mean_rating, Some(5.0));
        for (i, ok) in [false, true, true].into_iter().enumerate() {
            db.ingest_report(report(&format!("r{}", i + 2), ok, None), &p).unwrap();
        }
        assert_eq!(db.get(&HostId::new("h")).unwrap().availability_ratio, 0.75);
        assert_eq!(db.ingest_report(report("r1", true, Some(1)), &p).unwrap(), IngestOutcome::Duplicate);
        assert_eq!(db.get(&HostId::new("h")).unwrap().attempts, 4);
    }

    #[test]
    fn assessment_of_unassessed_and_fixture_hosts() {
        let mut db = db_with_host(BIG);
        let services = ServiceDatabase::new();
        let w = EfficiencyWeights::default();
        let a = db.assess_hosts(10, &w, &services);
        assert_eq!(a[0].efficiency, None);

        let p = TrustPolicy::default();
        db.issue_certificate(&HostId::new("h"), SimTime::ZERO, &p).unwrap();
        db.ingest_report(report("a", true, Some(5)), &p).unwrap();
        db.ingest_report(report("b", false, None), &p).unwrap();
        db.ingest_report(report("c", true, Some(3)), &p).unwrap();
        // trust: 0 -> o=1.0 -> 0.1; o=0 -> 0.09; o=0.7*1+0.3*0.5=0.85 -> 0.081+0.085=0.166
        let trust = 0.9 * (0.9 * 0.1) + 0.1 * 0.85;
        let availability = 2.0 / 3.0;
        let rating = (1.0 + 0.5) / 2.0;
        let expected = 0.5 * availability + 0.3 * rating + 0.2 * trust;
        let got = db.assess_hosts(10, &w, &services)[0].efficiency.unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        // window 1 only sees the last report
        let last = db.assess_hosts(1, &w, &services)[0].clone();
        assert_eq!(last.reports_considered, 1);
        assert!((last.efficiency.unwrap() - (0.5 + 0.3 * 0.5 + 0.2 * trust)).abs() < 1e-12);
    }

    #[test]
    fn perfect_history_scores_one() {
        let mut db = db_with_host(BIG);
        let p = TrustPolicy::default();
        db.issue_certificate(&HostId::new("h"), SimTime::ZERO, &p).unwrap();
        for i in 0..400 {
            db.ingest_report(report(&format!("r{i}"), true, Some(5)), &p).unwrap();
        }
        let a = db.assess_hosts(20, &EfficiencyWeights::default(), &ServiceDatabase::new());
        assert_eq!(a[0].efficiency, Some(1.0));
    }

    #[test]
    fn double_issue_is_rejected() {
        let mut db = db_with_host(BIG);
        let p = TrustPolicy::default();
        db.issue_certificate(&HostId::new("h"), SimTime::ZERO, &p).unwrap();
        assert_eq!(
            db.issue_certificate(&HostId::new("h"), SimTime::ZERO, &p),
            Err(HostError::CertificateExists(HostId::new("h")))
        );
        assert!(db.get_certificate(&HostId::new("nobody")).is_none());
    }
}
