//! Service profiler: per-service quality over recent reports, substitution of
//! failing services, and malfunction escalation to developers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::registry::ServiceDatabase;
use crate::domain::{
    DeveloperId, ExecutionReport, FailureReason, HostId, Outcome, ServiceDescription, ServiceId, SimTime,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfilerPolicy {
    pub failure_threshold: f64,
    pub window: usize,
    /// Simulated seconds between sweeps in the engine.
    pub sweep_interval_s: u64,
}

impl Default for ProfilerPolicy {
    fn default() -> Self {
        Self { failure_threshold: 0.3, window: 20, sweep_interval_s: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfilerError {
    #[error("unknown service {0}")]
    UnknownService(ServiceId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceStats {
    pub reports: usize,
    /// Share of reports where a host was there to run the service.
    pub availability: f64,
    pub mean_latency_ms: f64,
    pub failure_rate: f64,
    pub vulnerability_flags: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ServiceAssessment {
    Unassessed,
    Assessed(ServiceStats),
}

impl ServiceAssessment {
    pub fn stats(&self) -> Option<&ServiceStats> {
        match self {
            ServiceAssessment::Assessed(s) => Some(s),
            ServiceAssessment::Unassessed => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub deprecated: ServiceId,
    pub replacement: Option<ServiceId>,
}

/// What a host tells the governor about a failure. There is deliberately no
/// field for the requester.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalfunctionDetail {
    pub host_id: HostId,
    pub reason: FailureReason,
    pub at: SimTime,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escalation {
    pub service_id: ServiceId,
    pub developer_id: DeveloperId,
    pub detail: MalfunctionDetail,
}

fn recent<'a>(reports: &'a [ExecutionReport], service_id: &ServiceId, window: usize) -> Vec<&'a ExecutionReport> {
    let mut out: Vec<_> = reports.iter().rev().filter(|r| &r.service_id == service_id).take(window).collect();
    out.reverse();
    out
}

fn stats_of(window: &[&ExecutionReport]) -> ServiceAssessment {
    if window.is_empty() {
        return ServiceAssessment::Unassessed;
    }
    let n = window.len() as f64;
    let count = |pred: &dyn Fn(&Outcome) -> bool| window.iter().filter(|r| pred(&r.outcome)).count();
    let unavailable = count(&|o| {
        matches!(o, Outcome::Failure(FailureReason::Energy) | Outcome::Failure(FailureReason::NotHosted))
    });
    let failures = count(&|o| !o.is_success());
    ServiceAssessment::Assessed(ServiceStats {
        reports: window.len(),
        availability: (window.len() - unavailable) as f64 / n,
        mean_latency_ms: window.iter().map(|r| r.duration_ms as f64).sum::<f64>() / n,
        failure_rate: failures as f64 / n,
        vulnerability_flags: count(&|o| matches!(o, Outcome::Failure(FailureReason::Security))),
    })
}

pub fn service_stats(
    services: &ServiceDatabase,
    reports: &[ExecutionReport],
    service_id: &ServiceId,
    window: usize,
) -> Result<ServiceAssessment, ProfilerError> {
    if services.get(service_id).is_none() {
        return Err(ProfilerError::UnknownService(service_id.clone()));
    }
    Ok(stats_of(&recent(reports, service_id, window)))
}

/// Deprecates every active service with a full window and a failure rate
/// strictly above the threshold, and names a same-tag replacement for each.
pub fn substitution_sweep(
    services: &mut ServiceDatabase,
    reports: &[ExecutionReport],
    policy: &ProfilerPolicy,
) -> Vec<Substitution> {
    let mut failure_rates: BTreeMap<ServiceId, Option<f64>> = BTreeMap::new();
    for desc in services.active() {
        let window = recent(reports, &desc.service_id, policy.window);
        let rate = stats_of(&window).stats().map(|s| s.failure_rate);
        failure_rates.insert(desc.service_id.clone(), rate);
    }
    let failing: Vec<ServiceId> = services
        .active()
        .filter(|d| {
            let window = recent(reports, &d.service_id, policy.window);
            window.len() >= policy.window
                && policy.window > 0
                && failure_rates[&d.service_id].is_some_and(|r| r > policy.failure_threshold)
        })
        .map(|d| d.service_id.clone())
        .collect();

    let mut out = Vec::with_capacity(failing.len());
    for id in &failing {
        let tag = services.description(id).expect("active service").functionality_tag.clone();
        let replacement = services
            .with_tag(&tag)
            .filter(|d| !failing.contains(&d.service_id))
            .min_by(|a, b| {
                let rate = |d: &ServiceDescription| failure_rates.get(&d.service_id).copied().flatten().unwrap_or(0.0);
                rate(a)
                    .total_cmp(&rate(b))
                    .then(a.min_resources.total().cmp(&b.min_resources.total()))
                    .then_with(|| a.service_id.cmp(&b.service_id))
            })
            .map(|d| d.service_id.clone());
        out.push(Substitution { deprecated: id.clone(), replacement });
    }
    for id in &failing {
        services
            .deprecate_service(id, &format!("failure rate above {}", policy.failure_threshold))
            .expect("service was active");
    }
    out
}

pub fn report_malfunction(
    services: &ServiceDatabase,
    service_id: &ServiceId,
    detail: MalfunctionDetail,
) -> Result<Escalation, ProfilerError> {
    let desc = services.description(service_id).ok_or_else(|| ProfilerError::UnknownService(service_id.clone()))?;
    Ok(Escalation { service_id: service_id.clone(), developer_id: desc.developer_id.clone(), detail })
}
