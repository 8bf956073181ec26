//! Security governor: certificate issuance and reputation trust.
//!
//! Trust is an exponentially weighted moving average of per-invocation
//! observations. An observation blends the execution outcome with the
//! consumer rating when one was given:
//!
//! ```text
//! s     = 1 if success else 0
//! r_hat = (rating - 1) / 4          (or s when unrated)
//! o     = (1 - w) * s + w * r_hat   (w = rating_weight when rated, else 0)
//! score = (1 - alpha) * score + alpha * o
//! ```
//!
//! Levels move at most one step per update. Promotion needs both a score
//! and an attempt count; demotion happens once the score falls below the
//! current level's promotion score minus the hysteresis band.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ExecutionReport, HostId, SecurityCertificate, SecurityLevel, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromotionThreshold {
    pub score: f64,
    pub attempts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustPolicy {
    pub alpha: f64,
    pub promote_medium: PromotionThreshold,
    pub promote_high: PromotionThreshold,
    pub hysteresis: f64,
    pub rating_weight: f64,
    /// One-time score bonus for hosts that verified their identity.
    pub identity_bonus: f64,
}

impl Default for TrustPolicy {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            promote_medium: PromotionThreshold { score: 0.5, attempts: 10 },
            promote_high: PromotionThreshold { score: 0.8, attempts: 30 },
            hysteresis: 0.05,
            rating_weight: 0.3,
            identity_bonus: 0.1,
        }
    }
}

impl TrustPolicy {
    /// Returns `(field, problem)` pairs; empty when the policy is usable.
    pub fn validate(&self) -> Vec<(&'static str, String)> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            problems.push(("alpha", format!("must be in (0,1), got {}", self.alpha)));
        }
        for (field, t) in [("promote_medium", self.promote_medium), ("promote_high", self.promote_high)] {
            if !(0.0..=1.0).contains(&t.score) {
                problems.push((field, format!("score must be in [0,1], got {}", t.score)));
            }
        }
        if !(self.promote_high.score > self.promote_medium.score
            && self.promote_high.attempts > self.promote_medium.attempts)
        {
            problems.push(("promote_high", "must strictly dominate promote_medium".to_owned()));
        }
        if !(0.0..=1.0).contains(&self.hysteresis) {
            problems.push(("hysteresis", format!("must be in [0,1], got {}", self.hysteresis)));
        }
        if !(0.0..=1.0).contains(&self.rating_weight) {
            problems.push(("rating_weight", format!("must be in [0,1], got {}", self.rating_weight)));
        }
        if !(0.0..=1.0).contains(&self.identity_bonus) {
            problems.push(("identity_bonus", format!("must be in [0,1], got {}", self.identity_bonus)));
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SecurityError {
    #[error("report for host {report} applied to certificate of host {certificate}")]
    HostMismatch { certificate: HostId, report: HostId },
}

/// A fresh certificate: lowest level, no history.
pub fn issue_certificate(
    host_id: HostId,
    identity_verified: bool,
    now: SimTime,
    policy: &TrustPolicy,
) -> SecurityCertificate {
    let trust_score = if identity_verified { policy.identity_bonus.min(1.0) } else { 0.0 };
    SecurityCertificate {
        host_id,
        level: SecurityLevel::Low,
        trust_score,
        attempts: 0,
        successes: 0,
        issued_at: now,
        identity_verified,
    }
}

/// The value in [0,1] a single report contributes to the moving average.
pub fn observation(report: &ExecutionReport, policy: &TrustPolicy) -> f64 {
    let s = if report.outcome.is_success() { 1.0 } else { 0.0 };
    match report.rating {
        Some(r) => {
            let r_hat = (f64::from(r.clamp(1, 5)) - 1.0) / 4.0;
            (1.0 - policy.rating_weight) * s + policy.rating_weight * r_hat
        }
        None => s,
    }
}

pub fn update_trust(
    cert: &SecurityCertificate,
    report: &ExecutionReport,
    policy: &TrustPolicy,
) -> Result<SecurityCertificate, SecurityError> {
    if cert.host_id != report.host_id {
        return Err(SecurityError::HostMismatch {
            certificate: cert.host_id.clone(),
            report: report.host_id.clone(),
        });
    }
    let o = observation(report, policy);
    let score = ((1.0 - policy.alpha) * cert.trust_score + policy.alpha * o).clamp(0.0, 1.0);
    let attempts = cert.attempts + 1;
    let successes = cert.successes + u64::from(report.outcome.is_success());
    Ok(SecurityCertificate {
        level: next_level(cert.level, score, attempts, policy),
        trust_score: score,
        attempts,
        successes,
        ..cert.clone()
    })
}

pub fn next_level(level: SecurityLevel, score: f64, attempts: u64, policy: &TrustPolicy) -> SecurityLevel {
    let meets = |t: PromotionThreshold| score >= t.score && attempts >= t.attempts;
    match level {
        SecurityLevel::Low if meets(policy.promote_medium) => SecurityLevel::Medium,
        SecurityLevel::Low => SecurityLevel::Low,
        SecurityLevel::Medium if meets(policy.promote_high) => SecurityLevel::High,
        SecurityLevel::Medium if score < policy.promote_medium.score - policy.hysteresis => SecurityLevel::Low,
        SecurityLevel::Medium => SecurityLevel::Medium,
        SecurityLevel::High if score < policy.promote_high.score - policy.hysteresis => SecurityLevel::Medium,
        SecurityLevel::High => SecurityLevel::High,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FailureReason, Outcome, Pseudonym, ServiceId};

    fn report(success: bool, rating: Option<u8>) -> ExecutionReport {
        ExecutionReport {
            report_id: "r".into(),
            host_id: HostId::new("h"),
            service_id: ServiceId::new("s"),
            requester_pseudonym: Pseudonym::new("anon"),
            started_at: SimTime::ZERO,
            duration_ms: 0,
            energy_used_mwh: 0,
            outcome: if success { Outcome::Success } else { Outcome::Failure(FailureReason::Execution) },
            rating,
        }
    }

    #[test]
    fn fresh_certificates_start_low() {
        let p = TrustPolicy::default();
        let c = issue_certificate(HostId::new("h"), false, SimTime::ZERO, &p);
        assert_eq!((c.level, c.trust_score, c.attempts), (SecurityLevel::Low, 0.0, 0));
        let v = issue_certificate(HostId::new("h"), true, SimTime::ZERO, &p);
        assert_eq!((v.level, v.trust_score), (SecurityLevel::Low, 0.1));
    }

    #[test]
    fn one_success_moves_score_by_alpha() {
        let p = TrustPolicy::default();
        let c = issue_certificate(HostId::new("h"), false, SimTime::ZERO, &p);
        let c = update_trust(&c, &report(true, None), &p).unwrap();
        assert!((c.trust_score - 0.1).abs() < 1e-12);
        assert_eq!((c.attempts, c.successes), (1, 1));
    }

    #[test]
    fn rating_blends_into_observation() {
        let p = TrustPolicy::default();
        assert_eq!(observation(&report(true, None), &p), 1.0);
        assert_eq!(observation(&report(false, None), &p), 0.0);
        assert!((observation(&report(true, Some(1)), &p) - 0.7).abs() < 1e-12);
        assert!((observation(&report(false, Some(5)), &p) - 0.3).abs() < 1e-12);
        assert!((observation(&report(true, Some(3)), &p) - 0.85).abs() < 1e-12);
    }

    #[test]
    fn medium_demotes_below_hysteresis_band() {
        let p = TrustPolicy::default();
        let mut c = issue_certificate(HostId::new("h"), false, SimTime::ZERO, &p);
        c.level = SecurityLevel::Medium;
        c.trust_score = 0.52;
        c.attempts = 20;
        c = update_trust(&c, &report(false, None), &p).unwrap();
        // 0.52 * 0.9 = 0.468, still inside the band
        assert!((c.trust_score - 0.468).abs() < 1e-12);
        assert_eq!(c.level, SecurityLevel::Medium);
        c = update_trust(&c, &report(false, None), &p).unwrap();
        assert!(c.trust_score < 0.45);
        assert_eq!(c.level, SecurityLevel::Low);
    }

    #[test]
    fn promotion_needs_attempts_and_moves_one_step() {
        let p = TrustPolicy::default();
        let mut c = issue_certificate(HostId::new("h"), false, SimTime::ZERO, &p);
        let mut levels = Vec::new();
        for _ in 0..40 {
            c = update_trust(&c, &report(true, None), &p).unwrap();
            levels.push(c.level);
        }
        // 1 - 0.9^7 > 0.5 but attempts gate promotion until the 10th report
        assert_eq!(levels[8], SecurityLevel::Low);
        assert_eq!(levels[9], SecurityLevel::Medium);
        assert_eq!(levels[28], SecurityLevel::Medium);
        assert_eq!(levels[29], SecurityLevel::High);
    }

    #[test]
    fn low_host_meeting_high_thresholds_only_reaches_medium() {
        let p = TrustPolicy::default();
        assert_eq!(next_level(SecurityLevel::Low, 0.99, 100, &p), SecurityLevel::Medium);
        assert_eq!(next_level(SecurityLevel::High, 0.0, 100, &p), SecurityLevel::Medium);
    }

    #[test]
    fn mismatched_host_is_rejected() {
        let p = TrustPolicy::default();
        let c = issue_certificate(HostId::new("other"), false, SimTime::ZERO, &p);
        assert!(matches!(update_trust(&c, &report(true, None), &p), Err(SecurityError::HostMismatch { .. })));
    }

    #[test]
    fn policy_validation() {
        assert!(TrustPolicy::default().validate().is_empty());
        let mut p = TrustPolicy::default();
        p.promote_high.attempts = 5;
        p.alpha = 1.0;
        let fields: Vec<_> = p.validate().into_iter().map(|(f, _)| f).collect();
        assert_eq!(fields, vec!["alpha", "promote_high"]);
    }
}
