//! Browser demo over the simulator. Each operation takes plain numbers and
//! returns a JSON string; the `wasm_bindgen` exports wrap the native functions
//! so both share one implementation and one test suite.

use momcc_core::agents::Greediness;
use momcc_core::domain::{
    ExecutionReport, FailureReason, HostId, Outcome, Pseudonym, SecurityLevel, ServiceId, SimTime,
};
use momcc_core::engine::{self, BaselineMode, HostGroup, MetricsReport, Scenario};
use momcc_core::governor::security::{issue_certificate, update_trust};
use momcc_core::governor::TrustPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

const BUNDLED: &str = include_str!("../../../scenarios/default.json");

pub fn bundled_scenario() -> Scenario {
    engine::parse_scenario(BUNDLED, None).expect("bundled scenario is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mean_latency_ms: Option<f64>,
    pub p95_latency_ms: Option<f64>,
    pub availability: Option<f64>,
    pub invocations: u64,
    pub energy_mwh: u64,
    pub trace_violations: usize,
}

impl From<&MetricsReport> for ModeSummary {
    fn from(m: &MetricsReport) -> Self {
        ModeSummary {
            mean_latency_ms: m.latency_ms.as_ref().map(|l| l.mean),
            p95_latency_ms: m.latency_ms.as_ref().map(|l| l.p95),
            availability: m.availability.fraction(),
            invocations: m.invocations.attempted,
            energy_mwh: m.energy_mwh,
            trace_violations: m.trace_violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub seed: u64,
    pub duration_hours: f64,
    pub momcc: ModeSummary,
    pub wan_cloud: ModeSummary,
}

/// Runs the bundled scenario in both modes on one seed.
pub fn compare_modes(seed: u64, duration_hours: f64) -> Result<Comparison, String> {
    let mut s = bundled_scenario();
    s.seed = seed;
    s.duration_hours = duration_hours;
    let local = engine::run(&s).map_err(|e| e.to_string())?.metrics;
    s.baseline_mode = BaselineMode::WanCloud;
    let wan = engine::run(&s).map_err(|e| e.to_string())?.metrics;
    Ok(Comparison { seed, duration_hours, momcc: (&local).into(), wan_cloud: (&wan).into() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub hosts: u32,
    pub availability: Option<f64>,
}

/// Mean availability of the bundled scenario with `n` copies of its
/// random-greediness host group, for `n` in `1..=max_hosts`, averaged over `seeds` seeds.
pub fn availability_curve(max_hosts: u32, seeds: u32, duration_hours: f64) -> Result<Vec<CurvePoint>, String> {
    if max_hosts == 0 || seeds == 0 {
        return Err("max_hosts and seeds must be at least 1".into());
    }
    let base = bundled_scenario();
    let config = base
        .hosts
        .iter()
        .find(|g| g.config.greediness == Greediness::Random)
        .ok_or("bundled scenario has no random-greediness hosts")?
        .config
        .clone();
    let mut out = Vec::new();
    for n in 1..=max_hosts {
        let mut values = Vec::new();
        for k in 0..seeds {
            let mut s = base.clone();
            s.seed = base.seed + u64::from(k);
            s.duration_hours = duration_hours;
            s.hosts = vec![HostGroup { count: n, config: config.clone() }];
            if let Some(a) = engine::run(&s).map_err(|e| e.to_string())?.metrics.availability.fraction() {
                values.push(a);
            }
        }
        let availability = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
        out.push(CurvePoint { hosts: n, availability });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustPoint {
    pub step: u32,
    pub score: f64,
    pub level: SecurityLevel,
}

/// Trust of one host under a random report stream with the default policy.
pub fn trust_trajectory(success_prob: f64, rating_prob: f64, steps: u32, identity_verified: bool, seed: u64) -> Vec<TrustPoint> {
    let policy = TrustPolicy::default();
    let host = HostId::new("demo-host");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cert = issue_certificate(host.clone(), identity_verified, SimTime::ZERO, &policy);
    let mut out = vec![TrustPoint { step: 0, score: cert.trust_score, level: cert.level }];
    for step in 1..=steps {
        let success = rng.random_bool(success_prob.clamp(0.0, 1.0));
        let rating = rng.random_bool(rating_prob.clamp(0.0, 1.0)).then(|| {
            if success {
                rng.random_range(3..=5)
            } else {
                rng.random_range(1..=2)
            }
        });
        let report = ExecutionReport {
            report_id: format!("r{step}"),
            host_id: host.clone(),
            service_id: ServiceId::new("demo"),
            requester_pseudonym: Pseudonym::new("anon-demo"),
            started_at: SimTime::from_millis(u64::from(step) * 1000),
            duration_ms: 10,
            energy_used_mwh: 1,
            outcome: if success { Outcome::Success } else { Outcome::Failure(FailureReason::Execution) },
            rating,
        };
        cert = update_trust(&cert, &report, &policy).expect("same host");
        out.push(TrustPoint { step, score: cert.trust_score, level: cert.level });
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo types serialize")
}

#[cfg(target_arch = "wasm32")]
mod bindings {
    use wasm_bindgen::prelude::*;

    #[wasm_bindgen(js_name = compareModes)]
    pub fn compare_modes(seed: u32, duration_hours: f64) -> Result<String, JsError> {
        super::compare_modes(u64::from(seed), duration_hours).map(|c| super::to_json(&c)).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = availabilityCurve)]
    pub fn availability_curve(max_hosts: u32, seeds: u32, duration_hours: f64) -> Result<String, JsError> {
        super::availability_curve(max_hosts, seeds, duration_hours)
            .map(|c| super::to_json(&c))
            .map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = trustTrajectory)]
    pub fn trust_trajectory(success_prob: f64, rating_prob: f64, steps: u32, identity_verified: bool, seed: u32) -> String {
        super::to_json(&super::trust_trajectory(success_prob, rating_prob, steps, identity_verified, u64::from(seed)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparison_favours_local_hosts() {
        let c = compare_modes(42, 1.0).unwrap();
        assert!(c.momcc.mean_latency_ms.unwrap() < c.wan_cloud.mean_latency_ms.unwrap());
        assert_eq!(c.wan_cloud.availability, Some(1.0));
        assert_eq!(c.momcc.trace_violations, 0);
        assert!(to_json(&c).contains("\"wan_cloud\""));
    }

    #[test]
    fn curve_has_a_point_per_host_count() {
        let curve = availability_curve(3, 1, 0.5).unwrap();
        assert_eq!(curve.iter().map(|p| p.hosts).collect::<Vec<_>>(), [1, 2, 3]);
        assert!(curve.iter().all(|p| p.availability.is_none_or(|a| (0.0..=1.0).contains(&a))));
        assert!(availability_curve(0, 1, 1.0).is_err());
    }

    #[test]
    fn reliable_host_climbs_one_level_at_a_time() {
        let t = trust_trajectory(1.0, 0.0, 60, false, 1);
        assert_eq!(t.len(), 61);
        assert_eq!((t[0].score, t[0].level), (0.0, SecurityLevel::Low));
        assert!(t.windows(2).all(|w| w[1].score >= w[0].score && w[1].level as u8 <= w[0].level as u8 + 1));
        assert_eq!(t.last().unwrap().level, SecurityLevel::High);
        assert_eq!(trust_trajectory(0.5, 0.5, 10, true, 3)[0].score, 0.1);
    }
}
