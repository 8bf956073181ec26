use std::path::PathBuf;

use momcc_core::engine::{self, parse_scenario, Availability, Defaults, Scenario};
use proptest::prelude::*;

fn repo_file(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn defaults_file_matches_built_in_defaults() {
    let on_disk: Defaults = serde_json::from_str(&repo_file("scenarios/defaults.json")).unwrap();
    assert_eq!(on_disk, Defaults::default());
}

#[test]
fn bundled_scenario_validates() {
    let s = parse_scenario(&repo_file("scenarios/default.json"), None).unwrap();
    assert_eq!(s.seed, 42);
    assert!(s.host_count() > 0 && s.requester_count() > 0);
}

#[test]
fn scenario_json_round_trips() {
    let s = parse_scenario(&repo_file("scenarios/default.json"), None).unwrap();
    assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
}

fn small() -> Scenario {
    Scenario::from_json(
        r#"{
        "duration_hours": 0.5,
        "services": [
            {"service_id": "a", "developer_id": "d1", "name": "Alpha", "description": "text tool",
             "functionality_tag": "t", "input_spec": "x", "output_spec": "y", "binding_method": "rest",
             "security_level": "low", "platform": {"os_name": "Android", "min_version": "2.0"},
             "min_resources": {"cpu": 100, "memory": 8, "storage": 4, "energy": 20},
             "price_per_invocation": "0.30", "developer_share": 0.5, "exec_ms": 10},
            {"service_id": "b", "developer_id": "d2", "name": "Beta", "description": "text chain",
             "functionality_tag": "u", "input_spec": "x", "output_spec": "y", "binding_method": "rest",
             "security_level": "low", "platform": {"os_name": "Android", "min_version": "2.0"},
             "min_resources": {"cpu": 100, "memory": 8, "storage": 4, "energy": 20},
             "price_per_invocation": "0.75", "developer_share": 0.3, "exec_ms": 5, "dependencies": ["a"]}
        ],
        "hosts": [{"count": 4, "config": {"departure_rate": 0.5, "failure_prob": 0.2}}],
        "requesters": [{"count": 3, "config": {"query_pool": ["text"], "demand_rate": 40}}]
    }"#,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_run_conserves_money_and_conforms(seed in any::<u64>()) {
        let mut s = small();
        s.seed = seed;
        let out = engine::run(&s).unwrap();
        let m = &out.metrics;
        prop_assert!(m.ledger.conserved);
        prop_assert!(out.governor.billing_conserved());
        prop_assert_eq!(m.trace_violations, 0);
        prop_assert_eq!(m.anonymity_violations, 0);
        prop_assert!(out.governor.check_invariants().is_empty());
        if let Availability::Fraction(a) = m.availability {
            prop_assert!((0.0..=1.0).contains(&a));
        }
        let end = momcc_core::domain::SimTime::from_millis((s.duration_hours * 3_600_000.0) as u64);
        prop_assert!(out.trace.windows(2).all(|w| w[0].at <= w[1].at));
        prop_assert!(out.trace.iter().all(|r| r.at <= end));
        prop_assert_eq!(m.invocations.attempted, m.invocations.succeeded + m.invocations.failed + m.invocations.timed_out);
    }
}
