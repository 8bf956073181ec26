//! Scenario files: schema, layered defaults and validation.
//!
//! A scenario is UTF-8 JSON. Missing fields are filled from the defaults
//! document (built-in, optionally overridden by a defaults file) by a deep
//! merge: objects merge key by key, anything else is replaced whole. Host
//! and requester group configs are merged with the `host` and `requester`
//! sections of the defaults.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agents::{HostAgentConfig, RequesterAgentConfig};
use crate::domain::{ResourceVector, ServiceDescription};
use crate::governor::{
    BillingPolicy, EfficiencyWeights, Governor, GovernorConfig, GovernorError, ProfilerPolicy, RegistryError,
    TrustPolicy,
};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

/// Uniform range in milliseconds, written `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsRange(pub f64, pub f64);

impl MsRange {
    pub fn mean(&self) -> f64 {
        (self.0 + self.1) / 2.0
    }
}

/// Round-trip latency per link class. A one-way hop takes half of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub wlan_ms: MsRange,
    pub wan_ms: MsRange,
    pub governor_ms: MsRange,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { wlan_ms: MsRange(5.0, 30.0), wan_ms: MsRange(100.0, 300.0), governor_ms: MsRange(20.0, 60.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    Momcc,
    WanCloud,
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMode::Momcc => "momcc",
            BaselineMode::WanCloud => "wan_cloud",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policies {
    pub trust: TrustPolicy,
    pub billing: BillingPolicy,
    pub profiler: ProfilerPolicy,
    pub footprint_ceiling: ResourceVector,
    pub efficiency: EfficiencyWeights,
    /// How long a success report waits for the consumer's rating.
    pub rating_window_s: u64,
}

impl Default for Policies {
    fn default() -> Self {
        let g = GovernorConfig::default();
        Self {
            trust: g.trust,
            billing: g.billing,
            profiler: g.profiler,
            footprint_ceiling: g.footprint_ceiling,
            efficiency: g.efficiency,
            rating_window_s: 60,
        }
    }
}

impl Policies {
    pub fn governor_config(&self) -> GovernorConfig {
        GovernorConfig {
            trust: self.trust.clone(),
            billing: self.billing,
            profiler: self.profiler.clone(),
            footprint_ceiling: self.footprint_ceiling,
            efficiency: self.efficiency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostGroup {
    pub count: u32,
    pub config: HostAgentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequesterGroup {
    pub count: u32,
    pub config: RequesterAgentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format_version: u32,
    pub seed: u64,
    pub duration_hours: f64,
    pub baseline_mode: BaselineMode,
    pub latency: LatencyModel,
    pub policies: Policies,
    pub services: Vec<ServiceDescription>,
    pub hosts: Vec<HostGroup>,
    pub requesters: Vec<RequesterGroup>,
}

/// Everything a scenario may leave out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub format_version: u32,
    pub scenario: Scenario,
    pub host: HostAgentConfig,
    pub requester: RequesterAgentConfig,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            format_version: SCENARIO_FORMAT_VERSION,
            scenario: Scenario {
                format_version: SCENARIO_FORMAT_VERSION,
                seed: 1,
                duration_hours: 4.0,
                baseline_mode: BaselineMode::Momcc,
                latency: LatencyModel::default(),
                policies: Policies::default(),
                services: vec![],
                hosts: vec![],
                requesters: vec![],
            },
            host: HostAgentConfig::default(),
            requester: RequesterAgentConfig::default(),
        }
    }
}

/// One problem with a scenario, located by JSON pointer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "/" } else { &self.path };
        write!(f, "{path}: {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError(pub Vec<Diagnostic>);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario has {} problem(s):", self.0.len())?;
        for d in &self.0 {
            writeln!(f, "  {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

fn diag(path: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic { path: path.into(), message: message.into() }
}

/// Objects merge recursively; `overlay` wins everywhere else.
pub fn deep_merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn merged_defaults(overrides: Option<&Value>) -> Result<Value, ValidationError> {
    let mut defaults = serde_json::to_value(Defaults::default()).expect("defaults serialize");
    if let Some(file) = overrides {
        if !file.is_object() {
            return Err(ValidationError(vec![diag("", "defaults file must be a JSON object")]));
        }
        deep_merge(&mut defaults, file);
        // checks the merged defaults are themselves well-typed
        if let Err(e) = serde_path_to_error::deserialize::<_, Defaults>(&defaults) {
            return Err(ValidationError(vec![diag(pointer(e.path()), format!("in defaults file: {}", e.inner()))]));
        }
    }
    Ok(defaults)
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

fn merge_groups(scenario: &mut Map<String, Value>, key: &str, defaults: &Value) {
    if let Some(Value::Array(groups)) = scenario.get_mut(key) {
        for g in groups {
            if let Value::Object(obj) = g {
                let mut cfg = defaults.clone();
                if let Some(own) = obj.get("config") {
                    deep_merge(&mut cfg, own);
                }
                obj.insert("config".into(), cfg);
            }
        }
    }
}

/// Parses scenario text against the built-in defaults and an optional
/// defaults document, then validates it.
pub fn parse_scenario(text: &str, defaults_file: Option<&Value>) -> Result<Scenario, ValidationError> {
    let raw: Value = serde_json::from_str(text)
        .map_err(|e| ValidationError(vec![diag("", format!("not valid JSON: {e}"))]))?;
    let Value::Object(mut obj) = raw else {
        return Err(ValidationError(vec![diag("", "scenario must be a JSON object")]));
    };
    let defaults = merged_defaults(defaults_file)?;
    merge_groups(&mut obj, "hosts", &defaults["host"]);
    merge_groups(&mut obj, "requesters", &defaults["requester"]);
    let mut merged = defaults["scenario"].clone();
    deep_merge(&mut merged, &Value::Object(obj));
    let scenario: Scenario = serde_path_to_error::deserialize(&merged)
        .map_err(|e| ValidationError(vec![diag(pointer(e.path()), e.inner().to_string())]))?;
    let problems = validate(&scenario);
    if problems.is_empty() {
        Ok(scenario)
    } else {
        Err(ValidationError(problems))
    }
}

fn check_prob(out: &mut Vec<Diagnostic>, path: String, p: f64) {
    if !(0.0..=1.0).contains(&p) {
        out.push(diag(path, format!("must be a probability in [0,1], got {p}")));
    }
}

fn check_rate(out: &mut Vec<Diagnostic>, path: String, r: f64) {
    if !(r >= 0.0 && r.is_finite()) {
        out.push(diag(path, format!("must be a finite rate >= 0, got {r}")));
    }
}

/// Every semantic problem at once.
pub fn validate(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if s.format_version != SCENARIO_FORMAT_VERSION {
        out.push(diag("/format_version", format!("unsupported version {}, expected {SCENARIO_FORMAT_VERSION}", s.format_version)));
    }
    if !(s.duration_hours > 0.0 && s.duration_hours.is_finite()) {
        out.push(diag("/duration_hours", format!("must be > 0, got {}", s.duration_hours)));
    }
    for (name, r) in [("wlan_ms", s.latency.wlan_ms), ("wan_ms", s.latency.wan_ms), ("governor_ms", s.latency.governor_ms)] {
        if !(r.0 >= 0.0 && r.0 <= r.1 && r.1.is_finite()) {
            out.push(diag(format!("/latency/{name}"), format!("need 0 <= low <= high, got [{}, {}]", r.0, r.1)));
        }
    }
    for (field, problem) in s.policies.trust.validate() {
        out.push(diag(format!("/policies/trust/{field}"), problem));
    }
    check_prob(&mut out, "/policies/profiler/failure_threshold".into(), s.policies.profiler.failure_threshold);
    if s.policies.profiler.window == 0 {
        out.push(diag("/policies/profiler/window", "must be at least 1"));
    }
    if s.policies.profiler.sweep_interval_s == 0 {
        out.push(diag("/policies/profiler/sweep_interval_s", "must be at least 1"));
    }
    let w = &s.policies.efficiency;
    if [w.availability, w.rating, w.trust].iter().any(|x| !(*x >= 0.0)) || w.availability + w.rating + w.trust <= 0.0 {
        out.push(diag("/policies/efficiency", "weights must be >= 0 with a positive sum"));
    }

    let mut seen = std::collections::BTreeSet::new();
    for (i, svc) in s.services.iter().enumerate() {
        if !seen.insert(&svc.service_id) {
            out.push(diag(format!("/services/{i}/service_id"), format!("duplicate service id {}", svc.service_id)));
        }
    }
    // dry run of developer and service registration catches footprint,
    // commission and dependency problems with the governor's own rules
    let gov = Governor::new(s.policies.governor_config());
    for svc in &s.services {
        gov.register_developer(svc.developer_id.clone());
    }
    for (i, svc) in s.services.iter().enumerate() {
        for (j, dep) in svc.dependencies.iter().enumerate() {
            if !s.services.iter().any(|x| &x.service_id == dep) {
                out.push(diag(format!("/services/{i}/dependencies/{j}"), format!("unknown service {dep}")));
            }
        }
        match gov.register_service_attested(svc.clone(), true) {
            Ok(_) | Err(GovernorError::Registry(RegistryError::DuplicateService(_))) => {}
            Err(e) => out.push(diag(format!("/services/{i}"), e.to_string())),
        }
    }

    for (i, g) in s.hosts.iter().enumerate() {
        let p = format!("/hosts/{i}/config");
        check_prob(&mut out, format!("{p}/failure_prob"), g.config.failure_prob);
        check_rate(&mut out, format!("{p}/departure_rate"), g.config.departure_rate);
        if g.config.poll_interval_s == 0 {
            out.push(diag(format!("{p}/poll_interval_s"), "must be at least 1"));
        }
    }
    for (i, g) in s.requesters.iter().enumerate() {
        let p = format!("/requesters/{i}/config");
        check_rate(&mut out, format!("{p}/demand_rate"), g.config.demand_rate);
        check_prob(&mut out, format!("{p}/rating_prob"), g.config.rating_prob);
        let bias = &g.config.rating_bias;
        if bias.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || bias.iter().sum::<f64>() <= 0.0 {
            out.push(diag(format!("{p}/rating_bias"), "weights must be finite, >= 0 and not all zero"));
        }
        if g.count > 0 && g.config.demand_rate > 0.0 && g.config.query_pool.is_empty() {
            out.push(diag(format!("{p}/query_pool"), "must not be empty when demand_rate > 0"));
        }
    }
    out
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ValidationError> {
        parse_scenario(text, None)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn host_count(&self) -> usize {
        self.hosts.iter().map(|g| g.count as usize).sum()
    }

    pub fn requester_count(&self) -> usize {
        self.requesters.iter().map(|g| g.count as usize).sum()
    }
}
