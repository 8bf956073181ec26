//! Run metrics and their JSON and CSV renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use super::scenario::BaselineMode;
use crate::domain::Money;
use crate::governor::{PartyClass, Substitution};

pub const METRICS_FORMAT_VERSION: u32 = 1;

/// Share of resolved demand events that found a live host, or no demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Availability {
    NoDemand,
    Fraction(f64),
}

impl Availability {
    pub fn fraction(self) -> Option<f64> {
        match self {
            Availability::Fraction(f) => Some(f),
            Availability::NoDemand => None,
        }
    }
}

impl Serialize for Availability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Availability::NoDemand => s.serialize_str("no demand"),
            Availability::Fraction(f) => s.serialize_f64(*f),
        }
    }
}

impl<'de> Deserialize<'de> for Availability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) if s == "no demand" => Ok(Availability::NoDemand),
            Value::Number(n) => n.as_f64().map(Availability::Fraction).ok_or_else(|| serde::de::Error::custom("bad number")),
            other => Err(serde::de::Error::custom(format!("expected a fraction or \"no demand\", got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandCounts {
    pub events: u64,
    pub available: u64,
    pub unavailable: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationCounts {
    pub attempted: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub timed_out: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencySummary {
    /// Percentiles use the nearest-rank method.
    pub fn from_micros(samples: &[u64]) -> Option<LatencySummary> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let rank = |p: f64| sorted[((p * n as f64).ceil() as usize).clamp(1, n) - 1] as f64 / 1000.0;
        let mean = sorted.iter().map(|&x| x as f64).sum::<f64>() / n as f64 / 1000.0;
        Some(LatencySummary { count: n, mean, p50: rank(0.5), p95: rank(0.95) })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustHistogram {
    pub uncertified: usize,
    pub low: usize,
    pub medium: usize,
    pub high: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationCounts {
    pub confirmed: u64,
    pub denied: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub entries: usize,
    pub metered_total: Money,
    pub conserved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub seed: u64,
    pub baseline_mode: BaselineMode,
    pub duration_hours: f64,
    pub hosts: usize,
    pub requesters: usize,
    pub availability: Availability,
    pub demand: DemandCounts,
    pub invocations: InvocationCounts,
    pub latency_ms: Option<LatencySummary>,
    pub energy_mwh: u64,
    pub revenue: BTreeMap<PartyClass, Money>,
    pub ledger: LedgerSummary,
    pub trust: TrustHistogram,
    pub allocations: AllocationCounts,
    pub trace_violations: usize,
    pub anonymity_violations: usize,
    pub substitutions: Vec<Substitution>,
    pub escalations: usize,
    pub messages_delivered: u64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    /// Flat `metric,value` table; nested fields use dotted names.
    pub fn to_csv(&self) -> String {
        let value = serde_json::to_value(self).expect("metrics serialize");
        let mut rows = Vec::new();
        flatten("", &value, &mut rows);
        let mut out = String::from("metric,value\n");
        for (k, v) in rows {
            let _ = writeln!(out, "{},{}", csv_field(&k), csv_field(&v));
        }
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_owned() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&key(k), v, out);
            }
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push((prefix.to_owned(), String::new()));
            }
            for (i, v) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), v, out);
            }
        }
        Value::Null => out.push((prefix.to_owned(), String::new())),
        Value::String(s) => out.push((prefix.to_owned(), s.clone())),
        other => out.push((prefix.to_owned(), other.to_string())),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
