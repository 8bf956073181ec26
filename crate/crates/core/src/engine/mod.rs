//! Deterministic discrete-event simulation of a hosting market.
//!
//! One event queue ordered by (time, sequence number) drives every agent
//! and the governor. Each agent and each sending endpoint draws from its own
//! ChaCha stream derived from the scenario seed, so a run is a pure function
//! of the scenario and adding an agent does not disturb the others' draws.

pub mod metrics;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use metrics::{Availability, LatencySummary, MetricsReport, METRICS_FORMAT_VERSION};
pub use scenario::{
    parse_scenario, validate, BaselineMode, Defaults, Diagnostic, HostGroup, LatencyModel, MsRange, Policies, RequesterGroup, Scenario, ValidationError,
};

use crate::agents::{catalog, exponential_ms, Action, Address, Catalog, HostAgent, RequesterAgent};
use crate::conformance::{check_trace, ConformanceReport};
use crate::domain::{ExecutionReport, HostId, Pseudonym, SecurityLevel, ServiceId, SimTime};
use crate::governor::{AllocationOutcome, Governor, Substitution, CLOUD_HOST};
use crate::wire::{encode_stream, HostEndpoint, MessageBody, MessageKind, ProtocolMessage, Role};
use metrics::{AllocationCounts, DemandCounts, InvocationCounts, LedgerSummary, TrustHistogram};

/// Deliberate protocol faults, for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drops the certificate query from every confirmed allocation's trace.
    SkipScStep,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Endpoint {
    Governor,
    Cloud,
    Host(usize),
    Requester(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub at: SimTime,
    pub to: Endpoint,
    pub msg: ProtocolMessage,
}

#[derive(Debug)]
enum Event {
    HostTick(usize),
    HostDepart(usize),
    Demand(usize),
    Deliver { from: Endpoint, to: Endpoint, msg: ProtocolMessage },
    Timer { who: Endpoint, token: String },
    RatingDeadline(String),
    Sweep,
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: MetricsReport,
    pub trace: Vec<TraceRecord>,
    pub conformance: ConformanceReport,
    pub governor: Governor,
    /// Every pseudonym used during the run.
    pub pseudonyms: BTreeSet<Pseudonym>,
}

impl RunOutput {
    /// Newline-delimited envelopes, in processing order.
    pub fn trace_log(&self) -> Vec<u8> {
        encode_stream(self.trace.iter().map(|r| &r.msg))
    }

    pub fn ledger_csv(&self) -> String {
        self.governor.ledger_csv()
    }
}

pub fn run(scenario: &Scenario) -> Result<RunOutput, ValidationError> {
    run_with(scenario, &RunOptions::default())
}

pub fn run_with(scenario: &Scenario, options: &RunOptions) -> Result<RunOutput, ValidationError> {
    let problems = validate(scenario);
    if !problems.is_empty() {
        return Err(ValidationError(problems));
    }
    let mut engine = Engine::new(scenario, options);
    engine.run();
    Ok(engine.finish())
}

const HOST_STREAM: u64 = 1 << 32;
const REQUESTER_STREAM: u64 = 2 << 32;
const LATENCY_STREAM: u64 = 3 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Engine<'a> {
    scenario: &'a Scenario,
    options: &'a RunOptions,
    gov: Governor,
    catalog: Catalog,
    hosts: Vec<HostAgent>,
    host_index: BTreeMap<HostId, usize>,
    requesters: Vec<RequesterAgent>,
    sessions: BTreeMap<Pseudonym, Endpoint>,
    queue: BTreeMap<(u64, u64), Event>,
    seq: u64,
    now: SimTime,
    end: SimTime,
    latency_rngs: BTreeMap<Endpoint, ChaCha8Rng>,
    pending_reports: BTreeMap<String, ExecutionReport>,
    pending_ratings: BTreeMap<String, u8>,
    trace: Vec<TraceRecord>,
    developer_needles: Vec<String>,
    anonymity_violations: usize,
    allocations: AllocationCounts,
    substitutions: Vec<Substitution>,
    messages_delivered: u64,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, options: &'a RunOptions) -> Self {
        let gov = Governor::new(scenario.policies.governor_config());
        let mut developers = BTreeSet::new();
        for svc in &scenario.services {
            if developers.insert(svc.developer_id.clone()) {
                gov.register_developer(svc.developer_id.clone());
            }
        }
        for svc in &scenario.services {
            gov.register_service(svc.clone()).expect("validated scenario services register");
        }
        let end = SimTime((scenario.duration_hours * 3_600_000_000.0).round() as u64);
        let mut engine = Engine {
            scenario,
            options,
            gov,
            catalog: catalog(&scenario.services),
            hosts: Vec::new(),
            host_index: BTreeMap::new(),
            requesters: Vec::new(),
            sessions: BTreeMap::new(),
            queue: BTreeMap::new(),
            seq: 0,
            now: SimTime::ZERO,
            end,
            latency_rngs: BTreeMap::new(),
            pending_reports: BTreeMap::new(),
            pending_ratings: BTreeMap::new(),
            trace: Vec::new(),
            developer_needles: developers.iter().map(|d| format!("\"{d}\"")).collect(),
            anonymity_violations: 0,
            allocations: AllocationCounts::default(),
            substitutions: Vec::new(),
            messages_delivered: 0,
        };
        engine.spawn();
        engine
    }

    fn spawn(&mut self) {
        let seed = self.scenario.seed;
        if self.scenario.baseline_mode == BaselineMode::Momcc {
            for group in &self.scenario.hosts {
                for _ in 0..group.count {
                    let i = self.hosts.len();
                    let id = HostId::new(format!("host-{i:04}"));
                    let cfg = group.config.clone();
                    self.gov
                        .register_host(id.clone(), cfg.platform.clone(), cfg.capacity, cfg.battery_mwh, cfg.identity_attested)
                        .expect("host ids are unique");
                    let mut agent = HostAgent::new(id.clone(), cfg, stream(seed, HOST_STREAM | i as u64));
                    let poll_ms = agent.config.poll_interval_s * 1000;
                    let first_poll = agent.rng().random_range(0..poll_ms.max(1));
                    let rate = agent.config.departure_rate;
                    let departure = exponential_ms(agent.rng(), rate);
                    self.sessions.insert(agent.pseudonym().clone(), Endpoint::Host(i));
                    self.host_index.insert(id, i);
                    self.hosts.push(agent);
                    self.schedule_ms(first_poll, Event::HostTick(i));
                    if let Some(d) = departure {
                        self.schedule_ms(d, Event::HostDepart(i));
                    }
                }
            }
            let sweep = self.scenario.policies.profiler.sweep_interval_s * 1000;
            self.schedule_ms(sweep, Event::Sweep);
        }
        for group in &self.scenario.requesters {
            for _ in 0..group.count {
                let i = self.requesters.len();
                let mut agent = RequesterAgent::new(i, group.config.clone(), stream(seed, REQUESTER_STREAM | i as u64));
                if let Some(first) = agent.first_demand() {
                    self.schedule_ms(first, Event::Demand(i));
                }
                self.requesters.push(agent);
            }
        }
    }

    fn schedule_at(&mut self, at: SimTime, event: Event) {
        if at > self.end {
            return;
        }
        self.seq += 1;
        self.queue.insert((at.0, self.seq), event);
    }

    fn schedule_ms(&mut self, after_ms: u64, event: Event) {
        self.schedule_at(self.now.plus_micros(after_ms.saturating_mul(1000)), event);
    }

    fn run(&mut self) {
        while let Some(((t, _), event)) = self.queue.pop_first() {
            self.now = SimTime(t);
            self.dispatch(event);
        }
        // reports still waiting for a rating are recorded unrated
        for (_, report) in std::mem::take(&mut self.pending_reports) {
            self.ingest(report);
        }
    }

    fn dispatch(&mut self, event: Event) {
        let now = self.now;
        match event {
            Event::HostTick(i) => {
                let actions = self.hosts[i].tick(now);
                self.apply(Endpoint::Host(i), actions);
            }
            Event::HostDepart(i) => self.depart(i),
            Event::Demand(i) => {
                let actions = self.requesters[i].tick(now);
                self.apply(Endpoint::Requester(i), actions);
            }
            Event::Timer { who, token } => {
                let actions = match who {
                    Endpoint::Host(i) => self.hosts[i].timer(now, &token, &self.catalog),
                    Endpoint::Requester(i) => self.requesters[i].timer(now, &token),
                    _ => vec![],
                };
                self.apply(who, actions);
            }
            Event::RatingDeadline(corr) => {
                if let Some(report) = self.pending_reports.remove(&corr) {
                    self.ingest(report);
                }
            }
            Event::Sweep => {
                let subs = self.gov.substitution_sweep();
                self.substitutions.extend(subs);
                let interval = self.scenario.policies.profiler.sweep_interval_s * 1000;
                self.schedule_ms(interval, Event::Sweep);
            }
            Event::Deliver { from, to, msg } => self.deliver(from, to, msg),
        }
    }

    fn depart(&mut self, i: usize) {
        if !self.hosts[i].is_alive() {
            return;
        }
        self.hosts[i].depart();
        self.gov.host_departed(&self.hosts[i].id).expect("registered host");
    }

    fn record(&mut self, to: Endpoint, msg: &ProtocolMessage) {
        if to != Endpoint::Governor {
            let json = serde_json::to_string(msg).expect("messages serialize");
            if self.developer_needles.iter().any(|n| json.contains(n.as_str())) {
                self.anonymity_violations += 1;
            }
        }
        self.trace.push(TraceRecord { at: self.now, to, msg: msg.clone() });
    }

    fn deliver(&mut self, from: Endpoint, to: Endpoint, msg: ProtocolMessage) {
        let now = self.now;
        if let Endpoint::Host(i) = to {
            if !self.hosts[i].is_alive() {
                return;
            }
        }
        self.messages_delivered += 1;
        // allocation messages enter the trace when the governor decides
        let allocation_reply = matches!(msg.kind(), MessageKind::AllocationConfirm | MessageKind::AllocationDenied);
        if msg.kind() != MessageKind::HostingRequest && !allocation_reply {
            self.record(to, &msg);
        }
        match to {
            Endpoint::Governor => self.governor_handle(from, msg),
            Endpoint::Cloud => self.cloud_handle(from, msg),
            Endpoint::Host(i) => {
                let battery = self.hosts[i].battery_mwh();
                let actions = self.hosts[i].handle(now, &msg, &self.catalog);
                if self.hosts[i].battery_mwh() != battery {
                    let id = self.hosts[i].id.clone();
                    self.gov.set_battery(&id, self.hosts[i].battery_mwh()).expect("registered host");
                }
                self.apply(to, actions);
            }
            Endpoint::Requester(i) => {
                let actions = self.requesters[i].handle(now, &msg);
                self.apply(to, actions);
            }
        }
    }

    fn resolve(&self, address: &Address) -> Option<Endpoint> {
        match address {
            Address::Governor => Some(Endpoint::Governor),
            Address::Host(id) if self.scenario.baseline_mode == BaselineMode::WanCloud && id.as_str() == CLOUD_HOST => {
                Some(Endpoint::Cloud)
            }
            Address::Host(id) => self.host_index.get(id).map(|&i| Endpoint::Host(i)),
            Address::Anon(p) => self.sessions.get(p).copied(),
        }
    }

    fn one_way_us(&mut self, from: Endpoint, to: Endpoint) -> u64 {
        let lat = &self.scenario.latency;
        let range = if from == Endpoint::Governor || to == Endpoint::Governor {
            lat.governor_ms
        } else if from == Endpoint::Cloud || to == Endpoint::Cloud {
            lat.wan_ms
        } else {
            lat.wlan_ms
        };
        let seed = self.scenario.seed;
        let rng = self.latency_rngs.entry(from).or_insert_with(|| {
            let code = match from {
                Endpoint::Governor => 0,
                Endpoint::Cloud => 1,
                Endpoint::Host(i) => 2 + 2 * i as u64,
                Endpoint::Requester(i) => 3 + 2 * i as u64,
            };
            stream(seed, LATENCY_STREAM | code)
        });
        let rtt_ms = if range.1 > range.0 { rng.random_range(range.0..=range.1) } else { range.0 };
        (rtt_ms * 1000.0 / 2.0).round() as u64
    }

    fn send(&mut self, from: Endpoint, to: Endpoint, msg: ProtocolMessage, after_ms: u64) {
        if let MessageBody::DiscoveryQuery { requester, .. } | MessageBody::Invoke { requester, .. } = &msg.body {
            self.sessions.insert(requester.clone(), from);
        }
        let delay = after_ms * 1000 + self.one_way_us(from, to);
        self.schedule_at(self.now.plus_micros(delay), Event::Deliver { from, to, msg });
    }

    fn apply(&mut self, from: Endpoint, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Send { to, msg, after_ms } => {
                    if let Some(to) = self.resolve(&to) {
                        self.send(from, to, msg, after_ms);
                    }
                }
                Action::Timer { after_ms, token } => self.schedule_ms(after_ms, Event::Timer { who: from, token }),
                Action::NextTick { after_ms } => match from {
                    Endpoint::Host(i) => self.schedule_ms(after_ms, Event::HostTick(i)),
                    Endpoint::Requester(i) => self.schedule_ms(after_ms, Event::Demand(i)),
                    _ => {}
                },
                Action::Depart => {
                    if let Endpoint::Host(i) = from {
                        self.depart(i);
                    }
                }
            }
        }
    }

    fn reply(&mut self, to: Endpoint, request: &ProtocolMessage, body: MessageBody) {
        let msg = request.reply(Role::Governor, body);
        self.send(Endpoint::Governor, to, msg, 0);
    }

    fn governor_handle(&mut self, from: Endpoint, msg: ProtocolMessage) {
        let now = self.now;
        match &msg.body {
            MessageBody::ListServicesRequest { free, platform, .. } => {
                let services = self.gov.list_available_services(free, platform);
                self.reply(from, &msg, MessageBody::ListServicesReply { services });
            }
            MessageBody::HostingRequest { host_id, service_id } => {
                let min_share = match from {
                    Endpoint::Host(i) => self.hosts[i].config.min_share,
                    _ => crate::domain::Share::ZERO,
                };
                let Ok(mut decision) = self.gov.request_hosting(host_id, service_id, min_share, &msg.correlation_id, now)
                else {
                    return;
                };
                match decision.outcome {
                    AllocationOutcome::Confirmed => {
                        self.allocations.confirmed += 1;
                        if self.options.fault == Some(Fault::SkipScStep) {
                            decision.trace.retain(|m| m.kind() != MessageKind::ScQuery);
                        }
                    }
                    AllocationOutcome::Denied(reason) => {
                        *self.allocations.denied.entry(reason.to_string()).or_default() += 1;
                    }
                }
                for m in &decision.trace {
                    self.record(Endpoint::Governor, m);
                }
                let last = decision.trace.last().expect("decisions end with a verdict").clone();
                self.send(Endpoint::Governor, from, last, 0);
            }
            MessageBody::DiscoveryQuery { query, requester } => {
                let mut results = self.gov.discover(query, requester);
                if self.scenario.baseline_mode == BaselineMode::WanCloud {
                    for r in &mut results {
                        r.hosts = vec![HostEndpoint {
                            host_id: HostId::new(CLOUD_HOST),
                            level: SecurityLevel::High,
                            trust_score: 1.0,
                        }];
                    }
                }
                self.reply(from, &msg, MessageBody::DiscoveryReply { results });
            }
            MessageBody::ExecutionReportMsg { report } => {
                let mut report = report.clone();
                if !report.outcome.is_success() {
                    self.ingest(report);
                } else if let Some(r) = self.pending_ratings.remove(&report.report_id) {
                    report.rating = Some(r);
                    self.ingest(report);
                } else {
                    let corr = report.report_id.clone();
                    self.pending_reports.insert(corr.clone(), report);
                    let window = self.scenario.policies.rating_window_s * 1000;
                    self.schedule_ms(window, Event::RatingDeadline(corr));
                }
            }
            MessageBody::RateService { rating, .. } => match self.pending_reports.remove(&msg.correlation_id) {
                Some(mut report) => {
                    report.rating = Some(*rating);
                    self.ingest(report);
                }
                None => {
                    self.pending_ratings.insert(msg.correlation_id.clone(), *rating);
                }
            },
            _ => {}
        }
    }

    fn ingest(&mut self, report: ExecutionReport) {
        self.gov.ingest_report(report).expect("reports name registered hosts and services");
    }

    fn cloud_exec_ms(&self, id: &ServiceId) -> u64 {
        self.catalog.get(id).map_or(0, |rt| rt.exec_ms + rt.dependencies.iter().map(|d| self.cloud_exec_ms(d)).sum::<u64>())
    }

    /// The WAN baseline: one always-on server that runs whole chains itself.
    fn cloud_handle(&mut self, from: Endpoint, msg: ProtocolMessage) {
        let MessageBody::Invoke { service_id, requester, .. } = &msg.body else { return };
        let exec = self.cloud_exec_ms(service_id);
        self.gov
            .meter_external(service_id, requester, &msg.correlation_id, self.now)
            .expect("cloud invocations have unique ids");
        let body = MessageBody::InvokeResult {
            service_id: service_id.clone(),
            host_id: HostId::new(CLOUD_HOST),
            outcome: crate::domain::Outcome::Success,
            duration_ms: exec,
        };
        let result = ProtocolMessage::new(Role::Host, msg.correlation_id.clone(), body);
        self.send(Endpoint::Cloud, from, result, exec);
    }

    fn finish(self) -> RunOutput {
        let conformance = check_trace(self.trace.iter().map(|r| &r.msg));
        let pseudonyms: BTreeSet<Pseudonym> = self.sessions.keys().cloned().collect();

        let escalation_leaks = self
            .gov
            .escalations()
            .iter()
            .filter(|e| {
                let json = serde_json::to_string(e).expect("escalations serialize");
                pseudonyms.iter().any(|p| json.contains(p.as_str()))
            })
            .count();

        let mut demand = DemandCounts::default();
        let mut inv = InvocationCounts::default();
        let mut latencies = Vec::new();
        for r in &self.requesters {
            demand.events += r.stats.demand_events;
            demand.available += r.stats.available;
            demand.unavailable += r.stats.unavailable;
            inv.attempted += r.stats.invocations;
            inv.succeeded += r.stats.succeeded;
            inv.failed += r.stats.failed;
            inv.timed_out += r.stats.timed_out;
            latencies.extend_from_slice(&r.stats.latencies_us);
        }
        let resolved = demand.available + demand.unavailable;
        let availability = if resolved == 0 {
            Availability::NoDemand
        } else {
            Availability::Fraction(demand.available as f64 / resolved as f64)
        };

        let trust = self.gov.read(|_, hosts| {
            let mut h = TrustHistogram::default();
            for p in hosts.profiles() {
                match p.certificate.as_ref().map(|c| c.level) {
                    None => h.uncertified += 1,
                    Some(SecurityLevel::Low) => h.low += 1,
                    Some(SecurityLevel::Medium) => h.medium += 1,
                    Some(SecurityLevel::High) => h.high += 1,
                }
            }
            h
        });
        let entries = self.gov.audit(SimTime::ZERO..SimTime(u64::MAX));
        let metrics = MetricsReport {
            format_version: METRICS_FORMAT_VERSION,
            seed: self.scenario.seed,
            baseline_mode: self.scenario.baseline_mode,
            duration_hours: self.scenario.duration_hours,
            hosts: self.hosts.len(),
            requesters: self.requesters.len(),
            availability,
            demand,
            invocations: inv,
            latency_ms: LatencySummary::from_micros(&latencies),
            energy_mwh: self.hosts.iter().map(|h| h.stats.energy_used_mwh).sum(),
            revenue: self.gov.revenue_by_class(),
            ledger: LedgerSummary {
                entries: entries.len(),
                metered_total: entries.iter().map(|e| e.total).sum(),
                conserved: self.gov.billing_conserved(),
            },
            trust,
            allocations: self.allocations,
            trace_violations: conformance.violations.len(),
            anonymity_violations: self.anonymity_violations + escalation_leaks,
            substitutions: self.substitutions,
            escalations: self.gov.escalations().len(),
            messages_delivered: self.messages_delivered,
        };
        RunOutput { metrics, trace: self.trace, conformance, governor: self.gov, pseudonyms }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(json: &str) -> Scenario {
        Scenario::from_json(json).unwrap()
    }

    const SMALL: &str = r#"{
        "duration_hours": 1,
        "services": [{
            "service_id": "echo", "developer_id": "dev-1", "name": "Echo", "description": "echoes text",
            "functionality_tag": "echo", "input_spec": "text", "output_spec": "text", "binding_method": "rest",
            "security_level": "low", "platform": {"os_name": "Android", "min_version": "2.0"},
            "min_resources": {"cpu": 10, "memory": 2, "storage": 1, "energy": 5},
            "price_per_invocation": "1.00", "developer_share": 0.4, "exec_ms": 3
        }],
        "hosts": [{"count": 3, "config": {"departure_rate": 0}}],
        "requesters": [{"count": 2, "config": {"query_pool": ["echo"], "demand_rate": 30}}]
    }"#;

    #[test]
    fn zero_requesters_means_no_demand() {
        let mut s = scenario(SMALL);
        s.requesters.clear();
        let out = run(&s).unwrap();
        assert_eq!(out.metrics.availability, Availability::NoDemand);
        assert_eq!(out.metrics.invocations.attempted, 0);
        assert!(out.metrics.latency_ms.is_none());
    }

    #[test]
    fn empty_run_has_no_traces() {
        let mut s = scenario(SMALL);
        s.requesters.clear();
        s.hosts.clear();
        let out = run(&s).unwrap();
        assert_eq!(out.conformance.allocations, 0);
        assert_eq!(out.metrics.trace_violations, 0);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn small_run_is_consistent() {
        let out = run(&scenario(SMALL)).unwrap();
        let m = &out.metrics;
        assert!(m.invocations.attempted > 0);
        assert_eq!(m.allocations.confirmed, 3);
        assert_eq!(m.trace_violations, 0);
        assert_eq!(m.anonymity_violations, 0);
        assert!(m.ledger.conserved);
        assert_eq!(m.ledger.entries as u64, m.invocations.succeeded);
        assert!(out.governor.check_invariants().is_empty());
        for r in &out.trace {
            assert!(r.at <= SimTime::from_millis(3_600_000));
        }
    }

    #[test]
    fn same_seed_same_metrics() {
        let s = scenario(SMALL);
        assert_eq!(run(&s).unwrap().metrics.to_json(), run(&s).unwrap().metrics.to_json());
        let mut other = s.clone();
        other.seed = 99;
        assert_ne!(run(&s).unwrap().metrics.to_json(), run(&other).unwrap().metrics.to_json());
    }

    #[test]
    fn skipped_sc_step_is_a_violation() {
        let s = scenario(SMALL);
        let out = run_with(&s, &RunOptions { fault: Some(Fault::SkipScStep) }).unwrap();
        assert_eq!(out.metrics.trace_violations, 3);
    }

    #[test]
    fn wan_baseline_is_always_available_and_slower() {
        let mut s = scenario(SMALL);
        let local = run(&s).unwrap().metrics;
        s.baseline_mode = BaselineMode::WanCloud;
        let wan = run(&s).unwrap().metrics;
        assert_eq!(wan.availability, Availability::Fraction(1.0));
        assert_eq!(wan.energy_mwh, 0);
        assert!(local.latency_ms.unwrap().mean < wan.latency_ms.unwrap().mean);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = scenario(SMALL);
        s.duration_hours = -1.0;
        assert_eq!(run(&s).unwrap_err().0[0].path, "/duration_hours");
    }
}
