//! Simulated market participants.
//!
//! Agents are single-threaded state machines. The engine feeds them ticks,
//! delivered messages and timer expiries; they answer with [`Action`]s and
//! never touch shared state directly.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    ExecutionReport, FailureReason, HostId, Outcome, Platform, Pseudonym, ResourceVector, ServiceDescription,
    ServiceId, Share, SimTime,
};
use crate::wire::{DiscoveryResult, MessageBody, ProtocolMessage, Role, ServiceListing};

/// Who a message is addressed to, as far as the sender knows.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Address {
    Governor,
    Host(HostId),
    /// Replies to whoever holds this pseudonym; only the engine can resolve it.
    Anon(Pseudonym),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send { to: Address, msg: ProtocolMessage, after_ms: u64 },
    Timer { after_ms: u64, token: String },
    NextTick { after_ms: u64 },
    Depart,
}

fn send(to: Address, msg: ProtocolMessage) -> Action {
    Action::Send { to, msg, after_ms: 0 }
}

/// What a host knows about a service once it has the code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRuntime {
    pub exec_ms: u64,
    pub energy_mwh: u64,
    pub dependencies: Vec<ServiceId>,
}

pub type Catalog = BTreeMap<ServiceId, ServiceRuntime>;

pub fn catalog(services: &[ServiceDescription]) -> Catalog {
    services
        .iter()
        .map(|s| {
            let rt = ServiceRuntime {
                exec_ms: s.exec_ms,
                energy_mwh: s.min_resources.energy,
                dependencies: s.dependencies.clone(),
            };
            (s.service_id.clone(), rt)
        })
        .collect()
}

pub fn pseudonym(rng: &mut impl RngCore) -> Pseudonym {
    Pseudonym::new(format!("anon-{:016x}", rng.next_u64()))
}

/// Exponential inter-event time in milliseconds for a rate per hour, or
/// `None` when the rate is zero.
pub fn exponential_ms(rng: &mut impl Rng, rate_per_hour: f64) -> Option<u64> {
    if rate_per_hour <= 0.0 {
        return None;
    }
    let u: f64 = rng.random();
    let hours = -(1.0 - u).ln() / rate_per_hour;
    Some((hours * 3_600_000.0).round() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Greediness {
    MaxRevenue,
    MinEnergy,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostAgentConfig {
    pub capacity: ResourceVector,
    pub battery_mwh: u64,
    pub platform: Platform,
    pub greediness: Greediness,
    /// Poisson departures per hour.
    pub departure_rate: f64,
    pub failure_prob: f64,
    pub identity_attested: bool,
    pub min_share: Share,
    /// The host leaves once its battery falls below this.
    pub battery_reserve_mwh: u64,
    pub poll_interval_s: u64,
    pub max_services: usize,
    pub dependency_timeout_s: u64,
}

impl Default for HostAgentConfig {
    fn default() -> Self {
        Self {
            capacity: ResourceVector::new(2048, 256, 512, 5000),
            battery_mwh: 40_000,
            platform: Platform { os_name: "Android".into(), version: "4.4".parse().expect("valid version") },
            greediness: Greediness::MaxRevenue,
            departure_rate: 0.1,
            failure_prob: 0.05,
            identity_attested: false,
            min_share: Share::ZERO,
            battery_reserve_mwh: 500,
            poll_interval_s: 600,
            max_services: 3,
            dependency_timeout_s: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequesterAgentConfig {
    /// Invocations per hour.
    pub demand_rate: f64,
    pub query_pool: Vec<String>,
    /// Probability of rating a successful invocation.
    pub rating_prob: f64,
    /// Relative weights of ratings 1 to 5.
    pub rating_bias: [f64; 5],
    pub invoke_timeout_s: u64,
}

impl Default for RequesterAgentConfig {
    fn default() -> Self {
        Self {
            demand_rate: 20.0,
            query_pool: Vec::new(),
            rating_prob: 0.7,
            rating_bias: [0.05, 0.05, 0.1, 0.3, 0.5],
            invoke_timeout_s: 30,
        }
    }
}

/// Draws a rating from 1 to 5 with the given relative weights.
pub fn draw_rating(rng: &mut impl Rng, weights: &[f64; 5]) -> u8 {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i as u8 + 1;
        }
        x -= w;
    }
    5
}

/// Orders offered services by the host's strategy.
pub fn rank_listings(listings: &[ServiceListing], strategy: Greediness, rng: &mut impl Rng) -> Vec<ServiceListing> {
    let mut out = listings.to_vec();
    match strategy {
        Greediness::MaxRevenue => out.sort_by(|a, b| {
            b.host_revenue.cmp(&a.host_revenue).then_with(|| a.service.service_id.cmp(&b.service.service_id))
        }),
        Greediness::MinEnergy => out.sort_by(|a, b| {
            a.service
                .min_resources
                .energy
                .cmp(&b.service.min_resources.energy)
                .then_with(|| a.service.service_id.cmp(&b.service.service_id))
        }),
        Greediness::Random => {
            out.sort_by(|a, b| a.service.service_id.cmp(&b.service.service_id));
            out.shuffle(rng);
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Chain {
    service_id: ServiceId,
    requester: Pseudonym,
    started_at: SimTime,
    next: usize,
    deps: Vec<ServiceId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HostStats {
    pub executions: u64,
    pub energy_used_mwh: u64,
    pub hosting_requests: u64,
}

#[derive(Debug)]
pub struct HostAgent {
    pub id: HostId,
    pub config: HostAgentConfig,
    rng: ChaCha8Rng,
    alive: bool,
    battery_mwh: u64,
    /// Confirmed services and their minimums.
    hosted: BTreeMap<ServiceId, ResourceVector>,
    /// Requests in flight, with the resources they would take.
    pending: BTreeMap<String, (ServiceId, ResourceVector)>,
    awaiting_listing: bool,
    /// Own pseudonym when acting as a requester of dependencies.
    pseudonym: Pseudonym,
    chains: BTreeMap<String, Chain>,
    tags: BTreeMap<ServiceId, String>,
    seq: u64,
    pub stats: HostStats,
}

impl HostAgent {
    pub fn new(id: HostId, config: HostAgentConfig, mut rng: ChaCha8Rng) -> Self {
        let pseudonym = pseudonym(&mut rng);
        Self {
            battery_mwh: config.battery_mwh,
            id,
            config,
            rng,
            alive: true,
            hosted: BTreeMap::new(),
            pending: BTreeMap::new(),
            awaiting_listing: false,
            pseudonym,
            chains: BTreeMap::new(),
            tags: BTreeMap::new(),
            seq: 0,
            stats: HostStats::default(),
        }
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    pub fn battery_mwh(&self) -> u64 {
        self.battery_mwh
    }

    pub fn pseudonym(&self) -> &Pseudonym {
        &self.pseudonym
    }

    pub fn hosted(&self) -> impl Iterator<Item = &ServiceId> {
        self.hosted.keys()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Free resources as the host sees them, counting in-flight requests.
    pub fn free(&self) -> ResourceVector {
        let used = self
            .hosted
            .values()
            .chain(self.pending.values().map(|(_, r)| r))
            .fold(ResourceVector::ZERO, |acc, r| acc.saturating_add(r));
        self.config.capacity.checked_sub(&used).unwrap_or(ResourceVector::ZERO)
    }

    fn next_id(&mut self, what: &str) -> String {
        self.seq += 1;
        format!("{}-{what}-{}", self.id, self.seq)
    }

    pub fn depart(&mut self) {
        self.alive = false;
        self.hosted.clear();
        self.pending.clear();
        self.chains.clear();
    }

    /// Periodic poll: asks the governor what it could host.
    pub fn tick(&mut self, _now: SimTime) -> Vec<Action> {
        if !self.alive {
            return vec![];
        }
        let mut out = vec![Action::NextTick { after_ms: self.config.poll_interval_s * 1000 }];
        let room = self.hosted.len() + self.pending.len() < self.config.max_services;
        if room && !self.awaiting_listing {
            self.awaiting_listing = true;
            let corr = self.next_id("list");
            let body =
                MessageBody::ListServicesRequest { host_id: self.id.clone(), free: self.free(), platform: self.config.platform.clone() };
            out.push(send(Address::Governor, ProtocolMessage::new(Role::Host, corr, body)));
        }
        out
    }

    pub fn handle(&mut self, now: SimTime, msg: &ProtocolMessage, catalog: &Catalog) -> Vec<Action> {
        if !self.alive {
            return vec![];
        }
        match &msg.body {
            MessageBody::ListServicesReply { services } => self.choose(services),
            MessageBody::AllocationConfirm { service_id, .. } => {
                if let Some((id, need)) = self.pending.remove(&msg.correlation_id) {
                    debug_assert_eq!(&id, service_id);
                    self.hosted.insert(id, need);
                }
                vec![]
            }
            MessageBody::AllocationDenied { .. } => {
                self.pending.remove(&msg.correlation_id);
                vec![]
            }
            MessageBody::Invoke { service_id, requester, .. } => {
                self.invoke(now, &msg.correlation_id, service_id, requester, catalog)
            }
            MessageBody::DiscoveryReply { results } => self.resolve_dependency(&msg.correlation_id, results),
            MessageBody::InvokeResult { outcome, .. } => self.dependency_done(now, &msg.correlation_id, *outcome, catalog),
            _ => vec![],
        }
    }

    pub fn timer(&mut self, now: SimTime, token: &str, catalog: &Catalog) -> Vec<Action> {
        if !self.alive {
            return vec![];
        }
        // tokens are "<chain>#<step>"
        let Some((chain_id, step)) = token.rsplit_once('#') else { return vec![] };
        let step: usize = step.parse().unwrap_or(usize::MAX);
        match self.chains.get(chain_id) {
            Some(chain) if chain.next == step => {
                self.finish_chain(now, chain_id, Outcome::Failure(FailureReason::Dependency), catalog)
            }
            _ => vec![],
        }
    }

    fn choose(&mut self, listings: &[ServiceListing]) -> Vec<Action> {
        self.awaiting_listing = false;
        let ranked = rank_listings(listings, self.config.greediness, &mut self.rng);
        let mut out = Vec::new();
        for listing in ranked {
            if self.hosted.len() + self.pending.len() >= self.config.max_services {
                break;
            }
            let sid = &listing.service.service_id;
            if self.hosted.contains_key(sid) || self.pending.values().any(|(p, _)| p == sid) {
                continue;
            }
            let need = listing.service.min_resources;
            if !self.free().covers(&need) {
                continue;
            }
            let corr = self.next_id("alloc");
            self.pending.insert(corr.clone(), (sid.clone(), need));
            self.stats.hosting_requests += 1;
            let body = MessageBody::HostingRequest { host_id: self.id.clone(), service_id: sid.clone() };
            out.push(send(Address::Governor, ProtocolMessage::new(Role::Host, corr, body)));
        }
        out
    }

    fn result_actions(
        &mut self,
        now: SimTime,
        corr: &str,
        service_id: &ServiceId,
        requester: &Pseudonym,
        outcome: Outcome,
        started_at: SimTime,
        exec_ms: u64,
        energy: u64,
    ) -> Vec<Action> {
        let duration_ms = (now.0.saturating_sub(started_at.0)) / 1000 + exec_ms;
        let result = MessageBody::InvokeResult {
            service_id: service_id.clone(),
            host_id: self.id.clone(),
            outcome,
            duration_ms,
        };
        let report = ExecutionReport {
            report_id: corr.to_owned(),
            host_id: self.id.clone(),
            service_id: service_id.clone(),
            requester_pseudonym: requester.clone(),
            started_at,
            duration_ms,
            energy_used_mwh: energy,
            outcome,
            rating: None,
        };
        let mut out = vec![
            Action::Send {
                to: Address::Anon(requester.clone()),
                msg: ProtocolMessage::new(Role::Host, corr, result),
                after_ms: exec_ms,
            },
            Action::Send {
                to: Address::Governor,
                msg: ProtocolMessage::new(Role::Host, corr, MessageBody::ExecutionReportMsg { report }),
                after_ms: exec_ms,
            },
        ];
        if self.battery_mwh < self.config.battery_reserve_mwh {
            out.push(Action::Depart);
        }
        out
    }

    fn invoke(
        &mut self,
        now: SimTime,
        corr: &str,
        service_id: &ServiceId,
        requester: &Pseudonym,
        catalog: &Catalog,
    ) -> Vec<Action> {
        let runtime = catalog.get(service_id).filter(|_| self.hosted.contains_key(service_id));
        let Some(runtime) = runtime else {
            return self.result_actions(now, corr, service_id, requester, Outcome::Failure(FailureReason::NotHosted), now, 0, 0);
        };
        if self.battery_mwh < runtime.energy_mwh {
            return self.result_actions(now, corr, service_id, requester, Outcome::Failure(FailureReason::Energy), now, 0, 0);
        }
        self.battery_mwh -= runtime.energy_mwh;
        self.stats.energy_used_mwh += runtime.energy_mwh;
        self.stats.executions += 1;
        if runtime.dependencies.is_empty() {
            let outcome = self.execution_outcome();
            let (exec, energy) = (runtime.exec_ms, runtime.energy_mwh);
            return self.result_actions(now, corr, service_id, requester, outcome, now, exec, energy);
        }
        let chain = Chain {
            service_id: service_id.clone(),
            requester: requester.clone(),
            started_at: now,
            next: 0,
            deps: runtime.dependencies.clone(),
        };
        self.chains.insert(corr.to_owned(), chain);
        self.discover_dependency(corr)
    }

    fn execution_outcome(&mut self) -> Outcome {
        if self.rng.random::<f64>() < self.config.failure_prob {
            Outcome::Failure(FailureReason::Execution)
        } else {
            Outcome::Success
        }
    }

    /// Dependencies are looked up with an empty query, which matches every
    /// active service, so substitutes with the same tag are visible too.
    fn discover_dependency(&mut self, chain_id: &str) -> Vec<Action> {
        let step = self.chains[chain_id].next;
        let body = MessageBody::DiscoveryQuery { query: String::new(), requester: self.pseudonym.clone() };
        vec![
            send(Address::Governor, ProtocolMessage::new(Role::Requester, format!("{chain_id}/d{step}"), body)),
            Action::Timer { after_ms: self.config.dependency_timeout_s * 1000, token: format!("{chain_id}#{step}") },
        ]
    }

    fn resolve_dependency(&mut self, corr: &str, results: &[DiscoveryResult]) -> Vec<Action> {
        for r in results {
            self.tags.insert(r.service.service_id.clone(), r.service.functionality_tag.clone());
        }
        let Some((chain_id, step)) = split_step(corr, 'd') else { return vec![] };
        let Some(chain) = self.chains.get(chain_id) else { return vec![] };
        if chain.next != step {
            return vec![];
        }
        let dep = &chain.deps[step];
        let tag = self.tags.get(dep);
        let pick = results
            .iter()
            .filter(|r| !r.hosts.is_empty())
            .find(|r| &r.service.service_id == dep)
            .or_else(|| results.iter().filter(|r| !r.hosts.is_empty()).find(|r| Some(&r.service.functionality_tag) == tag));
        let Some(pick) = pick else {
            // no live provider: let the timer fail the chain at once
            return vec![Action::Timer { after_ms: 0, token: format!("{chain_id}#{step}") }];
        };
        let body = MessageBody::Invoke {
            service_id: pick.service.service_id.clone(),
            host_id: pick.hosts[0].host_id.clone(),
            requester: self.pseudonym.clone(),
        };
        let to = Address::Host(pick.hosts[0].host_id.clone());
        vec![send(to, ProtocolMessage::new(Role::Requester, format!("{chain_id}/i{step}"), body))]
    }

    fn dependency_done(&mut self, now: SimTime, corr: &str, outcome: Outcome, catalog: &Catalog) -> Vec<Action> {
        let Some((chain_id, step)) = split_step(corr, 'i') else { return vec![] };
        let chain_id = chain_id.to_owned();
        let Some(chain) = self.chains.get_mut(&chain_id) else { return vec![] };
        if chain.next != step {
            return vec![];
        }
        if !outcome.is_success() {
            return self.finish_chain(now, &chain_id, Outcome::Failure(FailureReason::Dependency), catalog);
        }
        chain.next += 1;
        if chain.next < chain.deps.len() {
            return self.discover_dependency(&chain_id);
        }
        let own = self.execution_outcome();
        self.finish_chain(now, &chain_id, own, catalog)
    }

    fn finish_chain(&mut self, now: SimTime, chain_id: &str, outcome: Outcome, catalog: &Catalog) -> Vec<Action> {
        let Some(chain) = self.chains.remove(chain_id) else { return vec![] };
        let runtime = &catalog[&chain.service_id];
        let exec = if outcome.is_success() { runtime.exec_ms } else { 0 };
        let energy = runtime.energy_mwh;
        self.result_actions(now, chain_id, &chain.service_id, &chain.requester, outcome, chain.started_at, exec, energy)
    }
}

fn split_step(corr: &str, tag: char) -> Option<(&str, usize)> {
    let (chain, step) = corr.rsplit_once('/')?;
    let n = step.strip_prefix(tag)?.parse().ok()?;
    Some((chain, n))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RequesterStats {
    pub demand_events: u64,
    /// Demand events whose discovery found at least one live host.
    pub available: u64,
    pub unavailable: u64,
    pub invocations: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub timed_out: u64,
    pub ratings: u64,
    /// Invoke-to-result times in microseconds.
    pub latencies_us: Vec<u64>,
}

#[derive(Debug)]
pub struct RequesterAgent {
    pub index: usize,
    pub config: RequesterAgentConfig,
    rng: ChaCha8Rng,
    /// Pseudonym per demand event, keyed by discovery correlation id.
    sessions: BTreeMap<String, Pseudonym>,
    /// Invocations awaiting a result and when they were sent.
    inflight: BTreeMap<String, SimTime>,
    finished: BTreeSet<String>,
    seq: u64,
    pub stats: RequesterStats,
}

impl RequesterAgent {
    pub fn new(index: usize, config: RequesterAgentConfig, rng: ChaCha8Rng) -> Self {
        Self {
            index,
            config,
            rng,
            sessions: BTreeMap::new(),
            inflight: BTreeMap::new(),
            finished: BTreeSet::new(),
            seq: 0,
            stats: RequesterStats::default(),
        }
    }

    /// Delay until the first demand event, if this requester has any demand.
    pub fn first_demand(&mut self) -> Option<u64> {
        exponential_ms(&mut self.rng, self.config.demand_rate)
    }

    /// A demand event: discover with a fresh pseudonym.
    pub fn tick(&mut self, _now: SimTime) -> Vec<Action> {
        let mut out = Vec::new();
        if let Some(after_ms) = exponential_ms(&mut self.rng, self.config.demand_rate) {
            out.push(Action::NextTick { after_ms });
        }
        if self.config.query_pool.is_empty() {
            return out;
        }
        self.stats.demand_events += 1;
        self.seq += 1;
        let p = pseudonym(&mut self.rng);
        let query = self.config.query_pool[self.rng.random_range(0..self.config.query_pool.len())].clone();
        let corr = format!("{p}-q{}", self.seq);
        self.sessions.insert(corr.clone(), p.clone());
        let body = MessageBody::DiscoveryQuery { query, requester: p };
        out.push(send(Address::Governor, ProtocolMessage::new(Role::Requester, corr, body)));
        out
    }

    pub fn handle(&mut self, now: SimTime, msg: &ProtocolMessage) -> Vec<Action> {
        match &msg.body {
            MessageBody::DiscoveryReply { results } => {
                let Some(p) = self.sessions.remove(&msg.correlation_id) else { return vec![] };
                let Some(hit) = results.iter().find(|r| !r.hosts.is_empty()) else {
                    self.stats.unavailable += 1;
                    return vec![];
                };
                self.stats.available += 1;
                self.stats.invocations += 1;
                let host = hit.hosts[0].host_id.clone();
                let corr = format!("{p}-i{}", self.seq);
                self.inflight.insert(corr.clone(), now);
                let body = MessageBody::Invoke { service_id: hit.service.service_id.clone(), host_id: host.clone(), requester: p };
                vec![
                    send(Address::Host(host), ProtocolMessage::new(Role::Requester, corr.clone(), body)),
                    Action::Timer { after_ms: self.config.invoke_timeout_s * 1000, token: corr },
                ]
            }
            MessageBody::InvokeResult { service_id, host_id, outcome, .. } => {
                let Some(sent) = self.inflight.remove(&msg.correlation_id) else { return vec![] };
                self.finished.insert(msg.correlation_id.clone());
                self.stats.latencies_us.push(now.0 - sent.0);
                if !outcome.is_success() {
                    self.stats.failed += 1;
                    return vec![];
                }
                self.stats.succeeded += 1;
                if self.rng.random::<f64>() >= self.config.rating_prob {
                    return vec![];
                }
                self.stats.ratings += 1;
                let rating = draw_rating(&mut self.rng, &self.config.rating_bias);
                let body = MessageBody::RateService { service_id: service_id.clone(), host_id: host_id.clone(), rating };
                vec![send(Address::Governor, ProtocolMessage::new(Role::Requester, msg.correlation_id.clone(), body))]
            }
            _ => vec![],
        }
    }

    pub fn timer(&mut self, _now: SimTime, token: &str) -> Vec<Action> {
        if self.inflight.remove(token).is_some() {
            self.stats.timed_out += 1;
        }
        vec![]
    }
}
