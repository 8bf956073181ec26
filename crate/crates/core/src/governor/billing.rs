//! Billing and access control: staged negotiation, per-invocation metering,
//! and an append-only ledger.
//!
//! All amounts are integer minor units. Developer and host credits are
//! rounded down; whatever rounding leaves over goes to the governor, so every
//! entry's credits sum to its total.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DeveloperId, HostId, Money, Pseudonym, ServiceId, Share, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BillingPolicy {
    pub governor_commission: Share,
}

impl Default for BillingPolicy {
    fn default() -> Self {
        Self { governor_commission: Share::from_basis_points(2_000).expect("0.2 is a valid share") }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BillingError {
    #[error("developer share {requested} plus commission {commission} exceeds 1")]
    InfeasibleShare { requested: Share, commission: Share },
    #[error("no developer terms recorded for service {0}")]
    UnknownService(ServiceId),
    #[error("host asked for at least {requested} but only {offered} is available")]
    InfeasibleHostShare { requested: Share, offered: Share },
    #[error("invocation {0} was already metered")]
    DuplicateCorrelation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "class", content = "id")]
pub enum Party {
    Developer(DeveloperId),
    Host(HostId),
    Governor,
}

impl Party {
    pub fn class(&self) -> PartyClass {
        match self {
            Party::Developer(_) => PartyClass::Developer,
            Party::Host(_) => PartyClass::Host,
            Party::Governor => PartyClass::Governor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyClass {
    Developer,
    Host,
    Governor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeveloperTerms {
    pub developer_id: DeveloperId,
    pub price_per_invocation: Money,
    pub developer_share: Share,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub service_id: ServiceId,
    pub host_id: HostId,
    pub developer_id: DeveloperId,
    pub developer_share: Share,
    pub host_share: Share,
    pub governor_commission: Share,
    pub price_per_invocation: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credit {
    pub party: Party,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub entry_id: u64,
    pub correlation_id: String,
    pub payer: Pseudonym,
    pub service_id: ServiceId,
    pub total: Money,
    pub credits: Vec<Credit>,
    pub timestamp: SimTime,
}

impl LedgerEntry {
    pub fn credit_to(&self, class: PartyClass) -> Money {
        self.credits.iter().filter(|c| c.party.class() == class).map(|c| c.amount).sum()
    }
}

/// Feasibility check for a developer's terms at registration time.
pub fn negotiate_developer(
    developer_id: &DeveloperId,
    price: Money,
    requested_share: Share,
    policy: &BillingPolicy,
) -> Result<DeveloperTerms, BillingError> {
    if requested_share.checked_add(policy.governor_commission).is_none() {
        return Err(BillingError::InfeasibleShare {
            requested: requested_share,
            commission: policy.governor_commission,
        });
    }
    Ok(DeveloperTerms { developer_id: developer_id.clone(), price_per_invocation: price, developer_share: requested_share })
}

/// Credits for one invocation under `agreement`.
pub fn split(agreement: &Agreement) -> Vec<Credit> {
    let total = agreement.price_per_invocation;
    let developer = total.portion(agreement.developer_share);
    let host = total.portion(agreement.host_share);
    let governor = Money(total.0 - developer.0 - host.0);
    vec![
        Credit { party: Party::Developer(agreement.developer_id.clone()), amount: developer },
        Credit { party: Party::Host(agreement.host_id.clone()), amount: host },
        Credit { party: Party::Governor, amount: governor },
    ]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Billing {
    policy: BillingPolicy,
    developers: BTreeSet<DeveloperId>,
    service_terms: BTreeMap<ServiceId, DeveloperTerms>,
    agreements: BTreeMap<HostId, BTreeMap<ServiceId, Agreement>>,
    entries: Vec<LedgerEntry>,
    #[serde(skip)]
    correlations: HashSet<String>,
    #[serde(skip)]
    balances: HashMap<Party, Money>,
}

impl Billing {
    pub fn new(policy: BillingPolicy) -> Self {
        Self { policy, ..Self::default() }
    }

    pub fn reindex(&mut self) {
        self.correlations = self.entries.iter().map(|e| e.correlation_id.clone()).collect();
        self.balances.clear();
        for credit in self.entries.iter().flat_map(|e| e.credits.iter()) {
            *self.balances.entry(credit.party.clone()).or_default() += credit.amount;
        }
    }

    pub fn policy(&self) -> &BillingPolicy {
        &self.policy
    }

    pub fn register_developer(&mut self, developer_id: DeveloperId) {
        self.developers.insert(developer_id);
    }

    pub fn is_developer(&self, developer_id: &DeveloperId) -> bool {
        self.developers.contains(developer_id)
    }

    pub fn negotiate_developer(
        &self,
        developer_id: &DeveloperId,
        price: Money,
        requested_share: Share,
    ) -> Result<DeveloperTerms, BillingError> {
        negotiate_developer(developer_id, price, requested_share, &self.policy)
    }

    pub fn record_service_terms(&mut self, service_id: ServiceId, terms: DeveloperTerms) {
        self.service_terms.insert(service_id, terms);
    }

    /// The host gets whatever the developer and governor leave, provided
    /// that meets its minimum. Hosts only ever negotiate with the governor.
    pub fn negotiate_host(
        &mut self,
        host_id: &HostId,
        service_id: &ServiceId,
        min_share: Share,
    ) -> Result<Agreement, BillingError> {
        let agreement = self.quote_host(host_id, service_id, min_share)?;
        self.agreements.entry(host_id.clone()).or_default().insert(service_id.clone(), agreement.clone());
        Ok(agreement)
    }

    /// The agreement `negotiate_host` would reach, without recording it.
    pub fn quote_host(&self, host_id: &HostId, service_id: &ServiceId, min_share: Share) -> Result<Agreement, BillingError> {
        let terms = self
            .service_terms
            .get(service_id)
            .ok_or_else(|| BillingError::UnknownService(service_id.clone()))?;
        let commission = self.policy.governor_commission;
        let offered = terms.developer_share.remainder(commission).ok_or(BillingError::InfeasibleShare {
            requested: terms.developer_share,
            commission,
        })?;
        if offered < min_share {
            return Err(BillingError::InfeasibleHostShare { requested: min_share, offered });
        }
        Ok(Agreement {
            service_id: service_id.clone(),
            host_id: host_id.clone(),
            developer_id: terms.developer_id.clone(),
            developer_share: terms.developer_share,
            host_share: offered,
            governor_commission: commission,
            price_per_invocation: terms.price_per_invocation,
        })
    }

    pub fn agreement(&self, host_id: &HostId, service_id: &ServiceId) -> Option<&Agreement> {
        self.agreements.get(host_id).and_then(|m| m.get(service_id))
    }

    pub fn meter_invocation(
        &mut self,
        agreement: &Agreement,
        payer: &Pseudonym,
        correlation_id: &str,
        now: SimTime,
    ) -> Result<&LedgerEntry, BillingError> {
        if self.correlations.contains(correlation_id) {
            return Err(BillingError::DuplicateCorrelation(correlation_id.to_owned()));
        }
        let credits = split(agreement);
        for credit in &credits {
            *self.balances.entry(credit.party.clone()).or_default() += credit.amount;
        }
        self.correlations.insert(correlation_id.to_owned());
        self.entries.push(LedgerEntry {
            entry_id: self.entries.len() as u64 + 1,
            correlation_id: correlation_id.to_owned(),
            payer: payer.clone(),
            service_id: agreement.service_id.clone(),
            total: agreement.price_per_invocation,
            credits,
            timestamp: now,
        });
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Withdrawals are not modelled, so this is the sum of credits.
    pub fn account_balance(&self, party: &Party) -> Money {
        self.balances.get(party).copied().unwrap_or_default()
    }

    pub fn class_totals(&self) -> BTreeMap<PartyClass, Money> {
        let mut out: BTreeMap<PartyClass, Money> =
            [PartyClass::Developer, PartyClass::Host, PartyClass::Governor].into_iter().map(|c| (c, Money::ZERO)).collect();
        for (party, amount) in &self.balances {
            *out.entry(party.class()).or_default() += *amount;
        }
        out
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Entries with timestamps in `range`, oldest first, insertion order on ties.
    pub fn audit(&self, range: Range<SimTime>) -> Vec<&LedgerEntry> {
        let mut out: Vec<&LedgerEntry> = self.entries.iter().filter(|e| range.contains(&e.timestamp)).collect();
        out.sort_by_key(|e| (e.timestamp, e.entry_id));
        out
    }

    pub fn total_metered(&self) -> Money {
        self.entries.iter().map(|e| e.total).sum()
    }

    /// Sum of all balances equals sum of all metered totals, and every entry
    /// balances on its own.
    pub fn is_conserved(&self) -> bool {
        let balances: Money = self.balances.values().copied().sum();
        balances == self.total_metered()
            && self.entries.iter().all(|e| e.credits.iter().map(|c| c.amount).sum::<Money>() == e.total)
    }

    pub fn export_csv(&self) -> String {
        let mut out = String::from(
            "entry_id,correlation_id,payer,service_id,total,developer,host,governor,developer_id,host_id,timestamp_us\n",
        );
        for e in &self.entries {
            let id_of = |class| {
                e.credits
                    .iter()
                    .find_map(|c| match (&c.party, class) {
                        (Party::Developer(d), PartyClass::Developer) => Some(d.to_string()),
                        (Party::Host(h), PartyClass::Host) => Some(h.to_string()),
                        _ => None,
                    })
                    .unwrap_or_default()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                e.entry_id,
                e.correlation_id,
                e.payer,
                e.service_id,
                e.total,
                e.credit_to(PartyClass::Developer),
                e.credit_to(PartyClass::Host),
                e.credit_to(PartyClass::Governor),
                id_of(PartyClass::Developer),
                id_of(PartyClass::Host),
                e.timestamp.0,
            );
        }
        out
    }
}
