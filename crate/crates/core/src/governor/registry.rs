//! Service registry: the public service database, registration vetting,
//! discovery for requesters, and listings for browsing hosts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    DeveloperId, HostProfile, Platform, ResourceVector, ServiceDescription, ServiceId, Share,
};
use crate::wire::{DiscoveryResult, HostEndpoint, ServiceListing};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("service {0} is already registered")]
    DuplicateService(ServiceId),
    #[error("service {service} needs {needed}, above the footprint ceiling {ceiling}")]
    FootprintExceeded { service: ServiceId, needed: ResourceVector, ceiling: ResourceVector },
    #[error("service {0} failed the malicious-code scan")]
    ScanFailed(ServiceId),
    #[error("registering {service} would create a dependency cycle through {cycle:?}")]
    DependencyCycle { service: ServiceId, cycle: Vec<ServiceId> },
    #[error("developer {0} has not registered with billing")]
    UnregisteredDeveloper(DeveloperId),
    #[error("unknown service {0}")]
    UnknownService(ServiceId),
    #[error("service {0} is not active")]
    NotActive(ServiceId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum ServiceStatus {
    Active,
    Deprecated { reason: String },
}

impl ServiceStatus {
    pub fn is_active(&self) -> bool {
        matches!(self, ServiceStatus::Active)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub description: ServiceDescription,
    pub status: ServiceStatus,
}

/// Service database keyed by id. Iteration order is id order, which makes
/// every listing deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceDatabase {
    services: BTreeMap<ServiceId, ServiceRecord>,
    /// Lower-cased `name + " " + description` per service.
    #[serde(skip)]
    text_index: BTreeMap<ServiceId, String>,
}

fn index_text(desc: &ServiceDescription) -> String {
    format!("{} {}", desc.name, desc.description).to_lowercase()
}

impl ServiceDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds derived state after deserialization.
    pub fn reindex(&mut self) {
        self.text_index =
            self.services.iter().map(|(id, rec)| (id.clone(), index_text(&rec.description))).collect();
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn get(&self, id: &ServiceId) -> Option<&ServiceRecord> {
        self.services.get(id)
    }

    pub fn description(&self, id: &ServiceId) -> Option<&ServiceDescription> {
        self.services.get(id).map(|r| &r.description)
    }

    pub fn is_active(&self, id: &ServiceId) -> bool {
        self.services.get(id).is_some_and(|r| r.status.is_active())
    }

    pub fn records(&self) -> impl Iterator<Item = &ServiceRecord> {
        self.services.values()
    }

    pub fn active(&self) -> impl Iterator<Item = &ServiceDescription> {
        self.services.values().filter(|r| r.status.is_active()).map(|r| &r.description)
    }

    /// Vets and stores a service. The developer check is the caller's job
    /// because developer accounts live in billing.
    pub fn register_service(
        &mut self,
        desc: ServiceDescription,
        scan_attestation: bool,
        footprint_ceiling: &ResourceVector,
    ) -> Result<ServiceId, RegistryError> {
        let id = desc.service_id.clone();
        if self.services.contains_key(&id) {
            return Err(RegistryError::DuplicateService(id));
        }
        if !scan_attestation {
            return Err(RegistryError::ScanFailed(id));
        }
        if !footprint_ceiling.covers(&desc.min_resources) {
            return Err(RegistryError::FootprintExceeded {
                service: id,
                needed: desc.min_resources,
                ceiling: *footprint_ceiling,
            });
        }
        if let Some(cycle) = self.cycle_with(&desc) {
            return Err(RegistryError::DependencyCycle { service: id, cycle });
        }
        self.text_index.insert(id.clone(), index_text(&desc));
        self.services.insert(id.clone(), ServiceRecord { description: desc, status: ServiceStatus::Active });
        Ok(id)
    }

    /// Kahn's algorithm over the registry graph plus `candidate`. Dependencies
    /// on services not registered yet are allowed and count as graph nodes.
    /// Returns the services left on a cycle, if any.
    fn cycle_with(&self, candidate: &ServiceDescription) -> Option<Vec<ServiceId>> {
        let mut edges: BTreeMap<&ServiceId, &[ServiceId]> = self
            .services
            .iter()
            .map(|(id, rec)| (id, rec.description.dependencies.as_slice()))
            .collect();
        edges.insert(&candidate.service_id, &candidate.dependencies);

        let mut nodes: BTreeSet<&ServiceId> = edges.keys().copied().collect();
        nodes.extend(edges.values().flat_map(|deps| deps.iter()));
        let mut indegree: BTreeMap<&ServiceId, usize> = nodes.iter().map(|n| (*n, 0)).collect();
        for deps in edges.values() {
            for d in deps.iter() {
                *indegree.get_mut(d).expect("every dependency is a node") += 1;
            }
        }
        let mut ready: Vec<&ServiceId> =
            indegree.iter().filter(|(_, &d)| d == 0).map(|(n, _)| *n).collect();
        let mut removed = 0;
        while let Some(n) = ready.pop() {
            removed += 1;
            for d in edges.get(n).copied().unwrap_or_default() {
                let deg = indegree.get_mut(d).expect("node");
                *deg -= 1;
                if *deg == 0 {
                    ready.push(d);
                }
            }
        }
        if removed == nodes.len() {
            None
        } else {
            Some(indegree.into_iter().filter(|(_, d)| *d > 0).map(|(n, _)| n.clone()).collect())
        }
    }

    pub fn deprecate_service(&mut self, id: &ServiceId, reason: &str) -> Result<(), RegistryError> {
        let rec = self.services.get_mut(id).ok_or_else(|| RegistryError::UnknownService(id.clone()))?;
        if !rec.status.is_active() {
            return Err(RegistryError::NotActive(id.clone()));
        }
        rec.status = ServiceStatus::Deprecated { reason: reason.to_owned() };
        Ok(())
    }

    /// Case-insensitive substring search over name and description of active
    /// services. Each hit carries its live hosts, best first: higher
    /// certificate level, then higher trust, then host id.
    pub fn discover<'a>(
        &self,
        query: &str,
        hosts: impl IntoIterator<Item = &'a HostProfile> + Clone,
    ) -> Vec<DiscoveryResult> {
        let needle = query.to_lowercase();
        self.services
            .iter()
            .filter(|(_, rec)| rec.status.is_active())
            .filter(|(id, _)| self.text_index.get(*id).is_some_and(|t| t.contains(&needle)))
            .map(|(id, rec)| {
                let mut endpoints: Vec<HostEndpoint> = hosts
                    .clone()
                    .into_iter()
                    .filter(|h| h.alive && h.hosted.contains(id))
                    .filter_map(|h| {
                        h.certificate.as_ref().map(|c| HostEndpoint {
                            host_id: h.host_id.clone(),
                            level: c.level,
                            trust_score: c.trust_score,
                        })
                    })
                    .collect();
                endpoints.sort_by(|a, b| {
                    b.level
                        .cmp(&a.level)
                        .then(b.trust_score.total_cmp(&a.trust_score))
                        .then_with(|| a.host_id.cmp(&b.host_id))
                });
                DiscoveryResult { service: rec.description.public_view(), hosts: endpoints }
            })
            .collect()
    }

    /// Active services a host with `free` resources on `platform` could run,
    /// most lucrative for the host first (ties by id).
    pub fn list_available_services(
        &self,
        free: &ResourceVector,
        platform: &Platform,
        commission: Share,
    ) -> Vec<ServiceListing> {
        let mut listings: Vec<ServiceListing> = self
            .active()
            .filter(|d| platform.satisfies(&d.platform) && free.covers(&d.min_resources))
            .map(|d| ServiceListing { service: d.public_view(), host_revenue: host_revenue(d, commission) })
            .collect();
        listings.sort_by(|a, b| {
            b.host_revenue.cmp(&a.host_revenue).then_with(|| a.service.service_id.cmp(&b.service.service_id))
        });
        listings
    }

    /// Active services sharing `tag`, in id order.
    pub fn with_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a ServiceDescription> + 'a {
        self.active().filter(move |d| d.functionality_tag == tag)
    }
}

/// Per-invocation revenue a host earns when the developer keeps its share and
/// the governor its commission.
pub fn host_revenue(desc: &ServiceDescription, commission: Share) -> crate::domain::Money {
    match desc.developer_share.remainder(commission) {
        Some(share) => desc.price_per_invocation.portion(share),
        None => crate::domain::Money::ZERO,
    }
}
