//! Core value types shared by the governor, the agents, and the simulator.
//!
//! Everything here is an immutable value: resource vectors, the security
//! level lattice, platform versions, money, and the records that flow
//! between governor sub-units.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_newtype!(
    /// Registry key of a published service.
    ServiceId
);
id_newtype!(
    /// Mobile host identity as known to the governor.
    HostId
);
id_newtype!(
    /// Service developer (provider) identity. Never shown to requesters.
    DeveloperId
);
id_newtype!(
    /// Opaque per-session requester token. Unlinkable to the requester identity.
    Pseudonym
);

/// Simulation time in microseconds since the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn plus_micros(self, us: u64) -> Self {
        SimTime(self.0.saturating_add(us))
    }
}

/// Sensitivity of a service, and the trust a host has earned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecurityLevel {
    Low = 0,
    Medium = 1,
    High = 2,
}

impl SecurityLevel {
    pub const ALL: [SecurityLevel; 3] = [SecurityLevel::Low, SecurityLevel::Medium, SecurityLevel::High];

    pub fn promoted(self) -> SecurityLevel {
        match self {
            SecurityLevel::Low => SecurityLevel::Medium,
            _ => SecurityLevel::High,
        }
    }

    pub fn demoted(self) -> SecurityLevel {
        match self {
            SecurityLevel::High => SecurityLevel::Medium,
            _ => SecurityLevel::Low,
        }
    }
}

impl fmt::Display for SecurityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SecurityLevel::Low => "low",
            SecurityLevel::Medium => "medium",
            SecurityLevel::High => "high",
        })
    }
}

/// A host may run a service iff its certificate level is at least the
/// service's sensitivity.
pub fn level_admits(host_level: SecurityLevel, service_level: SecurityLevel) -> bool {
    host_level >= service_level
}

/// CPU in MHz, memory and storage in MB, energy in mWh per invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu: u64,
    pub memory: u64,
    pub storage: u64,
    pub energy: u64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { cpu: 0, memory: 0, storage: 0, energy: 0 };

    pub const fn new(cpu: u64, memory: u64, storage: u64, energy: u64) -> Self {
        Self { cpu, memory, storage, energy }
    }

    /// Component-wise dominance: `self` has at least as much of everything as `other`.
    pub fn covers(&self, other: &ResourceVector) -> bool {
        self.cpu >= other.cpu
            && self.memory >= other.memory
            && self.storage >= other.storage
            && self.energy >= other.energy
    }

    /// `None` when any component would go negative.
    pub fn checked_sub(&self, other: &ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector {
            cpu: self.cpu.checked_sub(other.cpu)?,
            memory: self.memory.checked_sub(other.memory)?,
            storage: self.storage.checked_sub(other.storage)?,
            energy: self.energy.checked_sub(other.energy)?,
        })
    }

    pub fn saturating_add(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector {
            cpu: self.cpu.saturating_add(other.cpu),
            memory: self.memory.saturating_add(other.memory),
            storage: self.storage.saturating_add(other.storage),
            energy: self.energy.saturating_add(other.energy),
        }
    }

    pub fn total(&self) -> u128 {
        self.cpu as u128 + self.memory as u128 + self.storage as u128 + self.energy as u128
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.cpu, self.memory, self.storage, self.energy)
    }
}

pub fn covers(a: &ResourceVector, b: &ResourceVector) -> bool {
    a.covers(b)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VersionError {
    #[error("empty version string")]
    Empty,
    #[error("version `{0}` has more than 3 components")]
    TooManyComponents(String),
    #[error("version `{0}` has a non-numeric component")]
    NotNumeric(String),
}

/// Dotted numeric version with 1 to 3 components.
///
/// Equality and ordering treat missing trailing components as zero, so
/// `3.2 == 3.2.0`; the original component count is kept for display.
#[derive(Debug, Clone, Copy)]
pub struct Version {
    parts: [u32; 3],
    len: u8,
}

impl Version {
    pub fn new(parts: &[u32]) -> Result<Self, VersionError> {
        if parts.is_empty() {
            return Err(VersionError::Empty);
        }
        if parts.len() > 3 {
            let s = parts.iter().map(u32::to_string).collect::<Vec<_>>().join(".");
            return Err(VersionError::TooManyComponents(s));
        }
        let mut padded = [0u32; 3];
        padded[..parts.len()].copy_from_slice(parts);
        Ok(Version { parts: padded, len: parts.len() as u8 })
    }

    pub fn components(&self) -> &[u32] {
        &self.parts[..self.len as usize]
    }

    fn key(&self) -> [u32; 3] {
        self.parts
    }
}

impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Version {}

impl std::hash::Hash for Version {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl FromStr for Version {
    type Err = VersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(VersionError::Empty);
        }
        let pieces: Vec<&str> = s.split('.').collect();
        if pieces.len() > 3 {
            return Err(VersionError::TooManyComponents(s.to_owned()));
        }
        let mut parts = Vec::with_capacity(pieces.len());
        for piece in pieces {
            if piece.is_empty() || !piece.bytes().all(|b| b.is_ascii_digit()) {
                return Err(VersionError::NotNumeric(s.to_owned()));
            }
            parts.push(piece.parse::<u32>().map_err(|_| VersionError::NotNumeric(s.to_owned()))?);
        }
        Version::new(&parts)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, part) in self.components().iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{part}")?;
        }
        Ok(())
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn version_at_least(host_version: &str, min_version: &str) -> Result<bool, VersionError> {
    let host: Version = host_version.parse()?;
    let min: Version = min_version.parse()?;
    Ok(host >= min)
}

/// Minimum platform a service needs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlatformRequirement {
    pub os_name: String,
    pub min_version: Version,
}

/// Platform a host actually runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Platform {
    pub os_name: String,
    pub version: Version,
}

impl Platform {
    /// OS names compare case-sensitively.
    pub fn satisfies(&self, req: &PlatformRequirement) -> bool {
        self.os_name == req.os_name && self.version >= req.min_version
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MoneyError {
    #[error("malformed amount `{0}`")]
    Malformed(String),
    #[error("amount `{0}` has more than two decimal places")]
    TooPrecise(String),
}

/// Currency amount in integer minor units (cents).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(pub u64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_minor(minor: u64) -> Self {
        Money(minor)
    }

    pub fn minor(self) -> u64 {
        self.0
    }

    /// Floor of `self * share`, in minor units.
    pub fn portion(self, share: Share) -> Money {
        Money(((self.0 as u128 * share.basis_points() as u128) / Share::SCALE as u128) as u64)
    }
}

impl std::ops::Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl FromStr for Money {
    type Err = MoneyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MoneyError::Malformed(s.to_owned());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) || (s.contains('.') && frac.is_empty()) {
            return Err(bad());
        }
        if frac.len() > 2 {
            return Err(MoneyError::TooPrecise(s.to_owned()));
        }
        let whole: u64 = whole.parse().map_err(|_| bad())?;
        let cents: u64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<u64>().map_err(|_| bad())? * 10,
            _ => frac.parse().map_err(|_| bad())?,
        };
        whole.checked_mul(100).and_then(|w| w.checked_add(cents)).map(Money).ok_or_else(bad)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A revenue fraction in [0,1], held as basis points so shares add up exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Share(u32);

impl Share {
    pub const SCALE: u32 = 10_000;
    pub const ZERO: Share = Share(0);
    pub const ONE: Share = Share(Self::SCALE);

    pub fn from_basis_points(bp: u32) -> Option<Share> {
        (bp <= Self::SCALE).then_some(Share(bp))
    }

    /// Rounds to the nearest basis point; `None` outside [0,1] or for NaN.
    pub fn from_fraction(x: f64) -> Option<Share> {
        if !(0.0..=1.0).contains(&x) {
            return None;
        }
        Some(Share((x * Self::SCALE as f64).round() as u32))
    }

    pub fn basis_points(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    pub fn checked_add(self, other: Share) -> Option<Share> {
        Share::from_basis_points(self.0 + other.0)
    }

    /// `1 - self - other`, or `None` if that would be negative.
    pub fn remainder(self, other: Share) -> Option<Share> {
        Self::SCALE.checked_sub(self.0 + other.0).map(Share)
    }
}

impl fmt::Display for Share {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Share {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Share {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let x = f64::deserialize(deserializer)?;
        Share::from_fraction(x)
            .ok_or_else(|| serde::de::Error::custom(format!("share {x} outside [0,1]")))
    }
}

/// A publishable service as registered by its developer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDescription {
    pub service_id: ServiceId,
    pub developer_id: DeveloperId,
    pub name: String,
    pub description: String,
    /// Services with equal tags are interchangeable for substitution.
    pub functionality_tag: String,
    pub input_spec: String,
    pub output_spec: String,
    pub binding_method: String,
    pub security_level: SecurityLevel,
    pub platform: PlatformRequirement,
    pub min_resources: ResourceVector,
    pub price_per_invocation: Money,
    pub developer_share: Share,
    #[serde(default)]
    pub dependencies: Vec<ServiceId>,
    /// Simulated execution time on a host, excluding network time.
    #[serde(default)]
    pub exec_ms: u64,
}

impl ServiceDescription {
    pub fn is_composite(&self) -> bool {
        !self.dependencies.is_empty()
    }

    /// The requester-facing view, with the developer identity removed.
    pub fn public_view(&self) -> PublicServiceDescription {
        PublicServiceDescription {
            service_id: self.service_id.clone(),
            name: self.name.clone(),
            description: self.description.clone(),
            functionality_tag: self.functionality_tag.clone(),
            input_spec: self.input_spec.clone(),
            output_spec: self.output_spec.clone(),
            binding_method: self.binding_method.clone(),
            security_level: self.security_level,
            platform: self.platform.clone(),
            min_resources: self.min_resources,
            price_per_invocation: self.price_per_invocation,
            dependencies: self.dependencies.clone(),
        }
    }
}

/// What discovery hands to requesters. Has no developer field by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicServiceDescription {
    pub service_id: ServiceId,
    pub name: String,
    pub description: String,
    pub functionality_tag: String,
    pub input_spec: String,
    pub output_spec: String,
    pub binding_method: String,
    pub security_level: SecurityLevel,
    pub platform: PlatformRequirement,
    pub min_resources: ResourceVector,
    pub price_per_invocation: Money,
    pub dependencies: Vec<ServiceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityCertificate {
    pub host_id: HostId,
    pub level: SecurityLevel,
    pub trust_score: f64,
    pub attempts: u64,
    pub successes: u64,
    pub issued_at: SimTime,
    pub identity_verified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostProfile {
    pub host_id: HostId,
    pub platform: Platform,
    pub capacity: ResourceVector,
    /// Sum of `min_resources` over hosted services.
    pub committed: ResourceVector,
    pub battery_mwh: u64,
    /// Issued lazily on the first hosting request.
    pub certificate: Option<SecurityCertificate>,
    /// Identity attestation presented at registration, used when trust is first established.
    pub identity_attested: bool,
    pub hosted: BTreeSet<ServiceId>,
    pub attempts: u64,
    pub successes: u64,
    pub availability_ratio: f64,
    pub rating_count: u64,
    pub mean_rating: Option<f64>,
    pub alive: bool,
}

impl HostProfile {
    pub fn free(&self) -> ResourceVector {
        self.capacity.checked_sub(&self.committed).unwrap_or(ResourceVector::ZERO)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// Host battery could not cover the invocation.
    Energy,
    /// Security-relevant misbehaviour; counted as a vulnerability.
    Security,
    /// A downstream dependency of a composite failed or was unavailable.
    Dependency,
    /// The service crashed or returned a wrong result.
    Execution,
    /// The host does not (or no longer) host the service.
    NotHosted,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureReason::Energy => "energy",
            FailureReason::Security => "security",
            FailureReason::Dependency => "dependency",
            FailureReason::Execution => "execution",
            FailureReason::NotHosted => "not_hosted",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum Outcome {
    Success,
    Failure(FailureReason),
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }
}

/// One invocation attempt as reported by the executing host.
///
/// `report_id` is the correlation id of the invocation it describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub report_id: String,
    pub host_id: HostId,
    pub service_id: ServiceId,
    pub requester_pseudonym: Pseudonym,
    pub started_at: SimTime,
    pub duration_ms: u64,
    pub energy_used_mwh: u64,
    pub outcome: Outcome,
    pub rating: Option<u8>,
}
