//! Computational model: the QoS parameter catalog, services with their
//! current QoS values, and variants as service compositions carrying a
//! cached cumulative QoS vector.
//!
//! Snapshots are immutable. [`ModelStore`] serializes updates through a
//! single writer and publishes each new version atomically, so any number
//! of concurrent selections observe one consistent version. Re-estimation
//! after a monitored change recomputes the cached QoS of exactly the
//! variants that use the changed service.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_newtype {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                Self(value)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

id_newtype!(ParameterId, "Canonical identifier of a QoS parameter.");
id_newtype!(ServiceId, "Identifier of a constituent service.");
id_newtype!(VariantId, "Identifier of a service-composition variant.");

/// Whether lower or higher values of a parameter are better.
///
/// Negative parameters (response time, cost) have upper-bound thresholds;
/// positive parameters (accuracy) have lower-bound thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Positive,
}

/// How a parameter accumulates over the services of a sequence composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Sum,
    Min,
    Max,
    Product,
    Average,
}

impl Aggregator {
    /// Folds service-level values into one composition-level value.
    /// Returns `None` on an empty composition.
    pub fn apply(self, values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        Some(match self {
            Aggregator::Sum => values.iter().sum(),
            Aggregator::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Product => values.iter().product(),
            Aggregator::Average => values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

/// Expected fluctuation profile of a parameter, used by the change detector
/// to pick its significance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeRule {
    /// Not expected to fluctuate (e.g. cost); any deviation is significant.
    Stable,
    /// Moderate fluctuations expected (e.g. response time).
    Fluctuating,
}

/// One QoS parameter of the catalog.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct QoSParameter {
    pub id: ParameterId,
    pub display_name: String,
    pub polarity: Polarity,
    /// Canonical unit token; empty for dimensionless parameters.
    #[serde(default)]
    pub unit: String,
    /// Accepted unit tokens with their factor into the canonical unit.
    #[serde(default)]
    pub conversions: BTreeMap<String, f64>,
    pub aggregator: Aggregator,
    pub change_rule: ChangeRule,
}

/// Ordered parameter catalog with name lookup.
#[derive(Debug, Clone)]
pub struct Catalog {
    parameters: Vec<QoSParameter>,
}

/// Lowercases and collapses separators so that "Response time",
/// "response-time" and "response  time" all compare equal.
pub(crate) fn normalize_name(name: &str) -> String {
    name.to_lowercase()
        .replace('-', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl Catalog {
    pub fn new(mut parameters: Vec<QoSParameter>) -> Result<Self, ModelError> {
        let mut seen = BTreeMap::new();
        for param in &mut parameters {
            if seen.insert(param.id.clone(), ()).is_some() {
                return Err(ModelError::DuplicateId { kind: "parameter", id: param.id.0.clone() });
            }
            for (token, factor) in &param.conversions {
                if !factor.is_finite() || *factor <= 0.0 {
                    return Err(ModelError::InvalidParameter {
                        parameter: param.id.clone(),
                        message: format!("conversion factor for {token:?} must be finite and positive"),
                    });
                }
            }
            // The canonical unit always converts with factor 1.
            if !param.unit.is_empty() {
                param.conversions.entry(param.unit.clone()).or_insert(1.0);
            }
        }
        Ok(Self { parameters })
    }

    pub fn parameters(&self) -> &[QoSParameter] {
        &self.parameters
    }

    pub fn get(&self, id: &str) -> Option<&QoSParameter> {
        self.parameters.iter().find(|p| p.id.0 == id)
    }

    /// Case- and separator-insensitive lookup by id or display name.
    pub fn resolve_name(&self, raw: &str) -> Option<&QoSParameter> {
        let wanted = normalize_name(raw);
        self.parameters
            .iter()
            .find(|p| normalize_name(&p.id.0) == wanted || normalize_name(&p.display_name) == wanted)
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }
}

/// A constituent service with its current QoS values in canonical units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Service {
    pub id: ServiceId,
    pub qos: BTreeMap<ParameterId, f64>,
}

/// Composition pattern of a variant. Sequence is the only built-in pattern;
/// the aggregator set is chosen per parameter in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionPattern {
    Sequence,
}

impl Default for CompositionPattern {
    fn default() -> Self {
        CompositionPattern::Sequence
    }
}

/// One implementation variant: an ordered composition of services.
#[derive(Debug, Clone)]
pub struct Variant {
    pub id: VariantId,
    pub services: Vec<ServiceId>,
    pub pattern: CompositionPattern,
    /// Cumulative QoS of the composition, kept in sync with the current
    /// service values of the owning snapshot.
    pub cached_qos: BTreeMap<ParameterId, f64>,
}

/// Computes the cumulative QoS vector of a variant from current service
/// values, applying each parameter's aggregator over the composition in
/// service order.
pub fn aggregate(
    variant: &Variant,
    services: &BTreeMap<ServiceId, Service>,
    catalog: &Catalog,
) -> Result<BTreeMap<ParameterId, f64>, ModelError> {
    if variant.services.is_empty() {
        return Err(ModelError::EmptyVariant(variant.id.clone()));
    }
    let mut out = BTreeMap::new();
    let mut values = Vec::with_capacity(variant.services.len());
    for param in catalog.parameters() {
        values.clear();
        for sid in &variant.services {
            let service = services.get(sid).ok_or_else(|| ModelError::MissingService {
                variant: variant.id.clone(),
                service: sid.clone(),
            })?;
            let value = service.qos.get(&param.id).copied().ok_or_else(|| {
                ModelError::MissingParameterValue { service: sid.clone(), parameter: param.id.clone() }
            })?;
            values.push(value);
        }
        // Non-empty by the check above, so apply cannot return None.
        let folded = param.aggregator.apply(&values).expect("non-empty composition");
        out.insert(param.id.clone(), folded);
    }
    Ok(out)
}

/// One immutable version of the computational model.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    pub requirement: String,
    pub catalog: Catalog,
    pub services: BTreeMap<ServiceId, Service>,
    pub variants: Vec<Variant>,
    pub version: u64,
}

impl ModelSnapshot {
    /// Builds version 1 of a model, validating references and computing the
    /// initial cached QoS of every variant.
    pub fn new(
        requirement: impl Into<String>,
        catalog: Catalog,
        services: Vec<Service>,
        variants: Vec<(VariantId, Vec<ServiceId>)>,
    ) -> Result<Self, ModelError> {
        let mut service_map = BTreeMap::new();
        for service in services {
            for (pid, value) in &service.qos {
                let param = catalog
                    .get(&pid.0)
                    .ok_or_else(|| ModelError::UnknownParameter(pid.clone()))?;
                let negative_ok = param.polarity != Polarity::Negative || *value >= 0.0;
                if !value.is_finite() || !negative_ok {
                    return Err(ModelError::InvalidServiceValue {
                        service: service.id.clone(),
                        parameter: pid.clone(),
                    });
                }
            }
            let id = service.id.clone();
            if service_map.insert(id.clone(), service).is_some() {
                return Err(ModelError::DuplicateId { kind: "service", id: id.0 });
            }
        }
        let mut built = Vec::with_capacity(variants.len());
        let mut seen = BTreeMap::new();
        for (id, service_ids) in variants {
            if seen.insert(id.clone(), ()).is_some() {
                return Err(ModelError::DuplicateId { kind: "variant", id: id.0 });
            }
            let mut variant = Variant {
                id,
                services: service_ids,
                pattern: CompositionPattern::Sequence,
                cached_qos: BTreeMap::new(),
            };
            variant.cached_qos = aggregate(&variant, &service_map, &catalog)?;
            built.push(variant);
        }
        Ok(Self {
            requirement: requirement.into(),
            catalog,
            services: service_map,
            variants: built,
            version: 1,
        })
    }

    pub fn variant(&self, id: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.id.0 == id)
    }

    /// Produces the next snapshot after a monitored change of one service
    /// parameter. Cached QoS is recomputed for exactly the variants whose
    /// composition contains the service; all other variants keep their
    /// previous values. The version counter always advances, even when the
    /// new value equals the old one.
    pub fn reestimate(
        &self,
        service: &ServiceId,
        parameter: &ParameterId,
        value: f64,
    ) -> Result<ModelSnapshot, ModelError> {
        if self.catalog.get(&parameter.0).is_none() {
            return Err(ModelError::UnknownParameter(parameter.clone()));
        }
        let mut services = self.services.clone();
        let entry = services
            .get_mut(service)
            .ok_or_else(|| ModelError::UnknownService(service.clone()))?;
        entry.qos.insert(parameter.clone(), value);

        let mut variants = self.variants.clone();
        for variant in &mut variants {
            if variant.services.contains(service) {
                variant.cached_qos = aggregate(variant, &services, &self.catalog)?;
            }
        }
        Ok(ModelSnapshot {
            requirement: self.requirement.clone(),
            catalog: self.catalog.clone(),
            services,
            variants,
            version: self.version + 1,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let catalog = Catalog::new(file.parameters)?;
        let services = file
            .services
            .into_iter()
            .map(|s| Service { id: ServiceId(s.id), qos: s.qos })
            .collect();
        let variants = file
            .variants
            .into_iter()
            .map(|v| (VariantId(v.id), v.services.into_iter().map(ServiceId).collect()))
            .collect();
        ModelSnapshot::new(file.requirement, catalog, services, variants)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ModelFile {
    requirement: String,
    parameters: Vec<QoSParameter>,
    services: Vec<ServiceFile>,
    variants: Vec<VariantFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceFile {
    id: String,
    qos: BTreeMap<ParameterId, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantFile {
    id: String,
    services: Vec<String>,
}

/// Shared handle over the current model version. A single writer applies
/// re-estimations and publishes complete snapshots; readers grab an `Arc`
/// to the current version and are never blocked by an in-flight update.
#[derive(Debug)]
pub struct ModelStore {
    current: RwLock<Arc<ModelSnapshot>>,
}

impl ModelStore {
    pub fn new(initial: ModelSnapshot) -> Self {
        Self { current: RwLock::new(Arc::new(initial)) }
    }

    /// The current published version.
    pub fn snapshot(&self) -> Arc<ModelSnapshot> {
        self.current.read().expect("model store poisoned").clone()
    }

    /// Applies one change and publishes the next version.
    pub fn reestimate(
        &self,
        service: &ServiceId,
        parameter: &ParameterId,
        value: f64,
    ) -> Result<Arc<ModelSnapshot>, ModelError> {
        let mut guard = self.current.write().expect("model store poisoned");
        let next = Arc::new(guard.reestimate(service, parameter, value)?);
        *guard = next.clone();
        Ok(next)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown service {0:?}")]
    UnknownService(ServiceId),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(ParameterId),
    #[error("variant {variant} references missing service {service:?}")]
    MissingService { variant: VariantId, service: ServiceId },
    #[error("service {service} has no value for parameter {parameter:?}")]
    MissingParameterValue { service: ServiceId, parameter: ParameterId },
    #[error("variant {0} has an empty composition")]
    EmptyVariant(VariantId),
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("parameter {parameter}: {message}")]
    InvalidParameter { parameter: ParameterId, message: String },
    #[error("service {service} value for {parameter:?} must be finite (and non-negative for negative-polarity parameters)")]
    InvalidServiceValue { service: ServiceId, parameter: ParameterId },
    #[error("model file: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}
