//! Shared generators and independent oracles for the property and
//! acceptance suites.
//!
//! Values and thresholds come from a 0.25-step grid so that real-arithmetic
//! score differences are either exactly zero or far above float noise;
//! comparisons against the implementation can then use tight tolerances
//! without boundary flakiness.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use varsel_core::model::{
    Aggregator, Catalog, ChangeRule, ModelSnapshot, ParameterId, Polarity, QoSParameter, Service,
    ServiceId, VariantId,
};
use varsel_core::policy::SelectionPolicy;

pub const TOLERANCE: f64 = 1e-9;

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOLERANCE * (1.0 + a.abs().max(b.abs()))
}

/// Positive quarter-step grid in (0, 100].
pub fn grid_value() -> impl Strategy<Value = f64> {
    (1u32..=400).prop_map(|i| i as f64 * 0.25)
}

pub fn parameter(id: &str, polarity: Polarity, aggregator: Aggregator) -> QoSParameter {
    QoSParameter {
        id: ParameterId::from(id),
        display_name: id.replace('-', " "),
        polarity,
        unit: String::new(),
        conversions: BTreeMap::new(),
        aggregator,
        change_rule: ChangeRule::Stable,
    }
}

/// A selection problem: a model whose variants each wrap one service (so
/// the cached QoS is exactly the generated row) plus a policy over it.
#[derive(Debug, Clone)]
pub struct SelectionInstance {
    pub snapshot: ModelSnapshot,
    pub policy: SelectionPolicy,
    pub polarities: Vec<Polarity>,
    pub rows: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl SelectionInstance {
    pub fn parameter_ids(&self) -> Vec<ParameterId> {
        self.snapshot.catalog.parameters().iter().map(|p| p.id.clone()).collect()
    }

    pub fn variant_ids(&self) -> Vec<VariantId> {
        self.snapshot.variants.iter().map(|v| v.id.clone()).collect()
    }
}

pub fn build_instance(
    polarities: Vec<Polarity>,
    rows: Vec<Vec<f64>>,
    raw_weights: Vec<u32>,
    thresholds: Vec<f64>,
) -> SelectionInstance {
    let params: Vec<QoSParameter> = polarities
        .iter()
        .enumerate()
        .map(|(i, polarity)| parameter(&format!("p{i:02}"), *polarity, Aggregator::Sum))
        .collect();
    let catalog = Catalog::new(params).expect("generated catalog is valid");

    let services: Vec<Service> = rows
        .iter()
        .enumerate()
        .map(|(v, row)| Service {
            id: ServiceId(format!("s{v:03}")),
            qos: row
                .iter()
                .enumerate()
                .map(|(p, value)| (ParameterId(format!("p{p:02}")), *value))
                .collect(),
        })
        .collect();
    let variants = (0..rows.len())
        .map(|v| (VariantId(format!("v{v:03}")), vec![ServiceId(format!("s{v:03}"))]))
        .collect();
    let snapshot =
        ModelSnapshot::new("generated", catalog, services, variants).expect("generated model is valid");

    let weight_sum: u32 = raw_weights.iter().sum();
    let weights: Vec<f64> = raw_weights
        .iter()
        .map(|w| if weight_sum == 0 { 0.0 } else { *w as f64 / weight_sum as f64 })
        .collect();
    let policy = SelectionPolicy {
        user_id: "gen".to_owned(),
        priorities: weights
            .iter()
            .enumerate()
            .map(|(p, w)| (ParameterId(format!("p{p:02}")), *w))
            .collect(),
        thresholds: thresholds
            .iter()
            .enumerate()
            .map(|(p, t)| (ParameterId(format!("p{p:02}")), *t))
            .collect(),
        explicit_threshold: (0..thresholds.len())
            .map(|p| (ParameterId(format!("p{p:02}")), true))
            .collect(),
    };
    SelectionInstance { snapshot, policy, polarities, rows, weights, thresholds }
}

/// Random selection instance with up to the given size. Zero thresholds
/// (which switch sigma to direct comparison) are mixed in when allowed.
pub fn selection_instance(
    max_variants: usize,
    max_params: usize,
    allow_zero_thresholds: bool,
) -> impl Strategy<Value = SelectionInstance> {
    (1..=max_params, 1..=max_variants).prop_flat_map(move |(n_params, n_variants)| {
        let polarity = prop::collection::vec(
            prop::bool::ANY.prop_map(|b| if b { Polarity::Negative } else { Polarity::Positive }),
            n_params,
        );
        let rows = prop::collection::vec(prop::collection::vec(grid_value(), n_params), n_variants);
        let weights = prop::collection::vec(0u32..=10, n_params);
        let threshold = if allow_zero_thresholds {
            prop_oneof![9 => grid_value(), 1 => Just(0.0)].boxed()
        } else {
            grid_value().boxed()
        };
        let thresholds = prop::collection::vec(threshold, n_params);
        (polarity, rows, weights, thresholds)
            .prop_map(|(p, r, w, t)| build_instance(p, r, w, t))
    })
}

// Oracles below restate the selection rules from first principles, without
// going through the dispatcher types.

pub fn oracle_violates(value: f64, threshold: f64, polarity: Polarity) -> bool {
    match polarity {
        Polarity::Negative => value > threshold,
        Polarity::Positive => value < threshold,
    }
}

/// Sign-normalized deviation; `None` when the threshold is zero.
pub fn oracle_sigma(value: f64, threshold: f64, polarity: Polarity) -> Option<f64> {
    if threshold == 0.0 {
        return None;
    }
    Some(match polarity {
        Polarity::Negative => (value - threshold) * 100.0 / threshold,
        Polarity::Positive => (threshold - value) * 100.0 / threshold,
    })
}

pub fn oracle_exclusions(instance: &SelectionInstance) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for (v, row) in instance.rows.iter().enumerate() {
        for (p, value) in row.iter().enumerate() {
            if oracle_violates(*value, instance.thresholds[p], instance.polarities[p]) {
                out.insert((format!("v{v:03}"), format!("p{p:02}")));
            }
        }
    }
    out
}

pub fn oracle_eligible(instance: &SelectionInstance) -> Vec<String> {
    let excluded: BTreeSet<String> =
        oracle_exclusions(instance).into_iter().map(|(v, _)| v).collect();
    (0..instance.rows.len())
        .map(|v| format!("v{v:03}"))
        .filter(|v| !excluded.contains(v))
        .collect()
}

/// Priority-weighted scores of the eligible variants, zero-threshold
/// parameters contributing nothing.
pub fn oracle_scores(instance: &SelectionInstance) -> BTreeMap<String, f64> {
    oracle_eligible(instance)
        .into_iter()
        .map(|vid| {
            let v: usize = vid[1..].parse().expect("generated id");
            let score = instance.rows[v]
                .iter()
                .enumerate()
                .map(|(p, value)| {
                    instance.weights[p]
                        * oracle_sigma(*value, instance.thresholds[p], instance.polarities[p])
                            .unwrap_or(0.0)
                })
                .sum();
            (vid, score)
        })
        .collect()
}
