//! Route-planner fixture checks: the shipped service values must aggregate
//! to the documented initial variant estimates, and the cached vectors must
//! match an aggregation recomputed in this test from the raw file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use varsel_core::model::{Aggregator, ModelSnapshot, Polarity};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/routeplanner").join(name)
}

fn model() -> ModelSnapshot {
    ModelSnapshot::load(&fixture("model.toml")).expect("fixture model loads")
}

#[test]
fn initial_variant_estimates_match_documented_values() {
    let model = model();
    let expected: [(&str, f64, f64, f64); 5] = [
        ("V1", 3.0, 10.0, 9.0),
        ("V2", 5.0, 0.0, 2.0),
        ("V3", 4.5, 7.0, 8.0),
        ("V4", 10.0, 20.0, 10.0),
        ("V5", 3.5, 8.0, 9.0),
    ];
    for (id, rt, cost, accuracy) in expected {
        let variant = model.variant(id).expect("variant exists");
        assert_eq!(variant.cached_qos["response-time"], rt, "{id} response time");
        assert_eq!(variant.cached_qos["cost"], cost, "{id} cost");
        assert_eq!(variant.cached_qos["accuracy"], accuracy, "{id} accuracy");
    }
}

#[test]
fn cached_qos_equals_aggregation_recomputed_from_the_file() {
    let model = model();
    // Independent re-aggregation: fold the raw service values directly.
    for variant in &model.variants {
        let mut expected: BTreeMap<&str, f64> = BTreeMap::new();
        for param in model.catalog.parameters() {
            let values: Vec<f64> = variant
                .services
                .iter()
                .map(|sid| model.services[sid].qos[&param.id])
                .collect();
            let folded = match param.aggregator {
                Aggregator::Sum => values.iter().sum(),
                Aggregator::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
                other => panic!("fixture only uses sum and min, found {other:?}"),
            };
            expected.insert(param.id.0.as_str(), folded);
        }
        for (param, value) in expected {
            assert_eq!(variant.cached_qos[param], value, "{} / {param}", variant.id);
        }
    }
}

#[test]
fn shared_time_estimator_is_used_by_the_first_four_variants() {
    let model = model();
    for (id, uses_estimator) in [("V1", true), ("V2", true), ("V3", true), ("V4", true), ("V5", false)] {
        let variant = model.variant(id).unwrap();
        assert_eq!(
            variant.services.iter().any(|s| s.0 == "estimate-time"),
            uses_estimator,
            "{id} composition"
        );
    }
    // The road-department feed is V1's only costly service, so a cost
    // change there re-estimates V1 alone.
    let costly_users: Vec<&str> = model
        .variants
        .iter()
        .filter(|v| v.services.iter().any(|s| s.0 == "road-info"))
        .map(|v| v.id.0.as_str())
        .collect();
    assert_eq!(costly_users, vec!["V1"]);
}

#[test]
fn parameter_catalog_declares_expected_polarities_and_rules() {
    let model = model();
    let rt = model.catalog.get("response-time").unwrap();
    assert_eq!(rt.polarity, Polarity::Negative);
    assert_eq!(rt.unit, "s");
    assert_eq!(rt.conversions["day"], 86400.0);
    let cost = model.catalog.get("cost").unwrap();
    assert_eq!(cost.conversions["euros"], 100.0);
    let accuracy = model.catalog.get("accuracy").unwrap();
    assert_eq!(accuracy.polarity, Polarity::Positive);
    assert_eq!(accuracy.aggregator, Aggregator::Min);
}
