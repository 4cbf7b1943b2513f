//! Per-request variant selection.
//!
//! For each variant and parameter the dispatcher computes sigma, the
//! deviation from the threshold in percent, sign-normalized so that a
//! positive sigma always means the threshold is violated:
//!
//! ```text
//! negative polarity:  sigma = (current - threshold) * 100 / threshold
//! positive polarity:  sigma = (threshold - current) * 100 / threshold
//! ```
//!
//! Variants with any positive sigma are excluded. Each remaining variant is
//! scored by the priority-weighted sum of its sigmas and the lowest score
//! wins. Exact score ties go to the variant whose worst (largest) sigma is
//! smallest, then to the lexicographically smallest variant id.
//!
//! A zero threshold leaves sigma undefined; such a parameter excludes by
//! direct comparison against zero and contributes nothing to the score.
//!
//! Selection is a pure function of one immutable snapshot and one policy,
//! so any number of selections may run concurrently and none observes a
//! torn re-estimation.

use std::collections::BTreeMap;

use serde_json::json;
use thiserror::Error;

use crate::model::{ModelSnapshot, ParameterId, Polarity, VariantId};
use crate::policy::SelectionPolicy;

/// Scores (and tie-break sigmas) closer than this count as equal. Scores
/// are percentages, so the tolerance is far below any meaningful QoS
/// difference while absorbing float rounding.
pub const SCORE_TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("sigma is undefined for a zero threshold")]
    ZeroThreshold,
    #[error("policy has no threshold for parameter {0} (defaults not applied?)")]
    IncompleteThreshold(ParameterId),
    #[error("every variant is excluded by the thresholds")]
    NoEligibleVariant,
}

/// Deviation of a current value from its threshold, in percent, positive
/// exactly when the value is on the wrong side of the threshold.
pub fn sigma(current: f64, threshold: f64, polarity: Polarity) -> Result<f64, DispatchError> {
    if threshold == 0.0 {
        return Err(DispatchError::ZeroThreshold);
    }
    Ok(match polarity {
        Polarity::Negative => (current - threshold) * 100.0 / threshold,
        Polarity::Positive => (threshold - current) * 100.0 / threshold,
    })
}

/// Per-parameter deviation entry; zero thresholds are handled by direct
/// comparison and score as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Deviation {
    Sigma(f64),
    ZeroThreshold { violated: bool },
}

impl Deviation {
    fn violated(self) -> bool {
        match self {
            Deviation::Sigma(value) => value > 0.0,
            Deviation::ZeroThreshold { violated } => violated,
        }
    }

    fn score_value(self) -> f64 {
        match self {
            Deviation::Sigma(value) => value,
            Deviation::ZeroThreshold { .. } => 0.0,
        }
    }
}

fn deviation(current: f64, threshold: f64, polarity: Polarity) -> Deviation {
    if threshold == 0.0 {
        let violated = match polarity {
            Polarity::Negative => current > 0.0,
            Polarity::Positive => current < 0.0,
        };
        Deviation::ZeroThreshold { violated }
    } else {
        Deviation::Sigma(sigma(current, threshold, polarity).expect("nonzero threshold"))
    }
}

/// One excluded (variant, parameter) pair; the parameter is the reason.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Exclusion {
    pub variant: VariantId,
    pub parameter: ParameterId,
}

/// Full audit of one dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub request_id: u64,
    pub user_id: String,
    pub model_version: u64,
    /// Sign-normalized deviations per variant and parameter (0 for
    /// zero-threshold parameters).
    pub sigma: BTreeMap<VariantId, BTreeMap<ParameterId, f64>>,
    pub excluded: Vec<Exclusion>,
    /// Scores of the eligible variants only.
    pub scores: BTreeMap<VariantId, f64>,
    pub tie_break_applied: bool,
    pub selected: VariantId,
}

impl SelectionTrace {
    /// Line-delimited trace record. Scores are fixed to six decimal places.
    pub fn to_record(&self) -> serde_json::Value {
        let scores: BTreeMap<&str, String> = self
            .scores
            .iter()
            .map(|(variant, score)| (variant.0.as_str(), format!("{score:.6}")))
            .collect();
        json!({
            "type": "selection",
            "request": self.request_id,
            "user": self.user_id,
            "model-version": self.model_version,
            "selected": self.selected,
            "tie-break": self.tie_break_applied,
            "excluded": self.excluded,
            "scores": scores,
            "sigma": self.sigma,
        })
    }
}

fn deviation_rows(
    snapshot: &ModelSnapshot,
    policy: &SelectionPolicy,
) -> Result<BTreeMap<VariantId, BTreeMap<ParameterId, Deviation>>, DispatchError> {
    for param in snapshot.catalog.parameters() {
        if !policy.thresholds.contains_key(&param.id) {
            return Err(DispatchError::IncompleteThreshold(param.id.clone()));
        }
    }
    let mut rows = BTreeMap::new();
    for variant in &snapshot.variants {
        let mut row = BTreeMap::new();
        for param in snapshot.catalog.parameters() {
            let current = *variant.cached_qos.get(&param.id).expect("cached QoS covers the catalog");
            let threshold = policy.thresholds[&param.id];
            row.insert(param.id.clone(), deviation(current, threshold, param.polarity));
        }
        rows.insert(variant.id.clone(), row);
    }
    Ok(rows)
}

/// Splits the variants into eligible ones and excluded (variant, parameter)
/// pairs. A variant is excluded as soon as one parameter violates its
/// threshold.
pub fn exclude(
    snapshot: &ModelSnapshot,
    policy: &SelectionPolicy,
) -> Result<(Vec<VariantId>, Vec<Exclusion>), DispatchError> {
    let rows = deviation_rows(snapshot, policy)?;
    Ok(split_eligible(&rows))
}

fn split_eligible(
    rows: &BTreeMap<VariantId, BTreeMap<ParameterId, Deviation>>,
) -> (Vec<VariantId>, Vec<Exclusion>) {
    let mut eligible = Vec::new();
    let mut excluded = Vec::new();
    for (variant, row) in rows {
        let violations: Vec<&ParameterId> =
            row.iter().filter(|(_, dev)| dev.violated()).map(|(id, _)| id).collect();
        if violations.is_empty() {
            eligible.push(variant.clone());
        } else {
            excluded.extend(violations.into_iter().map(|parameter| Exclusion {
                variant: variant.clone(),
                parameter: parameter.clone(),
            }));
        }
    }
    (eligible, excluded)
}

/// Priority-weighted sum of a variant's deviations. Zero-priority
/// parameters contribute nothing.
pub fn score(policy: &SelectionPolicy, sigma_row: &BTreeMap<ParameterId, f64>) -> f64 {
    sigma_row
        .iter()
        .map(|(id, sigma)| policy.priorities.get(id).copied().unwrap_or(0.0) * sigma)
        .sum()
}

/// Selects the eligible variant with the minimal score and emits the trace.
pub fn select(
    snapshot: &ModelSnapshot,
    policy: &SelectionPolicy,
    request_id: u64,
) -> Result<SelectionTrace, DispatchError> {
    let rows = deviation_rows(snapshot, policy)?;
    let (eligible, excluded) = split_eligible(&rows);
    if eligible.is_empty() {
        return Err(DispatchError::NoEligibleVariant);
    }

    let sigma_matrix: BTreeMap<VariantId, BTreeMap<ParameterId, f64>> = rows
        .iter()
        .map(|(variant, row)| {
            (variant.clone(), row.iter().map(|(id, dev)| (id.clone(), dev.score_value())).collect())
        })
        .collect();

    let scores: BTreeMap<VariantId, f64> = eligible
        .iter()
        .map(|variant| (variant.clone(), score(policy, &sigma_matrix[variant])))
        .collect();

    let min_score = scores.values().fold(f64::INFINITY, |acc, &s| acc.min(s));
    let tie_eps = SCORE_TIE_EPSILON * (1.0 + min_score.abs());
    let candidates: Vec<&VariantId> =
        eligible.iter().filter(|v| scores[*v] - min_score <= tie_eps).collect();
    let tie_break_applied = candidates.len() > 1;

    let selected = if tie_break_applied {
        // Least worst dimension first, then smallest id.
        let worst: BTreeMap<&VariantId, f64> = candidates
            .iter()
            .map(|v| (*v, sigma_matrix[*v].values().fold(f64::NEG_INFINITY, |acc, &s| acc.max(s))))
            .collect();
        let min_worst = worst.values().fold(f64::INFINITY, |acc, &s| acc.min(s));
        let worst_eps = SCORE_TIE_EPSILON * (1.0 + min_worst.abs());
        candidates
            .iter()
            .filter(|v| worst[**v] - min_worst <= worst_eps)
            .min()
            .cloned()
            .expect("candidates are non-empty")
    } else {
        candidates[0]
    };

    Ok(SelectionTrace {
        request_id,
        user_id: policy.user_id.clone(),
        model_version: snapshot.version,
        sigma: sigma_matrix,
        excluded,
        scores,
        tie_break_applied,
        selected: selected.clone(),
    })
}
