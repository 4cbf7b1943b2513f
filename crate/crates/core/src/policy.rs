//! Compilation of resolved goals into a [`SelectionPolicy`]: per-user
//! priority weights and per-parameter thresholds.
//!
//! Compilation is a deterministic pass over the statement list. Priority
//! statements assign uniform weight over the listed parameters and zero
//! elsewhere; threshold statements fix the worst acceptable value; a later
//! statement overwrites an earlier one touching the same field. Conditional
//! statements are applied after all others, since they rebalance thresholds
//! that the same goal text is free to state in any sentence order.
//!
//! Thresholds the user left open are defaulted from the loosest initial
//! variant estimate once, at policy activation, and stay frozen afterwards.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::goal::{GoalError, ResolveError, ResolvedGoal};
use crate::model::{Catalog, ModelError, ModelSnapshot, ParameterId, Polarity};

/// Per-user selection preferences: priority weights in `[0,1]` summing to 1
/// (unless all are zero) and a threshold per parameter. The explicit flag
/// records whether a threshold was user-fixed or defaulted from the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPolicy {
    pub user_id: String,
    pub priorities: BTreeMap<ParameterId, f64>,
    pub thresholds: BTreeMap<ParameterId, f64>,
    pub explicit_threshold: BTreeMap<ParameterId, bool>,
}

impl SelectionPolicy {
    /// A policy with zero priority everywhere and no thresholds.
    pub fn empty(user_id: impl Into<String>, catalog: &Catalog) -> Self {
        Self {
            user_id: user_id.into(),
            priorities: catalog.parameters().iter().map(|p| (p.id.clone(), 0.0)).collect(),
            thresholds: BTreeMap::new(),
            explicit_threshold: BTreeMap::new(),
        }
    }

    pub fn priority_sum(&self) -> f64 {
        self.priorities.values().sum()
    }

    /// True once every catalog parameter has a threshold (after
    /// [`default_thresholds`]).
    pub fn thresholds_complete(&self, catalog: &Catalog) -> bool {
        catalog.parameters().iter().all(|p| self.thresholds.contains_key(&p.id))
    }

    /// Renders the policy as a structured text document in catalog order,
    /// suitable for inspection and golden-file comparison.
    pub fn to_document(&self, catalog: &Catalog) -> String {
        let mut out = String::new();
        out.push_str(&format!("user = {:?}\n", self.user_id));
        out.push_str("\n[priorities]\n");
        for param in catalog.parameters() {
            out.push_str(&format!("{} = {}\n", param.id, self.priorities.get(&param.id).copied().unwrap_or(0.0)));
        }
        out.push_str("\n[thresholds]\n");
        for param in catalog.parameters() {
            if let Some(value) = self.thresholds.get(&param.id) {
                out.push_str(&format!("{} = {}\n", param.id, value));
            }
        }
        out.push_str("\n[explicit]\n");
        for param in catalog.parameters() {
            if let Some(flag) = self.explicit_threshold.get(&param.id) {
                out.push_str(&format!("{} = {}\n", param.id, flag));
            }
        }
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("conditional goal needs an explicit threshold for {0}")]
    ConditionalWithoutThreshold(ParameterId),
    #[error("parameter {0} appears in both conditional lists")]
    DisjointnessViolation(ParameterId),
    #[error("model has no variants to derive default thresholds from")]
    EmptyModel,
}

/// Compiles resolved goals into a policy. Statements are processed in
/// order, conditionals last (they need the thresholds the other statements
/// establish, regardless of sentence order).
pub fn compile(
    user_id: &str,
    goals: &[ResolvedGoal],
    catalog: &Catalog,
) -> Result<SelectionPolicy, PolicyError> {
    let mut policy = SelectionPolicy::empty(user_id, catalog);
    let mut conditionals = Vec::new();
    for goal in goals {
        match goal {
            ResolvedGoal::HighPriority { params } => {
                for weight in policy.priorities.values_mut() {
                    *weight = 0.0;
                }
                let share = 1.0 / params.len() as f64;
                for id in params {
                    policy.priorities.insert(id.clone(), share);
                }
            }
            ResolvedGoal::LessThan { params, value } | ResolvedGoal::GreaterThan { params, value } => {
                for id in params {
                    policy.thresholds.insert(id.clone(), value.magnitude);
                    policy.explicit_threshold.insert(id.clone(), true);
                }
            }
            ResolvedGoal::Conditional { .. } => conditionals.push(goal),
        }
    }
    for goal in conditionals {
        if let ResolvedGoal::Conditional { first_params, first_value, second_params, second_value } = goal {
            policy = apply_conditional(&policy, catalog, first_params, *first_value, second_params, *second_value)?;
        }
    }
    Ok(policy)
}

/// Applies one conditional-priority statement.
///
/// Thresholds: every first-list parameter is tightened by the first
/// percentage (lowered for negative polarity, raised for positive), every
/// second-list parameter relaxed by the second percentage (the opposite
/// direction). Both lists must carry explicit thresholds, since the
/// adjustment is relative to a user-fixed base value.
///
/// Priorities: with `maxFrac = max(first, second) / 100`, a fraction above
/// 1 hands all weight uniformly to the first list. Otherwise both lists are
/// seeded uniformly with `1/(m+n)`, every second-list weight is cut to
/// `seedMin * maxFrac`, and the freed weight is split evenly over the first
/// list. The weights always sum to 1.
pub fn apply_conditional(
    policy: &SelectionPolicy,
    catalog: &Catalog,
    first_params: &[ParameterId],
    first_value: f64,
    second_params: &[ParameterId],
    second_value: f64,
) -> Result<SelectionPolicy, PolicyError> {
    for id in second_params {
        if first_params.contains(id) {
            return Err(PolicyError::DisjointnessViolation(id.clone()));
        }
    }
    let mut out = policy.clone();

    for (ids, pct, tighten) in [(first_params, first_value, true), (second_params, second_value, false)] {
        for id in ids {
            let threshold = match (out.thresholds.get(id), out.explicit_threshold.get(id)) {
                (Some(value), Some(true)) => *value,
                _ => return Err(PolicyError::ConditionalWithoutThreshold(id.clone())),
            };
            let polarity = catalog.get(&id.0).expect("resolved id exists").polarity;
            let delta = pct * threshold / 100.0;
            let adjusted = match (polarity, tighten) {
                (Polarity::Negative, true) | (Polarity::Positive, false) => threshold - delta,
                (Polarity::Negative, false) | (Polarity::Positive, true) => threshold + delta,
            };
            out.thresholds.insert(id.clone(), adjusted);
        }
    }

    let m = first_params.len() as f64;
    let n = second_params.len() as f64;
    let max_frac = first_value.max(second_value) / 100.0;
    for weight in out.priorities.values_mut() {
        *weight = 0.0;
    }
    if max_frac > 1.0 {
        for id in first_params {
            out.priorities.insert(id.clone(), 1.0 / m);
        }
    } else {
        let seed = 1.0 / (m + n);
        // The seeded first-list weights are uniform, so their minimum is the seed.
        let min_first = seed;
        let cut = min_first * max_frac;
        let mut freed = 0.0;
        for id in second_params {
            freed += seed - cut;
            out.priorities.insert(id.clone(), cut);
        }
        for id in first_params {
            out.priorities.insert(id.clone(), seed + freed / m);
        }
    }
    Ok(out)
}

/// Fills in a threshold for every parameter the user left open, using the
/// loosest initial variant estimate: the maximum over variants for negative
/// parameters, the minimum for positive ones. Computed once at activation;
/// later model versions do not move defaulted thresholds.
pub fn default_thresholds(
    policy: &SelectionPolicy,
    snapshot: &ModelSnapshot,
) -> Result<SelectionPolicy, PolicyError> {
    if snapshot.variants.is_empty() {
        return Err(PolicyError::EmptyModel);
    }
    let mut out = policy.clone();
    for param in snapshot.catalog.parameters() {
        if out.thresholds.contains_key(&param.id) {
            continue;
        }
        let values = snapshot
            .variants
            .iter()
            .map(|v| *v.cached_qos.get(&param.id).expect("cached QoS covers the catalog"));
        let default = match param.polarity {
            Polarity::Negative => values.fold(f64::NEG_INFINITY, f64::max),
            Polarity::Positive => values.fold(f64::INFINITY, f64::min),
        };
        out.thresholds.insert(param.id.clone(), default);
        out.explicit_threshold.insert(param.id.clone(), false);
    }
    Ok(out)
}

/// End-to-end compilation of one user's goal text: parse, resolve, compile,
/// and fill default thresholds from the activation snapshot.
pub fn activate_policy(
    user_id: &str,
    goal_text: &str,
    snapshot: &ModelSnapshot,
) -> Result<SelectionPolicy, CompileError> {
    let goals = crate::goal::parse_goals(goal_text)?;
    let resolved = crate::goal::resolve(&goals, &snapshot.catalog)?;
    let policy = compile(user_id, &resolved, &snapshot.catalog)?;
    Ok(default_thresholds(&policy, snapshot)?)
}

/// Error of the full goal-text-to-policy pipeline, keeping the failing
/// stage distinguishable for exit-code mapping.
#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Goal(#[from] GoalError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
