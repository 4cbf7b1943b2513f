//! QoS-aware variant selection engine driven by negotiable maintenance goals.
//!
//! A functional requirement can be implemented by several service
//! compositions (variants), each delivering different quality of service.
//! Users state their quality preferences as short goal sentences
//! ("Response time is high priority. Cost is less than 10 ct."); the engine
//! compiles them into per-user selection policies, keeps a computational
//! model of services and variants whose cumulative QoS is re-estimated when
//! monitored values fluctuate, and dispatches each request to the eligible
//! variant that best matches the user's priorities.
//!
//! Crate layout mirrors the runtime pipeline:
//!
//! - [`goal`]: the goal sentence language (parser, pretty-printer,
//!   resolution against the parameter catalog)
//! - [`policy`]: compilation of resolved goals into priorities and
//!   thresholds, including conditional-priority rebalancing
//! - [`model`]: the parameter/service/variant model with cached cumulative
//!   QoS and versioned snapshots
//! - [`detector`]: running-average fluctuation detection on monitored
//!   service QoS, triggering re-estimation
//! - [`dispatcher`]: per-request variant selection with threshold
//!   exclusion, priority-weighted deviation scores, and a full audit trace
//! - [`simulator`]: scripted scenarios driving service behavior over time,
//!   plus a concurrent selection benchmark on synthesized models

pub mod detector;
pub mod dispatcher;
pub mod goal;
pub mod model;
pub mod policy;
pub mod simulator;

pub use detector::{ChangeDetector, DetectorError, FluctuationDetector, MonitoringSample, ReferenceStats};
pub use dispatcher::{DispatchError, SelectionTrace};
pub use goal::{GoalError, GoalStatement, Quantity, ResolveError, ResolvedGoal};
pub use model::{
    Aggregator, Catalog, ChangeRule, ModelError, ModelSnapshot, ModelStore, ParameterId, Polarity,
    QoSParameter, Service, ServiceId, Variant, VariantId,
};
pub use policy::{CompileError, PolicyError, SelectionPolicy};
pub use simulator::{RunOptions, RunOutput, RunReport, Scenario, ScenarioError};
