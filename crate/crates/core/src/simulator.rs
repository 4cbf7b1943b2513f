//! Scenario-driven experiments and the scale benchmark.
//!
//! A scenario scripts how service QoS evolves while requests arrive:
//! behaviors replay a state machine per (service, parameter), set-qos
//! events inject third-party readings, and record directives capture the
//! per-user selection after a batch of changes. Every sample flows through
//! the change detector; a trigger re-estimates the model before the next
//! selection. The event loop is single-threaded and fully seeded, so a
//! scenario replays to byte-identical traces.
//!
//! The scale benchmark synthesizes a large sequential-composition model and
//! measures selection latency under several concurrent issuers. Readers
//! select against published snapshots; the event loop owns all writes.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::detector::{ChangeDetector, DetectorError, FluctuationDetector, MonitoringSample};
use crate::dispatcher::{self, DispatchError, SelectionTrace};
use crate::model::{
    Aggregator, Catalog, ChangeRule, ModelError, ModelSnapshot, ModelStore, ParameterId, Polarity,
    QoSParameter, Service, ServiceId, VariantId,
};
use crate::policy::SelectionPolicy;

/// Simulated QoS evolution of one (service, parameter) stream.
#[derive(Debug, Clone)]
pub struct ServiceBehavior {
    pub service: ServiceId,
    pub parameter: ParameterId,
    pub states: Vec<f64>,
    pub transition: Transition,
    state: usize,
}

/// How a behavior moves between its states.
#[derive(Debug, Clone)]
pub enum Transition {
    /// Advance to the next state (wrapping) every `every` requests.
    Cycle { every: u64 },
    /// Draw the next state from a row-stochastic matrix on every request.
    Stochastic { matrix: Vec<Vec<f64>> },
}

impl ServiceBehavior {
    pub fn new(
        service: ServiceId,
        parameter: ParameterId,
        states: Vec<f64>,
        transition: Transition,
    ) -> Result<Self, ScenarioError> {
        let fail = |message: String| ScenarioError::InvalidBehavior {
            service: service.clone(),
            parameter: parameter.clone(),
            message,
        };
        if states.is_empty() {
            return Err(fail("behavior needs at least one state".to_owned()));
        }
        match &transition {
            Transition::Cycle { every } => {
                if *every == 0 {
                    return Err(fail("cycle period must be at least 1".to_owned()));
                }
            }
            Transition::Stochastic { matrix } => {
                if matrix.len() != states.len() {
                    return Err(fail(format!(
                        "transition matrix has {} rows for {} states",
                        matrix.len(),
                        states.len()
                    )));
                }
                for (i, row) in matrix.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.len() != states.len() || (sum - 1.0).abs() > 1e-9 {
                        return Err(fail(format!("row {i} of the transition matrix must sum to 1")));
                    }
                    if row.iter().any(|p| *p < 0.0) {
                        return Err(fail(format!("row {i} of the transition matrix has a negative entry")));
                    }
                }
            }
        }
        Ok(Self { service, parameter, states, transition, state: 0 })
    }

    /// Produces the sample for the given request, advancing state first
    /// when the request crosses the behavior's transition boundary.
    /// Requests are counted from 1, so the first `every` requests sample
    /// the initial state.
    pub fn step(&mut self, request_count: u64, rng: &mut ChaCha8Rng) -> f64 {
        match &self.transition {
            Transition::Cycle { every } => {
                if request_count > 1 && (request_count - 1) % every == 0 {
                    self.state = (self.state + 1) % self.states.len();
                }
            }
            Transition::Stochastic { .. } => {
                if request_count > 1 {
                    self.advance(rng);
                }
            }
        }
        self.states[self.state]
    }

    /// One manual state transition (a scripted advance event).
    pub fn advance(&mut self, rng: &mut ChaCha8Rng) {
        match &self.transition {
            Transition::Cycle { .. } => {
                self.state = (self.state + 1) % self.states.len();
            }
            Transition::Stochastic { matrix } => {
                let row = &matrix[self.state];
                let draw: f64 = rng.random();
                let mut acc = 0.0;
                for (next, probability) in row.iter().enumerate() {
                    acc += probability;
                    if draw < acc {
                        self.state = next;
                        return;
                    }
                }
                // Guard against rounding leaving a sliver above the last bound.
                self.state = row.len() - 1;
            }
        }
    }
}

/// One scripted scenario event.
#[derive(Debug, Clone)]
pub enum ScenarioEvent {
    /// Third-party reading of a service parameter (flows through the
    /// detector like any monitored sample).
    SetServiceQos { service: ServiceId, parameter: ParameterId, value: f64 },
    /// Manually advance the behaviors of a service.
    AdvanceBehavior { service: ServiceId },
    /// Issue requests; each request samples every behavior and then
    /// selects a variant for each listed user.
    IssueRequests { count: u64, users: Vec<String> },
    /// Capture the current per-user selection as one report column.
    Record { label: String },
}

/// A validated scenario: behaviors plus the ordered event list.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub behaviors: Vec<ServiceBehavior>,
    pub events: Vec<ScenarioEvent>,
}

/// A user declared by a scenario file, with the goal text to compile.
#[derive(Debug, Clone)]
pub struct ScenarioUser {
    pub id: String,
    pub goal_text: String,
}

/// Scenario file plus the users it declares.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub users: Vec<ScenarioUser>,
    pub scenario: Scenario,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario references unknown {kind} {id:?}")]
    UnknownReference { kind: &'static str, id: String },
    #[error("behavior for {service}/{parameter}: {message}")]
    InvalidBehavior { service: ServiceId, parameter: ParameterId, message: String },
    #[error("user {user:?} declares both inline goals and a goals file")]
    AmbiguousGoals { user: String },
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("request {request} for user {user:?}: {source}")]
    Dispatch { request: u64, user: String, source: DispatchError },
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    users: Vec<UserSpec>,
    #[serde(default)]
    behaviors: Vec<BehaviorSpec>,
    #[serde(default)]
    events: Vec<EventSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct UserSpec {
    id: String,
    goals: Option<String>,
    goals_file: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct BehaviorSpec {
    service: String,
    parameter: String,
    states: Vec<f64>,
    transition: TransitionSpec,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum TransitionSpec {
    Cycle { every: u64 },
    Stochastic { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum EventSpec {
    SetQos { service: String, parameter: String, value: f64 },
    Advance { service: String },
    Issue { count: u64, users: Vec<String> },
    Record { label: String },
}

/// Parses a scenario file; `goals-file` paths are read relative to the
/// scenario's directory.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, base)
}

/// Parses scenario text; `base` anchors relative goal-file paths.
pub fn parse_scenario(text: &str, base: &Path) -> Result<LoadedScenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let mut users = Vec::new();
    for spec in file.users {
        let goal_text = match (spec.goals, spec.goals_file) {
            (Some(_), Some(_)) => return Err(ScenarioError::AmbiguousGoals { user: spec.id }),
            (Some(text), None) => text,
            (None, Some(relative)) => {
                let path = base.join(relative);
                std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
                    path: path.display().to_string(),
                    source,
                })?
            }
            (None, None) => String::new(),
        };
        users.push(ScenarioUser { id: spec.id, goal_text });
    }
    let behaviors = file
        .behaviors
        .into_iter()
        .map(|spec| {
            let transition = match spec.transition {
                TransitionSpec::Cycle { every } => Transition::Cycle { every },
                TransitionSpec::Stochastic { matrix } => Transition::Stochastic { matrix },
            };
            ServiceBehavior::new(
                ServiceId(spec.service),
                ParameterId(spec.parameter),
                spec.states,
                transition,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let events = file
        .events
        .into_iter()
        .map(|spec| match spec {
            EventSpec::SetQos { service, parameter, value } => ScenarioEvent::SetServiceQos {
                service: ServiceId(service),
                parameter: ParameterId(parameter),
                value,
            },
            EventSpec::Advance { service } => {
                ScenarioEvent::AdvanceBehavior { service: ServiceId(service) }
            }
            EventSpec::Issue { count, users } => ScenarioEvent::IssueRequests { count, users },
            EventSpec::Record { label } => ScenarioEvent::Record { label },
        })
        .collect();
    Ok(LoadedScenario { users, scenario: Scenario { behaviors, events } })
}

/// One line of the trace output.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Selection(SelectionTrace),
    Detector(DetectorTransition),
}

impl TraceRecord {
    pub fn to_record(&self) -> serde_json::Value {
        match self {
            TraceRecord::Selection(trace) => trace.to_record(),
            TraceRecord::Detector(transition) => transition.to_record(),
        }
    }
}

/// Detector state transition, emitted into the trace when detector logging
/// is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTransition {
    pub seq: u64,
    pub service: ServiceId,
    pub parameter: ParameterId,
    pub value: f64,
    pub mean_before: Option<f64>,
    pub threshold: Option<f64>,
    pub triggered: bool,
    pub mean_after: f64,
}

impl DetectorTransition {
    pub fn to_record(&self) -> serde_json::Value {
        json!({
            "type": "detector",
            "seq": self.seq,
            "service": self.service,
            "parameter": self.parameter,
            "value": self.value,
            "mean-before": self.mean_before,
            "threshold": self.threshold,
            "triggered": self.triggered,
            "mean-after": self.mean_after,
        })
    }
}

/// Renders trace records as line-delimited JSON.
pub fn trace_to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&record.to_record().to_string());
        out.push('\n');
    }
    out
}

/// One recorded QoS value of a report cell, in canonical units.
#[derive(Debug, Clone, PartialEq)]
pub struct QosValue {
    pub parameter: ParameterId,
    pub value: f64,
    pub unit: String,
}

/// Selection of one user at one record point.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub user: String,
    pub variant: VariantId,
    pub qos: Vec<QosValue>,
}

impl ReportCell {
    /// Compact rendering like `V1{3.6s,6ct,9}`.
    pub fn render(&self) -> String {
        let values: Vec<String> =
            self.qos.iter().map(|q| format!("{}{}", q.value, q.unit)).collect();
        format!("{}{{{}}}", self.variant, values.join(","))
    }
}

/// One report column: the per-user selections captured by a record event.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportColumn {
    pub label: String,
    pub cells: Vec<ReportCell>,
}

/// The selection matrix assembled from the scenario's record events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    /// Row order: the policies as registered.
    pub users: Vec<String>,
    pub columns: Vec<ReportColumn>,
}

impl RunReport {
    pub fn cell(&self, user: &str, column: usize) -> Option<&ReportCell> {
        self.columns.get(column)?.cells.iter().find(|c| c.user == user)
    }

    /// Aligned text table: one row per user, one column per record event.
    pub fn render_table(&self) -> String {
        let mut header = vec!["Goal".to_owned()];
        header.extend(self.columns.iter().map(|c| c.label.clone()));
        let mut rows = vec![header];
        for user in &self.users {
            let mut row = vec![user.clone()];
            for column in &self.columns {
                let cell = column
                    .cells
                    .iter()
                    .find(|c| &c.user == user)
                    .map(ReportCell::render)
                    .unwrap_or_default();
                row.push(cell);
            }
            rows.push(row);
        }
        let width = |i: usize| rows.iter().map(|r| r[i].len()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..rows[0].len()).map(width).collect();
        let mut out = String::new();
        for row in &rows {
            let line: Vec<String> =
                row.iter().enumerate().map(|(i, cell)| format!("{:<1$}", cell, widths[i])).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Machine-readable report records, one per cell.
    pub fn to_records(&self) -> Vec<serde_json::Value> {
        let mut out = Vec::new();
        for (index, column) in self.columns.iter().enumerate() {
            for cell in &column.cells {
                let qos: BTreeMap<&str, f64> =
                    cell.qos.iter().map(|q| (q.parameter.0.as_str(), q.value)).collect();
                out.push(json!({
                    "type": "report",
                    "column": index,
                    "label": column.label,
                    "user": cell.user,
                    "variant": cell.variant,
                    "qos": qos,
                }));
            }
        }
        out
    }
}

/// Options of one scenario run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub seed: u64,
    /// Include detector state transitions in the trace.
    pub detector_log: bool,
}

/// Everything a scenario run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub traces: Vec<TraceRecord>,
    pub report: RunReport,
    pub triggers: u64,
    pub reestimates: u64,
    pub requests: u64,
}

/// Replays a scenario against the model. Policies must already be
/// activated (thresholds complete). Samples are ingested before the
/// selections of the request that carried them, so a detected change
/// re-estimates the model first.
pub fn run_scenario(
    store: &ModelStore,
    policies: &[SelectionPolicy],
    scenario: &Scenario,
    options: RunOptions,
) -> Result<RunOutput, ScenarioError> {
    let initial = store.snapshot();
    validate_scenario(&initial, policies, scenario)?;
    let catalog = initial.catalog.clone();

    let mut behaviors = scenario.behaviors.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut detector = FluctuationDetector::new();
    let mut sequences: BTreeMap<(ServiceId, ParameterId), u64> = BTreeMap::new();
    let mut traces = Vec::new();
    let mut report = RunReport {
        users: policies.iter().map(|p| p.user_id.clone()).collect(),
        columns: Vec::new(),
    };
    let mut triggers = 0;
    let mut reestimates = 0;
    let mut request_count = 0u64;

    let feed = |service: &ServiceId,
                    parameter: &ParameterId,
                    value: f64,
                    detector: &mut FluctuationDetector,
                    sequences: &mut BTreeMap<(ServiceId, ParameterId), u64>,
                    traces: &mut Vec<TraceRecord>,
                    triggers: &mut u64,
                    reestimates: &mut u64|
     -> Result<(), ScenarioError> {
        let seq = sequences.entry((service.clone(), parameter.clone())).or_insert(0);
        *seq += 1;
        let sample = MonitoringSample {
            service: service.clone(),
            parameter: parameter.clone(),
            value,
            seq: *seq,
        };
        let param = catalog.get(&parameter.0).expect("validated parameter");
        let outcome = detector.observe(&sample, param)?;
        if options.detector_log {
            traces.push(TraceRecord::Detector(DetectorTransition {
                seq: sample.seq,
                service: service.clone(),
                parameter: parameter.clone(),
                value,
                mean_before: outcome.mean_before,
                threshold: outcome.threshold,
                triggered: outcome.triggered,
                mean_after: outcome.stats.mean,
            }));
        }
        if outcome.triggered {
            *triggers += 1;
            // The triggering sample's value becomes the service's new QoS.
            store.reestimate(service, parameter, value)?;
            *reestimates += 1;
        }
        Ok(())
    };

    for event in &scenario.events {
        match event {
            ScenarioEvent::SetServiceQos { service, parameter, value } => {
                feed(service, parameter, *value, &mut detector, &mut sequences, &mut traces, &mut triggers, &mut reestimates)?;
            }
            ScenarioEvent::AdvanceBehavior { service } => {
                for behavior in behaviors.iter_mut().filter(|b| &b.service == service) {
                    behavior.advance(&mut rng);
                }
            }
            ScenarioEvent::IssueRequests { count, users } => {
                for _ in 0..*count {
                    request_count += 1;
                    for behavior in &mut behaviors {
                        let value = behavior.step(request_count, &mut rng);
                        let (service, parameter) = (behavior.service.clone(), behavior.parameter.clone());
                        feed(&service, &parameter, value, &mut detector, &mut sequences, &mut traces, &mut triggers, &mut reestimates)?;
                    }
                    let snapshot = store.snapshot();
                    for user in users {
                        let policy = policies
                            .iter()
                            .find(|p| &p.user_id == user)
                            .expect("validated user");
                        let trace = dispatcher::select(&snapshot, policy, request_count).map_err(
                            |source| ScenarioError::Dispatch {
                                request: request_count,
                                user: user.clone(),
                                source,
                            },
                        )?;
                        traces.push(TraceRecord::Selection(trace));
                    }
                }
            }
            ScenarioEvent::Record { label } => {
                let snapshot = store.snapshot();
                let mut cells = Vec::with_capacity(policies.len());
                for policy in policies {
                    let trace = dispatcher::select(&snapshot, policy, request_count).map_err(
                        |source| ScenarioError::Dispatch {
                            request: request_count,
                            user: policy.user_id.clone(),
                            source,
                        },
                    )?;
                    let variant = snapshot.variant(&trace.selected.0).expect("selected variant exists");
                    let qos = snapshot
                        .catalog
                        .parameters()
                        .iter()
                        .map(|param| QosValue {
                            parameter: param.id.clone(),
                            value: variant.cached_qos[&param.id],
                            unit: param.unit.clone(),
                        })
                        .collect();
                    cells.push(ReportCell { user: policy.user_id.clone(), variant: trace.selected, qos });
                }
                report.columns.push(ReportColumn { label: label.clone(), cells });
            }
        }
    }

    Ok(RunOutput { traces, report, triggers, reestimates, requests: request_count })
}

fn validate_scenario(
    snapshot: &ModelSnapshot,
    policies: &[SelectionPolicy],
    scenario: &Scenario,
) -> Result<(), ScenarioError> {
    let unknown = |kind: &'static str, id: String| ScenarioError::UnknownReference { kind, id };
    let check_service = |id: &ServiceId| {
        snapshot
            .services
            .contains_key(id)
            .then_some(())
            .ok_or_else(|| unknown("service", id.0.clone()))
    };
    let check_parameter = |id: &ParameterId| {
        snapshot.catalog.get(&id.0).map(|_| ()).ok_or_else(|| unknown("parameter", id.0.clone()))
    };
    for behavior in &scenario.behaviors {
        check_service(&behavior.service)?;
        check_parameter(&behavior.parameter)?;
    }
    for event in &scenario.events {
        match event {
            ScenarioEvent::SetServiceQos { service, parameter, .. } => {
                check_service(service)?;
                check_parameter(parameter)?;
            }
            ScenarioEvent::AdvanceBehavior { service } => {
                if !scenario.behaviors.iter().any(|b| &b.service == service) {
                    return Err(unknown("behavior", service.0.clone()));
                }
            }
            ScenarioEvent::IssueRequests { users, .. } => {
                for user in users {
                    if !policies.iter().any(|p| &p.user_id == user) {
                        return Err(unknown("user", user.clone()));
                    }
                }
            }
            ScenarioEvent::Record { .. } => {}
        }
    }
    Ok(())
}

/// Scale benchmark configuration.
#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub variants: usize,
    pub parameters: usize,
    pub requests: usize,
    pub issuers: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { variants: 200, parameters: 20, requests: 300, issuers: 5, seed: 0 }
    }
}

/// Latency figures of one benchmark run.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub selections: usize,
    pub eligible_variants: usize,
    pub mean: Duration,
    pub p99: Duration,
    pub max: Duration,
    /// Sum of the per-request selection latencies.
    pub total_selection: Duration,
    /// Wall time of the issuing phase across all issuers.
    pub wall: Duration,
}

impl BenchReport {
    pub fn render(&self) -> String {
        format!(
            "variants: {}\nparameters: {}\nrequests: {}\nissuers: {}\nseed: {}\n\
             eligible variants: {}\nselections: {}\n\
             mean selection latency: {:.3} ms\np99 selection latency: {:.3} ms\n\
             max selection latency: {:.3} ms\ntotal selection time: {:.3} ms\nwall time: {:.3} ms\n",
            self.config.variants,
            self.config.parameters,
            self.config.requests,
            self.config.issuers,
            self.config.seed,
            self.eligible_variants,
            self.selections,
            self.mean.as_secs_f64() * 1e3,
            self.p99.as_secs_f64() * 1e3,
            self.max.as_secs_f64() * 1e3,
            self.total_selection.as_secs_f64() * 1e3,
            self.wall.as_secs_f64() * 1e3,
        )
    }
}

/// Synthesizes a random sequential-composition model of the requested size
/// plus a distributed-priority policy over all parameters. Thresholds sit
/// at the 90th percentile of the variant values per parameter (loosened to
/// the extreme value if that would exclude everything).
pub fn synthesize_model(
    variants: usize,
    parameters: usize,
    seed: u64,
) -> (ModelSnapshot, SelectionPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(parameters);
    for i in 0..parameters {
        let negative = i % 2 == 0;
        params.push(QoSParameter {
            id: ParameterId(format!("p{i:02}")),
            display_name: format!("parameter {i}"),
            polarity: if negative { Polarity::Negative } else { Polarity::Positive },
            unit: String::new(),
            conversions: BTreeMap::new(),
            aggregator: if negative { Aggregator::Sum } else { Aggregator::Min },
            change_rule: if negative { ChangeRule::Fluctuating } else { ChangeRule::Stable },
        });
    }
    let catalog = Catalog::new(params).expect("fresh synthetic catalog");

    let mut services = Vec::with_capacity(variants);
    for s in 0..variants {
        let qos = catalog
            .parameters()
            .iter()
            .map(|param| {
                let value = match param.polarity {
                    Polarity::Negative => rng.random_range(1.0..100.0),
                    Polarity::Positive => rng.random_range(1.0..10.0),
                };
                (param.id.clone(), value)
            })
            .collect();
        services.push(Service { id: ServiceId(format!("s{s:03}")), qos });
    }
    let variant_list: Vec<(VariantId, Vec<ServiceId>)> = (0..variants)
        .map(|v| {
            let len = 1 + v % 4;
            let ids = (0..len)
                .map(|_| ServiceId(format!("s{:03}", rng.random_range(0..variants))))
                .collect();
            (VariantId(format!("v{v:03}")), ids)
        })
        .collect();
    let snapshot = ModelSnapshot::new("synthetic", catalog, services, variant_list)
        .expect("synthetic model is well-formed");

    let share = 1.0 / parameters as f64;
    let mut policy = SelectionPolicy {
        user_id: "bench".to_owned(),
        priorities: snapshot.catalog.parameters().iter().map(|p| (p.id.clone(), share)).collect(),
        thresholds: BTreeMap::new(),
        explicit_threshold: BTreeMap::new(),
    };
    for param in snapshot.catalog.parameters() {
        let mut values: Vec<f64> =
            snapshot.variants.iter().map(|v| v.cached_qos[&param.id]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite synthetic values"));
        let threshold = match param.polarity {
            // 90% of variants at or under the bound.
            Polarity::Negative => values[((values.len() as f64 * 0.9).ceil() as usize).min(values.len()) - 1],
            // 90% of variants at or over the bound.
            Polarity::Positive => values[(values.len() as f64 * 0.1).floor() as usize],
        };
        policy.thresholds.insert(param.id.clone(), threshold);
        policy.explicit_threshold.insert(param.id.clone(), false);
    }
    if dispatcher::exclude(&snapshot, &policy).map(|(eligible, _)| eligible.is_empty()).unwrap_or(true) {
        // Joint exclusion across many parameters can empty the pool; fall
        // back to the loosest bounds so the benchmark always selects.
        for param in snapshot.catalog.parameters() {
            let values = snapshot.variants.iter().map(|v| v.cached_qos[&param.id]);
            let loosest = match param.polarity {
                Polarity::Negative => values.fold(f64::NEG_INFINITY, f64::max),
                Polarity::Positive => values.fold(f64::INFINITY, f64::min),
            };
            policy.thresholds.insert(param.id.clone(), loosest);
        }
    }
    (snapshot, policy)
}

/// Runs the scale benchmark: seeded synthetic model, `issuers` concurrent
/// request sources, one selection per request against the published
/// snapshot. Latency is measured per request and includes snapshot
/// acquisition.
pub fn run_scale_benchmark(config: BenchConfig) -> BenchReport {
    let (snapshot, policy) = synthesize_model(config.variants, config.parameters, config.seed);
    let store = ModelStore::new(snapshot);
    let eligible = dispatcher::exclude(&store.snapshot(), &policy)
        .map(|(eligible, _)| eligible.len())
        .unwrap_or(0);

    let issuers = config.issuers.max(1);
    let started = Instant::now();
    let mut latencies: Vec<Duration> = Vec::with_capacity(config.requests);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..issuers)
            .map(|issuer| {
                let store = &store;
                let policy = &policy;
                scope.spawn(move || {
                    let mut local = Vec::new();
                    let mut request = issuer as u64 + 1;
                    while request <= config.requests as u64 {
                        let t0 = Instant::now();
                        let snapshot = store.snapshot();
                        let trace = dispatcher::select(&snapshot, policy, request)
                            .expect("benchmark model always has an eligible variant");
                        local.push(t0.elapsed());
                        std::hint::black_box(trace.selected);
                        request += issuers as u64;
                    }
                    local
                })
            })
            .collect();
        for handle in handles {
            latencies.extend(handle.join().expect("issuer thread panicked"));
        }
    });
    let wall = started.elapsed();

    latencies.sort();
    let selections = latencies.len();
    let total_selection: Duration = latencies.iter().sum();
    let mean = if selections == 0 { Duration::ZERO } else { total_selection / selections as u32 };
    let p99 = if selections == 0 {
        Duration::ZERO
    } else {
        latencies[((selections as f64 * 0.99).ceil() as usize).clamp(1, selections) - 1]
    };
    let max = latencies.last().copied().unwrap_or(Duration::ZERO);

    BenchReport {
        config,
        selections,
        eligible_variants: eligible,
        mean,
        p99,
        max,
        total_selection,
        wall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChangeRule;
    use crate::policy;

    fn pid(id: &str) -> ParameterId {
        ParameterId::from(id)
    }

    fn behavior(states: &[f64], every: u64) -> ServiceBehavior {
        ServiceBehavior::new(
            ServiceId::from("s"),
            pid("rt"),
            states.to_vec(),
            Transition::Cycle { every },
        )
        .unwrap()
    }

    #[test]
    fn cycle_behavior_changes_state_every_k_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut behavior = behavior(&[1.0, 1.6, 2.5], 5);
        let samples: Vec<f64> = (1..=12).map(|r| behavior.step(r, &mut rng)).collect();
        assert_eq!(samples[..5], [1.0; 5]);
        assert_eq!(samples[5..10], [1.6; 5]);
        assert_eq!(samples[10..12], [2.5; 2]);
    }

    #[test]
    fn cycle_behavior_wraps_back_to_first_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut behavior = behavior(&[1.0, 1.6, 2.5], 5);
        let samples: Vec<f64> = (1..=20).map(|r| behavior.step(r, &mut rng)).collect();
        assert_eq!(samples[15..20], [1.0; 5]);
    }

    #[test]
    fn single_state_behavior_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut behavior = behavior(&[4.2], 3);
        assert!((1..=10).all(|r| behavior.step(r, &mut rng) == 4.2));
    }

    #[test]
    fn identity_matrix_never_leaves_initial_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut behavior = ServiceBehavior::new(
            ServiceId::from("s"),
            pid("rt"),
            vec![1.0, 9.9],
            Transition::Stochastic { matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]] },
        )
        .unwrap();
        assert!((1..=50).all(|r| behavior.step(r, &mut rng) == 1.0));
    }

    #[test]
    fn stochastic_rows_must_sum_to_one() {
        let err = ServiceBehavior::new(
            ServiceId::from("s"),
            pid("rt"),
            vec![1.0, 2.0],
            Transition::Stochastic { matrix: vec![vec![0.5, 0.4], vec![0.0, 1.0]] },
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::InvalidBehavior { .. }));
    }

    fn test_model() -> ModelSnapshot {
        let catalog = Catalog::new(vec![
            QoSParameter {
                id: pid("rt"),
                display_name: "rt".to_owned(),
                polarity: Polarity::Negative,
                unit: "s".to_owned(),
                conversions: BTreeMap::new(),
                aggregator: Aggregator::Sum,
                change_rule: ChangeRule::Fluctuating,
            },
            QoSParameter {
                id: pid("cost"),
                display_name: "cost".to_owned(),
                polarity: Polarity::Negative,
                unit: "ct".to_owned(),
                conversions: BTreeMap::new(),
                aggregator: Aggregator::Sum,
                change_rule: ChangeRule::Stable,
            },
        ])
        .unwrap();
        let service = |id: &str, rt: f64, cost: f64| Service {
            id: ServiceId::from(id),
            qos: [(pid("rt"), rt), (pid("cost"), cost)].into_iter().collect(),
        };
        ModelSnapshot::new(
            "req",
            catalog,
            vec![service("s", 1.0, 0.0), service("base", 2.0, 10.0), service("alt", 3.5, 8.0)],
            vec![
                (VariantId::from("v1"), vec![ServiceId::from("base"), ServiceId::from("s")]),
                (VariantId::from("v2"), vec![ServiceId::from("alt")]),
            ],
        )
        .unwrap()
    }

    fn activated_policy(store: &ModelStore) -> SelectionPolicy {
        policy::activate_policy("u", "rt is high priority.", &store.snapshot()).unwrap()
    }

    fn issue(count: u64) -> ScenarioEvent {
        ScenarioEvent::IssueRequests { count, users: vec!["u".to_owned()] }
    }

    #[test]
    fn scenario_with_no_changes_keeps_selection_constant() {
        let store = ModelStore::new(test_model());
        let policies = vec![activated_policy(&store)];
        let scenario = Scenario {
            behaviors: vec![],
            events: vec![issue(5), ScenarioEvent::Record { label: "end".to_owned() }],
        };
        let output = run_scenario(&store, &policies, &scenario, RunOptions::default()).unwrap();
        assert_eq!(output.triggers, 0);
        assert_eq!(output.reestimates, 0);
        let selections: Vec<&VariantId> = output
            .traces
            .iter()
            .filter_map(|t| match t {
                TraceRecord::Selection(s) => Some(&s.selected),
                TraceRecord::Detector(_) => None,
            })
            .collect();
        assert_eq!(selections.len(), 5);
        assert!(selections.iter().all(|v| v.0 == "v1"));
        assert_eq!(output.report.cell("u", 0).unwrap().variant.0, "v1");
    }

    #[test]
    fn empty_scenario_produces_empty_trace() {
        let store = ModelStore::new(test_model());
        let policies = vec![activated_policy(&store)];
        let scenario = Scenario { behaviors: vec![], events: vec![] };
        let output = run_scenario(&store, &policies, &scenario, RunOptions::default()).unwrap();
        assert!(output.traces.is_empty());
        assert!(output.report.columns.is_empty());
    }

    #[test]
    fn behavior_trigger_reestimates_before_the_selection() {
        let store = ModelStore::new(test_model());
        let policies = vec![activated_policy(&store)];
        let scenario = Scenario {
            behaviors: vec![behavior(&[1.0, 2.6], 3)],
            events: vec![issue(6)],
        };
        let output = run_scenario(&store, &policies, &scenario, RunOptions::default()).unwrap();
        // One level change: 1.0 for requests 1-3, 2.6 afterwards.
        assert_eq!(output.triggers, 1);
        assert_eq!(output.reestimates, output.triggers);
        let versions: Vec<u64> = output
            .traces
            .iter()
            .filter_map(|t| match t {
                TraceRecord::Selection(s) => Some(s.model_version),
                TraceRecord::Detector(_) => None,
            })
            .collect();
        // The request that carried the triggering sample already sees the
        // re-estimated model.
        assert_eq!(versions, vec![1, 1, 1, 2, 2, 2]);
        // v1 slows to 4.6s and the alternative takes over.
        let last = output.traces.last().unwrap();
        if let TraceRecord::Selection(trace) = last {
            assert_eq!(trace.selected.0, "v2");
        } else {
            panic!("expected a selection record");
        }
    }

    #[test]
    fn set_qos_event_flows_through_the_detector() {
        let store = ModelStore::new(test_model());
        let policies = vec![activated_policy(&store)];
        let scenario = Scenario {
            behaviors: vec![],
            events: vec![
                ScenarioEvent::SetServiceQos { service: ServiceId::from("base"), parameter: pid("cost"), value: 10.0 },
                ScenarioEvent::SetServiceQos { service: ServiceId::from("base"), parameter: pid("cost"), value: 6.0 },
            ],
        };
        let output = run_scenario(&store, &policies, &scenario, RunOptions::default()).unwrap();
        // The first reading seeds the stream; the second deviates from a
        // stable parameter's reference and triggers.
        assert_eq!(output.triggers, 1);
        assert_eq!(store.snapshot().variant("v1").unwrap().cached_qos[&pid("cost")], 6.0);
    }

    #[test]
    fn detector_log_records_transitions() {
        let store = ModelStore::new(test_model());
        let policies = vec![activated_policy(&store)];
        let scenario = Scenario {
            behaviors: vec![],
            events: vec![ScenarioEvent::SetServiceQos {
                service: ServiceId::from("base"),
                parameter: pid("cost"),
                value: 10.0,
            }],
        };
        let options = RunOptions { seed: 0, detector_log: true };
        let output = run_scenario(&store, &policies, &scenario, options).unwrap();
        assert_eq!(output.traces.len(), 1);
        assert!(matches!(output.traces[0], TraceRecord::Detector(_)));
    }

    #[test]
    fn scenario_rejects_unknown_references() {
        let store = ModelStore::new(test_model());
        let policies = vec![activated_policy(&store)];
        let scenario = Scenario {
            behaviors: vec![],
            events: vec![ScenarioEvent::SetServiceQos {
                service: ServiceId::from("ghost"),
                parameter: pid("cost"),
                value: 1.0,
            }],
        };
        let err = run_scenario(&store, &policies, &scenario, RunOptions::default()).unwrap_err();
        assert!(matches!(err, ScenarioError::UnknownReference { kind: "service", .. }));

        let scenario = Scenario { behaviors: vec![], events: vec![issue(1)] };
        let err = run_scenario(&store, &[], &scenario, RunOptions::default()).unwrap_err();
        assert!(matches!(err, ScenarioError::UnknownReference { kind: "user", .. }));
    }

    #[test]
    fn identical_seeds_replay_identical_outputs() {
        let scenario = Scenario {
            behaviors: vec![ServiceBehavior::new(
                ServiceId::from("s"),
                pid("rt"),
                vec![1.0, 1.9, 0.4],
                Transition::Stochastic {
                    matrix: vec![vec![0.2, 0.5, 0.3], vec![0.3, 0.4, 0.3], vec![0.5, 0.25, 0.25]],
                },
            )
            .unwrap()],
            events: vec![issue(10), ScenarioEvent::Record { label: "end".to_owned() }],
        };
        let run = |seed| {
            let store = ModelStore::new(test_model());
            let policies = vec![activated_policy(&store)];
            run_scenario(&store, &policies, &scenario, RunOptions { seed, detector_log: true }).unwrap()
        };
        let (a, b) = (run(42), run(42));
        assert_eq!(trace_to_jsonl(&a.traces), trace_to_jsonl(&b.traces));
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn scenario_file_parses_users_behaviors_and_events() {
        let text = r#"
            [[users]]
            id = "u"
            goals = "rt is high priority."

            [[behaviors]]
            service = "s"
            parameter = "rt"
            states = [1.0, 1.6, 2.5]
            transition = { kind = "cycle", every = 5 }

            [[events]]
            kind = "set-qos"
            service = "base"
            parameter = "cost"
            value = 10.0

            [[events]]
            kind = "issue"
            count = 5
            users = ["u"]

            [[events]]
            kind = "record"
            label = "col"
        "#;
        let loaded = parse_scenario(text, Path::new(".")).unwrap();
        assert_eq!(loaded.users.len(), 1);
        assert_eq!(loaded.users[0].goal_text, "rt is high priority.");
        assert_eq!(loaded.scenario.behaviors.len(), 1);
        assert_eq!(loaded.scenario.events.len(), 3);
    }

    #[test]
    fn benchmark_runs_and_reports_latencies() {
        let config = BenchConfig { variants: 20, parameters: 5, requests: 40, issuers: 3, seed: 1 };
        let report = run_scale_benchmark(config);
        assert_eq!(report.selections, 40);
        assert!(report.eligible_variants >= 1);
        assert!(report.mean <= report.max);
        assert!(report.p99 <= report.max);
    }

    #[test]
    fn benchmark_with_no_requests_is_empty() {
        let config = BenchConfig { variants: 5, parameters: 3, requests: 0, issuers: 2, seed: 1 };
        let report = run_scale_benchmark(config);
        assert_eq!(report.selections, 0);
        assert_eq!(report.mean, Duration::ZERO);
    }

    #[test]
    fn single_variant_benchmark_always_selects_it() {
        let (snapshot, policy) = synthesize_model(1, 3, 5);
        let trace = dispatcher::select(&snapshot, &policy, 1).unwrap();
        assert_eq!(trace.selected.0, "v000");
    }

    #[test]
    fn report_table_renders_aligned_rows() {
        let report = RunReport {
            users: vec!["high".to_owned()],
            columns: vec![ReportColumn {
                label: "after".to_owned(),
                cells: vec![ReportCell {
                    user: "high".to_owned(),
                    variant: VariantId::from("V5"),
                    qos: vec![
                        QosValue { parameter: pid("rt"), value: 3.5, unit: "s".to_owned() },
                        QosValue { parameter: pid("cost"), value: 8.0, unit: "ct".to_owned() },
                        QosValue { parameter: pid("acc"), value: 9.0, unit: String::new() },
                    ],
                }],
            }],
        };
        let table = report.render_table();
        assert!(table.contains("V5{3.5s,8ct,9}"));
        assert!(table.starts_with("Goal"));
    }
}
