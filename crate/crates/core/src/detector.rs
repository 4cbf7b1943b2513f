//! Change detection on monitored service QoS.
//!
//! Each (service, parameter) stream keeps a running reference average. A
//! sample deviating from the reference by more than the parameter's change
//! threshold triggers re-estimation and starts a fresh reference regime
//! seeded with the triggering value; otherwise the sample is folded into
//! the running average. The first sample of a stream only seeds the
//! reference.
//!
//! The detector is deliberately simple: monitoring values often come from
//! third parties in small numbers, too few for statistical hypothesis
//! testing. [`ChangeDetector`] is the integration point for richer
//! detectors.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{ChangeRule, ParameterId, QoSParameter, ServiceId};

/// One observed QoS value for one service parameter, in canonical units.
/// `seq` is strictly increasing within its (service, parameter) stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitoringSample {
    pub service: ServiceId,
    pub parameter: ParameterId,
    pub value: f64,
    pub seq: u64,
}

/// Running reference average of one stream. The mean is only meaningful
/// while `count > 0`; `count` restarts at every detected regime change.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferenceStats {
    pub mean: f64,
    pub count: u64,
}

impl ReferenceStats {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Deviation beyond which a sample counts as a significant change.
/// Stable parameters tolerate no deviation; fluctuating parameters
/// tolerate half the reference average.
pub fn change_threshold(parameter: &QoSParameter, reference: f64) -> f64 {
    match parameter.change_rule {
        ChangeRule::Stable => 0.0,
        ChangeRule::Fluctuating => reference / 2.0,
    }
}

/// Folds one sample into the reference stats. Returns the new stats and
/// whether the sample triggered. A trigger resets the reference to a fresh
/// regime seeded with the sample.
pub fn ingest(stats: ReferenceStats, sample: &MonitoringSample, parameter: &QoSParameter) -> (ReferenceStats, bool) {
    if stats.count == 0 {
        return (ReferenceStats { mean: sample.value, count: 1 }, false);
    }
    let threshold = change_threshold(parameter, stats.mean);
    if (sample.value - stats.mean).abs() > threshold {
        (ReferenceStats { mean: sample.value, count: 1 }, true)
    } else {
        let count = stats.count + 1;
        let mean = stats.mean + (sample.value - stats.mean) / count as f64;
        (ReferenceStats { mean, count }, false)
    }
}

/// What one ingestion did to its stream, for trace output.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub triggered: bool,
    /// Reference before the sample; `None` when the sample seeded the stream.
    pub mean_before: Option<f64>,
    /// Threshold the deviation was compared against, when one applied.
    pub threshold: Option<f64>,
    pub stats: ReferenceStats,
}

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("out-of-order sample for {service}/{parameter}: seq {seq} is not after {last}")]
    OutOfOrderSample { service: ServiceId, parameter: ParameterId, seq: u64, last: u64 },
}

pub trait ChangeDetector {
    /// Ingests one sample, enforcing stream ordering.
    fn observe(
        &mut self,
        sample: &MonitoringSample,
        parameter: &QoSParameter,
    ) -> Result<IngestOutcome, DetectorError>;
}

/// The running-average fluctuation detector, one state per stream.
/// Streams are independent; within a stream, samples are serialized by
/// sequence number.
#[derive(Debug, Default)]
pub struct FluctuationDetector {
    streams: BTreeMap<(ServiceId, ParameterId), StreamState>,
}

#[derive(Debug, Default)]
struct StreamState {
    stats: ReferenceStats,
    last_seq: Option<u64>,
}

impl FluctuationDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current reference stats of a stream, if it has seen any sample.
    pub fn stats(&self, service: &ServiceId, parameter: &ParameterId) -> Option<ReferenceStats> {
        self.streams
            .get(&(service.clone(), parameter.clone()))
            .filter(|s| !s.stats.is_empty())
            .map(|s| s.stats)
    }
}

impl ChangeDetector for FluctuationDetector {
    fn observe(
        &mut self,
        sample: &MonitoringSample,
        parameter: &QoSParameter,
    ) -> Result<IngestOutcome, DetectorError> {
        let state = self
            .streams
            .entry((sample.service.clone(), sample.parameter.clone()))
            .or_default();
        if let Some(last) = state.last_seq {
            if sample.seq <= last {
                return Err(DetectorError::OutOfOrderSample {
                    service: sample.service.clone(),
                    parameter: sample.parameter.clone(),
                    seq: sample.seq,
                    last,
                });
            }
        }
        state.last_seq = Some(sample.seq);
        let before = state.stats;
        let (after, triggered) = ingest(before, sample, parameter);
        state.stats = after;
        Ok(IngestOutcome {
            triggered,
            mean_before: (!before.is_empty()).then_some(before.mean),
            threshold: (!before.is_empty()).then(|| change_threshold(parameter, before.mean)),
            stats: after,
        })
    }
}
