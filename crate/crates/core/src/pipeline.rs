//! Samples in, alarm transitions out: detector, estimator, plausibility
//! filter and alarm engine chained over one ordered stream.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::{
    AlarmEngine, EngineAction, EngineConfig, EngineError, EngineEvent, EventKind, Phase, Transition,
};
use crate::ingest::IngestStats;
use crate::signal::{
    BeatDetector, BpmEstimate, BpmEstimator, BpmStatus, Sample, SchmittConfig, SignalError,
    DEFAULT_SMOOTHING_WINDOW,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub schmitt: SchmittConfig,
    pub engine: EngineConfig,
    pub smoothing_window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schmitt: SchmittConfig::default(),
            engine: EngineConfig::default(),
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

/// One line of the machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Reading {
        t_ms: u64,
        bpm: f64,
        status: BpmStatus,
    },
    Transition {
        t_ms: u64,
        from: Phase,
        to: Phase,
        trigger: EventKind,
    },
    Summary(Summary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub samples: u64,
    pub beats: u64,
    pub readings: u64,
    pub valid: u64,
    pub rejected_low: u64,
    pub rejected_high: u64,
    pub in_band: u64,
    pub final_phase: Phase,
    pub expected_final_phase: Option<Phase>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped_samples: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Readings and transitions in the order they happened.
    pub events: Vec<ReportRecord>,
    pub transitions: Vec<Transition>,
    pub trace: Vec<BpmEstimate>,
    pub summary: Summary,
}

impl RunReport {
    pub fn final_phase(&self) -> Phase {
        self.summary.final_phase
    }

    pub fn met_expectation(&self) -> bool {
        self.summary
            .expected_final_phase
            .is_none_or(|p| p == self.summary.final_phase)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for record in self
            .events
            .iter()
            .chain([&ReportRecord::Summary(self.summary.clone())])
        {
            serde_json::to_writer(&mut out, record).expect("report records serialize");
            out.push(b'\n');
        }
        out
    }

    /// Serial-monitor style listing followed by the totals.
    pub fn human_summary(&self) -> String {
        let mut s = String::new();
        for record in &self.events {
            match record {
                ReportRecord::Reading { t_ms, bpm, status } => {
                    let _ = writeln!(
                        s,
                        "[{:>9.3} s] BPM: {:>6.1}  {}",
                        *t_ms as f64 / 1000.0,
                        bpm,
                        status_label(*status)
                    );
                }
                ReportRecord::Transition { t_ms, from, to, .. } => {
                    let _ = writeln!(s, "[{:>9.3} s] {from} -> {to}", *t_ms as f64 / 1000.0);
                }
                ReportRecord::Summary(_) => {}
            }
        }
        let m = &self.summary;
        let _ = writeln!(
            s,
            "samples: {}  beats: {}  readings: {}",
            m.samples, m.beats, m.readings
        );
        let _ = writeln!(
            s,
            "valid: {}  rejected low: {}  rejected high: {}  in band: {}",
            m.valid, m.rejected_low, m.rejected_high, m.in_band
        );
        if let Some(ingest) = &m.ingest {
            let _ = writeln!(
                s,
                "frames: {}  gaps: {} ({} missing)  corrupt: {}  skipped bytes: {}",
                ingest.samples,
                ingest.gaps,
                ingest.missing_frames,
                ingest.corrupt_frames,
                ingest.skipped_bytes
            );
        }
        if let Some(dropped) = m.dropped_samples {
            let _ = writeln!(s, "dropped out-of-order samples: {dropped}");
        }
        match m.expected_final_phase {
            Some(expected) => {
                let _ = writeln!(s, "final phase: {} (expected {expected})", m.final_phase);
            }
            None => {
                let _ = writeln!(s, "final phase: {}", m.final_phase);
            }
        }
        s
    }
}

fn status_label(status: BpmStatus) -> &'static str {
    match status {
        BpmStatus::Valid => "VALID",
        BpmStatus::RejectedLow => "REJECTED_LOW",
        BpmStatus::RejectedHigh => "REJECTED_HIGH",
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    detector: BeatDetector,
    estimator: BpmEstimator,
    engine: AlarmEngine,
    events: Vec<ReportRecord>,
    transitions: Vec<Transition>,
    trace: Vec<BpmEstimate>,
    samples: u64,
    beats: u64,
    in_band: u64,
}

impl Pipeline {
    /// Starts with the engine armed for `alarm_time_ms`.
    pub fn new(config: &PipelineConfig, alarm_time_ms: u64) -> Result<Self, PipelineError> {
        Ok(Self {
            detector: BeatDetector::new(config.schmitt)?,
            estimator: BpmEstimator::new(config.smoothing_window),
            engine: AlarmEngine::armed(config.engine, alarm_time_ms)?,
            events: Vec::new(),
            transitions: Vec::new(),
            trace: Vec::new(),
            samples: 0,
            beats: 0,
            in_band: 0,
        })
    }

    pub fn engine(&self) -> &AlarmEngine {
        &self.engine
    }

    fn step(&mut self, event: EngineEvent) -> Result<(), PipelineError> {
        for action in self.engine.step(event)? {
            if let EngineAction::LogTransition(t) = action {
                self.events.push(ReportRecord::Transition {
                    t_ms: t.t_ms,
                    from: t.from,
                    to: t.to,
                    trigger: t.trigger,
                });
                self.transitions.push(t);
            }
        }
        Ok(())
    }

    /// Each sample is a clock tick for the engine; a detected beat may add a
    /// BPM reading at the same timestamp.
    pub fn push(&mut self, sample: Sample) -> Result<(), PipelineError> {
        let beat = self.detector.push(sample)?;
        self.samples += 1;
        self.step(EngineEvent::ClockTick { t_ms: sample.t_ms })?;
        if let Some(beat) = beat {
            self.beats += 1;
            if let Some(estimate) = self.estimator.push(&beat) {
                self.trace.push(estimate);
                self.events.push(ReportRecord::Reading {
                    t_ms: estimate.t_ms,
                    bpm: estimate.bpm,
                    status: estimate.status,
                });
                if estimate.is_valid()
                    && self
                        .engine
                        .config()
                        .satisfaction_band
                        .contains(estimate.bpm)
                {
                    self.in_band += 1;
                }
                self.step(EngineEvent::BpmReading(estimate))?;
            }
        }
        Ok(())
    }

    pub fn finish(self, expected_final_phase: Option<Phase>) -> RunReport {
        let count = |status| self.trace.iter().filter(|e| e.status == status).count() as u64;
        let summary = Summary {
            samples: self.samples,
            beats: self.beats,
            readings: self.trace.len() as u64,
            valid: count(BpmStatus::Valid),
            rejected_low: count(BpmStatus::RejectedLow),
            rejected_high: count(BpmStatus::RejectedHigh),
            in_band: self.in_band,
            final_phase: self.engine.phase(),
            expected_final_phase,
            ingest: None,
            dropped_samples: None,
        };
        RunReport {
            events: self.events,
            transitions: self.transitions,
            trace: self.trace,
            summary,
        }
    }
}

pub fn run_pipeline<I>(
    samples: I,
    config: &PipelineConfig,
    alarm_time_ms: u64,
    expected_final_phase: Option<Phase>,
) -> Result<RunReport, PipelineError>
where
    I: IntoIterator<Item = Sample>,
{
    let mut pipeline = Pipeline::new(config, alarm_time_ms)?;
    for sample in samples {
        pipeline.push(sample)?;
    }
    Ok(pipeline.finish(expected_final_phase))
}
