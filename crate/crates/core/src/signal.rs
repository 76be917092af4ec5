//! Beat detection on sampled pulse waveforms.
//!
//! The detector is a software Schmitt trigger: the output goes HIGH only once
//! the signal reaches the upper threshold and returns LOW only once it falls to
//! the lower threshold. Excursions that stay inside the band between the two
//! never toggle the output, so stray pulses of intermediate amplitude are not
//! counted. Each LOW to HIGH transition is a candidate beat, and a refractory
//! period suppresses a second beat arriving too soon after the previous one.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest value a 10-bit ADC reading can take.
pub const ADC_MAX: u16 = 1023;

/// Readings outside this range are rejected by the plausibility filter.
pub const PLAUSIBLE_MIN_BPM: f64 = 23.0;
pub const PLAUSIBLE_MAX_BPM: f64 = 200.0;

pub const DEFAULT_UPPER_THRESHOLD: u16 = 550;
pub const DEFAULT_LOWER_THRESHOLD: u16 = 470;
pub const DEFAULT_REFRACTORY_MS: u64 = 250;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("sample {index} at t={t_ms} ms has value {value} outside [0, {ADC_MAX}]")]
    ValueOutOfRange { index: usize, t_ms: u64, value: u16 },
    #[error("sample {index} at t={t_ms} ms does not follow previous timestamp {prev_t_ms} ms")]
    NonMonotone {
        index: usize,
        t_ms: u64,
        prev_t_ms: u64,
    },
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("inter-beat interval must be positive, got {0} ms")]
    NonPositiveInterval(f64),
}

/// One timestamped ADC reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub t_ms: u64,
    pub value: u16,
}

impl Sample {
    pub fn new(t_ms: u64, value: u16) -> Result<Self, SignalError> {
        if value > ADC_MAX {
            return Err(SignalError::ValueOutOfRange {
                index: 0,
                t_ms,
                value,
            });
        }
        Ok(Self { t_ms, value })
    }
}

/// Checks the per-stream invariants (ADC range, strictly increasing time)
/// one sample at a time.
#[derive(Debug, Clone, Default)]
pub struct StreamGuard {
    index: usize,
    prev_t_ms: Option<u64>,
}

impl StreamGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, sample: &Sample) -> Result<(), SignalError> {
        let index = self.index;
        if sample.value > ADC_MAX {
            return Err(SignalError::ValueOutOfRange {
                index,
                t_ms: sample.t_ms,
                value: sample.value,
            });
        }
        if let Some(prev_t_ms) = self.prev_t_ms {
            if sample.t_ms <= prev_t_ms {
                return Err(SignalError::NonMonotone {
                    index,
                    t_ms: sample.t_ms,
                    prev_t_ms,
                });
            }
        }
        self.prev_t_ms = Some(sample.t_ms);
        self.index += 1;
        Ok(())
    }

    pub fn last_t_ms(&self) -> Option<u64> {
        self.prev_t_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchmittConfig {
    pub upper_threshold: u16,
    pub lower_threshold: u16,
    pub refractory_ms: u64,
}

impl Default for SchmittConfig {
    fn default() -> Self {
        Self {
            upper_threshold: DEFAULT_UPPER_THRESHOLD,
            lower_threshold: DEFAULT_LOWER_THRESHOLD,
            refractory_ms: DEFAULT_REFRACTORY_MS,
        }
    }
}

impl SchmittConfig {
    pub fn new(upper: u16, lower: u16, refractory_ms: u64) -> Result<Self, SignalError> {
        let config = Self {
            upper_threshold: upper,
            lower_threshold: lower,
            refractory_ms,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.lower_threshold >= self.upper_threshold {
            return Err(SignalError::Config(format!(
                "lower_threshold {} must be below upper_threshold {}",
                self.lower_threshold, self.upper_threshold
            )));
        }
        if self.upper_threshold > ADC_MAX {
            return Err(SignalError::Config(format!(
                "upper_threshold {} exceeds ADC range",
                self.upper_threshold
            )));
        }
        if self.refractory_ms == 0 {
            return Err(SignalError::Config("refractory_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn hysteresis_width(&self) -> u16 {
        self.upper_threshold - self.lower_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Level {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchmittState {
    pub level: Level,
    pub last_beat_t_ms: Option<u64>,
}

impl Default for SchmittState {
    fn default() -> Self {
        Self {
            level: Level::Low,
            last_beat_t_ms: None,
        }
    }
}

/// An accepted LOW to HIGH transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RisingEdge {
    pub t_ms: u64,
}

/// Advances the trigger by one sample.
///
/// A LOW to HIGH switch inside the refractory window still raises the level
/// but emits no edge and leaves `last_beat_t_ms` untouched.
pub fn schmitt_step(
    state: SchmittState,
    config: &SchmittConfig,
    sample: Sample,
) -> (SchmittState, Option<RisingEdge>) {
    match state.level {
        Level::Low if sample.value >= config.upper_threshold => {
            let refractory = state
                .last_beat_t_ms
                .is_some_and(|last| sample.t_ms.saturating_sub(last) < config.refractory_ms);
            if refractory {
                (
                    SchmittState {
                        level: Level::High,
                        ..state
                    },
                    None,
                )
            } else {
                (
                    SchmittState {
                        level: Level::High,
                        last_beat_t_ms: Some(sample.t_ms),
                    },
                    Some(RisingEdge { t_ms: sample.t_ms }),
                )
            }
        }
        Level::High if sample.value <= config.lower_threshold => (
            SchmittState {
                level: Level::Low,
                ..state
            },
            None,
        ),
        _ => (state, None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatEvent {
    pub t_ms: u64,
    pub ibi_ms: Option<u64>,
}

/// Streaming wrapper around [`schmitt_step`] that validates the input stream
/// and attaches inter-beat intervals.
#[derive(Debug, Clone)]
pub struct BeatDetector {
    config: SchmittConfig,
    state: SchmittState,
    guard: StreamGuard,
}

impl BeatDetector {
    pub fn new(config: SchmittConfig) -> Result<Self, SignalError> {
        config.validate()?;
        Ok(Self {
            config,
            state: SchmittState::default(),
            guard: StreamGuard::new(),
        })
    }

    pub fn config(&self) -> &SchmittConfig {
        &self.config
    }

    pub fn state(&self) -> SchmittState {
        self.state
    }

    pub fn push(&mut self, sample: Sample) -> Result<Option<BeatEvent>, SignalError> {
        self.guard.check(&sample)?;
        let previous = self.state.last_beat_t_ms;
        let (next, edge) = schmitt_step(self.state, &self.config, sample);
        self.state = next;
        Ok(edge.map(|e| BeatEvent {
            t_ms: e.t_ms,
            ibi_ms: previous.map(|p| e.t_ms - p),
        }))
    }
}

pub fn detect_beats<I>(samples: I, config: &SchmittConfig) -> Result<Vec<BeatEvent>, SignalError>
where
    I: IntoIterator<Item = Sample>,
{
    let mut detector = BeatDetector::new(*config)?;
    let mut beats = Vec::new();
    for sample in samples {
        if let Some(beat) = detector.push(sample)? {
            beats.push(beat);
        }
    }
    Ok(beats)
}

/// Single-threshold baseline: a beat on every upward crossing, with neither
/// hysteresis nor refractory guard. The signal is assumed to start below the
/// threshold.
pub fn naive_detect_beats<I>(samples: I, threshold: u16) -> Result<Vec<BeatEvent>, SignalError>
where
    I: IntoIterator<Item = Sample>,
{
    let mut guard = StreamGuard::new();
    let mut above = false;
    let mut last: Option<u64> = None;
    let mut beats = Vec::new();
    for sample in samples {
        guard.check(&sample)?;
        let now_above = sample.value >= threshold;
        if now_above && !above {
            beats.push(BeatEvent {
                t_ms: sample.t_ms,
                ibi_ms: last.map(|l| sample.t_ms - l),
            });
            last = Some(sample.t_ms);
        }
        above = now_above;
    }
    Ok(beats)
}

pub fn bpm_from_ibi(ibi_ms: f64) -> Result<f64, SignalError> {
    if ibi_ms.is_nan() || ibi_ms <= 0.0 {
        return Err(SignalError::NonPositiveInterval(ibi_ms));
    }
    Ok(60_000.0 / ibi_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BpmStatus {
    Valid,
    RejectedLow,
    RejectedHigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpmEstimate {
    pub t_ms: u64,
    pub bpm: f64,
    pub status: BpmStatus,
}

impl BpmEstimate {
    pub fn is_valid(&self) -> bool {
        self.status == BpmStatus::Valid
    }
}

/// Accepts readings in [23, 200] bpm inclusive. Negative input is treated as
/// below range; NaN is rejected as low.
pub fn plausibility_filter(bpm: f64, t_ms: u64) -> BpmEstimate {
    let status = if bpm > PLAUSIBLE_MAX_BPM {
        BpmStatus::RejectedHigh
    } else if bpm >= PLAUSIBLE_MIN_BPM {
        BpmStatus::Valid
    } else {
        BpmStatus::RejectedLow
    };
    BpmEstimate { t_ms, bpm, status }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Median of the most recent instantaneous BPM values, filtered for
/// plausibility. Returns `None` until at least one interval is known.
/// A window of 0 behaves as 1.
pub fn estimate_bpm(beats: &[BeatEvent], smoothing_window: usize) -> Option<BpmEstimate> {
    let window = smoothing_window.max(1);
    let last = beats.last()?;
    let mut recent: Vec<f64> = beats
        .iter()
        .rev()
        .filter_map(|b| b.ibi_ms)
        .filter(|&ibi| ibi > 0)
        .take(window)
        .map(|ibi| 60_000.0 / ibi as f64)
        .collect();
    if recent.is_empty() {
        return None;
    }
    Some(plausibility_filter(median(&mut recent), last.t_ms))
}

/// Incremental form of [`estimate_bpm`] that keeps only the last
/// `smoothing_window` intervals.
#[derive(Debug, Clone)]
pub struct BpmEstimator {
    window: usize,
    recent: VecDeque<f64>,
}

impl BpmEstimator {
    pub fn new(smoothing_window: usize) -> Self {
        let window = smoothing_window.max(1);
        Self {
            window,
            recent: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, beat: &BeatEvent) -> Option<BpmEstimate> {
        let ibi = beat.ibi_ms.filter(|&i| i > 0)?;
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(60_000.0 / ibi as f64);
        let mut values: Vec<f64> = self.recent.iter().copied().collect();
        Some(plausibility_filter(median(&mut values), beat.t_ms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t_ms: u64, value: u16) -> Sample {
        Sample { t_ms, value }
    }

    fn cfg() -> SchmittConfig {
        SchmittConfig::default()
    }

    #[test]
    fn step_low_above_upper_emits_edge() {
        let (st, edge) = schmitt_step(SchmittState::default(), &cfg(), s(0, 560));
        assert_eq!(st.level, Level::High);
        assert_eq!(edge, Some(RisingEdge { t_ms: 0 }));
    }

    #[test]
    fn step_inside_band_holds_level() {
        let (st, edge) = schmitt_step(SchmittState::default(), &cfg(), s(0, 500));
        assert_eq!(st.level, Level::Low);
        assert!(edge.is_none());

        let high = SchmittState {
            level: Level::High,
            last_beat_t_ms: Some(0),
        };
        let (st, edge) = schmitt_step(high, &cfg(), s(10, 500));
        assert_eq!(st.level, Level::High);
        assert!(edge.is_none());
        let (st, edge) = schmitt_step(st, &cfg(), s(20, 460));
        assert_eq!(st.level, Level::Low);
        assert!(edge.is_none());
    }

    #[test]
    fn thresholds_are_inclusive() {
        let (st, edge) = schmitt_step(SchmittState::default(), &cfg(), s(0, 550));
        assert_eq!(st.level, Level::High);
        assert!(edge.is_some());
        let (st, _) = schmitt_step(st, &cfg(), s(10, 470));
        assert_eq!(st.level, Level::Low);
    }

    #[test]
    fn refractory_suppresses_edge() {
        let state = SchmittState {
            level: Level::Low,
            last_beat_t_ms: Some(0),
        };
        let (st, edge) = schmitt_step(state, &cfg(), s(100, 560));
        assert_eq!(st.level, Level::High);
        assert!(edge.is_none());
        assert_eq!(st.last_beat_t_ms, Some(0));

        // Literal scan of the same sequence: rise at 0, fall at 50, rise at 100.
        let beats = detect_beats([s(0, 560), s(50, 400), s(100, 560)], &cfg()).unwrap();
        assert_eq!(
            beats,
            vec![BeatEvent {
                t_ms: 0,
                ibi_ms: None
            }]
        );
    }

    #[test]
    fn refractory_boundary_accepts_exact_interval() {
        let beats = detect_beats([s(0, 560), s(50, 400), s(250, 560)], &cfg()).unwrap();
        assert_eq!(beats.len(), 2);
        assert_eq!(beats[1].ibi_ms, Some(250));
    }

    #[test]
    fn flatline_has_no_beats() {
        let samples = (0..1000).map(|i| s(i * 10, 0));
        assert!(detect_beats(samples.clone(), &cfg()).unwrap().is_empty());
        assert!(naive_detect_beats(samples, 550).unwrap().is_empty());
    }

    #[test]
    fn non_monotone_stream_is_rejected() {
        let err = detect_beats([s(0, 0), s(10, 0), s(10, 0)], &cfg()).unwrap_err();
        assert_eq!(
            err,
            SignalError::NonMonotone {
                index: 2,
                t_ms: 10,
                prev_t_ms: 10
            }
        );
        let err = naive_detect_beats([s(5, 0), s(4, 0)], 550).unwrap_err();
        assert!(matches!(err, SignalError::NonMonotone { index: 1, .. }));
    }

    #[test]
    fn out_of_range_value_is_rejected() {
        assert!(Sample::new(0, 1024).is_err());
        let err = detect_beats([s(0, 1024)], &cfg()).unwrap_err();
        assert!(matches!(err, SignalError::ValueOutOfRange { index: 0, .. }));
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(SchmittConfig::new(470, 550, 250).is_err());
        assert!(SchmittConfig::new(500, 500, 250).is_err());
        assert!(SchmittConfig::new(550, 470, 0).is_err());
        assert!(BeatDetector::new(SchmittConfig {
            upper_threshold: 1100,
            lower_threshold: 0,
            refractory_ms: 1
        })
        .is_err());
    }

    #[test]
    fn naive_counts_every_upward_crossing() {
        let samples = [s(0, 540), s(10, 560), s(20, 545), s(30, 555), s(40, 100)];
        let beats = naive_detect_beats(samples, 550).unwrap();
        assert_eq!(beats.len(), 2);
        assert_eq!(beats[1].ibi_ms, Some(20));
        // The hysteresis detector sees one pulse.
        assert_eq!(detect_beats(samples, &cfg()).unwrap().len(), 1);
    }

    #[test]
    fn bpm_conversion() {
        assert_eq!(bpm_from_ibi(1000.0).unwrap(), 60.0);
        assert_eq!(bpm_from_ibi(600.0).unwrap(), 100.0);
        assert_eq!(bpm_from_ibi(300.0).unwrap(), 200.0);
        assert!(bpm_from_ibi(0.0).is_err());
        assert!(bpm_from_ibi(-5.0).is_err());
        assert!(bpm_from_ibi(f64::NAN).is_err());
    }

    #[test]
    fn filter_boundaries() {
        assert_eq!(plausibility_filter(22.9, 0).status, BpmStatus::RejectedLow);
        assert_eq!(plausibility_filter(23.0, 0).status, BpmStatus::Valid);
        assert_eq!(plausibility_filter(200.0, 0).status, BpmStatus::Valid);
        assert_eq!(
            plausibility_filter(201.0, 0).status,
            BpmStatus::RejectedHigh
        );
        assert_eq!(plausibility_filter(201.0, 7).bpm, 201.0);
        assert_eq!(plausibility_filter(0.0, 0).status, BpmStatus::RejectedLow);
    }

    fn beats_from_ibis(ibis: &[u64]) -> Vec<BeatEvent> {
        let mut t = 0;
        let mut beats = vec![BeatEvent {
            t_ms: 0,
            ibi_ms: None,
        }];
        for &ibi in ibis {
            t += ibi;
            beats.push(BeatEvent {
                t_ms: t,
                ibi_ms: Some(ibi),
            });
        }
        beats
    }

    #[test]
    fn estimate_needs_two_beats() {
        assert!(estimate_bpm(&[], 5).is_none());
        assert!(estimate_bpm(&beats_from_ibis(&[]), 5).is_none());
    }

    #[test]
    fn estimate_median_of_window() {
        let est = estimate_bpm(&beats_from_ibis(&[1000, 1000, 1000]), 3).unwrap();
        assert_eq!(est.bpm, 60.0);
        assert_eq!(est.status, BpmStatus::Valid);

        // median of {100, 100, 30}
        let est = estimate_bpm(&beats_from_ibis(&[600, 600, 2000]), 3).unwrap();
        assert_eq!(est.bpm, 100.0);
        assert_eq!(est.status, BpmStatus::Valid);
        assert_eq!(est.t_ms, 3200);

        // window larger than history, even count: mean of middle pair
        let est = estimate_bpm(&beats_from_ibis(&[1000, 500]), 5).unwrap();
        assert_eq!(est.bpm, 90.0);
    }

    #[test]
    fn streaming_estimator_matches_batch() {
        let ibis = [600, 640, 2000, 580, 610, 300, 240, 1000, 990];
        let beats = beats_from_ibis(&ibis);
        let mut est = BpmEstimator::new(5);
        assert!(est.push(&beats[0]).is_none());
        for i in 1..beats.len() {
            let streamed = est.push(&beats[i]).unwrap();
            let batch = estimate_bpm(&beats[..=i], 5).unwrap();
            assert_eq!(streamed, batch);
        }
    }
}
