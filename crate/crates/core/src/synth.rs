//! Synthetic pulse waveforms with known beat times.
//!
//! Each beat is a raised-cosine bump of `pulse_width_ms` starting at the beat
//! onset. On top of that come Gaussian noise, sinusoidal baseline wander and
//! any listed stray pulses, after which values are rounded and clamped to the
//! ADC range.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::Phase;
use crate::physiology::{
    max_heart_rate, satisfaction_band, sleep_rate_range, BandMode, BpmBand, PhysiologyError,
    UserProfile,
};
use crate::signal::{Sample, ADC_MAX};

pub const MAX_SAMPLE_RATE_HZ: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid waveform spec: {field}: {reason}")]
pub struct SpecError {
    pub field: &'static str,
    pub reason: String,
}

fn spec_err(field: &'static str, reason: impl Into<String>) -> SpecError {
    SpecError {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSegment {
    pub start_ms: u64,
    pub bpm: f64,
}

/// Either a single constant rate or a piecewise-constant schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HeartRate {
    Constant(f64),
    Schedule(Vec<RateSegment>),
}

impl HeartRate {
    pub fn segments(&self) -> Vec<RateSegment> {
        match self {
            HeartRate::Constant(bpm) => vec![RateSegment {
                start_ms: 0,
                bpm: *bpm,
            }],
            HeartRate::Schedule(segments) => segments.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrayPulse {
    /// Centre of the excursion.
    pub t_ms: f64,
    /// Absolute level reached on an otherwise quiet baseline.
    pub peak: u16,
    pub width_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformSpec {
    pub duration_ms: u64,
    pub sample_rate_hz: u32,
    pub heart_rate_bpm: HeartRate,
    pub pulse_amplitude: u16,
    pub baseline: u16,
    pub pulse_width_ms: f64,
    pub noise_stddev: f64,
    pub wander_amplitude: f64,
    pub wander_period_ms: f64,
    pub stray_pulses: Vec<StrayPulse>,
    pub rng_seed: u64,
}

impl Default for WaveformSpec {
    fn default() -> Self {
        Self {
            duration_ms: 10_000,
            sample_rate_hz: 100,
            heart_rate_bpm: HeartRate::Constant(60.0),
            pulse_amplitude: 400,
            baseline: 400,
            pulse_width_ms: 200.0,
            noise_stddev: 0.0,
            wander_amplitude: 0.0,
            wander_period_ms: 8_000.0,
            stray_pulses: Vec::new(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beat_times_ms: Vec<f64>,
    pub segments: Vec<RateSegment>,
}

impl GroundTruth {
    pub fn beat_count(&self) -> usize {
        self.beat_times_ms.len()
    }
}

impl WaveformSpec {
    pub fn constant(bpm: f64, duration_ms: u64) -> Self {
        Self {
            duration_ms,
            heart_rate_bpm: HeartRate::Constant(bpm),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if !(1..=MAX_SAMPLE_RATE_HZ).contains(&self.sample_rate_hz) {
            return Err(spec_err(
                "sample_rate_hz",
                format!("{} outside [1, {MAX_SAMPLE_RATE_HZ}]", self.sample_rate_hz),
            ));
        }
        if self.baseline as u32 + self.pulse_amplitude as u32 > ADC_MAX as u32 {
            return Err(spec_err(
                "pulse_amplitude",
                format!(
                    "baseline {} + pulse_amplitude {} exceeds {ADC_MAX}",
                    self.baseline, self.pulse_amplitude
                ),
            ));
        }
        let segments = self.heart_rate_bpm.segments();
        if segments.is_empty() {
            return Err(spec_err("heart_rate_bpm", "schedule is empty"));
        }
        if segments[0].start_ms != 0 {
            return Err(spec_err(
                "heart_rate_bpm",
                "first segment must start at 0 ms",
            ));
        }
        for pair in segments.windows(2) {
            if pair[1].start_ms <= pair[0].start_ms {
                return Err(spec_err(
                    "heart_rate_bpm",
                    "segment start times must strictly increase",
                ));
            }
        }
        let mut max_bpm: f64 = 0.0;
        for seg in &segments {
            if !(seg.bpm > 0.0 && seg.bpm.is_finite()) {
                return Err(spec_err(
                    "heart_rate_bpm",
                    format!(
                        "segment at {} ms has non-positive rate {}",
                        seg.start_ms, seg.bpm
                    ),
                ));
            }
            max_bpm = max_bpm.max(seg.bpm);
        }
        let shortest_ibi = 60_000.0 / max_bpm;
        if !(self.pulse_width_ms > 0.0 && self.pulse_width_ms < shortest_ibi) {
            return Err(spec_err(
                "pulse_width_ms",
                format!(
                    "{} must be positive and below the shortest interval {shortest_ibi:.1} ms",
                    self.pulse_width_ms
                ),
            ));
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err(spec_err("noise_stddev", "must be finite and non-negative"));
        }
        if !(self.wander_amplitude >= 0.0 && self.wander_amplitude.is_finite()) {
            return Err(spec_err(
                "wander_amplitude",
                "must be finite and non-negative",
            ));
        }
        if self.wander_amplitude > 0.0 && !(self.wander_period_ms > 0.0) {
            return Err(spec_err(
                "wander_period_ms",
                "must be positive when wander is on",
            ));
        }
        for stray in &self.stray_pulses {
            if stray.peak > ADC_MAX {
                return Err(spec_err(
                    "stray_pulses",
                    format!("peak {} exceeds {ADC_MAX}", stray.peak),
                ));
            }
            if !(stray.width_ms > 0.0 && stray.width_ms.is_finite() && stray.t_ms.is_finite()) {
                return Err(spec_err(
                    "stray_pulses",
                    "width must be positive and times finite",
                ));
            }
        }
        Ok(())
    }

    pub fn sample_period_ms(&self) -> f64 {
        1000.0 / self.sample_rate_hz as f64
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_ms * self.sample_rate_hz as u64 / 1000) as usize
    }

    pub fn sample_time(&self, k: usize) -> u64 {
        (k as f64 * self.sample_period_ms()).round() as u64
    }

    /// Nominal beat onsets. Each interval uses the rate of the segment in
    /// effect at the beat that opens it.
    pub fn beat_times(&self) -> Vec<f64> {
        let segments = self.heart_rate_bpm.segments();
        let rate_at = |t: f64| {
            segments
                .iter()
                .rev()
                .find(|s| s.start_ms as f64 <= t)
                .map_or(segments[0].bpm, |s| s.bpm)
        };
        let mut beats = Vec::new();
        let mut t = 0.0;
        while t < self.duration_ms as f64 {
            beats.push(t);
            t += 60_000.0 / rate_at(t);
        }
        beats
    }

    /// Time after onset at which the rounded clean pulse first reaches
    /// `level`, or `None` if it never does.
    pub fn pulse_crossing_offset_ms(&self, level: u16) -> Option<f64> {
        let rise = level as f64 - 0.5 - self.baseline as f64;
        let amp = self.pulse_amplitude as f64;
        if rise <= 0.0 {
            return Some(0.0);
        }
        if rise > amp {
            return None;
        }
        let phase = (1.0 - 2.0 * rise / amp).clamp(-1.0, 1.0).acos();
        Some(self.pulse_width_ms * phase / (2.0 * PI))
    }
}

fn raised_cosine(offset: f64, width: f64) -> f64 {
    (1.0 - (2.0 * PI * offset / width).cos()) / 2.0
}

pub fn synthesize(spec: &WaveformSpec) -> Result<(Vec<Sample>, GroundTruth), SpecError> {
    spec.validate()?;
    let beats = spec.beat_times();
    let baseline = spec.baseline as f64;
    let amp = spec.pulse_amplitude as f64;
    let width = spec.pulse_width_ms;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let noise =
        Normal::new(0.0, spec.noise_stddev).map_err(|e| spec_err("noise_stddev", e.to_string()))?;

    let n = spec.sample_count();
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t_ms = spec.sample_time(k);
        let t = t_ms as f64;
        let mut v = baseline;

        let idx = beats.partition_point(|&b| b <= t);
        if idx > 0 {
            let offset = t - beats[idx - 1];
            if offset < width {
                v += amp * raised_cosine(offset, width);
            }
        }
        if spec.wander_amplitude > 0.0 {
            v += spec.wander_amplitude * (2.0 * PI * t / spec.wander_period_ms).sin();
        }
        for stray in &spec.stray_pulses {
            let offset = t - stray.t_ms + stray.width_ms / 2.0;
            if (0.0..stray.width_ms).contains(&offset) {
                v += (stray.peak as f64 - baseline) * raised_cosine(offset, stray.width_ms);
            }
        }
        if spec.noise_stddev > 0.0 {
            v += noise.sample(&mut rng);
        }
        let value = v.round().clamp(0.0, ADC_MAX as f64) as u16;
        samples.push(Sample { t_ms, value });
    }

    Ok((
        samples,
        GroundTruth {
            beat_times_ms: beats,
            segments: spec.heart_rate_bpm.segments(),
        },
    ))
}

/// Places `count` non-overlapping stray pulses in the quiet stretches between
/// beats, keeping `margin_ms` clear of every pulse.
pub fn scatter_strays(
    spec: &WaveformSpec,
    count: usize,
    peak: u16,
    width_ms: f64,
    margin_ms: f64,
    seed: u64,
) -> Result<Vec<StrayPulse>, SpecError> {
    let beats = spec.beat_times();
    let slot = width_ms + margin_ms;
    let mut slots = Vec::new();
    for (i, &onset) in beats.iter().enumerate() {
        let gap_start = onset + spec.pulse_width_ms + margin_ms;
        let gap_end = beats.get(i + 1).copied().unwrap_or(spec.duration_ms as f64) - margin_ms;
        let mut start = gap_start;
        while start + slot <= gap_end {
            slots.push(start + width_ms / 2.0);
            start += slot;
        }
    }
    if slots.len() < count {
        return Err(spec_err(
            "stray_pulses",
            format!("room for {} strays, {count} requested", slots.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, slots.len(), count).into_vec();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|i| StrayPulse {
            t_ms: slots[i],
            peak,
            width_ms,
        })
        .collect())
}

#[derive(Debug, Error)]
pub enum WaveformIoError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const CSV_HEADER: &str = "t_ms,value";

/// Writes `t_ms,value` CSV with LF line endings.
pub fn write_waveform<W: Write>(samples: &[Sample], out: W) -> Result<(), WaveformIoError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let to_io = |e: csv::Error| WaveformIoError::Io(e.into());
    writer.write_record(["t_ms", "value"]).map_err(to_io)?;
    for s in samples {
        writer
            .write_record([s.t_ms.to_string(), s.value.to_string()])
            .map_err(to_io)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_waveform<R: Read>(input: R) -> Result<Vec<Sample>, WaveformIoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut samples = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut seen_header = false;
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| WaveformIoError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if !seen_header {
            if record.len() != 2 || &record[0] != "t_ms" || &record[1] != "value" {
                return Err(WaveformIoError::Parse {
                    line,
                    message: format!("expected header `{CSV_HEADER}`"),
                });
            }
            seen_header = true;
            continue;
        }
        if record.len() != 2 {
            return Err(WaveformIoError::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let t_ms: u64 = record[0].parse().map_err(|e| WaveformIoError::Parse {
            line,
            message: format!("bad t_ms `{}`: {e}", &record[0]),
        })?;
        let value: u16 = record[1]
            .parse()
            .ok()
            .filter(|&v| v <= ADC_MAX)
            .ok_or_else(|| WaveformIoError::Parse {
                line,
                message: format!(
                    "value `{}` is not an ADC reading in [0, {ADC_MAX}]",
                    &record[1]
                ),
            })?;
        samples.push(Sample { t_ms, value });
    }
    if !seen_header {
        return Err(WaveformIoError::Parse {
            line: 1,
            message: format!("missing header `{CSV_HEADER}`"),
        });
    }
    Ok(samples)
}

pub fn write_waveform_file(samples: &[Sample], path: &Path) -> Result<(), WaveformIoError> {
    write_waveform(samples, BufWriter::new(File::create(path)?))
}

pub fn read_waveform_file(path: &Path) -> Result<Vec<Sample>, WaveformIoError> {
    read_waveform(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Profile(#[from] PhysiologyError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("scenario infeasible: {0}")]
    Infeasible(String),
}

/// Knobs for [`make_wake_scenario`]; unset rates fall back to the profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioOverrides {
    pub band_mode: BandMode,
    pub sleep_bpm: Option<f64>,
    pub exercise_bpm: Option<f64>,
    /// No exercise segment: the sleep rate continues to the end.
    pub sleep_only: bool,
    pub alarm_time_ms: u64,
    pub exercise_start_ms: u64,
    pub exercise_duration_ms: u64,
    pub sample_rate_hz: u32,
    pub pulse_amplitude: u16,
    pub baseline: u16,
    pub pulse_width_ms: f64,
    pub noise_stddev: f64,
    pub wander_amplitude: f64,
    pub wander_period_ms: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioOverrides {
    fn default() -> Self {
        let w = WaveformSpec::default();
        Self {
            band_mode: BandMode::Fixed,
            sleep_bpm: None,
            exercise_bpm: None,
            sleep_only: false,
            alarm_time_ms: 30_000,
            exercise_start_ms: 45_000,
            exercise_duration_ms: 30_000,
            // 1 ms timestamps keep interval quantisation well inside the
            // satisfaction band edges
            sample_rate_hz: 1000,
            pulse_amplitude: w.pulse_amplitude,
            baseline: w.baseline,
            pulse_width_ms: w.pulse_width_ms,
            noise_stddev: w.noise_stddev,
            wander_amplitude: w.wander_amplitude,
            wander_period_ms: w.wander_period_ms,
            rng_seed: w.rng_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTransition {
    pub from: Phase,
    pub to: Phase,
    pub earliest_ms: u64,
    pub latest_ms: u64,
}

impl ExpectedTransition {
    pub fn admits(&self, from: Phase, to: Phase, t_ms: u64) -> bool {
        self.from == from && self.to == to && (self.earliest_ms..=self.latest_ms).contains(&t_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WakeScenario {
    pub spec: WaveformSpec,
    pub alarm_time_ms: u64,
    pub satisfaction_band: BpmBand,
    pub sleep_bpm: f64,
    pub exercise_bpm: Option<f64>,
    pub expected: Vec<ExpectedTransition>,
    pub expected_final_phase: Phase,
}

/// Builds a sleep, alarm, exercise timeline for `profile` together with the
/// transition log the alarm engine should produce on it.
pub fn make_wake_scenario(
    profile: &UserProfile,
    overrides: &ScenarioOverrides,
) -> Result<WakeScenario, ScenarioError> {
    profile.validate()?;
    let band = satisfaction_band(Some(profile), overrides.band_mode)?;
    let sleep_bpm = match overrides.sleep_bpm {
        Some(bpm) => bpm,
        None => sleep_rate_range(profile.resting_bpm)?.midpoint(),
    };
    if band.contains(sleep_bpm) {
        return Err(ScenarioError::Infeasible(format!(
            "sleep rate {sleep_bpm:.1} bpm already lies in the satisfaction band [{}, {}]",
            band.low, band.high
        )));
    }
    if overrides.alarm_time_ms > overrides.exercise_start_ms {
        return Err(ScenarioError::Infeasible(
            "alarm must go off before the exercise starts".into(),
        ));
    }
    let exercise_bpm = if overrides.sleep_only {
        None
    } else {
        let bpm = overrides.exercise_bpm.unwrap_or_else(|| band.midpoint());
        let max = max_heart_rate(profile.age_years)? as f64;
        if bpm > max {
            return Err(ScenarioError::Infeasible(format!(
                "exercise rate {bpm} bpm exceeds the maximum {max} bpm for age {}",
                profile.age_years
            )));
        }
        Some(bpm)
    };

    let mut segments = vec![RateSegment {
        start_ms: 0,
        bpm: sleep_bpm,
    }];
    if let Some(bpm) = exercise_bpm {
        segments.push(RateSegment {
            start_ms: overrides.exercise_start_ms,
            bpm,
        });
    }
    let duration_ms = overrides.exercise_start_ms + overrides.exercise_duration_ms;
    let spec = WaveformSpec {
        duration_ms,
        sample_rate_hz: overrides.sample_rate_hz,
        heart_rate_bpm: HeartRate::Schedule(segments),
        pulse_amplitude: overrides.pulse_amplitude,
        baseline: overrides.baseline,
        pulse_width_ms: overrides.pulse_width_ms,
        noise_stddev: overrides.noise_stddev,
        wander_amplitude: overrides.wander_amplitude,
        wander_period_ms: overrides.wander_period_ms,
        stray_pulses: Vec::new(),
        rng_seed: overrides.rng_seed,
    };
    spec.validate()?;

    let period = spec.sample_period_ms().ceil() as u64;
    let mut expected = vec![ExpectedTransition {
        from: Phase::Armed,
        to: Phase::Ringing,
        earliest_ms: overrides.alarm_time_ms,
        latest_ms: overrides.alarm_time_ms + period,
    }];
    let stops =
        exercise_bpm.is_some_and(|bpm| band.contains(bpm) && BpmBand::plausible().contains(bpm));
    if stops {
        expected.push(ExpectedTransition {
            from: Phase::Ringing,
            to: Phase::Stopped,
            earliest_ms: overrides.exercise_start_ms,
            latest_ms: duration_ms,
        });
    }
    Ok(WakeScenario {
        spec,
        alarm_time_ms: overrides.alarm_time_ms,
        satisfaction_band: band,
        sleep_bpm,
        exercise_bpm,
        expected,
        expected_final_phase: if stops {
            Phase::Stopped
        } else {
            Phase::Ringing
        },
    })
}
