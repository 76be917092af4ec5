//! Hysteresis detector against the single-threshold baseline over a sweep of
//! stray-pulse counts and noise levels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::app::AppError;
use crate::signal::{detect_beats, naive_detect_beats, BeatEvent, SchmittConfig};
use crate::synth::{scatter_strays, synthesize, WaveformSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub bpm: f64,
    pub duration_ms: u64,
    pub sample_rate_hz: u32,
    pub seeds_per_cell: u64,
    pub seed: u64,
    /// Stray pulses per waveform.
    pub stray_counts: Vec<usize>,
    pub noise_levels: Vec<f64>,
    /// Defaults to three quarters of the way up the hysteresis band.
    pub stray_peak: Option<u16>,
    pub stray_width_ms: f64,
    /// Defaults to a quarter of the way up the hysteresis band.
    pub naive_threshold: Option<u16>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            bpm: 60.0,
            duration_ms: 60_000,
            sample_rate_hz: 100,
            seeds_per_cell: 10,
            seed: 0,
            stray_counts: vec![0, 10, 20, 40],
            noise_levels: vec![0.0, 5.0, 10.0, 20.0, 40.0, 80.0],
            stray_peak: None,
            stray_width_ms: 40.0,
            naive_threshold: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), AppError> {
        if self.stray_counts.is_empty() || self.noise_levels.is_empty() {
            return Err(AppError::Config(
                "bench sweep axes must not be empty".into(),
            ));
        }
        if self.seeds_per_cell == 0 {
            return Err(AppError::Config(
                "bench.seeds_per_cell must be at least 1".into(),
            ));
        }
        if self
            .noise_levels
            .iter()
            .any(|n| !(*n >= 0.0 && n.is_finite()))
        {
            return Err(AppError::Config(
                "bench.noise_levels must be finite and non-negative".into(),
            ));
        }
        if !(self.stray_width_ms > 0.0) {
            return Err(AppError::Config(
                "bench.stray_width_ms must be positive".into(),
            ));
        }
        self.base_spec(0.0, 0)
            .validate()
            .map_err(|e| AppError::Config(e.to_string()))
    }

    fn base_spec(&self, noise: f64, seed: u64) -> WaveformSpec {
        WaveformSpec {
            sample_rate_hz: self.sample_rate_hz,
            noise_stddev: noise,
            rng_seed: seed,
            ..WaveformSpec::constant(self.bpm, self.duration_ms)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub matched: u64,
    pub false_beats: u64,
    pub missed_beats: u64,
}

impl std::ops::AddAssign for Score {
    fn add_assign(&mut self, rhs: Self) {
        self.matched += rhs.matched;
        self.false_beats += rhs.false_beats;
        self.missed_beats += rhs.missed_beats;
    }
}

/// Matches detections to true beat onsets. A detection counts for the beat
/// whose window `[onset - early_ms, onset + late_ms]` contains it, once per
/// beat; everything else is a false beat. Beats whose window runs past
/// `end_ms` are not counted as missed.
pub fn score_detections(
    truth: &[f64],
    detections: &[BeatEvent],
    early_ms: f64,
    late_ms: f64,
    end_ms: f64,
) -> Score {
    let mut matched = vec![false; truth.len()];
    let mut score = Score::default();
    for d in detections {
        let t = d.t_ms as f64;
        let slot = truth.partition_point(|&b| b + late_ms < t);
        match truth.get(slot) {
            Some(&b) if b - early_ms <= t && !matched[slot] => {
                matched[slot] = true;
                score.matched += 1;
            }
            _ => score.false_beats += 1,
        }
    }
    score.missed_beats = truth
        .iter()
        .zip(&matched)
        .filter(|(&b, &m)| !m && b + late_ms <= end_ms)
        .count() as u64;
    score
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strays: usize,
    pub noise_stddev: f64,
    pub waveforms: u64,
    pub true_beats: u64,
    pub schmitt: Score,
    pub naive: Score,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub naive_threshold: u16,
    pub stray_peak: u16,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Lowest noise level at which the hysteresis detector first reports a
    /// false beat.
    pub fn schmitt_breaking_noise(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.schmitt.false_beats > 0)
            .map(|r| r.noise_stddev)
            .min_by(f64::total_cmp)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "strays,noise_stddev,waveforms,true_beats,schmitt_false,schmitt_missed,naive_false,naive_missed\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.strays,
                r.noise_stddev,
                r.waveforms,
                r.true_beats,
                r.schmitt.false_beats,
                r.schmitt.missed_beats,
                r.naive.false_beats,
                r.naive.missed_beats
            );
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "naive threshold {}  stray peak {}",
            self.naive_threshold, self.stray_peak
        );
        let _ = writeln!(
            s,
            "{:>6} {:>7} {:>7} | {:>8} {:>8} | {:>8} {:>8}",
            "strays", "noise", "beats", "S false", "S miss", "N false", "N miss"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6} {:>7.1} {:>7} | {:>8} {:>8} | {:>8} {:>8}",
                r.strays,
                r.noise_stddev,
                r.true_beats,
                r.schmitt.false_beats,
                r.schmitt.missed_beats,
                r.naive.false_beats,
                r.naive.missed_beats
            );
        }
        match self.schmitt_breaking_noise() {
            Some(n) => {
                let _ = writeln!(s, "hysteresis detector first fails at noise stddev {n}");
            }
            None => {
                let _ = writeln!(
                    s,
                    "hysteresis detector produced no false beats in this sweep"
                );
            }
        }
        s
    }
}

pub fn run_bench(config: &BenchConfig, schmitt: &SchmittConfig) -> Result<BenchReport, AppError> {
    config.validate()?;
    schmitt
        .validate()
        .map_err(|e| AppError::Config(e.to_string()))?;
    let quarter = schmitt.hysteresis_width() / 4;
    let stray_peak = config
        .stray_peak
        .unwrap_or(schmitt.upper_threshold - quarter);
    let naive_threshold = config
        .naive_threshold
        .unwrap_or(schmitt.lower_threshold + quarter);

    let mut rows = Vec::new();
    for &strays in &config.stray_counts {
        for &noise in &config.noise_levels {
            let mut row = BenchRow {
                strays,
                noise_stddev: noise,
                waveforms: config.seeds_per_cell,
                true_beats: 0,
                schmitt: Score::default(),
                naive: Score::default(),
            };
            for i in 0..config.seeds_per_cell {
                let seed = config.seed.wrapping_add(i);
                let mut spec = config.base_spec(noise, seed);
                spec.stray_pulses =
                    scatter_strays(&spec, strays, stray_peak, config.stray_width_ms, 20.0, seed)
                        .map_err(|e| AppError::Config(e.to_string()))?;
                let (samples, truth) =
                    synthesize(&spec).map_err(|e| AppError::Config(e.to_string()))?;
                let end = samples.last().map_or(0.0, |s| s.t_ms as f64);
                let early = spec.sample_period_ms();
                let late = spec.pulse_width_ms;
                let schmitt_beats = detect_beats(samples.iter().copied(), schmitt)
                    .map_err(|e| AppError::Run(e.to_string()))?;
                let naive_beats = naive_detect_beats(samples.iter().copied(), naive_threshold)
                    .map_err(|e| AppError::Run(e.to_string()))?;
                row.true_beats += truth.beat_count() as u64;
                row.schmitt +=
                    score_detections(&truth.beat_times_ms, &schmitt_beats, early, late, end);
                row.naive += score_detections(&truth.beat_times_ms, &naive_beats, early, late, end);
            }
            rows.push(row);
        }
    }
    Ok(BenchReport {
        naive_threshold,
        stray_peak,
        rows,
    })
}
