#![allow(dead_code)]

use pulsewake_core::signal::{BeatEvent, Sample, SchmittConfig};
use pulsewake_core::synth::{scatter_strays, HeartRate, RateSegment, WaveformSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Offline hysteresis scan over a fully buffered stream.
///
/// The level follows the two thresholds alone, so every LOW to HIGH switch
/// is located first by jumping from "next value at or above upper" to "next
/// value at or below lower". The refractory rule is then applied to that
/// list as a filter against the last accepted beat.
pub fn oracle_beats(samples: &[Sample], cfg: &SchmittConfig) -> Vec<BeatEvent> {
    let mut rises = Vec::new();
    let mut i = 0;
    while let Some(up) = samples[i..]
        .iter()
        .position(|s| s.value >= cfg.upper_threshold)
    {
        rises.push(samples[i + up].t_ms);
        let from = i + up;
        match samples[from..]
            .iter()
            .position(|s| s.value <= cfg.lower_threshold)
        {
            Some(down) => i = from + down,
            None => break,
        }
    }
    let mut beats: Vec<BeatEvent> = Vec::new();
    for t in rises {
        match beats.last() {
            None => beats.push(BeatEvent {
                t_ms: t,
                ibi_ms: None,
            }),
            Some(prev) if t - prev.t_ms >= cfg.refractory_ms => beats.push(BeatEvent {
                t_ms: t,
                ibi_ms: Some(t - prev.t_ms),
            }),
            Some(_) => {}
        }
    }
    beats
}

/// A randomized but seeded waveform: rate schedule, noise, wander and stray
/// pulses at assorted sample rates.
pub fn random_spec(seed: u64) -> WaveformSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_rate_hz = [50, 100, 200, 250, 500][rng.random_range(0..5)];
    let duration_ms = rng.random_range(3_000..12_000);
    let segments: Vec<RateSegment> = (0..rng.random_range(1..4u64))
        .map(|k| RateSegment {
            start_ms: k * duration_ms / 3,
            bpm: rng.random_range(30.0..190.0),
        })
        .collect();
    let max_bpm = segments.iter().map(|s| s.bpm).fold(0.0, f64::max);
    let pulse_amplitude = rng.random_range(100..600);
    let baseline = rng.random_range(200..(1023 - pulse_amplitude).min(500));
    let mut spec = WaveformSpec {
        duration_ms,
        sample_rate_hz,
        heart_rate_bpm: HeartRate::Schedule(segments),
        pulse_amplitude,
        baseline,
        pulse_width_ms: rng.random_range(60.0..0.8 * 60_000.0 / max_bpm),
        noise_stddev: if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..50.0)
        },
        wander_amplitude: rng.random_range(0.0..60.0),
        wander_period_ms: rng.random_range(2_000.0..10_000.0),
        stray_pulses: Vec::new(),
        rng_seed: seed,
    };
    let strays = rng.random_range(0..8);
    let peak = rng.random_range(300..700);
    spec.stray_pulses = scatter_strays(&spec, strays, peak, 30.0, 5.0, seed).unwrap_or_default();
    spec
}
