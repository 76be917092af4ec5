//! Subcommand bodies. The binary only parses flags and maps results to exit
//! codes.

use std::path::Path;

use thiserror::Error;

use crate::alarm::Phase;
use crate::bench::{run_bench, BenchReport};
use crate::config::AppConfig;
use crate::pipeline::{run_pipeline, RunReport};
use crate::synth::{
    make_wake_scenario, read_waveform_file, synthesize, write_waveform_file, GroundTruth,
    WaveformSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNEXPECTED_PHASE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("run failed: {0}")]
    Run(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => EXIT_CONFIG,
            AppError::Io(_) | AppError::Protocol(_) | AppError::Run(_) => EXIT_IO,
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

/// Exit code for a finished run under the 0/1 part of the contract.
pub fn run_exit_code(report: &RunReport) -> i32 {
    if report.met_expectation() {
        EXIT_OK
    } else {
        EXIT_UNEXPECTED_PHASE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub samples: usize,
    pub truth: GroundTruth,
}

impl SynthSummary {
    pub fn describe(&self) -> String {
        let rates: Vec<String> = self
            .truth
            .segments
            .iter()
            .map(|s| format!("{} bpm from {} ms", s.bpm, s.start_ms))
            .collect();
        format!(
            "{} samples, {} true beats ({})",
            self.samples,
            self.truth.beat_count(),
            rates.join(", ")
        )
    }
}

/// Waveform for `synth`: the `[waveform]` table if present, else the default
/// 60 bpm, 10 s spec.
pub fn synth_spec(config: &AppConfig) -> WaveformSpec {
    config.waveform.clone().unwrap_or_else(|| WaveformSpec {
        rng_seed: config.scenario.rng_seed,
        ..WaveformSpec::default()
    })
}

pub fn cmd_synth(config: &AppConfig, out: &Path) -> Result<SynthSummary, AppError> {
    let spec = synth_spec(config);
    let (samples, truth) = synthesize(&spec).map_err(|e| AppError::Config(e.to_string()))?;
    write_waveform_file(&samples, out).map_err(|e| AppError::Io(e.to_string()))?;
    Ok(SynthSummary {
        samples: samples.len(),
        truth,
    })
}

/// Resolved input for `run`: samples, alarm time and expected final phase.
pub struct RunInput {
    pub samples: Vec<crate::signal::Sample>,
    pub alarm_time_ms: u64,
    pub expected_final_phase: Option<Phase>,
}

pub fn resolve_run_input(config: &AppConfig) -> Result<RunInput, AppError> {
    if let Some(path) = &config.input {
        let samples = read_waveform_file(path)
            .map_err(|e| AppError::Io(format!("{}: {e}", path.display())))?;
        let alarm_time_ms = config
            .alarm_time_ms
            .ok_or_else(|| AppError::Config("`alarm_time_ms` is required with `input`".into()))?;
        return Ok(RunInput {
            samples,
            alarm_time_ms,
            expected_final_phase: config.expected_final_phase,
        });
    }
    if let Some(spec) = &config.waveform {
        let (samples, _) = synthesize(spec).map_err(|e| AppError::Config(e.to_string()))?;
        let alarm_time_ms = config.alarm_time_ms.ok_or_else(|| {
            AppError::Config("`alarm_time_ms` is required with `waveform`".into())
        })?;
        return Ok(RunInput {
            samples,
            alarm_time_ms,
            expected_final_phase: config.expected_final_phase,
        });
    }
    let scenario = make_wake_scenario(&config.profile, &config.scenario)
        .map_err(|e| AppError::Config(e.to_string()))?;
    let (samples, _) = synthesize(&scenario.spec).map_err(|e| AppError::Config(e.to_string()))?;
    Ok(RunInput {
        samples,
        alarm_time_ms: config.alarm_time_ms.unwrap_or(scenario.alarm_time_ms),
        expected_final_phase: Some(
            config
                .expected_final_phase
                .unwrap_or(scenario.expected_final_phase),
        ),
    })
}

pub fn cmd_run(config: &AppConfig) -> Result<RunReport, AppError> {
    let pipeline = config.pipeline_config()?;
    let input = resolve_run_input(config)?;
    run_pipeline(
        input.samples,
        &pipeline,
        input.alarm_time_ms,
        input.expected_final_phase,
    )
    .map_err(|e| AppError::Run(e.to_string()))
}

pub fn cmd_bench(config: &AppConfig) -> Result<BenchReport, AppError> {
    run_bench(&config.bench, &config.schmitt)
}
