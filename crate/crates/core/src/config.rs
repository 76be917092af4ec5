//! TOML run configuration shared by all subcommands. Unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alarm::{EngineConfig, Phase, DEFAULT_LATCH_SET_THRESHOLD, DEFAULT_REQUIRED_STREAK};
use crate::app::AppError;
use crate::bench::BenchConfig;
use crate::physiology::{satisfaction_band, BandMode, BpmBand, UserProfile};
use crate::pipeline::PipelineConfig;
use crate::signal::{SchmittConfig, DEFAULT_SMOOTHING_WINDOW};
use crate::synth::{ScenarioOverrides, WaveformSpec};

pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub band_mode: BandMode,
    /// Explicit band; takes precedence over `band_mode`.
    pub band: Option<BpmBand>,
    pub required_streak: u32,
    pub latch_set_threshold: u16,
    pub smoothing_window: usize,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            band_mode: BandMode::Fixed,
            band: None,
            required_streak: DEFAULT_REQUIRED_STREAK,
            latch_set_threshold: DEFAULT_LATCH_SET_THRESHOLD,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub host: String,
    pub port: u16,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub profile: UserProfile,
    pub schmitt: SchmittConfig,
    pub engine: EngineSection,
    /// Used when neither `waveform` nor `input` is given.
    pub scenario: ScenarioOverrides,
    pub waveform: Option<WaveformSpec>,
    /// Waveform CSV to run instead of a synthesized signal.
    pub input: Option<PathBuf>,
    pub alarm_time_ms: Option<u64>,
    pub expected_final_phase: Option<Phase>,
    pub output: Option<PathBuf>,
    pub bench: BenchConfig,
    pub net: NetSection,
}

fn config_err(e: impl std::fmt::Display) -> AppError {
    AppError::Config(e.to_string())
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, AppError> {
        let config: AppConfig = toml::from_str(text).map_err(config_err)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies a seed to every random source in the config.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.rng_seed = seed;
        if let Some(w) = self.waveform.as_mut() {
            w.rng_seed = seed;
        }
        self.bench.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), AppError> {
        self.profile.validate().map_err(config_err)?;
        self.schmitt.validate().map_err(config_err)?;
        self.engine_config()?.validate().map_err(config_err)?;
        if self.engine.smoothing_window == 0 {
            return Err(AppError::Config(
                "engine.smoothing_window must be at least 1".into(),
            ));
        }
        if let Some(w) = &self.waveform {
            w.validate().map_err(config_err)?;
        }
        if self.waveform.is_some() && self.input.is_some() {
            return Err(AppError::Config(
                "`waveform` and `input` are mutually exclusive".into(),
            ));
        }
        self.bench.validate()?;
        Ok(())
    }

    pub fn satisfaction_band(&self) -> Result<BpmBand, AppError> {
        match self.engine.band {
            Some(band) => Ok(band),
            None => {
                satisfaction_band(Some(&self.profile), self.engine.band_mode).map_err(config_err)
            }
        }
    }

    pub fn engine_config(&self) -> Result<EngineConfig, AppError> {
        Ok(EngineConfig {
            satisfaction_band: self.satisfaction_band()?,
            required_streak: self.engine.required_streak,
            latch_set_threshold: self.engine.latch_set_threshold,
        })
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, AppError> {
        Ok(PipelineConfig {
            schmitt: self.schmitt,
            engine: self.engine_config()?,
            smoothing_window: self.engine.smoothing_window,
        })
    }
}
