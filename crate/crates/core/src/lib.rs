//! Pulse-gated alarm engine.
//!
//! A sampled optical pulse signal is turned into beats by a software Schmitt
//! trigger, beats into plausibility-filtered BPM readings, and readings into
//! transitions of an alarm state machine that keeps ringing until the
//! wearer's heart rate shows they are up and moving.
//!
//! - [`signal`]: hysteresis beat detector, single-threshold baseline, BPM
//!   estimation and the plausibility filter
//! - [`physiology`]: maximum heart rate, exercise and sleep bands
//! - [`alarm`]: the alarm state machine
//! - [`synth`]: synthetic waveforms with ground truth, waveform CSV, wake
//!   scenarios
//! - [`ingest`]: framed byte protocol with resynchronisation
//! - [`pipeline`], [`config`], [`app`], [`bench`], [`net`]: the end-to-end
//!   driver behind the command-line tool

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alarm;
pub mod app;
pub mod bench;
pub mod config;
pub mod ingest;
pub mod net;
pub mod physiology;
pub mod pipeline;
pub mod signal;
pub mod synth;

pub use alarm::{AlarmEngine, EngineAction, EngineConfig, EngineEvent, Phase, Transition};
pub use physiology::{BpmBand, UserProfile};
pub use signal::{BeatEvent, BpmEstimate, BpmStatus, Sample, SchmittConfig};
pub use synth::{GroundTruth, WaveformSpec};
