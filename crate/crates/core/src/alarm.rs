//! The alarm lifecycle: arm at a clock time, latch the alarm line, ring until
//! the wearer produces a run of valid in-band heart-rate readings.
//!
//! ```text
//!   IDLE --set_alarm--> ARMED --tick >= alarm time / line latched--> RINGING
//!                                                                      |
//!        STOPPED <--required_streak consecutive in-band VALID readings-+
//!   any phase --Disarm--> IDLE
//! ```
//!
//! There is no snooze. Ticks never silence a ringing alarm.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physiology::{BpmBand, FIXED_SATISFACTION_BAND};
use crate::signal::BpmEstimate;

pub const DEFAULT_REQUIRED_STREAK: u32 = 3;
pub const DEFAULT_LATCH_SET_THRESHOLD: u16 = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("cannot set the alarm while it is ringing")]
    SetWhileRinging,
    #[error("event at t={t_ms} ms arrived after t={last_t_ms} ms")]
    OutOfOrder { t_ms: u64, last_t_ms: u64 },
    #[error("invalid engine configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("event {index}: {source}")]
pub struct RunError {
    pub index: usize,
    #[source]
    pub source: EngineError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Idle,
    Armed,
    Ringing,
    Stopped,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Phase::Idle => "IDLE",
            Phase::Armed => "ARMED",
            Phase::Ringing => "RINGING",
            Phase::Stopped => "STOPPED",
        };
        f.write_str(name)
    }
}

/// Software stand-in for the bistable alarm-line latch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Latch {
    Set,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub satisfaction_band: BpmBand,
    pub required_streak: u32,
    pub latch_set_threshold: u16,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            satisfaction_band: FIXED_SATISFACTION_BAND,
            required_streak: DEFAULT_REQUIRED_STREAK,
            latch_set_threshold: DEFAULT_LATCH_SET_THRESHOLD,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let band = self.satisfaction_band;
        if !(band.low <= band.high) {
            return Err(EngineError::Config(format!(
                "satisfaction band [{}, {}] is empty",
                band.low, band.high
            )));
        }
        if !BpmBand::plausible().contains_band(&band) {
            return Err(EngineError::Config(format!(
                "satisfaction band [{}, {}] lies outside the plausible range [23, 200]",
                band.low, band.high
            )));
        }
        if self.required_streak == 0 {
            return Err(EngineError::Config(
                "required_streak must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EngineEvent {
    ClockTick { t_ms: u64 },
    AlarmLineLevel { t_ms: u64, level: u16 },
    BpmReading(BpmEstimate),
    Disarm { t_ms: u64 },
}

impl EngineEvent {
    pub fn t_ms(&self) -> u64 {
        match *self {
            EngineEvent::ClockTick { t_ms }
            | EngineEvent::AlarmLineLevel { t_ms, .. }
            | EngineEvent::Disarm { t_ms } => t_ms,
            EngineEvent::BpmReading(est) => est.t_ms,
        }
    }

    pub fn kind(&self) -> EventKind {
        match self {
            EngineEvent::ClockTick { .. } => EventKind::ClockTick,
            EngineEvent::AlarmLineLevel { .. } => EventKind::AlarmLineLevel,
            EngineEvent::BpmReading(_) => EventKind::BpmReading,
            EngineEvent::Disarm { .. } => EventKind::Disarm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    ClockTick,
    AlarmLineLevel,
    BpmReading,
    Disarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub t_ms: u64,
    pub from: Phase,
    pub to: Phase,
    pub trigger: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineAction {
    BuzzerOn,
    BuzzerOff,
    LogTransition(Transition),
}

/// Buzzer action implied by a phase change: on when entering RINGING, off
/// when leaving it.
pub fn buzzer_action(from: Phase, to: Phase) -> Option<EngineAction> {
    match (from == Phase::Ringing, to == Phase::Ringing) {
        (false, true) => Some(EngineAction::BuzzerOn),
        (true, false) => Some(EngineAction::BuzzerOff),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlarmEngine {
    phase: Phase,
    alarm_time_ms: Option<u64>,
    latch: Latch,
    in_band_streak: u32,
    config: EngineConfig,
    last_event_t_ms: Option<u64>,
}

impl AlarmEngine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            phase: Phase::Idle,
            alarm_time_ms: None,
            latch: Latch::Reset,
            in_band_streak: 0,
            config,
            last_event_t_ms: None,
        })
    }

    /// Convenience constructor for an engine already armed at `alarm_time_ms`.
    pub fn armed(config: EngineConfig, alarm_time_ms: u64) -> Result<Self, EngineError> {
        let mut engine = Self::new(config)?;
        engine.set_alarm(alarm_time_ms)?;
        Ok(engine)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn alarm_time_ms(&self) -> Option<u64> {
        self.alarm_time_ms
    }

    pub fn latch(&self) -> Latch {
        self.latch
    }

    pub fn in_band_streak(&self) -> u32 {
        self.in_band_streak
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn buzzer_on(&self) -> bool {
        self.phase == Phase::Ringing
    }

    /// Schedules the alarm. Allowed from IDLE, STOPPED, and ARMED (which
    /// reschedules); refused while RINGING.
    pub fn set_alarm(&mut self, alarm_time_ms: u64) -> Result<(), EngineError> {
        if self.phase == Phase::Ringing {
            return Err(EngineError::SetWhileRinging);
        }
        self.phase = Phase::Armed;
        self.alarm_time_ms = Some(alarm_time_ms);
        self.latch = Latch::Reset;
        self.in_band_streak = 0;
        Ok(())
    }

    /// Sets the latch once the alarm line reaches the set threshold. Only an
    /// armed or ringing engine listens to the line, and nothing here resets it.
    pub fn latch_alarm_line(&mut self, level: u16) {
        if matches!(self.phase, Phase::Armed | Phase::Ringing)
            && level >= self.config.latch_set_threshold
        {
            self.latch = Latch::Set;
        }
    }

    pub fn step(&mut self, event: EngineEvent) -> Result<Vec<EngineAction>, EngineError> {
        let t_ms = event.t_ms();
        if let Some(last_t_ms) = self.last_event_t_ms {
            if t_ms < last_t_ms {
                return Err(EngineError::OutOfOrder { t_ms, last_t_ms });
            }
        }
        self.last_event_t_ms = Some(t_ms);

        let from = self.phase;
        match event {
            EngineEvent::ClockTick { t_ms } => {
                if from == Phase::Armed && self.alarm_time_ms.is_some_and(|at| t_ms >= at) {
                    self.latch = Latch::Set;
                    self.phase = Phase::Ringing;
                }
            }
            EngineEvent::AlarmLineLevel { level, .. } => {
                self.latch_alarm_line(level);
                if from == Phase::Armed && self.latch == Latch::Set {
                    self.phase = Phase::Ringing;
                }
            }
            EngineEvent::BpmReading(est) => {
                if from == Phase::Ringing {
                    if est.is_valid() && self.config.satisfaction_band.contains(est.bpm) {
                        self.in_band_streak += 1;
                        if self.in_band_streak >= self.config.required_streak {
                            self.in_band_streak = 0;
                            self.phase = Phase::Stopped;
                        }
                    } else {
                        self.in_band_streak = 0;
                    }
                }
            }
            EngineEvent::Disarm { .. } => {
                self.phase = Phase::Idle;
                self.alarm_time_ms = None;
                self.latch = Latch::Reset;
                self.in_band_streak = 0;
            }
        }

        let to = self.phase;
        let mut actions = Vec::new();
        if from != to {
            actions.extend(buzzer_action(from, to));
            actions.push(EngineAction::LogTransition(Transition {
                t_ms,
                from,
                to,
                trigger: event.kind(),
            }));
        }
        Ok(actions)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineRun {
    pub engine: AlarmEngine,
    pub transitions: Vec<Transition>,
    pub actions: Vec<EngineAction>,
}

/// Folds `step` over an event stream.
pub fn run_engine<I>(mut engine: AlarmEngine, events: I) -> Result<EngineRun, RunError>
where
    I: IntoIterator<Item = EngineEvent>,
{
    let mut transitions = Vec::new();
    let mut all_actions = Vec::new();
    for (index, event) in events.into_iter().enumerate() {
        let actions = engine
            .step(event)
            .map_err(|source| RunError { index, source })?;
        for action in actions {
            if let EngineAction::LogTransition(t) = action {
                transitions.push(t);
            }
            all_actions.push(action);
        }
    }
    Ok(EngineRun {
        engine,
        transitions,
        actions: all_actions,
    })
}

/// One JSON object per line: `t_ms`, `from`, `to`, `trigger`.
pub fn write_transition_log<W: Write>(
    transitions: &[Transition],
    mut out: W,
) -> std::io::Result<()> {
    for t in transitions {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{plausibility_filter, BpmStatus};

    const H: u64 = 3_600_000;
    const SIX_THIRTY: u64 = 6 * H + 30 * 60_000;

    fn reading(t_ms: u64, bpm: f64) -> EngineEvent {
        EngineEvent::BpmReading(plausibility_filter(bpm, t_ms))
    }

    fn buzzer_only(actions: &[EngineAction]) -> Vec<EngineAction> {
        actions
            .iter()
            .copied()
            .filter(|a| !matches!(a, EngineAction::LogTransition(_)))
            .collect()
    }

    fn ringing() -> AlarmEngine {
        let mut e = AlarmEngine::armed(EngineConfig::default(), SIX_THIRTY).unwrap();
        e.step(EngineEvent::ClockTick { t_ms: SIX_THIRTY }).unwrap();
        assert_eq!(e.phase(), Phase::Ringing);
        e
    }

    #[test]
    fn set_alarm_from_idle_and_stopped() {
        let mut e = AlarmEngine::new(EngineConfig::default()).unwrap();
        e.set_alarm(SIX_THIRTY).unwrap();
        assert_eq!(e.phase(), Phase::Armed);
        assert_eq!(e.alarm_time_ms(), Some(SIX_THIRTY));
        assert_eq!(e.latch(), Latch::Reset);

        let mut e = ringing();
        for i in 0..3 {
            e.step(reading(SIX_THIRTY + i, 150.0)).unwrap();
        }
        assert_eq!(e.phase(), Phase::Stopped);
        e.set_alarm(SIX_THIRTY + 24 * H).unwrap();
        assert_eq!(e.phase(), Phase::Armed);
        assert_eq!(e.latch(), Latch::Reset);
        assert_eq!(e.in_band_streak(), 0);
    }

    #[test]
    fn set_alarm_while_ringing_is_refused() {
        let mut e = ringing();
        assert_eq!(e.set_alarm(0), Err(EngineError::SetWhileRinging));
        assert_eq!(e.phase(), Phase::Ringing);
    }

    #[test]
    fn latch_is_bistable() {
        let mut e = AlarmEngine::armed(EngineConfig::default(), SIX_THIRTY).unwrap();
        e.latch_alarm_line(300);
        assert_eq!(e.latch(), Latch::Reset);
        e.latch_alarm_line(800);
        assert_eq!(e.latch(), Latch::Set);
        e.latch_alarm_line(0);
        assert_eq!(e.latch(), Latch::Set);

        let mut idle = AlarmEngine::new(EngineConfig::default()).unwrap();
        idle.latch_alarm_line(1000);
        assert_eq!(idle.latch(), Latch::Reset);
    }

    #[test]
    fn alarm_line_event_starts_ringing() {
        let mut e = AlarmEngine::armed(EngineConfig::default(), SIX_THIRTY).unwrap();
        let a = e
            .step(EngineEvent::AlarmLineLevel {
                t_ms: 10,
                level: 100,
            })
            .unwrap();
        assert!(a.is_empty());
        let a = e
            .step(EngineEvent::AlarmLineLevel {
                t_ms: 20,
                level: 800,
            })
            .unwrap();
        assert_eq!(buzzer_only(&a), vec![EngineAction::BuzzerOn]);
        assert_eq!(e.phase(), Phase::Ringing);
        e.step(EngineEvent::AlarmLineLevel { t_ms: 30, level: 0 })
            .unwrap();
        assert_eq!(e.latch(), Latch::Set);
        assert_eq!(e.phase(), Phase::Ringing);
    }

    #[test]
    fn tick_at_alarm_time_rings() {
        let mut e = AlarmEngine::armed(EngineConfig::default(), SIX_THIRTY).unwrap();
        let a = e
            .step(EngineEvent::ClockTick {
                t_ms: SIX_THIRTY - 1,
            })
            .unwrap();
        assert!(a.is_empty());
        let a = e.step(EngineEvent::ClockTick { t_ms: SIX_THIRTY }).unwrap();
        assert_eq!(buzzer_only(&a), vec![EngineAction::BuzzerOn]);
        assert_eq!(
            a.last(),
            Some(&EngineAction::LogTransition(Transition {
                t_ms: SIX_THIRTY,
                from: Phase::Armed,
                to: Phase::Ringing,
                trigger: EventKind::ClockTick
            }))
        );
        assert_eq!(e.latch(), Latch::Set);
    }

    #[test]
    fn three_in_band_readings_stop() {
        let mut e = ringing();
        let t = SIX_THIRTY;
        assert!(e.step(reading(t + 1, 150.0)).unwrap().is_empty());
        assert!(e.step(reading(t + 2, 150.0)).unwrap().is_empty());
        let a = e.step(reading(t + 3, 150.0)).unwrap();
        assert_eq!(buzzer_only(&a), vec![EngineAction::BuzzerOff]);
        assert_eq!(e.phase(), Phase::Stopped);
        assert_eq!(e.latch(), Latch::Set);
        assert_eq!(e.in_band_streak(), 0);
    }

    #[test]
    fn band_edges() {
        let mut e = ringing();
        e.step(reading(SIX_THIRTY + 1, 100.0)).unwrap();
        assert_eq!(e.phase(), Phase::Ringing);
        assert_eq!(e.in_band_streak(), 0);
        e.step(reading(SIX_THIRTY + 2, 200.0)).unwrap();
        assert_eq!(e.in_band_streak(), 0);
        e.step(reading(SIX_THIRTY + 3, 101.0)).unwrap();
        e.step(reading(SIX_THIRTY + 4, 199.0)).unwrap();
        assert_eq!(e.in_band_streak(), 2);
    }

    #[test]
    fn rejected_reading_resets_streak() {
        let mut e = ringing();
        e.step(reading(SIX_THIRTY + 1, 150.0)).unwrap();
        let rejected = BpmEstimate {
            t_ms: SIX_THIRTY + 2,
            bpm: 150.0,
            status: BpmStatus::RejectedHigh,
        };
        e.step(EngineEvent::BpmReading(rejected)).unwrap();
        assert_eq!(e.in_band_streak(), 0);
    }

    #[test]
    fn interrupted_streak_walk() {
        let mut e = ringing();
        let bpms = [150.0, 95.0, 150.0, 150.0, 150.0];
        let mut phases = Vec::new();
        for (i, bpm) in bpms.iter().enumerate() {
            e.step(reading(SIX_THIRTY + 1 + i as u64, *bpm)).unwrap();
            phases.push(e.phase());
        }
        assert_eq!(
            phases,
            vec![
                Phase::Ringing,
                Phase::Ringing,
                Phase::Ringing,
                Phase::Ringing,
                Phase::Stopped
            ]
        );
    }

    #[test]
    fn rings_through_ten_hours_of_ticks() {
        let mut e = ringing();
        for m in 1..=600 {
            let a = e
                .step(EngineEvent::ClockTick {
                    t_ms: SIX_THIRTY + m * 60_000,
                })
                .unwrap();
            assert!(a.is_empty());
        }
        assert_eq!(e.phase(), Phase::Ringing);
    }

    #[test]
    fn readings_before_ring_are_ignored() {
        let mut e = AlarmEngine::armed(EngineConfig::default(), SIX_THIRTY).unwrap();
        e.step(reading(1, 150.0)).unwrap();
        assert_eq!(e.in_band_streak(), 0);
        assert_eq!(e.phase(), Phase::Armed);
    }

    #[test]
    fn stopped_stays_stopped() {
        let mut e = ringing();
        for i in 0..3 {
            e.step(reading(SIX_THIRTY + i, 150.0)).unwrap();
        }
        e.step(EngineEvent::ClockTick {
            t_ms: SIX_THIRTY + H,
        })
        .unwrap();
        e.step(reading(SIX_THIRTY + H, 60.0)).unwrap();
        assert_eq!(e.phase(), Phase::Stopped);
    }

    #[test]
    fn disarm_behaviour() {
        let mut idle = AlarmEngine::new(EngineConfig::default()).unwrap();
        assert!(idle
            .step(EngineEvent::Disarm { t_ms: 0 })
            .unwrap()
            .is_empty());

        let mut armed = AlarmEngine::armed(EngineConfig::default(), SIX_THIRTY).unwrap();
        let a = armed.step(EngineEvent::Disarm { t_ms: 0 }).unwrap();
        assert!(buzzer_only(&a).is_empty());
        assert_eq!(armed.phase(), Phase::Idle);

        let mut e = ringing();
        let a = e
            .step(EngineEvent::Disarm {
                t_ms: SIX_THIRTY + 5,
            })
            .unwrap();
        assert_eq!(buzzer_only(&a), vec![EngineAction::BuzzerOff]);
        assert_eq!(e.phase(), Phase::Idle);
        assert_eq!(e.latch(), Latch::Reset);
    }

    #[test]
    fn out_of_order_event_is_rejected() {
        let mut e = AlarmEngine::armed(EngineConfig::default(), SIX_THIRTY).unwrap();
        e.step(EngineEvent::ClockTick { t_ms: 100 }).unwrap();
        e.step(EngineEvent::ClockTick { t_ms: 100 }).unwrap();
        let err = e.step(EngineEvent::ClockTick { t_ms: 99 }).unwrap_err();
        assert_eq!(
            err,
            EngineError::OutOfOrder {
                t_ms: 99,
                last_t_ms: 100
            }
        );
    }

    #[test]
    fn run_engine_folds_and_reports_index() {
        let armed = AlarmEngine::armed(EngineConfig::default(), SIX_THIRTY).unwrap();
        let run = run_engine(armed.clone(), []).unwrap();
        assert!(run.transitions.is_empty());
        assert_eq!(run.engine.phase(), Phase::Armed);

        let events = [
            EngineEvent::ClockTick { t_ms: SIX_THIRTY },
            reading(SIX_THIRTY + 1, 150.0),
            reading(SIX_THIRTY + 2, 150.0),
            reading(SIX_THIRTY + 3, 150.0),
        ];
        let run = run_engine(armed.clone(), events).unwrap();
        let pairs: Vec<_> = run.transitions.iter().map(|t| (t.from, t.to)).collect();
        assert_eq!(
            pairs,
            vec![
                (Phase::Armed, Phase::Ringing),
                (Phase::Ringing, Phase::Stopped)
            ]
        );

        let err = run_engine(
            armed,
            [
                EngineEvent::ClockTick { t_ms: 10 },
                EngineEvent::ClockTick { t_ms: 5 },
            ],
        )
        .unwrap_err();
        assert_eq!(err.index, 1);
    }

    #[test]
    fn config_validation() {
        let bad = [
            EngineConfig {
                required_streak: 0,
                ..EngineConfig::default()
            },
            EngineConfig {
                satisfaction_band: BpmBand {
                    low: 20.0,
                    high: 150.0,
                },
                ..EngineConfig::default()
            },
            EngineConfig {
                satisfaction_band: BpmBand {
                    low: 150.0,
                    high: 201.0,
                },
                ..EngineConfig::default()
            },
        ];
        for c in bad {
            assert!(AlarmEngine::new(c).is_err());
        }
    }

    #[test]
    fn transition_log_is_line_delimited_json() {
        let mut buf = Vec::new();
        write_transition_log(
            &[Transition {
                t_ms: 5,
                from: Phase::Armed,
                to: Phase::Ringing,
                trigger: EventKind::ClockTick,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"t_ms\":5,\"from\":\"ARMED\",\"to\":\"RINGING\",\"trigger\":\"CLOCK_TICK\"}\n"
        );
    }
}
