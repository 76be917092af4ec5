//! Heart-rate formulas: age-predicted maximum, the moderate exercise band,
//! sleep-time depression of the resting rate, and the band of readings that
//! silences the alarm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{PLAUSIBLE_MAX_BPM, PLAUSIBLE_MIN_BPM};

pub const MIN_AGE: u32 = 1;
pub const MAX_AGE: u32 = 120;

/// Readings inside this band stop a ringing alarm in the fixed mode.
pub const FIXED_SATISFACTION_BAND: BpmBand = BpmBand {
    low: 101.0,
    high: 199.0,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysiologyError {
    #[error("age {0} outside [{MIN_AGE}, {MAX_AGE}] years")]
    AgeOutOfRange(u32),
    #[error("resting rate must be positive, got {0} bpm")]
    NonPositiveRate(f64),
    #[error("resting rate {resting} bpm must be below the maximum {max} bpm for age {age}")]
    RestingAboveMax { resting: f64, max: u32, age: u32 },
    #[error("age-derived satisfaction band requires a user profile")]
    MissingProfile,
    #[error("band [{low}, {high}] is empty")]
    EmptyBand { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UserProfile {
    pub age_years: u32,
    pub resting_bpm: f64,
}

impl Default for UserProfile {
    fn default() -> Self {
        Self {
            age_years: 20,
            resting_bpm: 90.0,
        }
    }
}

impl UserProfile {
    pub fn new(age_years: u32, resting_bpm: f64) -> Result<Self, PhysiologyError> {
        let profile = Self {
            age_years,
            resting_bpm,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), PhysiologyError> {
        let max = max_heart_rate(self.age_years)?;
        if !(self.resting_bpm > 0.0) {
            return Err(PhysiologyError::NonPositiveRate(self.resting_bpm));
        }
        if self.resting_bpm >= max as f64 {
            return Err(PhysiologyError::RestingAboveMax {
                resting: self.resting_bpm,
                max,
                age: self.age_years,
            });
        }
        Ok(())
    }
}

/// Closed interval of heart rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpmBand {
    pub low: f64,
    pub high: f64,
}

impl BpmBand {
    pub fn new(low: f64, high: f64) -> Result<Self, PhysiologyError> {
        if !(low >= 0.0 && low <= high) {
            return Err(PhysiologyError::EmptyBand { low, high });
        }
        Ok(Self { low, high })
    }

    pub fn contains(&self, bpm: f64) -> bool {
        self.low <= bpm && bpm <= self.high
    }

    pub fn contains_band(&self, other: &BpmBand) -> bool {
        self.low <= other.low && other.high <= self.high
    }

    pub fn intersect(&self, other: &BpmBand) -> Option<BpmBand> {
        let low = self.low.max(other.low);
        let high = self.high.min(other.high);
        (low <= high).then_some(BpmBand { low, high })
    }

    pub fn midpoint(&self) -> f64 {
        (self.low + self.high) / 2.0
    }

    pub fn plausible() -> BpmBand {
        BpmBand {
            low: PLAUSIBLE_MIN_BPM,
            high: PLAUSIBLE_MAX_BPM,
        }
    }
}

pub fn max_heart_rate(age_years: u32) -> Result<u32, PhysiologyError> {
    if !(MIN_AGE..=MAX_AGE).contains(&age_years) {
        return Err(PhysiologyError::AgeOutOfRange(age_years));
    }
    Ok(220 - age_years)
}

// round-half-up of value * percent / 100, in exact integer arithmetic
fn percent_round_half_up(value: u32, percent: u32) -> u32 {
    (value * percent + 50) / 100
}

/// 50% to 69% of the age-predicted maximum, rounded half-up to whole bpm.
pub fn moderate_exercise_band(age_years: u32) -> Result<BpmBand, PhysiologyError> {
    let max = max_heart_rate(age_years)?;
    Ok(BpmBand {
        low: percent_round_half_up(max, 50) as f64,
        high: percent_round_half_up(max, 69) as f64,
    })
}

/// Sleep depresses the resting rate by 8 to 10%; returns the resulting range
/// unrounded.
pub fn sleep_rate_range(resting_bpm: f64) -> Result<BpmBand, PhysiologyError> {
    if !(resting_bpm > 0.0) || !resting_bpm.is_finite() {
        return Err(PhysiologyError::NonPositiveRate(resting_bpm));
    }
    Ok(BpmBand {
        low: resting_bpm * 0.90,
        high: resting_bpm * 0.92,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    #[default]
    Fixed,
    AgeDerived,
}

pub fn satisfaction_band(
    profile: Option<&UserProfile>,
    mode: BandMode,
) -> Result<BpmBand, PhysiologyError> {
    match mode {
        BandMode::Fixed => Ok(FIXED_SATISFACTION_BAND),
        BandMode::AgeDerived => {
            let profile = profile.ok_or(PhysiologyError::MissingProfile)?;
            let band = moderate_exercise_band(profile.age_years)?;
            band.intersect(&BpmBand::plausible())
                .ok_or(PhysiologyError::EmptyBand {
                    low: band.low,
                    high: band.high,
                })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band(low: f64, high: f64) -> BpmBand {
        BpmBand { low, high }
    }

    #[test]
    fn max_rate_examples() {
        assert_eq!(max_heart_rate(20).unwrap(), 200);
        assert_eq!(max_heart_rate(55).unwrap(), 165);
        assert_eq!(max_heart_rate(1).unwrap(), 219);
        assert_eq!(max_heart_rate(0), Err(PhysiologyError::AgeOutOfRange(0)));
        assert_eq!(
            max_heart_rate(121),
            Err(PhysiologyError::AgeOutOfRange(121))
        );
    }

    #[test]
    fn moderate_band_examples() {
        assert_eq!(moderate_exercise_band(20).unwrap(), band(100.0, 138.0));
        assert_eq!(moderate_exercise_band(40).unwrap(), band(90.0, 124.0));
        assert_eq!(moderate_exercise_band(120).unwrap(), band(50.0, 69.0));
        // 0.50 * 219 = 109.5 rounds up
        assert_eq!(moderate_exercise_band(1).unwrap(), band(110.0, 151.0));
        assert!(moderate_exercise_band(0).is_err());
    }

    #[test]
    fn sleep_range_examples() {
        let r = sleep_rate_range(100.0).unwrap();
        assert!((r.low - 90.0).abs() < 1e-9 && (r.high - 92.0).abs() < 1e-9);
        let r = sleep_rate_range(80.0).unwrap();
        assert!((r.low - 72.0).abs() < 1e-9 && (r.high - 73.6).abs() < 1e-9);
        assert!(sleep_rate_range(0.0).is_err());
        assert!(sleep_rate_range(-1.0).is_err());
        assert!(sleep_rate_range(f64::NAN).is_err());
    }

    #[test]
    fn satisfaction_band_modes() {
        assert_eq!(
            satisfaction_band(None, BandMode::Fixed).unwrap(),
            band(101.0, 199.0)
        );
        let p20 = UserProfile::new(20, 70.0).unwrap();
        assert_eq!(
            satisfaction_band(Some(&p20), BandMode::Fixed).unwrap(),
            band(101.0, 199.0)
        );
        assert_eq!(
            satisfaction_band(Some(&p20), BandMode::AgeDerived).unwrap(),
            band(100.0, 138.0)
        );
        let p1 = UserProfile::new(1, 100.0).unwrap();
        assert_eq!(
            satisfaction_band(Some(&p1), BandMode::AgeDerived).unwrap(),
            band(110.0, 151.0)
        );
        assert_eq!(
            satisfaction_band(None, BandMode::AgeDerived),
            Err(PhysiologyError::MissingProfile)
        );
    }

    #[test]
    fn profile_validation() {
        assert!(UserProfile::new(20, 90.0).is_ok());
        assert!(UserProfile::new(0, 90.0).is_err());
        assert!(UserProfile::new(20, 0.0).is_err());
        assert!(UserProfile::new(20, 200.0).is_err());
        assert!(UserProfile::new(120, 99.9).is_ok());
    }

    #[test]
    fn band_helpers() {
        let b = band(101.0, 199.0);
        assert!(b.contains(101.0) && b.contains(199.0));
        assert!(!b.contains(100.0) && !b.contains(200.0));
        assert_eq!(b.midpoint(), 150.0);
        assert!(BpmBand::plausible().contains_band(&b));
        assert!(band(0.0, 10.0).intersect(&band(20.0, 30.0)).is_none());
        assert!(BpmBand::new(5.0, 4.0).is_err());
    }
}
