//! Ramp → sustain → exponential-decay learning rate curve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

/// The constants are representative defaults, not tuned values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_start: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub ramp_epochs: u32,
    pub sustain_epochs: u32,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr_start: 1e-5,
            lr_max: 1e-3,
            lr_min: 1e-5,
            ramp_epochs: 5,
            sustain_epochs: 0,
            decay: 0.8,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_start && self.lr_start <= self.lr_max) {
            return Err(ScheduleError::Invalid(format!(
                "need 0 < lr_min <= lr_start <= lr_max, got {} / {} / {}",
                self.lr_min, self.lr_start, self.lr_max
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(ScheduleError::Invalid(format!("decay {} outside (0, 1)", self.decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        lr_at(epoch, self)
    }

    /// Learning rates for epochs `0..epochs`.
    pub fn curve(&self, epochs: u32) -> Vec<f64> {
        (0..epochs).map(|e| lr_at(e, self)).collect()
    }
}

pub fn lr_at(epoch: u32, s: &LrSchedule) -> f64 {
    if epoch < s.ramp_epochs {
        let frac = f64::from(epoch) / f64::from(s.ramp_epochs);
        return (s.lr_start + (s.lr_max - s.lr_start) * frac).min(s.lr_max);
    }
    let plateau_end = u64::from(s.ramp_epochs) + u64::from(s.sustain_epochs);
    let since = u64::from(epoch).saturating_sub(plateau_end);
    if u64::from(epoch) < plateau_end || since == 0 {
        return s.lr_max;
    }
    let factor = s.decay.powi(i32::try_from(since).unwrap_or(i32::MAX));
    (s.lr_min + (s.lr_max - s.lr_min) * factor).clamp(s.lr_min, s.lr_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_endpoints() {
        let s = LrSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.lr_at(0), s.lr_start);
        assert_eq!(s.lr_at(s.ramp_epochs), s.lr_max);
        assert!((s.lr_at(10_000) - s.lr_min).abs() < 1e-12);
        assert!((s.lr_at(400) - s.lr_min).abs() < 1e-12);
    }

    #[test]
    fn ramp_is_linear() {
        let s = LrSchedule {
            ramp_epochs: 4,
            sustain_epochs: 2,
            ..LrSchedule::default()
        };
        let step = (s.lr_max - s.lr_start) / 4.0;
        for e in 0..4 {
            assert!((s.lr_at(e) - (s.lr_start + step * f64::from(e))).abs() < 1e-18);
        }
        assert_eq!(s.lr_at(4), s.lr_max);
        assert_eq!(s.lr_at(5), s.lr_max);
        assert_eq!(s.lr_at(6), s.lr_max);
        assert!(s.lr_at(7) < s.lr_max);
    }

    #[test]
    fn zero_ramp_starts_at_max() {
        let s = LrSchedule {
            ramp_epochs: 0,
            ..LrSchedule::default()
        };
        assert_eq!(s.lr_at(0), s.lr_max);
        assert!((s.lr_at(1) - (s.lr_min + (s.lr_max - s.lr_min) * 0.8)).abs() < 1e-18);
    }

    #[test]
    fn validation() {
        let bad = |f: fn(&mut LrSchedule)| {
            let mut s = LrSchedule::default();
            f(&mut s);
            s.validate().is_err()
        };
        assert!(bad(|s| s.decay = 1.0));
        assert!(bad(|s| s.decay = 0.0));
        assert!(bad(|s| s.lr_start = 1e-2));
        assert!(bad(|s| s.lr_min = 1e-4));
        assert!(bad(|s| s.lr_min = 0.0));
    }
}
