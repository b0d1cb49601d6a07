use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warm-up from `start` to `max` over `warmup_epochs`, then geometric
/// decay by `decay` per epoch, floored at `min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub start: f64,
    pub max: f64,
    pub min: f64,
    pub warmup_epochs: usize,
    pub decay: f64,
}

impl WarmupSchedule {
    pub fn new(start: f64, max: f64, min: f64) -> Self {
        WarmupSchedule {
            start,
            max,
            min,
            warmup_epochs: 20,
            decay: 0.8,
        }
    }

    /// Rates for the window branch and the shared head.
    pub fn window() -> Self {
        Self::new(1e-5, 1e-4, 1e-6)
    }

    /// Rates for the sub-window and anchor branches.
    pub fn patch() -> Self {
        Self::new(1e-4, 1e-3, 1e-6)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.start, self.max, self.min, self.decay]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            && self.min <= self.start
            && self.start <= self.max
            && self.decay < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learning-rate schedule {self:?}")))
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        warmup_lr(epoch, self)
    }
}

pub fn warmup_lr(epoch: usize, s: &WarmupSchedule) -> f64 {
    if epoch < s.warmup_epochs {
        s.start + (s.max - s.start) * epoch as f64 / s.warmup_epochs as f64
    } else {
        let decayed = s.max * s.decay.powi((epoch - s.warmup_epochs) as i32);
        decayed.max(s.min)
    }
}
