//! Exponential schedules that approach a bound geometrically.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Decay,
    Grow,
}

/// `value(step) = bound + (initial - bound) · rate^step`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpSchedule {
    pub initial: f64,
    /// Floor for a decaying schedule, ceiling for a growing one.
    pub bound: f64,
    pub rate: f64,
    pub direction: Direction,
}

impl ExpSchedule {
    pub fn new(initial: f64, bound: f64, rate: f64, direction: Direction) -> Result<Self> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(NnError::Config(format!(
                "schedule rate {rate} outside (0, 1)"
            )));
        }
        let ok = match direction {
            Direction::Decay => initial >= bound,
            Direction::Grow => initial <= bound,
        };
        if !ok {
            return Err(NnError::Config(format!(
                "{direction:?} schedule from {initial} cannot approach {bound}"
            )));
        }
        Ok(Self {
            initial,
            bound,
            rate,
            direction,
        })
    }

    /// Learning rate: 1e-3 decaying to 1e-5 at rate 0.9999 per step.
    pub fn generator_learning_rate() -> Self {
        Self {
            initial: 1e-3,
            bound: 1e-5,
            rate: 0.9999,
            direction: Direction::Decay,
        }
    }

    /// KL weight: 0.01 growing to 0.5 at rate 0.99995 per step.
    pub fn kl_weight() -> Self {
        Self {
            initial: 0.01,
            bound: 0.5,
            rate: 0.99995,
            direction: Direction::Grow,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        if step == 0 {
            return self.initial;
        }
        let decay = self.rate.powf(step as f64);
        self.bound + (self.initial - self.bound) * decay
    }
}
