use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AdvisoryError, Observation, Policy, PolicyInput};
use crate::ring::IdmParams;
use crate::units::mph_to_mps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Acceleration,
    #[default]
    Speed,
}

impl fmt::Display for ActionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionMode::Acceleration => "acceleration",
            ActionMode::Speed => "speed",
        })
    }
}

/// A held advisory action. `target` and `range_halfwidth` are m/s in speed
/// mode and m/s² in acceleration mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub mode: ActionMode,
    pub target: f64,
    pub range_halfwidth: f64,
    pub issued_tick: u64,
    pub hold_delta: u64,
}

impl Advice {
    /// Lower edge of the acceptable range; speeds never go below zero.
    pub fn lower(&self) -> f64 {
        let lo = self.target - self.range_halfwidth;
        match self.mode {
            ActionMode::Speed => lo.max(0.0),
            ActionMode::Acceleration => lo,
        }
    }

    pub fn upper(&self) -> f64 {
        self.target + self.range_halfwidth
    }

    /// First tick at which this advice may be replaced.
    pub fn expires_tick(&self) -> u64 {
        self.issued_tick + self.hold_delta
    }
}

/// Advice hyper-parameters: action type, hold length Δ and range width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdviceSettings {
    pub mode: ActionMode,
    pub delta: u64,
    /// Half-width in the mode's SI unit.
    pub range_halfwidth: f64,
}

impl Default for AdviceSettings {
    fn default() -> Self {
        Self { mode: ActionMode::Speed, delta: 50, range_halfwidth: mph_to_mps(5.0) }
    }
}

impl AdviceSettings {
    pub fn validate(&self) -> Result<(), AdvisoryError> {
        if self.delta == 0 {
            return Err(AdvisoryError::InvalidDelta);
        }
        if !(self.range_halfwidth.is_finite() && self.range_halfwidth >= 0.0) {
            return Err(AdvisoryError::InvalidRange(self.range_halfwidth));
        }
        Ok(())
    }
}

/// Clamp window for raw policy outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBounds {
    pub speed_max_mps: f64,
    pub accel_min: f64,
    pub accel_max: f64,
}

impl ActionBounds {
    pub const ACCEL_LIMIT: f64 = 3.0;

    pub fn for_idm(idm: &IdmParams) -> Self {
        Self {
            speed_max_mps: 1.5 * idm.v0_mps,
            accel_min: -Self::ACCEL_LIMIT,
            accel_max: Self::ACCEL_LIMIT,
        }
    }

    pub fn clamp(&self, mode: ActionMode, value: f64, ego_speed: f64) -> f64 {
        match mode {
            ActionMode::Speed if value.is_nan() => ego_speed.clamp(0.0, self.speed_max_mps),
            ActionMode::Speed => value.clamp(0.0, self.speed_max_mps),
            ActionMode::Acceleration if value.is_nan() => 0.0,
            ActionMode::Acceleration => value.clamp(self.accel_min, self.accel_max),
        }
    }
}

/// Issue fresh advice when `tick` starts a hold window, otherwise return the
/// prior advice untouched.
pub fn advise(
    policy: &dyn Policy,
    obs: &Observation,
    tick: u64,
    settings: &AdviceSettings,
    bounds: &ActionBounds,
    prior: Option<&Advice>,
) -> Result<Advice, AdvisoryError> {
    settings.validate()?;
    if !tick.is_multiple_of(settings.delta) {
        return prior
            .copied()
            .ok_or(AdvisoryError::MissingPriorAdvice { tick, delta: settings.delta });
    }
    let raw = policy.evaluate(&PolicyInput { obs, mode: settings.mode, delta: settings.delta });
    Ok(Advice {
        mode: settings.mode,
        target: bounds.clamp(settings.mode, raw, obs.ego_speed_mps),
        range_halfwidth: settings.range_halfwidth,
        issued_tick: tick,
        hold_delta: settings.delta,
    })
}

/// Whether `measurement` (in the advice's unit) lies inside the acceptable range.
pub fn in_range(advice: &Advice, measurement: f64) -> bool {
    (measurement - advice.target).abs() <= advice.range_halfwidth
}

/// Speed that holding the advised acceleration for Δ steps would reach.
pub fn accel_to_speed_advice(advice: &Advice, ego_speed: f64, delta: u64, dt: f64) -> Result<Advice, AdvisoryError> {
    if advice.mode != ActionMode::Acceleration {
        return Err(AdvisoryError::WrongMode { expected: ActionMode::Acceleration, actual: advice.mode });
    }
    let horizon = delta as f64 * dt;
    Ok(Advice {
        mode: ActionMode::Speed,
        target: (ego_speed + advice.target * horizon).max(0.0),
        range_halfwidth: advice.range_halfwidth * horizon,
        ..*advice
    })
}

/// Mean of the per-tick mean speeds after the warmup window.
pub fn episode_reward(trace: &[f64], warmup: u64) -> Result<f64, AdvisoryError> {
    let skip = usize::try_from(warmup).unwrap_or(usize::MAX);
    if trace.len() <= skip {
        return Err(AdvisoryError::EmptyRewardWindow { len: trace.len(), warmup });
    }
    let window = &trace[skip..];
    Ok(window.iter().sum::<f64>() / window.len() as f64)
}
