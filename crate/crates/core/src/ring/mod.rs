//! Single-lane circular track: geometry, car-following accelerations and
//! synchronous time stepping.

mod idm;
mod step;

pub use idm::{equilibrium_speed, idm_accel, IdmParams};
pub use step::{spawn_ring, step, InitialCondition, SimState, StepOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gaps within this distance of a full lap are bumper contact seen through
/// floating-point rounding, not a lap-sized gap.
pub const CONTACT_EPS_M: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RingError {
    #[error("invalid ring configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid IDM parameters: {0}")]
    InvalidIdm(String),
    #[error("degenerate gap {gap} m (must be > 0)")]
    DegenerateGap { gap: f64 },
    #[error("equilibrium gap {s_eq:.6} m does not exceed minimum gap {s0} m: no positive-speed equilibrium")]
    JamDensity { s_eq: f64, s0: f64 },
    #[error("perturbation offset {offset} m exceeds the available gap {gap:.6} m")]
    InvalidPerturbation { offset: f64, gap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ego,
    NonEgo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub position_m: f64,
    pub speed_mps: f64,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingConfig {
    pub circumference_m: f64,
    pub n_vehicles: usize,
    pub vehicle_length_m: f64,
    pub dt_s: f64,
    pub horizon_steps: u64,
    pub warmup_steps: u64,
    pub accel_noise_std: f64,
    pub seed: u64,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            circumference_m: 250.0,
            n_vehicles: 22,
            vehicle_length_m: 5.0,
            dt_s: 0.1,
            horizon_steps: 8000,
            warmup_steps: 1200,
            accel_noise_std: 0.2,
            seed: 0,
        }
    }
}

impl RingConfig {
    pub fn validate(&self) -> Result<(), RingError> {
        let bad = |msg: String| Err(RingError::InvalidConfig(msg));
        if self.n_vehicles == 0 {
            return bad("n_vehicles must be at least 1".into());
        }
        if !(self.vehicle_length_m.is_finite() && self.vehicle_length_m >= 0.0) {
            return bad(format!("vehicle_length_m = {}", self.vehicle_length_m));
        }
        if !(self.circumference_m.is_finite()
            && self.circumference_m > self.n_vehicles as f64 * self.vehicle_length_m)
        {
            return bad(format!(
                "circumference {} m cannot hold {} vehicles of {} m with positive gaps",
                self.circumference_m, self.n_vehicles, self.vehicle_length_m
            ));
        }
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return bad(format!("dt_s = {} must be > 0", self.dt_s));
        }
        if self.horizon_steps <= self.warmup_steps {
            return bad(format!(
                "horizon_steps ({}) must exceed warmup_steps ({})",
                self.horizon_steps, self.warmup_steps
            ));
        }
        if !(self.accel_noise_std.is_finite() && self.accel_noise_std >= 0.0) {
            return bad(format!("accel_noise_std = {}", self.accel_noise_std));
        }
        Ok(())
    }

    /// Bumper-to-bumper gap of a uniformly spaced ring.
    pub fn uniform_gap_m(&self) -> f64 {
        self.circumference_m / self.n_vehicles as f64 - self.vehicle_length_m
    }
}

/// Distance from the follower's front bumper to the leader's rear bumper,
/// measured forward along the ring. Always in `[0, circumference)`.
pub fn ring_gap(leader_pos: f64, follower_pos: f64, leader_length: f64, circumference: f64) -> f64 {
    let gap = (leader_pos - follower_pos - leader_length).rem_euclid(circumference);
    if gap >= circumference - CONTACT_EPS_M {
        0.0
    } else {
        gap
    }
}
