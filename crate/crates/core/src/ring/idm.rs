use serde::{Deserialize, Serialize};

use super::{RingConfig, RingError};

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Desired speed (m/s).
    pub v0_mps: f64,
    /// Safe time headway (s).
    pub t_headway_s: f64,
    /// Maximum acceleration (m/s²).
    pub a_max: f64,
    /// Comfortable deceleration (m/s²).
    pub b_comf: f64,
    pub delta: f64,
    /// Minimum standstill gap (m).
    pub s0_m: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0_mps: 30.0,
            t_headway_s: 1.0,
            a_max: 1.0,
            b_comf: 1.5,
            delta: 4.0,
            s0_m: 2.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), RingError> {
        let fields = [
            ("v0_mps", self.v0_mps),
            ("t_headway_s", self.t_headway_s),
            ("a_max", self.a_max),
            ("b_comf", self.b_comf),
            ("delta", self.delta),
            ("s0_m", self.s0_m),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(RingError::InvalidIdm(format!("{name} = {value} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn with_desired_speed(self, v0_mps: f64) -> Self {
        Self { v0_mps, ..self }
    }
}

/// IDM acceleration for a follower at speed `v` behind a leader at
/// `v_lead`, separated by a bumper-to-bumper `gap`.
pub fn idm_accel(params: &IdmParams, v: f64, v_lead: f64, gap: f64) -> Result<f64, RingError> {
    if gap.is_nan() || gap <= 0.0 {
        return Err(RingError::DegenerateGap { gap });
    }
    let dv = v - v_lead;
    let dynamic = v * params.t_headway_s + v * dv / (2.0 * (params.a_max * params.b_comf).sqrt());
    let s_star = params.s0_m + dynamic.max(0.0);
    let free = (v / params.v0_mps).powf(params.delta);
    let interaction = (s_star / gap).powi(2);
    Ok(params.a_max * (1.0 - free - interaction))
}

/// Uniform-flow speed at which IDM acceleration vanishes for the ring's
/// equal spacing, i.e. the root of `s0 + v·T = s_eq·sqrt(1 - (v/v0)^δ)`.
pub fn equilibrium_speed(params: &IdmParams, config: &RingConfig) -> Result<f64, RingError> {
    let s_eq = config.uniform_gap_m();
    if s_eq <= params.s0_m {
        return Err(RingError::JamDensity { s_eq, s0: params.s0_m });
    }
    // residual is positive at v = 0 and negative at v = v0; strictly decreasing between
    let residual = |v: f64| {
        s_eq * (1.0 - (v / params.v0_mps).powf(params.delta)).max(0.0).sqrt()
            - params.s0_m
            - v * params.t_headway_s
    };
    let (mut lo, mut hi) = (0.0, params.v0_mps);
    for _ in 0..200 {
        if hi - lo <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
