use serde::{Deserialize, Serialize};

use crate::ring::{RingConfig, SimState};

/// What the ego's policy sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego_speed_mps: f64,
    pub lead_speed_mps: f64,
    pub lead_gap_m: f64,
    pub circumference_m: f64,
}

pub fn observe(state: &SimState, config: &RingConfig) -> Observation {
    let leader = &state.vehicles[state.leader_index(0)];
    Observation {
        ego_speed_mps: state.ego().speed_mps,
        lead_speed_mps: leader.speed_mps,
        lead_gap_m: state.gap(0, config),
        circumference_m: config.circumference_m,
    }
}
