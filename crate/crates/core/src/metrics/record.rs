use serde::{Deserialize, Serialize};

use crate::advisory::Advice;
use crate::ring::SimState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: usize,
    pub position_m: f64,
    pub speed_mps: f64,
    pub accel_cmd: f64,
}

/// Where the ego's command came from on a tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandSource {
    /// Plain car following (warmup, or no advisory configured).
    Idm,
    Human,
    /// Braking to a stop after a lost connection.
    SafetyStop,
    Driver(String),
}

/// Snapshot of one tick: the state after `tick` steps, the commands that
/// produced it and the advice in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub sim_time_s: f64,
    pub vehicles: Vec<VehicleRecord>,
    pub advice: Option<Advice>,
    pub source: CommandSource,
    pub mean_speed_mps: f64,
    pub in_range: Option<bool>,
    pub collision_events: u32,
}

impl TickRecord {
    pub fn ego(&self) -> &VehicleRecord {
        &self.vehicles[0]
    }
}

/// Mean speed over every vehicle, ego included.
pub fn mean_speed(state: &SimState) -> f64 {
    mean_of(state.vehicles.iter().map(|v| v.speed_mps))
}

pub(crate) fn mean_of(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}
