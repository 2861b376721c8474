use std::fmt;

use thiserror::Error;

use super::{mean_speed, RunLog, TickRecord};
use crate::ring::{spawn_ring, step, RingError, SimState};

/// First point where a recomputed run disagrees with its log.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub tick: u64,
    pub field: String,
    pub recorded: String,
    pub recomputed: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "divergence at tick {}: {} recorded {} but recomputed {}",
            self.tick, self.field, self.recorded, self.recomputed
        )
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{0}")]
    Diverged(Divergence),
    #[error("log has no tick records")]
    Empty,
    #[error(transparent)]
    Ring(#[from] RingError),
}

fn diverged<T: fmt::Debug>(tick: u64, field: impl Into<String>, recorded: T, recomputed: T) -> ReplayError {
    ReplayError::Diverged(Divergence {
        tick,
        field: field.into(),
        recorded: format!("{recorded:?}"),
        recomputed: format!("{recomputed:?}"),
    })
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

fn compare_state(record: &TickRecord, state: &SimState, accel: Option<&[f64]>) -> Result<(), ReplayError> {
    let tick = record.tick;
    if record.vehicles.len() != state.vehicles.len() {
        return Err(diverged(tick, "vehicles.len", record.vehicles.len(), state.vehicles.len()));
    }
    for (i, (r, s)) in record.vehicles.iter().zip(&state.vehicles).enumerate() {
        if r.id != s.id {
            return Err(diverged(tick, format!("vehicles[{i}].id"), r.id, s.id));
        }
        if !same(r.position_m, s.position_m) {
            return Err(diverged(tick, format!("vehicles[{i}].position_m"), r.position_m, s.position_m));
        }
        if !same(r.speed_mps, s.speed_mps) {
            return Err(diverged(tick, format!("vehicles[{i}].speed_mps"), r.speed_mps, s.speed_mps));
        }
        if let Some(accel) = accel {
            if !same(r.accel_cmd, accel[i]) {
                return Err(diverged(tick, format!("vehicles[{i}].accel_cmd"), r.accel_cmd, accel[i]));
            }
        }
    }
    let mean = mean_speed(state);
    if !same(record.mean_speed_mps, mean) {
        return Err(diverged(tick, "mean_speed_mps", record.mean_speed_mps, mean));
    }
    Ok(())
}

/// Rebuild the run from the header, feeding the logged ego commands, and
/// check every logged tick bit for bit.
pub fn replay(log: &RunLog) -> Result<Vec<SimState>, ReplayError> {
    let header = &log.header;
    let first = log.records.first().ok_or(ReplayError::Empty)?;
    let mut state = spawn_ring(&header.ring, &header.idm, header.initial)?;
    if first.tick != 0 {
        return Err(diverged(first.tick, "tick", first.tick, 0));
    }
    compare_state(first, &state, None)?;
    let mut states = Vec::with_capacity(log.records.len());
    states.push(state.clone());
    for record in &log.records[1..] {
        if record.tick != state.tick + 1 {
            return Err(diverged(record.tick, "tick", record.tick, state.tick + 1));
        }
        let ego_cmd = record.vehicles.first().map_or(0.0, |v| v.accel_cmd);
        let out = step(&state, &header.ring, &header.idm, ego_cmd);
        compare_state(record, &out.state, Some(&out.accel_cmd))?;
        if record.collision_events != out.collision_events {
            return Err(diverged(record.tick, "collision_events", record.collision_events, out.collision_events));
        }
        state = out.state;
        states.push(state.clone());
    }
    Ok(states)
}
