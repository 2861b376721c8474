use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{equilibrium_speed, idm_accel, ring_gap, IdmParams, RingConfig, RingError, Role, VehicleState};

/// How vehicles are placed at tick 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    #[default]
    UniformAtEquilibrium,
    UniformAtRest,
    /// Equilibrium spacing with vehicle 1 shifted forward by `offset_m`.
    PerturbedEquilibrium { offset_m: f64 },
}

/// Full simulation state. Vehicle `i`'s leader is vehicle `(i + 1) mod N`.
#[derive(Debug, Clone)]
pub struct SimState {
    pub tick: u64,
    pub vehicles: Vec<VehicleState>,
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(tick: u64, vehicles: Vec<VehicleState>, seed: u64) -> Self {
        Self { tick, vehicles, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn ego(&self) -> &VehicleState {
        &self.vehicles[0]
    }

    pub fn leader_index(&self, i: usize) -> usize {
        (i + 1) % self.vehicles.len()
    }

    /// Gap in front of vehicle `i`.
    pub fn gap(&self, i: usize, config: &RingConfig) -> f64 {
        let leader = &self.vehicles[self.leader_index(i)];
        ring_gap(
            leader.position_m,
            self.vehicles[i].position_m,
            config.vehicle_length_m,
            config.circumference_m,
        )
    }

    pub fn gaps(&self, config: &RingConfig) -> Vec<f64> {
        (0..self.vehicles.len()).map(|i| self.gap(i, config)).collect()
    }

    /// Generator state, exposed for determinism checks.
    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SimState,
    /// Acceleration each vehicle was commanded this step, noise included.
    pub accel_cmd: Vec<f64>,
    /// Followers whose speed the collision guard had to clamp.
    pub collision_events: u32,
}

pub fn spawn_ring(
    config: &RingConfig,
    idm: &IdmParams,
    initial: InitialCondition,
) -> Result<SimState, RingError> {
    config.validate()?;
    idm.validate()?;
    let n = config.n_vehicles;
    let spacing = config.circumference_m / n as f64;
    let speed = match initial {
        InitialCondition::UniformAtRest => 0.0,
        _ => equilibrium_speed(idm, config)?,
    };
    let mut vehicles: Vec<VehicleState> = (0..n)
        .map(|id| VehicleState {
            id,
            position_m: id as f64 * spacing,
            speed_mps: speed,
            role: if id == 0 { Role::Ego } else { Role::NonEgo },
        })
        .collect();
    if let InitialCondition::PerturbedEquilibrium { offset_m } = initial {
        let gap = config.uniform_gap_m();
        if offset_m.is_nan() || offset_m.abs() >= gap || n < 2 {
            return Err(RingError::InvalidPerturbation { offset: offset_m, gap });
        }
        let v = &mut vehicles[1];
        v.position_m = (v.position_m + offset_m).rem_euclid(config.circumference_m);
    }
    Ok(SimState::new(0, vehicles, config.seed))
}

/// Advance one tick. Accelerations are all computed from the current state
/// before any vehicle moves; speeds then positions are committed
/// (semi-implicit Euler).
pub fn step(state: &SimState, config: &RingConfig, idm: &IdmParams, ego_accel_cmd: f64) -> StepOutcome {
    let n = state.vehicles.len();
    let dt = config.dt_s;
    let mut rng = state.rng.clone();
    let noise = (config.accel_noise_std > 0.0)
        .then(|| Normal::new(0.0, config.accel_noise_std).expect("validated noise std"));

    let gaps = state.gaps(config);
    let mut accel = Vec::with_capacity(n);
    for (i, vehicle) in state.vehicles.iter().enumerate() {
        let a = match vehicle.role {
            Role::Ego => ego_accel_cmd,
            Role::NonEgo => {
                let leader = &state.vehicles[state.leader_index(i)];
                let base = match idm_accel(idm, vehicle.speed_mps, leader.speed_mps, gaps[i]) {
                    Ok(a) => a,
                    // bumper contact: stop outright
                    Err(_) => -vehicle.speed_mps / dt,
                };
                base + noise.map_or(0.0, |d| d.sample(&mut rng))
            }
        };
        accel.push(a);
    }

    let mut speed: Vec<f64> = state
        .vehicles
        .iter()
        .zip(&accel)
        .map(|(v, a)| (v.speed_mps + a * dt).max(0.0))
        .collect();

    // Collision guard. Clamping only ever lowers a speed, so iterate until
    // no follower would overrun its (possibly also clamped) leader.
    let mut clamped = vec![false; n];
    if n > 1 {
        for _ in 0..=n {
            let mut changed = false;
            for i in 0..n {
                let l = (i + 1) % n;
                if gaps[i] + (speed[l] - speed[i]) * dt < 0.0 {
                    speed[i] = (speed[l] + gaps[i] / dt).max(0.0);
                    clamped[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    let vehicles = state
        .vehicles
        .iter()
        .zip(&speed)
        .map(|(v, &s)| {
            let mut pos = (v.position_m + s * dt).rem_euclid(config.circumference_m);
            if pos >= config.circumference_m {
                pos = 0.0;
            }
            VehicleState { position_m: pos, speed_mps: s, ..*v }
        })
        .collect();

    StepOutcome {
        state: SimState { tick: state.tick + 1, vehicles, rng },
        accel_cmd: accel,
        collision_events: clamped.iter().filter(|&&c| c).count() as u32,
    }
}
