//! The per-tick loop shared by headless runs, training and live sessions:
//! step the ring, refresh advice, record the tick.

use thiserror::Error;

use crate::advisory::{
    advise, episode_reward, in_range, observe, ActionBounds, ActionMode, Advice, AdviceSettings, AdvisoryError,
    Observation, Policy,
};
use crate::driver::{plain_idm_command, AdviceHistory, DriverError, DriverModel};
use crate::metrics::{mean_speed, CommandSource, LogHeader, RunLog, RunMeta, TickRecord, VehicleRecord};
use crate::ring::{spawn_ring, step, IdmParams, InitialCondition, RingConfig, RingError, SimState};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Advisory(#[from] AdvisoryError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error("episode already reached its horizon of {0} steps")]
    Finished(u64),
    #[error("ego command must be finite, got {0}")]
    NonFiniteCommand(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub ring: RingConfig,
    pub idm: IdmParams,
    pub initial: InitialCondition,
    pub advice: AdviceSettings,
    /// No advice is issued before this tick; the ego drives plain IDM.
    pub advice_start_tick: u64,
}

impl EpisodeConfig {
    pub fn new(ring: RingConfig, idm: IdmParams, initial: InitialCondition, advice: AdviceSettings) -> Self {
        let advice_start_tick = ring.warmup_steps;
        Self { ring, idm, initial, advice, advice_start_tick }
    }
}

pub struct Episode {
    config: EpisodeConfig,
    state: SimState,
    policy: Option<Box<dyn Policy>>,
    bounds: ActionBounds,
    current: Option<Advice>,
    history: AdviceHistory,
    records: Vec<TickRecord>,
    keep_records: bool,
    mean_trace: Vec<f64>,
    last_ego_cmd: f64,
    window_collisions: u64,
}

impl Episode {
    pub fn new(config: EpisodeConfig, policy: Option<Box<dyn Policy>>, keep_records: bool) -> Result<Self, EpisodeError> {
        config.advice.validate()?;
        let state = spawn_ring(&config.ring, &config.idm, config.initial)?;
        let capacity = if keep_records { config.ring.horizon_steps as usize + 1 } else { 0 };
        let mut ep = Self {
            bounds: ActionBounds::for_idm(&config.idm),
            config,
            state,
            policy,
            current: None,
            history: AdviceHistory::new(),
            records: Vec::with_capacity(capacity),
            keep_records,
            mean_trace: Vec::new(),
            last_ego_cmd: 0.0,
            window_collisions: 0,
        };
        ep.refresh_advice()?;
        ep.record(vec![0.0; ep.state.vehicles.len()], CommandSource::Idm, 0);
        Ok(ep)
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.state.tick
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn observation(&self) -> Observation {
        observe(&self.state, &self.config.ring)
    }

    pub fn advice(&self) -> Option<&Advice> {
        self.current.as_ref()
    }

    pub fn history(&self) -> &AdviceHistory {
        &self.history
    }

    pub fn has_policy(&self) -> bool {
        self.policy.is_some()
    }

    pub fn is_finished(&self) -> bool {
        self.state.tick >= self.config.ring.horizon_steps
    }

    /// Whether advice is in force on the current tick.
    pub fn advising(&self) -> bool {
        self.current.is_some()
    }

    /// Plain IDM command for the ego with the ring's own parameters.
    pub fn idm_command(&self) -> f64 {
        plain_idm_command(&self.config.idm, &self.observation(), self.config.ring.dt_s)
    }

    pub fn records(&self) -> &[TickRecord] {
        &self.records
    }

    pub fn last_record(&self) -> Option<&TickRecord> {
        self.records.last()
    }

    /// Mean speed of every tick so far, tick 0 first.
    pub fn mean_speed_trace(&self) -> &[f64] {
        &self.mean_trace
    }

    /// Collision-guard interventions at or after the warmup tick.
    pub fn window_collisions(&self) -> u64 {
        self.window_collisions
    }

    pub fn reward(&self) -> Result<f64, AdvisoryError> {
        episode_reward(&self.mean_trace, self.config.ring.warmup_steps)
    }

    pub fn header(&self, mut meta: RunMeta) -> LogHeader {
        meta.policy = self.policy.as_ref().map(|p| p.kind());
        meta.advice = self.policy.as_ref().map(|_| self.config.advice);
        meta.advice_start_tick = Some(self.config.advice_start_tick);
        LogHeader::new(self.config.ring.clone(), self.config.idm, self.config.initial, meta)
    }

    pub fn into_log(self, meta: RunMeta) -> RunLog {
        let header = self.header(meta);
        RunLog { header, records: self.records }
    }

    /// Step once with the given ego command.
    pub fn advance(&mut self, ego_cmd: f64, source: CommandSource) -> Result<(), EpisodeError> {
        if self.is_finished() {
            return Err(EpisodeError::Finished(self.config.ring.horizon_steps));
        }
        if !ego_cmd.is_finite() {
            return Err(EpisodeError::NonFiniteCommand(ego_cmd));
        }
        let out = step(&self.state, &self.config.ring, &self.config.idm, ego_cmd);
        self.state = out.state;
        self.last_ego_cmd = ego_cmd;
        self.refresh_advice()?;
        self.record(out.accel_cmd, source, out.collision_events);
        Ok(())
    }

    fn refresh_advice(&mut self) -> Result<(), AdvisoryError> {
        let Some(policy) = self.policy.as_deref() else {
            return Ok(());
        };
        let tick = self.state.tick;
        if tick < self.config.advice_start_tick {
            return Ok(());
        }
        if self.current.is_none() && !tick.is_multiple_of(self.config.advice.delta) {
            return Ok(());
        }
        let obs = self.observation();
        let advice = advise(policy, &obs, tick, &self.config.advice, &self.bounds, self.current.as_ref())?;
        self.history.push(advice, obs.ego_speed_mps);
        self.current = Some(advice);
        Ok(())
    }

    fn record(&mut self, accel_cmd: Vec<f64>, source: CommandSource, collision_events: u32) {
        let mean = mean_speed(&self.state);
        self.mean_trace.push(mean);
        if self.state.tick >= self.config.ring.warmup_steps {
            self.window_collisions += collision_events as u64;
        }
        if !self.keep_records {
            return;
        }
        let ego = self.state.ego();
        let in_range = self.current.map(|a| {
            let measurement = match a.mode {
                ActionMode::Speed => ego.speed_mps,
                ActionMode::Acceleration => self.last_ego_cmd,
            };
            in_range(&a, measurement)
        });
        let vehicles = self
            .state
            .vehicles
            .iter()
            .zip(accel_cmd)
            .map(|(v, a)| VehicleRecord { id: v.id, position_m: v.position_m, speed_mps: v.speed_mps, accel_cmd: a })
            .collect();
        self.records.push(TickRecord {
            tick: self.state.tick,
            sim_time_s: self.state.tick as f64 * self.config.ring.dt_s,
            vehicles,
            advice: self.current,
            source,
            mean_speed_mps: mean,
            in_range,
            collision_events,
        });
    }
}

/// Run an episode to its horizon with a simulated driver following the
/// advice (plain IDM before advice starts, or throughout without a policy).
pub fn run_headless(
    config: EpisodeConfig,
    policy: Option<Box<dyn Policy>>,
    driver: Option<&dyn DriverModel>,
    keep_records: bool,
) -> Result<Episode, EpisodeError> {
    let mut ep = Episode::new(config, policy, keep_records)?;
    while !ep.is_finished() {
        let (cmd, source) = match driver {
            Some(d) if ep.advising() => (
                d.command(ep.history(), &ep.observation(), ep.tick()),
                CommandSource::Driver(d.name().to_string()),
            ),
            _ => (ep.idm_command(), CommandSource::Idm),
        };
        ep.advance(cmd, source)?;
    }
    Ok(ep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisory::{ConstantSpeed, LinearPolicy, PolicyContext, PolicyInput};
    use crate::driver::{DriverContext, DriverKind, DriverParams, DriverRegistry};

    fn short(horizon: u64, warmup: u64) -> EpisodeConfig {
        EpisodeConfig::new(
            RingConfig { horizon_steps: horizon, warmup_steps: warmup, ..RingConfig::default() },
            IdmParams::default(),
            InitialCondition::UniformAtEquilibrium,
            AdviceSettings { delta: 10, ..AdviceSettings::default() },
        )
    }

    fn perfect() -> Box<dyn DriverModel> {
        DriverRegistry::builtin()
            .build(
                &DriverParams { kind: DriverKind::PerfectCompliance, ..DriverParams::default() },
                &DriverContext { dt_s: 0.1, bounds: ActionBounds::for_idm(&IdmParams::default()) },
            )
            .unwrap()
    }

    #[test]
    fn records_every_tick_including_initial() {
        let ep = run_headless(short(50, 10), None, None, true).unwrap();
        assert_eq!(ep.records().len(), 51);
        assert!(ep.records().iter().enumerate().all(|(i, r)| r.tick == i as u64));
        assert_eq!(ep.mean_speed_trace().len(), 51);
        assert!(ep.records().iter().all(|r| r.advice.is_none() && r.source == CommandSource::Idm));
    }

    #[test]
    fn advice_starts_after_warmup_and_holds() {
        let policy = Box::new(ConstantSpeed::new(3.0));
        let d = perfect();
        let ep = run_headless(short(60, 15), Some(policy), Some(d.as_ref()), true).unwrap();
        for r in ep.records() {
            if r.tick < 20 {
                assert!(r.advice.is_none(), "tick {}", r.tick);
            } else {
                let a = r.advice.unwrap();
                assert_eq!(a.issued_tick, r.tick - r.tick % 10);
            }
        }
        assert_eq!(ep.history().events().len(), 5);
        assert_eq!(ep.records()[20].source, CommandSource::Idm);
        assert_eq!(ep.records()[21].source, CommandSource::Driver("perfect_compliance".into()));
    }

    #[test]
    fn perfect_driver_tracks_constant_target() {
        let policy = Box::new(ConstantSpeed::new(3.0));
        let d = perfect();
        let ep = run_headless(short(200, 0), Some(policy), Some(d.as_ref()), true).unwrap();
        let last = ep.last_record().unwrap();
        assert!((last.ego().speed_mps - 3.0).abs() < 1e-9);
        assert_eq!(last.in_range, Some(true));
    }

    #[test]
    fn unit_delta_matches_direct_evaluation() {
        let ctx = PolicyContext::new(RingConfig::default(), IdmParams::default(), ActionMode::Speed);
        let weights = [0.3, 0.4, 5.0, 0.0, 0.02];
        let policy = LinearPolicy::new(&weights, ctx.default_normalization()).unwrap();
        let reference = policy.clone();
        let mut cfg = short(300, 0);
        cfg.ring.accel_noise_std = 0.2;
        cfg.advice.delta = 1;
        let d = perfect();
        let ep = run_headless(cfg, Some(Box::new(policy)), Some(d.as_ref()), true).unwrap();
        let bounds = ActionBounds::for_idm(&IdmParams::default());
        let c = &ep.config().ring;
        for (r, e) in ep.records().iter().zip(ep.history().events()) {
            let obs = Observation {
                ego_speed_mps: r.vehicles[0].speed_mps,
                lead_speed_mps: r.vehicles[1].speed_mps,
                lead_gap_m: crate::ring::ring_gap(r.vehicles[1].position_m, r.vehicles[0].position_m, c.vehicle_length_m, c.circumference_m),
                circumference_m: c.circumference_m,
            };
            let raw = reference.evaluate(&PolicyInput { obs: &obs, mode: ActionMode::Speed, delta: 1 });
            assert_eq!(e.advice.target.to_bits(), bounds.clamp(ActionMode::Speed, raw, obs.ego_speed_mps).to_bits());
        }
    }

    #[test]
    fn cannot_step_past_horizon() {
        let mut ep = run_headless(short(5, 1), None, None, false).unwrap();
        assert!(matches!(ep.advance(0.0, CommandSource::Idm), Err(EpisodeError::Finished(5))));
        assert!(ep.records().is_empty());
        assert_eq!(ep.mean_speed_trace().len(), 6);
    }

    #[test]
    fn non_finite_commands_rejected() {
        let mut ep = Episode::new(short(5, 1), None, false).unwrap();
        assert!(matches!(ep.advance(f64::NAN, CommandSource::Human), Err(EpisodeError::NonFiniteCommand(_))));
    }
}
