//! Simulated drivers that turn advice into ego acceleration commands, and
//! the compliance-latency measurement.

use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisory::{accel_to_speed_advice, in_range, ActionBounds, ActionMode, Advice, Observation};
use crate::metrics::TickRecord;
use crate::ring::{idm_accel, IdmParams};

/// Desired speeds below this are raised to it before substitution into IDM.
pub const MIN_DESIRED_SPEED_MPS: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error("unknown driver kind {0:?}")]
    UnknownKind(String),
    #[error("perfect compliance cannot have a reaction delay (got {0} steps)")]
    DelayNotAllowed(u64),
    #[error(transparent)]
    Idm(#[from] crate::ring::RingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    #[default]
    PerfectCompliance,
    IdmTransition,
    DelayedIdmTransition,
}

impl DriverKind {
    pub fn name(self) -> &'static str {
        match self {
            DriverKind::PerfectCompliance => "perfect_compliance",
            DriverKind::IdmTransition => "idm_transition",
            DriverKind::DelayedIdmTransition => "delayed_idm_transition",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    pub kind: DriverKind,
    pub reaction_delay_steps: u64,
    /// Car-following behaviour used for advice transitions and whenever no
    /// advice is available.
    pub compliance_idm: IdmParams,
}

impl Default for DriverParams {
    fn default() -> Self {
        Self { kind: DriverKind::PerfectCompliance, reaction_delay_steps: 0, compliance_idm: IdmParams::default() }
    }
}

impl DriverParams {
    pub fn validate(&self) -> Result<(), DriverError> {
        if self.kind == DriverKind::PerfectCompliance && self.reaction_delay_steps != 0 {
            return Err(DriverError::DelayNotAllowed(self.reaction_delay_steps));
        }
        self.compliance_idm.validate()?;
        Ok(())
    }
}

/// An issued advice plus the ego speed when it was issued, which anchors
/// the conversion of acceleration advice to a speed target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdviceEvent {
    pub advice: Advice,
    pub ego_speed_at_issue: f64,
}

/// Issued advice ordered by issue tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdviceHistory {
    events: Vec<AdviceEvent>,
}

impl AdviceHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a newly issued advice. Re-pushing the advice already at the
    /// back (a held value) is a no-op.
    pub fn push(&mut self, advice: Advice, ego_speed_at_issue: f64) {
        if let Some(last) = self.events.last() {
            if last.advice.issued_tick >= advice.issued_tick {
                return;
            }
        }
        self.events.push(AdviceEvent { advice, ego_speed_at_issue });
    }

    /// Most recent advice issued at or before `tick`.
    pub fn latest_at(&self, tick: u64) -> Option<&AdviceEvent> {
        let idx = self.events.partition_point(|e| e.advice.issued_tick <= tick);
        idx.checked_sub(1).map(|i| &self.events[i])
    }

    pub fn events(&self) -> &[AdviceEvent] {
        &self.events
    }

    pub fn advices(&self) -> Vec<Advice> {
        self.events.iter().map(|e| e.advice).collect()
    }
}

pub struct DriverContext {
    pub dt_s: f64,
    pub bounds: ActionBounds,
}

/// A simulated ego driver.
pub trait DriverModel: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn command(&self, history: &AdviceHistory, obs: &Observation, tick: u64) -> f64;
}

/// Plain car following; a driver with no advice to act on falls back to this.
pub fn plain_idm_command(idm: &IdmParams, obs: &Observation, dt: f64) -> f64 {
    idm_accel(idm, obs.ego_speed_mps, obs.lead_speed_mps, obs.lead_gap_m).unwrap_or(-obs.ego_speed_mps / dt)
}

#[derive(Debug, Clone)]
pub struct PerfectCompliance {
    idm: IdmParams,
    dt_s: f64,
    bounds: ActionBounds,
}

impl DriverModel for PerfectCompliance {
    fn name(&self) -> &'static str {
        DriverKind::PerfectCompliance.name()
    }

    fn command(&self, history: &AdviceHistory, obs: &Observation, tick: u64) -> f64 {
        let Some(event) = history.latest_at(tick) else {
            return plain_idm_command(&self.idm, obs, self.dt_s);
        };
        let advice = event.advice;
        match advice.mode {
            ActionMode::Acceleration => advice.target,
            ActionMode::Speed => ((advice.target - obs.ego_speed_mps) / self.dt_s)
                .clamp(self.bounds.accel_min, self.bounds.accel_max),
        }
    }
}

/// IDM with the desired speed replaced by the advised speed. The
/// leader-interaction term is untouched, so the driver still brakes for
/// the vehicle ahead.
#[derive(Debug, Clone)]
pub struct IdmTransition {
    idm: IdmParams,
    dt_s: f64,
    delay: u64,
    name: &'static str,
}

impl IdmTransition {
    pub fn speed_target(&self, event: &AdviceEvent) -> f64 {
        match event.advice.mode {
            ActionMode::Speed => event.advice.target,
            ActionMode::Acceleration => {
                accel_to_speed_advice(&event.advice, event.ego_speed_at_issue, event.advice.hold_delta, self.dt_s)
                    .map(|a| a.target)
                    .unwrap_or(event.ego_speed_at_issue)
            }
        }
    }
}

impl DriverModel for IdmTransition {
    fn name(&self) -> &'static str {
        self.name
    }

    fn command(&self, history: &AdviceHistory, obs: &Observation, tick: u64) -> f64 {
        let event = tick.checked_sub(self.delay).and_then(|t| history.latest_at(t));
        let Some(event) = event else {
            return plain_idm_command(&self.idm, obs, self.dt_s);
        };
        let desired = self.speed_target(event).max(MIN_DESIRED_SPEED_MPS);
        plain_idm_command(&self.idm.with_desired_speed(desired), obs, self.dt_s)
    }
}

pub type DriverFactory = fn(&DriverParams, &DriverContext) -> Box<dyn DriverModel>;

/// Driver models by name.
pub struct DriverRegistry {
    entries: BTreeMap<&'static str, DriverFactory>,
}

impl DriverRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(DriverKind::PerfectCompliance.name(), |p, ctx| {
            Box::new(PerfectCompliance { idm: p.compliance_idm, dt_s: ctx.dt_s, bounds: ctx.bounds })
        });
        r.register(DriverKind::IdmTransition.name(), |p, ctx| {
            Box::new(IdmTransition { idm: p.compliance_idm, dt_s: ctx.dt_s, delay: 0, name: DriverKind::IdmTransition.name() })
        });
        r.register(DriverKind::DelayedIdmTransition.name(), |p, ctx| {
            Box::new(IdmTransition {
                idm: p.compliance_idm,
                dt_s: ctx.dt_s,
                delay: p.reaction_delay_steps,
                name: DriverKind::DelayedIdmTransition.name(),
            })
        });
        r
    }

    pub fn register(&mut self, name: &'static str, factory: DriverFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, params: &DriverParams, ctx: &DriverContext) -> Result<Box<dyn DriverModel>, DriverError> {
        params.validate()?;
        let name = params.kind.name();
        let factory = self.entries.get(name).ok_or_else(|| DriverError::UnknownKind(name.to_string()))?;
        Ok(factory(params, ctx))
    }
}

impl Default for DriverRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    Steps(u64),
    NotReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyResult {
    pub advice: Advice,
    pub latency: Latency,
}

/// The ego quantity advice in `mode` is compared against.
pub fn ego_measurement(record: &TickRecord, mode: ActionMode) -> Option<f64> {
    let ego = record.vehicles.first()?;
    Some(match mode {
        ActionMode::Speed => ego.speed_mps,
        ActionMode::Acceleration => ego.accel_cmd,
    })
}

/// Ticks from each advice's issue until the ego first sits inside its
/// acceptable range, searched over the advice's hold window (cut short by
/// the next event).
pub fn compliance_latency(log: &[TickRecord], events: &[Advice]) -> Vec<LatencyResult> {
    events
        .iter()
        .enumerate()
        .map(|(i, advice)| {
            let mut end = advice.expires_tick();
            if let Some(next) = events.get(i + 1) {
                end = end.min(next.issued_tick);
            }
            let start = log.partition_point(|r| r.tick < advice.issued_tick);
            let latency = log[start..]
                .iter()
                .take_while(|r| r.tick < end)
                .find(|r| ego_measurement(r, advice.mode).is_some_and(|m| in_range(advice, m)))
                .map_or(Latency::NotReached, |r| Latency::Steps(r.tick - advice.issued_tick));
            LatencyResult { advice: *advice, latency }
        })
        .collect()
}
