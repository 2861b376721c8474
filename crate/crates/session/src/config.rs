//! Session configuration: base scenario, trial plan, pacing and pedal map.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ringhil_core::ring::IdmParams;
use ringhil_core::scenario::ScenarioFile;
use ringhil_core::units::mph_to_mps;

use crate::error::SessionError;

/// Overrides the listen port.
pub const ENV_PORT: &str = "RINGHIL_PORT";
/// Overrides the log directory.
pub const ENV_LOG_DIR: &str = "RINGHIL_LOG_DIR";

/// Linear pedal-to-acceleration map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PedalMap {
    pub max_throttle_accel: f64,
    pub max_brake_decel: f64,
}

impl Default for PedalMap {
    fn default() -> Self {
        Self { max_throttle_accel: 3.0, max_brake_decel: 6.0 }
    }
}

impl PedalMap {
    pub fn accel(&self, throttle: f64, brake: f64) -> f64 {
        throttle * self.max_throttle_accel - brake * self.max_brake_decel
    }

    /// Pedal positions that produce `accel`, saturating at full travel.
    pub fn pedals(&self, accel: f64) -> (f64, f64) {
        if accel >= 0.0 {
            ((accel / self.max_throttle_accel).min(1.0), 0.0)
        } else {
            (0.0, (-accel / self.max_brake_decel).min(1.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Free driving with advice hidden.
    Familiarization,
    Trial,
}

/// Per-segment changes to the base scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentOverrides {
    pub range_mph: Option<f64>,
    pub n_vehicles: Option<usize>,
    pub idm: Option<IdmParams>,
    pub delta: Option<u64>,
    pub seed: Option<u64>,
    pub warmup_steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub kind: SegmentKind,
    /// Paced ticks driven by the client, after the unpaced warmup.
    pub duration_ticks: u64,
    #[serde(flatten)]
    pub overrides: SegmentOverrides,
}

impl Segment {
    pub fn familiarization(duration_ticks: u64) -> Self {
        Self {
            name: "familiarization".into(),
            kind: SegmentKind::Familiarization,
            duration_ticks,
            overrides: SegmentOverrides::default(),
        }
    }

    pub fn trial(name: impl Into<String>, duration_ticks: u64, range_mph: f64) -> Self {
        Self {
            name: name.into(),
            kind: SegmentKind::Trial,
            duration_ticks,
            overrides: SegmentOverrides { range_mph: Some(range_mph), ..SegmentOverrides::default() },
        }
    }

    /// The base scenario with this segment's overrides applied.
    pub fn scenario(&self, base: &ScenarioFile) -> ScenarioFile {
        let mut s = base.clone();
        let o = &self.overrides;
        if let Some(r) = o.range_mph {
            s.advice.range_mph = r;
        }
        if let Some(n) = o.n_vehicles {
            s.ring.n_vehicles = n;
        }
        if let Some(idm) = o.idm {
            s.idm = idm;
        }
        if let Some(d) = o.delta {
            s.advice.delta = d;
        }
        if let Some(seed) = o.seed {
            s.seeds = vec![seed];
        }
        if let Some(w) = o.warmup_steps {
            s.ring.warmup_steps = w;
        }
        s.ring.horizon_steps = s.ring.warmup_steps + self.duration_ticks;
        if self.kind == SegmentKind::Familiarization {
            s.policy = None;
            s.policy_file = None;
        }
        s.label = self.name.clone();
        s
    }

    pub fn seed(&self, base: &ScenarioFile) -> u64 {
        self.overrides.seed.or_else(|| base.seeds.first().copied()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub label: String,
    pub host: String,
    pub port: u16,
    pub tick_rate_hz: f64,
    pub pedal_map: PedalMap,
    pub log_dir: PathBuf,
    /// Seconds to wait for the first client.
    pub connect_timeout_s: Option<f64>,
    /// Seconds to wait for a dropped client before abandoning the session.
    pub reconnect_timeout_s: f64,
    pub scenario: ScenarioFile,
    pub plan: Vec<Segment>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let scenario = ScenarioFile {
            policy: Some(ringhil_core::advisory::PolicyKind::EquilibriumHeuristic {
                margin_mps: ringhil_core::advisory::EquilibriumHeuristic::DEFAULT_MARGIN_MPS,
            }),
            ..ScenarioFile::default()
        };
        Self {
            label: "session".into(),
            host: "127.0.0.1".into(),
            port: 8765,
            tick_rate_hz: 10.0,
            pedal_map: PedalMap::default(),
            log_dir: PathBuf::from("session_logs"),
            connect_timeout_s: None,
            reconnect_timeout_s: 60.0,
            scenario,
            // 7 minutes of practice, then three 5 minute trials
            plan: vec![
                Segment::familiarization(4200),
                Segment::trial("trial-1", 3000, 2.5),
                Segment::trial("trial-2", 3000, 5.0),
                Segment::trial("trial-3", 3000, 10.0),
            ],
        }
    }
}

impl SessionConfig {
    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Load from a file; relative paths inside are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SessionError::Read { path: path.into(), source })?;
        let mut config = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            if let Some(file) = config.scenario.policy_file.as_mut() {
                if file.is_relative() {
                    *file = dir.join(&*file);
                }
            }
            if config.log_dir.is_relative() {
                config.log_dir = dir.join(&config.log_dir);
            }
        }
        Ok(config)
    }

    /// Apply `RINGHIL_PORT` and `RINGHIL_LOG_DIR` when set.
    pub fn apply_env(&mut self) -> Result<(), SessionError> {
        if let Ok(port) = std::env::var(ENV_PORT) {
            self.port = port.parse().map_err(|_| SessionError::Config(format!("{ENV_PORT}={port:?} is not a port")))?;
        }
        if let Ok(dir) = std::env::var(ENV_LOG_DIR) {
            self.log_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.plan.is_empty() {
            return Err(SessionError::Config("trial plan is empty".into()));
        }
        if !(self.tick_rate_hz.is_finite() && self.tick_rate_hz > 0.0) {
            return Err(SessionError::Config(format!("tick_rate_hz {} must be positive", self.tick_rate_hz)));
        }
        let p = self.pedal_map;
        if !(p.max_throttle_accel > 0.0 && p.max_brake_decel > 0.0) {
            return Err(SessionError::Config("pedal map limits must be positive".into()));
        }
        for seg in &self.plan {
            let s = seg.scenario(&self.scenario);
            if seg.duration_ticks == 0 {
                return Err(SessionError::Config(format!("segment {:?} has zero duration", seg.name)));
            }
            if (self.tick_rate_hz * s.ring.dt_s - 1.0).abs() > 1e-9 {
                return Err(SessionError::Config(format!(
                    "segment {:?}: tick_rate_hz {} x dt {} must equal 1",
                    seg.name, self.tick_rate_hz, s.ring.dt_s
                )));
            }
            if let Some(r) = seg.overrides.range_mph {
                if !(r > 0.0 && mph_to_mps(r).is_finite()) {
                    return Err(SessionError::Config(format!("segment {:?}: range {r} mph", seg.name)));
                }
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn tick_period(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(1.0 / self.tick_rate_hz)
    }
}
