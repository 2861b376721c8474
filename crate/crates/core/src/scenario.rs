//! Scenario files: one JSON document aggregating every knob of a run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisory::{
    ActionBounds, ActionMode, AdviceSettings, AdvisoryError, Policy, PolicyContext, PolicyFile, PolicyKind,
    PolicyRegistry, TrainingEnv,
};
use crate::driver::{DriverContext, DriverError, DriverModel, DriverParams, DriverRegistry};
use crate::episode::{run_headless, EpisodeConfig, EpisodeError};
use crate::metrics::{summarize, RunLog, RunMeta, RunSummary};
use crate::ring::{equilibrium_speed, IdmParams, InitialCondition, RingConfig, RingError};
use crate::units::{mph_to_mps, mps_to_mph};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario must list at least one seed")]
    NoSeeds,
    #[error("scenario sets both an inline policy and a policy file")]
    AmbiguousPolicy,
    #[error("policy file {path}: {source}")]
    PolicyFile { path: PathBuf, source: AdvisoryError },
    #[error("reading scenario {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Advisory(#[from] AdvisoryError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

/// Advice hyper-parameters as an operator writes them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdviceConfig {
    pub mode: ActionMode,
    pub delta: u64,
    /// Range half-width for speed advice.
    pub range_mph: f64,
    /// Range half-width for acceleration advice.
    pub range_accel_mps2: f64,
}

impl Default for AdviceConfig {
    fn default() -> Self {
        Self { mode: ActionMode::Speed, delta: 50, range_mph: 5.0, range_accel_mps2: 0.5 }
    }
}

impl AdviceConfig {
    pub fn settings(&self) -> AdviceSettings {
        AdviceSettings {
            mode: self.mode,
            delta: self.delta,
            range_halfwidth: match self.mode {
                ActionMode::Speed => mph_to_mps(self.range_mph),
                ActionMode::Acceleration => self.range_accel_mps2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioFile {
    pub label: String,
    pub ring: RingConfig,
    pub idm: IdmParams,
    pub initial: InitialCondition,
    /// Inline policy description.
    pub policy: Option<PolicyKind>,
    /// Path to a policy weights file, relative to the scenario file.
    pub policy_file: Option<PathBuf>,
    pub driver: DriverParams,
    pub advice: AdviceConfig,
    pub seeds: Vec<u64>,
    /// Defaults to half the ring's equilibrium speed.
    pub wave_threshold_mps: Option<f64>,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            label: "default".into(),
            ring: RingConfig::default(),
            idm: IdmParams::default(),
            initial: InitialCondition::default(),
            policy: None,
            policy_file: None,
            driver: DriverParams::default(),
            advice: AdviceConfig::default(),
            seeds: vec![0],
            wave_threshold_mps: None,
        }
    }
}

/// Output of one seed.
pub struct RunOutcome {
    pub log: RunLog,
    pub summary: RunSummary,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Load and resolve a relative `policy_file` against the scenario's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: path.into(), source })?;
        let mut scenario = Self::from_json(&text)?;
        if let (Some(file), Some(dir)) = (scenario.policy_file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.seeds.is_empty() {
            return Err(ScenarioError::NoSeeds);
        }
        self.ring.validate()?;
        self.idm.validate()?;
        self.driver.validate()?;
        self.advice.settings().validate()?;
        self.policy_kind()?;
        Ok(())
    }

    pub fn policy_kind(&self) -> Result<Option<PolicyKind>, ScenarioError> {
        match (&self.policy, &self.policy_file) {
            (Some(_), Some(_)) => Err(ScenarioError::AmbiguousPolicy),
            (Some(kind), None) => Ok(Some(kind.clone())),
            (None, Some(path)) => {
                let file = PolicyFile::load(path)
                    .map_err(|source| ScenarioError::PolicyFile { path: path.clone(), source })?;
                let kind = file
                    .to_kind()
                    .map_err(|source| ScenarioError::PolicyFile { path: path.clone(), source })?;
                Ok(Some(kind))
            }
            (None, None) => Ok(None),
        }
    }

    pub fn ring_for_seed(&self, seed: u64) -> RingConfig {
        RingConfig { seed, ..self.ring.clone() }
    }

    pub fn policy_context(&self) -> PolicyContext {
        PolicyContext::new(self.ring.clone(), self.idm, self.advice.mode)
    }

    pub fn build_policy(&self, registry: &PolicyRegistry) -> Result<Option<Box<dyn Policy>>, ScenarioError> {
        let ctx = self.policy_context();
        Ok(match self.policy_kind()? {
            Some(kind) => Some(registry.build(&kind, &ctx)?),
            None => None,
        })
    }

    pub fn build_driver(&self, registry: &DriverRegistry) -> Result<Box<dyn DriverModel>, ScenarioError> {
        let ctx = DriverContext { dt_s: self.ring.dt_s, bounds: ActionBounds::for_idm(&self.idm) };
        Ok(registry.build(&self.driver, &ctx)?)
    }

    pub fn wave_threshold(&self) -> f64 {
        self.wave_threshold_mps
            .unwrap_or_else(|| 0.5 * equilibrium_speed(&self.idm, &self.ring).unwrap_or(0.0))
    }

    pub fn episode_config(&self, seed: u64) -> EpisodeConfig {
        EpisodeConfig::new(self.ring_for_seed(seed), self.idm, self.initial, self.advice.settings())
    }

    pub fn training_env(&self) -> TrainingEnv {
        TrainingEnv {
            ring: self.ring.clone(),
            idm: self.idm,
            initial: self.initial,
            driver: self.driver,
            advice: self.advice.settings(),
            eval_seeds: self.seeds.clone(),
            collision_penalty: 0.0,
        }
    }

    /// One headless episode with the built-in registries.
    pub fn run_seed(&self, seed: u64) -> Result<RunOutcome, ScenarioError> {
        self.run_seed_with(seed, &PolicyRegistry::builtin(), &DriverRegistry::builtin())
    }

    pub fn run_seed_with(
        &self,
        seed: u64,
        policies: &PolicyRegistry,
        drivers: &DriverRegistry,
    ) -> Result<RunOutcome, ScenarioError> {
        self.validate()?;
        let policy = self.build_policy(policies)?;
        let driver = self.build_driver(drivers)?;
        let ep = run_headless(self.episode_config(seed), policy, Some(driver.as_ref()), true)?;
        let meta = RunMeta {
            label: self.label.clone(),
            driver: Some(self.driver),
            ..RunMeta::default()
        };
        let log = ep.into_log(meta);
        let summary = summarize(&log.records, self.ring.warmup_steps, self.wave_threshold())?.with_header(&log.header);
        Ok(RunOutcome { log, summary })
    }

    pub fn range_mph(&self) -> f64 {
        mps_to_mph(self.advice.settings().range_halfwidth)
    }
}
