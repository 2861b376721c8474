use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use super::{ActionMode, AdvisoryError, Normalization, Observation};
use crate::ring::{equilibrium_speed, IdmParams, RingConfig};

/// Environment facts a policy may need beyond the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyContext {
    pub ring: RingConfig,
    pub idm: IdmParams,
    pub mode: ActionMode,
}

impl PolicyContext {
    pub fn new(ring: RingConfig, idm: IdmParams, mode: ActionMode) -> Self {
        Self { ring, idm, mode }
    }

    pub fn default_normalization(&self) -> Normalization {
        Normalization {
            speed_scale: self.idm.v0_mps,
            gap_scale: self.ring.circumference_m,
            output_scale: match self.mode {
                ActionMode::Speed => self.idm.v0_mps,
                ActionMode::Acceleration => super::ActionBounds::ACCEL_LIMIT,
            },
        }
    }
}

pub struct PolicyInput<'a> {
    pub obs: &'a Observation,
    pub mode: ActionMode,
    /// Hold length the output will be applied for.
    pub delta: u64,
}

/// An advisory policy: maps an observation to a raw advised value in the
/// unit of the requested mode. Clamping happens in `advise`.
pub trait Policy: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn evaluate(&self, input: &PolicyInput<'_>) -> f64;
    /// Flat trainable parameter vector.
    fn params(&self) -> Vec<f64>;
    fn with_params(&self, params: &[f64]) -> Result<Box<dyn Policy>, AdvisoryError>;
    fn kind(&self) -> PolicyKind;
}

/// Serializable description of a policy; the `kind` tag selects the
/// registered implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    ConstantSpeed { speed_mps: f64 },
    EquilibriumHeuristic { margin_mps: f64 },
    Linear { weights: Vec<f64>, normalization: Option<Normalization> },
    Mlp { layers: Vec<usize>, weights: Vec<f64>, normalization: Option<Normalization> },
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::ConstantSpeed { .. } => ConstantSpeed::NAME,
            PolicyKind::EquilibriumHeuristic { .. } => EquilibriumHeuristic::NAME,
            PolicyKind::Linear { .. } => LinearPolicy::NAME,
            PolicyKind::Mlp { .. } => MlpPolicy::NAME,
        }
    }
}

fn check_len(params: &[f64], expected: usize) -> Result<(), AdvisoryError> {
    if params.len() != expected {
        return Err(AdvisoryError::ShapeMismatch(format!(
            "expected {expected} parameters, got {}",
            params.len()
        )));
    }
    Ok(())
}

/// Speed target converted to the acceleration that reaches it over the hold.
fn speed_to_mode(target: f64, input: &PolicyInput<'_>, dt: f64) -> f64 {
    match input.mode {
        ActionMode::Speed => target,
        ActionMode::Acceleration => (target - input.obs.ego_speed_mps) / (input.delta.max(1) as f64 * dt),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantSpeed {
    pub speed_mps: f64,
    dt_s: f64,
}

impl ConstantSpeed {
    pub const NAME: &'static str = "constant_speed";

    pub fn new(speed_mps: f64) -> Self {
        Self { speed_mps, dt_s: RingConfig::default().dt_s }
    }

    pub fn with_context(speed_mps: f64, ctx: &PolicyContext) -> Self {
        Self { speed_mps, dt_s: ctx.ring.dt_s }
    }
}

impl Policy for ConstantSpeed {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn evaluate(&self, input: &PolicyInput<'_>) -> f64 {
        speed_to_mode(self.speed_mps, input, self.dt_s)
    }

    fn params(&self) -> Vec<f64> {
        vec![self.speed_mps]
    }

    fn with_params(&self, params: &[f64]) -> Result<Box<dyn Policy>, AdvisoryError> {
        check_len(params, 1)?;
        Ok(Box::new(Self { speed_mps: params[0], ..self.clone() }))
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::ConstantSpeed { speed_mps: self.speed_mps }
    }
}

/// Cruise near the ring's uniform-flow speed, backing off when the gap
/// ahead closes.
///
/// The cruise speed is `v_eq - margin`. Driving slightly under the
/// equilibrium opens a buffer in front of the ego that absorbs the leader's
/// oscillations instead of passing them on. The gap-limited speed
/// `lead + (gap - s_min) / T` keeps the buffer from collapsing.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumHeuristic {
    pub margin_mps: f64,
    v_eq: f64,
    idm: IdmParams,
    dt_s: f64,
}

impl EquilibriumHeuristic {
    pub const NAME: &'static str = "equilibrium_heuristic";
    pub const DEFAULT_MARGIN_MPS: f64 = 0.5;

    pub fn new(margin_mps: f64, ctx: &PolicyContext) -> Result<Self, AdvisoryError> {
        Ok(Self {
            margin_mps,
            v_eq: equilibrium_speed(&ctx.idm, &ctx.ring)?,
            idm: ctx.idm,
            dt_s: ctx.ring.dt_s,
        })
    }

    pub fn cruise_speed(&self) -> f64 {
        (self.v_eq - self.margin_mps).max(0.0)
    }
}

impl Policy for EquilibriumHeuristic {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn evaluate(&self, input: &PolicyInput<'_>) -> f64 {
        let obs = input.obs;
        let gap_limited =
            obs.lead_speed_mps + (obs.lead_gap_m - self.idm.s0_m) / self.idm.t_headway_s;
        let target = self.cruise_speed().min(gap_limited.max(0.0));
        speed_to_mode(target, input, self.dt_s)
    }

    fn params(&self) -> Vec<f64> {
        vec![self.margin_mps]
    }

    fn with_params(&self, params: &[f64]) -> Result<Box<dyn Policy>, AdvisoryError> {
        check_len(params, 1)?;
        Ok(Box::new(Self { margin_mps: params[0], ..self.clone() }))
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::EquilibriumHeuristic { margin_mps: self.margin_mps }
    }
}

fn features(obs: &Observation, norm: &Normalization) -> [f64; 4] {
    [
        obs.ego_speed_mps / norm.speed_scale,
        obs.lead_speed_mps / norm.speed_scale,
        obs.lead_gap_m / norm.gap_scale,
        obs.circumference_m / norm.gap_scale,
    ]
}

/// Four observation gains plus a bias, on normalized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    weights: [f64; 5],
    norm: Normalization,
}

impl LinearPolicy {
    pub const NAME: &'static str = "linear";
    pub const N_PARAMS: usize = 5;

    pub fn new(weights: &[f64], norm: Normalization) -> Result<Self, AdvisoryError> {
        check_len(weights, Self::N_PARAMS)?;
        let mut w = [0.0; 5];
        w.copy_from_slice(weights);
        Ok(Self { weights: w, norm })
    }
}

impl Policy for LinearPolicy {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn evaluate(&self, input: &PolicyInput<'_>) -> f64 {
        let x = features(input.obs, &self.norm);
        let y = self.weights[..4].iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.weights[4];
        y * self.norm.output_scale
    }

    fn params(&self) -> Vec<f64> {
        self.weights.to_vec()
    }

    fn with_params(&self, params: &[f64]) -> Result<Box<dyn Policy>, AdvisoryError> {
        Ok(Box::new(Self::new(params, self.norm)?))
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::Linear { weights: self.weights.to_vec(), normalization: Some(self.norm) }
    }
}

/// Fully connected network, tanh on hidden layers, linear output.
/// Weights are stored layer by layer: row-major matrix, then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    layers: Vec<usize>,
    weights: Vec<f64>,
    norm: Normalization,
}

impl MlpPolicy {
    pub const NAME: &'static str = "mlp";

    pub fn param_count(layers: &[usize]) -> usize {
        layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn new(layers: Vec<usize>, weights: Vec<f64>, norm: Normalization) -> Result<Self, AdvisoryError> {
        if layers.len() < 2 || layers[0] != 4 || *layers.last().unwrap() != 1 || layers.contains(&0) {
            return Err(AdvisoryError::ShapeMismatch(format!(
                "layers must run from 4 inputs to 1 output with no empty layer, got {layers:?}"
            )));
        }
        check_len(&weights, Self::param_count(&layers))?;
        Ok(Self { layers, weights, norm })
    }

    pub fn zeros(layers: Vec<usize>, norm: Normalization) -> Result<Self, AdvisoryError> {
        let n = Self::param_count(&layers);
        Self::new(layers, vec![0.0; n], norm)
    }
}

impl Policy for MlpPolicy {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn evaluate(&self, input: &PolicyInput<'_>) -> f64 {
        let mut act: Vec<f64> = features(input.obs, &self.norm).to_vec();
        let mut offset = 0;
        let last = self.layers.len() - 2;
        for (li, pair) in self.layers.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let mat = &self.weights[offset..offset + n_in * n_out];
            let bias = &self.weights[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            act = (0..n_out)
                .map(|o| {
                    let z = mat[o * n_in..(o + 1) * n_in].iter().zip(&act).map(|(w, x)| w * x).sum::<f64>() + bias[o];
                    if li == last { z } else { z.tanh() }
                })
                .collect();
        }
        act[0] * self.norm.output_scale
    }

    fn params(&self) -> Vec<f64> {
        self.weights.clone()
    }

    fn with_params(&self, params: &[f64]) -> Result<Box<dyn Policy>, AdvisoryError> {
        Ok(Box::new(Self::new(self.layers.clone(), params.to_vec(), self.norm)?))
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::Mlp {
            layers: self.layers.clone(),
            weights: self.weights.clone(),
            normalization: Some(self.norm),
        }
    }
}
