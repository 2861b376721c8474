//! Policy weights file.
//!
//! ```json
//! {"kind": "linear", "shape": [5], "weights": [0.0, 0.0, 0.0, 0.0, 0.15],
//!  "normalization": {"speed_scale": 30.0, "gap_scale": 250.0, "output_scale": 30.0},
//!  "mode": "speed", "trained_at": "2026-10-15T00:00:00Z", "seed": 7}
//! ```
//!
//! `shape` is `[1]` for `constant_speed` and `equilibrium_heuristic`, `[5]`
//! for `linear` and the layer sizes for `mlp`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActionMode, AdvisoryError, LinearPolicy, MlpPolicy, PolicyKind};

/// Divisors applied to observations, and the multiplier applied to the raw
/// output, by parametric policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub speed_scale: f64,
    pub gap_scale: f64,
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub kind: String,
    pub shape: Vec<usize>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
    #[serde(default)]
    pub mode: Option<ActionMode>,
    #[serde(default)]
    pub trained_at: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl PolicyFile {
    pub fn from_kind(kind: &PolicyKind) -> Self {
        let (shape, weights, normalization) = match kind {
            PolicyKind::ConstantSpeed { speed_mps } => (vec![1], vec![*speed_mps], None),
            PolicyKind::EquilibriumHeuristic { margin_mps } => (vec![1], vec![*margin_mps], None),
            PolicyKind::Linear { weights, normalization } => {
                (vec![LinearPolicy::N_PARAMS], weights.clone(), *normalization)
            }
            PolicyKind::Mlp { layers, weights, normalization } => (layers.clone(), weights.clone(), *normalization),
        };
        Self {
            kind: kind.name().to_string(),
            shape,
            weights,
            normalization,
            mode: None,
            trained_at: None,
            seed: None,
        }
    }

    pub fn to_kind(&self) -> Result<PolicyKind, AdvisoryError> {
        let expect = |n: usize| -> Result<(), AdvisoryError> {
            let declared: usize = self.shape.iter().product();
            if self.shape.len() != 1 || declared != n || self.weights.len() != n {
                return Err(AdvisoryError::ShapeMismatch(format!(
                    "{} expects shape [{n}] with {n} weights, file has shape {:?} and {} weights",
                    self.kind,
                    self.shape,
                    self.weights.len()
                )));
            }
            Ok(())
        };
        match self.kind.as_str() {
            "constant_speed" => {
                expect(1)?;
                Ok(PolicyKind::ConstantSpeed { speed_mps: self.weights[0] })
            }
            "equilibrium_heuristic" => {
                expect(1)?;
                Ok(PolicyKind::EquilibriumHeuristic { margin_mps: self.weights[0] })
            }
            "linear" => {
                expect(LinearPolicy::N_PARAMS)?;
                Ok(PolicyKind::Linear { weights: self.weights.clone(), normalization: self.normalization })
            }
            "mlp" => {
                let n = MlpPolicy::param_count(&self.shape);
                if self.weights.len() != n {
                    return Err(AdvisoryError::ShapeMismatch(format!(
                        "mlp with layers {:?} needs {n} weights, file has {}",
                        self.shape,
                        self.weights.len()
                    )));
                }
                Ok(PolicyKind::Mlp {
                    layers: self.shape.clone(),
                    weights: self.weights.clone(),
                    normalization: self.normalization,
                })
            }
            other => Err(AdvisoryError::UnknownPolicy(other.to_string())),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, AdvisoryError> {
        let file: Self = serde_json::from_str(text)?;
        file.to_kind()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AdvisoryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| AdvisoryError::File(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AdvisoryError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}
