//! Run configuration: one JSON document wiring cost weights, loss weights,
//! evaluation settings, symmetry table, and synthetic-generation defaults.
//!
//! Unknown keys are rejected so typos fail loudly. The effective config is
//! echoed into machine-readable reports and re-loads to an equal value.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pose9d::error::Error;
use pose9d::geometry::CameraIntrinsics;
use pose9d::losses::LossWeights;
use pose9d::matching::CostWeights;
use pose9d::metrics::{default_symmetry_table, EvalConfig, PoseThreshold, DEFAULT_CATEGORIES};
use pose9d::synth::NoiseProfile;
use pose9d::SymmetrySpec;

pub const CONFIG_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub iou_thresholds: Vec<f64>,
    pub pose_thresholds: Vec<PoseThreshold>,
    pub iou_gate: f64,
    pub use_symmetric_iou: bool,
    pub symmetric_iou_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSettings {
    pub camera: CameraIntrinsics,
    pub objects_min: usize,
    pub objects_max: usize,
    pub noise: NoiseProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: String,
    pub seed: u64,
    /// Worker threads; `null` selects the available parallelism. The
    /// `--threads` flag overrides execution without changing the echoed
    /// config (results are thread-count independent by construction).
    pub threads: Option<usize>,
    pub categories: Vec<String>,
    pub symmetry: BTreeMap<String, SymmetrySpec>,
    pub cost_weights: CostWeights,
    pub loss_weights: LossWeights,
    /// Apply symmetry-aware rotation distance inside the training loss
    /// (matching and metrics always honor the symmetry table).
    pub loss_symmetry_aware: bool,
    pub eval: EvalSettings,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        RunConfig {
            version: CONFIG_VERSION.to_string(),
            seed: 0,
            threads: None,
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            symmetry: default_symmetry_table(),
            cost_weights: CostWeights::default(),
            loss_weights: LossWeights::default(),
            loss_symmetry_aware: false,
            eval: EvalSettings {
                iou_thresholds: eval.iou_thresholds,
                pose_thresholds: eval.pose_thresholds,
                iou_gate: eval.iou_gate,
                use_symmetric_iou: eval.use_symmetric_iou,
                symmetric_iou_steps: eval.symmetric_iou_steps,
            },
            synth: SynthSettings {
                camera: CameraIntrinsics {
                    fx: 600.0,
                    fy: 600.0,
                    cx: 320.0,
                    cy: 240.0,
                    width: 640.0,
                    height: 480.0,
                },
                objects_min: 1,
                objects_max: 10,
                noise: NoiseProfile::default(),
            },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Schema {
            line: e.line(),
            message: format!("config {}: {e}", path.display()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Schema {
                line: 0,
                message: format!(
                    "unsupported config version {:?} (expected {:?})",
                    self.version, CONFIG_VERSION
                ),
            });
        }
        self.cost_weights.validate()?;
        self.loss_weights.validate()?;
        self.synth.camera.validate()?;
        self.synth.noise.validate()?;
        if self.synth.objects_min > self.synth.objects_max {
            return Err(Error::Invariant {
                context: "synth.objects".into(),
                message: "objects_min must not exceed objects_max".into(),
            });
        }
        self.eval_config().validate()?;
        Ok(())
    }

    /// The library-level evaluation configuration this run config implies.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            categories: self.categories.clone(),
            iou_thresholds: self.eval.iou_thresholds.clone(),
            pose_thresholds: self.eval.pose_thresholds.clone(),
            symmetry: self.symmetry.clone(),
            iou_gate: self.eval.iou_gate,
            use_symmetric_iou: self.eval.use_symmetric_iou,
            symmetric_iou_steps: self.eval.symmetric_iou_steps,
        }
    }

    pub fn symmetry_for(&self, category: &str) -> SymmetrySpec {
        self.symmetry
            .get(category)
            .cloned()
            .unwrap_or(SymmetrySpec::None)
    }
}
