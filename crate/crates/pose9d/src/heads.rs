//! Reference forward math of the pose-estimation head: box-conditioned MLPs,
//! class-wise output slicing, and 9D assembly from raw outputs.
//!
//! Weights are plain nested arrays so fixtures can be written by hand or
//! exported from any framework as text.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    backproject, recover_center, rot6d_to_matrix, BBox2D, CameraIntrinsics, Pose9D, Rotation6D,
};

/// Smallest admissible per-axis extent after clamping a negative regression.
pub const MIN_SCALE: f64 = 1e-4;

/// Refined per-object query embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding(pub Vec<f64>);

impl QueryEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// One affine layer: `y = weight · x + bias`, row-major weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpLayer {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl MlpLayer {
    fn out_dim(&self) -> usize {
        self.weight.len()
    }

    fn in_dim(&self) -> usize {
        self.weight.first().map(|r| r.len()).unwrap_or(0)
    }
}

/// MLP weights: ReLU between layers, identity at the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpWeights {
    pub layers: Vec<MlpLayer>,
}

impl MlpWeights {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invariant("mlp", "at least one layer required"));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::DimensionMismatch {
                    expected: layer.out_dim(),
                    actual: layer.bias.len(),
                });
            }
            if layer.weight.iter().any(|r| r.len() != layer.in_dim()) {
                return Err(Error::invariant(
                    "mlp",
                    format!("ragged weight rows in layer {k}"),
                ));
            }
            if k > 0 && layer.in_dim() != self.layers[k - 1].out_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.layers[k - 1].out_dim(),
                    actual: layer.in_dim(),
                });
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim()).unwrap_or(0)
    }

    /// Parse from the text weight-file format (nested JSON arrays).
    pub fn from_json_str(s: &str) -> Result<Self> {
        let w: MlpWeights = serde_json::from_str(s).map_err(|e| Error::Schema {
            line: 1,
            message: format!("mlp weights: {e}"),
        })?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("weights serialize")
    }
}

/// Standard affine + ReLU composition with an identity output activation.
pub fn mlp_forward(input: &[f64], w: &MlpWeights) -> Result<Vec<f64>> {
    w.validate()?;
    if input.len() != w.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: w.input_dim(),
            actual: input.len(),
        });
    }
    let last = w.layers.len() - 1;
    let mut x: Vec<f64> = input.to_vec();
    for (k, layer) in w.layers.iter().enumerate() {
        let mut y = vec![0.0; layer.out_dim()];
        for (o, row) in layer.weight.iter().enumerate() {
            let mut acc = layer.bias[o];
            for (i, &wi) in row.iter().enumerate() {
                acc += wi * x[i];
            }
            y[o] = if k < last { acc.max(0.0) } else { acc };
        }
        x = y;
    }
    Ok(x)
}

/// Box-conditioned forward pass: the MLP consumes `[p; cx, cy, w, h]`.
pub fn conditioned_forward(
    p: &QueryEmbedding,
    bbox: &BBox2D,
    w: &MlpWeights,
) -> Result<Vec<f64>> {
    let mut input = Vec::with_capacity(p.dim() + 4);
    input.extend_from_slice(&p.0);
    input.extend_from_slice(&bbox.params());
    mlp_forward(&input, w)
}

/// Raw per-query head outputs before pose assembly. Rotation and scale are
/// class-wise: one row per category.
#[derive(Debug, Clone)]
pub struct RawHeadOutput {
    pub class_logits: Vec<f64>,
    pub bbox: BBox2D,
    pub center_offset: [f64; 2],
    pub depth: f64,
    pub rot6d_per_class: Vec<[f64; 6]>,
    pub scale_per_class: Vec<[f64; 3]>,
}

impl RawHeadOutput {
    pub fn validate(&self) -> Result<()> {
        let c = self.class_logits.len();
        if c == 0 {
            return Err(Error::invariant("head", "at least one class required"));
        }
        if self.rot6d_per_class.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: self.rot6d_per_class.len(),
            });
        }
        if self.scale_per_class.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: self.scale_per_class.len(),
            });
        }
        Ok(())
    }
}

/// Slice the class-wise heads at the argmax class (ties break to the lowest
/// index).
pub fn select_classwise(raw: &RawHeadOutput) -> Result<(usize, Rotation6D, Vector3<f64>)> {
    raw.validate()?;
    let mut best = 0usize;
    for (c, &logit) in raw.class_logits.iter().enumerate() {
        if logit > raw.class_logits[best] {
            best = c;
        }
    }
    let rot = Rotation6D::from_array(&raw.rot6d_per_class[best]);
    let s = raw.scale_per_class[best];
    Ok((best, rot, Vector3::new(s[0], s[1], s[2])))
}

/// A full 9D pose assembled from raw head outputs.
#[derive(Debug, Clone)]
pub struct AssembledPose {
    pub class_index: usize,
    pub pose: Pose9D,
    /// Set when a non-positive regressed extent was clamped to [`MIN_SCALE`].
    pub scale_clamped: bool,
}

/// Assemble the 9D pose: recover the 2D center from the box-relative offset,
/// back-project with the predicted depth, orthonormalize the selected 6D
/// rotation, and take the selected scale (clamped positive).
pub fn assemble_pose(raw: &RawHeadOutput, cam: &CameraIntrinsics) -> Result<AssembledPose> {
    let (class_index, rot6d, scale) = select_classwise(raw)?;
    let center = recover_center(&raw.bbox, raw.center_offset);
    let translation = backproject(&center, raw.depth, cam)?;
    let rotation = rot6d_to_matrix(&rot6d)?;
    let mut scale_clamped = false;
    let scale = scale.map(|s| {
        if s < MIN_SCALE {
            scale_clamped = true;
            MIN_SCALE
        } else {
            s
        }
    });
    Ok(AssembledPose {
        class_index,
        pose: Pose9D::new(rotation, translation, scale)?,
        scale_clamped,
    })
}
