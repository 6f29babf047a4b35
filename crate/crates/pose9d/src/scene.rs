//! Scene/prediction records: the newline-delimited JSON format, ingestion
//! with validation, and 2D-box derivation from 3D cuboids.
//!
//! One scene per line. Poses serialize as `{rotation: 9 floats row-major,
//! translation: [m; 3], scale: [m; 3]}`; rotations are stored as matrices and
//! angles never leave radians inside the library. Unknown top-level fields
//! are preserved on round-trip.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{project_cuboid_to_bbox, BBox2D, CameraIntrinsics, Pose9D, RotationMatrix};

pub const SCHEMA_VERSION: &str = "1";

/// A ground-truth instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub category: String,
    pub pose: Pose9D,
    pub bbox: Option<BBox2D>,
}

/// A predicted instance with a confidence score.
#[derive(Debug, Clone, PartialEq)]
pub struct PredInstance {
    pub category: String,
    pub confidence: f64,
    pub pose: Pose9D,
    pub bbox: Option<BBox2D>,
}

/// One evaluation unit: camera, ground truths, predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    pub intrinsics: CameraIntrinsics,
    pub gts: Vec<GtInstance>,
    pub preds: Vec<PredInstance>,
    /// Unknown fields carried through serialization untouched.
    pub extra: Map<String, Value>,
}

// --- wire types -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PoseWire {
    rotation: [f64; 9],
    translation: [f64; 3],
    scale: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct GtWire {
    category: String,
    pose: PoseWire,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BBox2D>,
}

#[derive(Serialize, Deserialize)]
struct PredWire {
    category: String,
    confidence: f64,
    pose: PoseWire,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BBox2D>,
}

#[derive(Serialize, Deserialize)]
struct SceneWire {
    #[serde(default = "default_version")]
    schema_version: String,
    scene_id: String,
    intrinsics: CameraIntrinsics,
    gts: Vec<GtWire>,
    preds: Vec<PredWire>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

fn default_version() -> String {
    SCHEMA_VERSION.to_string()
}

fn pose_to_wire(p: &Pose9D) -> PoseWire {
    PoseWire {
        rotation: p.rotation.to_row_major(),
        translation: [p.translation.x, p.translation.y, p.translation.z],
        scale: [p.scale.x, p.scale.y, p.scale.z],
    }
}

fn pose_from_wire(w: &PoseWire, line: usize, field: &str) -> Result<Pose9D> {
    let rotation = RotationMatrix::from_row_major(&w.rotation).map_err(|e| {
        Error::invariant(format!("line {line}, field {field}.rotation"), e.to_string())
    })?;
    let translation = nalgebra::Vector3::from_column_slice(&w.translation);
    let scale = nalgebra::Vector3::from_column_slice(&w.scale);
    Pose9D::new(rotation, translation, scale)
        .map_err(|e| Error::invariant(format!("line {line}, field {field}.scale"), e.to_string()))
}

fn scene_to_wire(s: &SceneRecord) -> SceneWire {
    SceneWire {
        schema_version: SCHEMA_VERSION.to_string(),
        scene_id: s.scene_id.clone(),
        intrinsics: s.intrinsics,
        gts: s
            .gts
            .iter()
            .map(|g| GtWire {
                category: g.category.clone(),
                pose: pose_to_wire(&g.pose),
                bbox: g.bbox,
            })
            .collect(),
        preds: s
            .preds
            .iter()
            .map(|p| PredWire {
                category: p.category.clone(),
                confidence: p.confidence,
                pose: pose_to_wire(&p.pose),
                bbox: p.bbox,
            })
            .collect(),
        extra: s.extra.clone(),
    }
}

fn scene_from_wire(w: SceneWire, line: usize) -> Result<SceneRecord> {
    if w.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema {
            line,
            message: format!(
                "unsupported schema_version {:?} (expected {:?})",
                w.schema_version, SCHEMA_VERSION
            ),
        });
    }
    w.intrinsics
        .validate()
        .map_err(|e| Error::invariant(format!("line {line}, field intrinsics"), e.to_string()))?;
    let mut gts = Vec::with_capacity(w.gts.len());
    for (i, g) in w.gts.iter().enumerate() {
        let pose = pose_from_wire(&g.pose, line, &format!("gts[{i}].pose"))?;
        if let Some(b) = &g.bbox {
            b.validate().map_err(|e| {
                Error::invariant(format!("line {line}, field gts[{i}].box"), e.to_string())
            })?;
        }
        gts.push(GtInstance {
            category: g.category.clone(),
            pose,
            bbox: g.bbox,
        });
    }
    let mut preds = Vec::with_capacity(w.preds.len());
    for (i, p) in w.preds.iter().enumerate() {
        let pose = pose_from_wire(&p.pose, line, &format!("preds[{i}].pose"))?;
        if !(0.0..=1.0).contains(&p.confidence) || !p.confidence.is_finite() {
            return Err(Error::invariant(
                format!("line {line}, field preds[{i}].confidence"),
                format!("confidence {} outside [0,1]", p.confidence),
            ));
        }
        if let Some(b) = &p.bbox {
            b.validate().map_err(|e| {
                Error::invariant(format!("line {line}, field preds[{i}].box"), e.to_string())
            })?;
        }
        preds.push(PredInstance {
            category: p.category.clone(),
            confidence: p.confidence,
            pose,
            bbox: p.bbox,
        });
    }
    Ok(SceneRecord {
        scene_id: w.scene_id,
        intrinsics: w.intrinsics,
        gts,
        preds,
        extra: w.extra,
    })
}

/// Parse newline-delimited scene records, validating every invariant. Errors
/// carry the 1-based line number and the offending field path.
pub fn parse_scenes<R: BufRead>(reader: R) -> Result<Vec<SceneRecord>> {
    let mut scenes = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let wire: SceneWire = serde_json::from_str(&text).map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        let scene = scene_from_wire(wire, line_no)?;
        if !seen_ids.insert(scene.scene_id.clone()) {
            return Err(Error::invariant(
                format!("line {line_no}, field scene_id"),
                format!("duplicate scene id {:?}", scene.scene_id),
            ));
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

/// Serialize scenes as newline-delimited JSON, one record per line.
pub fn serialize_scenes<W: Write>(scenes: &[SceneRecord], mut writer: W) -> Result<()> {
    for scene in scenes {
        let wire = scene_to_wire(scene);
        let json = serde_json::to_string(&wire).map_err(|e| Error::Schema {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(writer, "{json}")?;
    }
    Ok(())
}

/// A per-instance failure from [`derive_boxes`].
#[derive(Debug)]
pub struct BoxDeriveFailure {
    pub scene_id: String,
    pub instance: String,
    pub error: Error,
}

/// Fill every instance's 2D box by projecting its cuboid. Existing boxes are
/// preserved unless `overwrite` is set. Failures are collected per instance
/// rather than aborting the batch.
pub fn derive_boxes(scenes: &mut [SceneRecord], overwrite: bool) -> Vec<BoxDeriveFailure> {
    let mut failures = Vec::new();
    for scene in scenes.iter_mut() {
        let cam = scene.intrinsics;
        for (i, gt) in scene.gts.iter_mut().enumerate() {
            if gt.bbox.is_none() || overwrite {
                match project_cuboid_to_bbox(&gt.pose, &cam) {
                    Ok(b) => gt.bbox = Some(b),
                    Err(e) => failures.push(BoxDeriveFailure {
                        scene_id: scene.scene_id.clone(),
                        instance: format!("gts[{i}]"),
                        error: e,
                    }),
                }
            }
        }
        for (i, pred) in scene.preds.iter_mut().enumerate() {
            if pred.bbox.is_none() || overwrite {
                match project_cuboid_to_bbox(&pred.pose, &cam) {
                    Ok(b) => pred.bbox = Some(b),
                    Err(e) => failures.push(BoxDeriveFailure {
                        scene_id: scene.scene_id.clone(),
                        instance: format!("preds[{i}]"),
                        error: e,
                    }),
                }
            }
        }
    }
    failures
}
