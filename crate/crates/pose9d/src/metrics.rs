//! Evaluation protocol: mean average precision at 3D-IoU thresholds and
//! detection-gated accuracy under combined rotation/translation bounds.
//!
//! Per category, predictions are ranked by descending confidence (ties broken
//! by scene index then prediction index, so results are bitwise
//! reproducible), greedily matched to unclaimed same-scene ground truths of
//! the same category by highest 3D IoU, and scored by all-point area under
//! the monotone precision envelope.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{symmetry_aware_rot_distance, Pose9D, SymmetrySpec};
use crate::iou3d::{iou_3d, iou_3d_symmetric};
use crate::par;
use crate::scene::SceneRecord;

/// The six benchmark categories this toolkit ships defaults for.
pub const DEFAULT_CATEGORIES: [&str; 6] = ["bottle", "bowl", "camera", "can", "laptop", "mug"];

/// Default symmetry table: bottles, bowls and cans spin freely about their
/// vertical axis; the other categories have no symmetry.
pub fn default_symmetry_table() -> BTreeMap<String, SymmetrySpec> {
    let mut table = BTreeMap::new();
    for cat in DEFAULT_CATEGORIES {
        let sym = match cat {
            "bottle" | "bowl" | "can" => SymmetrySpec::continuous_y(),
            _ => SymmetrySpec::None,
        };
        table.insert(cat.to_string(), sym);
    }
    table
}

/// One rotation/translation acceptance bound. `None` means unbounded, so
/// `(Some 10°, None)` is the pure-rotation column and `(None, Some 10cm)`
/// the pure-translation column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseThreshold {
    pub max_degrees: Option<f64>,
    pub max_centimeters: Option<f64>,
}

impl PoseThreshold {
    pub fn label(&self) -> String {
        fn fmt(v: f64) -> String {
            if v.fract() == 0.0 {
                format!("{v:.0}")
            } else {
                format!("{v}")
            }
        }
        match (self.max_degrees, self.max_centimeters) {
            (Some(d), Some(c)) => format!("{}\u{00b0}{}cm", fmt(d), fmt(c)),
            (Some(d), None) => format!("{}\u{00b0}", fmt(d)),
            (None, Some(c)) => format!("{}cm", fmt(c)),
            (None, None) => "unbounded".to_string(),
        }
    }
}

/// Evaluation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub categories: Vec<String>,
    /// 3D-IoU thresholds, strictly in (0, 1].
    pub iou_thresholds: Vec<f64>,
    pub pose_thresholds: Vec<PoseThreshold>,
    pub symmetry: BTreeMap<String, SymmetrySpec>,
    /// Minimum 3D IoU for a prediction to pair with a ground truth under the
    /// pose-threshold metrics, preventing cross-object credit.
    pub iou_gate: f64,
    /// Maximize IoU over discretized symmetry rotations for continuous
    /// symmetric categories.
    pub use_symmetric_iou: bool,
    pub symmetric_iou_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            iou_thresholds: vec![0.25, 0.5, 0.75],
            pose_thresholds: vec![
                PoseThreshold {
                    max_degrees: None,
                    max_centimeters: Some(10.0),
                },
                PoseThreshold {
                    max_degrees: Some(10.0),
                    max_centimeters: None,
                },
                PoseThreshold {
                    max_degrees: Some(10.0),
                    max_centimeters: Some(10.0),
                },
                PoseThreshold {
                    max_degrees: Some(5.0),
                    max_centimeters: Some(5.0),
                },
                PoseThreshold {
                    max_degrees: Some(10.0),
                    max_centimeters: Some(5.0),
                },
            ],
            symmetry: default_symmetry_table(),
            iou_gate: 0.1,
            use_symmetric_iou: true,
            symmetric_iou_steps: 20,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::invariant("eval.categories", "at least one category"));
        }
        for &t in &self.iou_thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invariant(
                    "eval.iou_thresholds",
                    format!("threshold {t} outside (0,1]"),
                ));
            }
        }
        for p in &self.pose_thresholds {
            if let Some(d) = p.max_degrees {
                if d <= 0.0 {
                    return Err(Error::invariant("eval.pose_thresholds", "degrees must be > 0"));
                }
            }
            if let Some(c) = p.max_centimeters {
                if c <= 0.0 {
                    return Err(Error::invariant(
                        "eval.pose_thresholds",
                        "centimeters must be > 0",
                    ));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.iou_gate) {
            return Err(Error::invariant("eval.iou_gate", "gate outside [0,1]"));
        }
        if self.symmetric_iou_steps == 0 {
            return Err(Error::invariant("eval.symmetric_iou_steps", "must be >= 1"));
        }
        for (cat, sym) in &self.symmetry {
            sym.validate()
                .map_err(|e| Error::invariant(format!("eval.symmetry.{cat}"), e.to_string()))?;
        }
        Ok(())
    }

    fn symmetry_for(&self, category: &str) -> &SymmetrySpec {
        self.symmetry.get(category).unwrap_or(&SymmetrySpec::None)
    }
}

/// Rotation error (degrees, symmetry-aware) and translation error (meters).
pub fn pose_errors(pred: &Pose9D, gt: &Pose9D, sym: &SymmetrySpec) -> (f64, f64) {
    let rot = symmetry_aware_rot_distance(&pred.rotation, &gt.rotation, sym).to_degrees();
    let trans = (pred.translation - gt.translation).norm();
    (rot, trans)
}

/// Per-category evaluation results. Values are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: String,
    pub gt_count: usize,
    pub pred_count: usize,
    /// Average precision per IoU threshold, aligned with the config order.
    pub iou_ap: Vec<f64>,
    /// Detection-gated accuracy per pose threshold, aligned with the config.
    pub pose_acc: Vec<f64>,
}

/// The full evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub iou_thresholds: Vec<f64>,
    pub pose_thresholds: Vec<PoseThreshold>,
    pub per_category: Vec<CategoryResult>,
    /// Unweighted means over categories with at least one ground truth.
    pub mean_iou_ap: Vec<f64>,
    pub mean_pose_acc: Vec<f64>,
    pub total_gt: usize,
    pub total_predictions: usize,
}

/// One ranked prediction with its per-ground-truth overlaps and errors.
struct RankedPred {
    scene: usize,
    pred: usize,
    confidence: f64,
    /// (gt slot within the scene-category group, iou, rot deg, trans m)
    overlaps: Vec<(usize, f64, f64, f64)>,
}

struct CategoryPool {
    /// Ground-truth count per scene for this category.
    gt_counts: Vec<usize>,
    ranked: Vec<RankedPred>,
}

/// Evaluate a scene set against the configuration.
pub fn evaluate_scene_set(scenes: &[SceneRecord], cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    let cat_index: BTreeMap<&str, usize> = cfg
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    for (si, scene) in scenes.iter().enumerate() {
        for (gi, gt) in scene.gts.iter().enumerate() {
            if !cat_index.contains_key(gt.category.as_str()) {
                return Err(Error::invariant(
                    format!("scene {si} ({}), gts[{gi}].category", scene.scene_id),
                    format!("unknown category {:?}", gt.category),
                ));
            }
        }
        for (pi, pred) in scene.preds.iter().enumerate() {
            if !cat_index.contains_key(pred.category.as_str()) {
                return Err(Error::invariant(
                    format!("scene {si} ({}), preds[{pi}].category", scene.scene_id),
                    format!("unknown category {:?}", pred.category),
                ));
            }
        }
    }

    // Per-scene precomputation of IoU and pose errors, parallel and ordered.
    let per_scene: Vec<Vec<(usize, RankedPred)>> = par::map_range(scenes.len(), |si| {
        let scene = &scenes[si];
        let mut out: Vec<(usize, RankedPred)> = Vec::new();
        for (ci, cat) in cfg.categories.iter().enumerate() {
            let sym = cfg.symmetry_for(cat);
            let gt_slots: Vec<usize> = scene
                .gts
                .iter()
                .enumerate()
                .filter(|(_, g)| &g.category == cat)
                .map(|(i, _)| i)
                .collect();
            for (pi, pred) in scene
                .preds
                .iter()
                .enumerate()
                .filter(|(_, p)| &p.category == cat)
            {
                let overlaps = gt_slots
                    .iter()
                    .enumerate()
                    .map(|(slot, &gi)| {
                        let gt = &scene.gts[gi];
                        let iou = if cfg.use_symmetric_iou {
                            iou_3d_symmetric(
                                &pred.pose,
                                &gt.pose,
                                sym,
                                cfg.symmetric_iou_steps,
                            )
                        } else {
                            iou_3d(&pred.pose, &gt.pose)
                        };
                        let (rot, trans) = pose_errors(&pred.pose, &gt.pose, sym);
                        (slot, iou, rot, trans)
                    })
                    .collect();
                out.push((
                    ci,
                    RankedPred {
                        scene: si,
                        pred: pi,
                        confidence: pred.confidence,
                        overlaps,
                    },
                ));
            }
        }
        out
    });

    // Regroup by category; the scene-major traversal keeps ordering stable.
    let mut pools: Vec<CategoryPool> = cfg
        .categories
        .iter()
        .map(|cat| CategoryPool {
            gt_counts: scenes
                .iter()
                .map(|s| s.gts.iter().filter(|g| &g.category == cat).count())
                .collect(),
            ranked: Vec::new(),
        })
        .collect();
    for scene_entries in per_scene {
        for (ci, ranked) in scene_entries {
            pools[ci].ranked.push(ranked);
        }
    }

    let mut per_category = Vec::with_capacity(cfg.categories.len());
    for (ci, cat) in cfg.categories.iter().enumerate() {
        let pool = &mut pools[ci];
        // Total order: confidence desc, then scene, then prediction index.
        pool.ranked.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then(a.scene.cmp(&b.scene))
                .then(a.pred.cmp(&b.pred))
        });
        let n_gt: usize = pool.gt_counts.iter().sum();

        let iou_ap: Vec<f64> = cfg
            .iou_thresholds
            .iter()
            .map(|&tau| {
                greedy_average_precision(pool, n_gt, |best_iou, _, _| best_iou >= tau, 0.0)
            })
            .collect();
        let pose_acc: Vec<f64> = cfg
            .pose_thresholds
            .iter()
            .map(|pt| {
                greedy_average_precision(
                    pool,
                    n_gt,
                    |_, rot, trans| {
                        pt.max_degrees.is_none_or(|d| rot <= d)
                            && pt.max_centimeters.is_none_or(|c| trans * 100.0 <= c)
                    },
                    cfg.iou_gate,
                )
            })
            .collect();

        per_category.push(CategoryResult {
            category: cat.clone(),
            gt_count: n_gt,
            pred_count: pool.ranked.len(),
            iou_ap,
            pose_acc,
        });
    }

    let scored: Vec<&CategoryResult> =
        per_category.iter().filter(|c| c.gt_count > 0).collect();
    let mean = |pick: &dyn Fn(&CategoryResult) -> &Vec<f64>, k: usize| -> f64 {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|c| pick(c)[k]).sum::<f64>() / scored.len() as f64
        }
    };
    let mean_iou_ap = (0..cfg.iou_thresholds.len())
        .map(|k| mean(&|c| &c.iou_ap, k))
        .collect();
    let mean_pose_acc = (0..cfg.pose_thresholds.len())
        .map(|k| mean(&|c| &c.pose_acc, k))
        .collect();
    drop(scored);
    let total_gt = per_category.iter().map(|c| c.gt_count).sum();
    let total_predictions = per_category.iter().map(|c| c.pred_count).sum();

    Ok(EvalResult {
        iou_thresholds: cfg.iou_thresholds.clone(),
        pose_thresholds: cfg.pose_thresholds.clone(),
        per_category,
        mean_iou_ap,
        mean_pose_acc,
        total_gt,
        total_predictions,
    })
}

/// Greedy matching in rank order followed by all-point AP integration.
///
/// Each prediction pairs with the unclaimed ground truth of highest IoU
/// (subject to `iou >= gate`); the pair is a true positive, and claims the
/// ground truth, iff `accept(iou, rot_deg, trans_m)` holds.
fn greedy_average_precision(
    pool: &CategoryPool,
    n_gt: usize,
    accept: impl Fn(f64, f64, f64) -> bool,
    gate: f64,
) -> f64 {
    if n_gt == 0 || pool.ranked.is_empty() {
        return 0.0;
    }
    let mut claimed: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    let mut outcomes: Vec<bool> = Vec::with_capacity(pool.ranked.len());
    for pred in &pool.ranked {
        // Highest-IoU unclaimed candidate above the gate; ties break to the
        // lowest slot index for determinism.
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for &(slot, iou, rot, trans) in &pred.overlaps {
            if iou < gate || *claimed.get(&(pred.scene, slot)).unwrap_or(&false) {
                continue;
            }
            if best.is_none_or(|(_, bi, _, _)| iou > bi) {
                best = Some((slot, iou, rot, trans));
            }
        }
        let tp = match best {
            Some((slot, iou, rot, trans)) if accept(iou, rot, trans) => {
                claimed.insert((pred.scene, slot), true);
                true
            }
            _ => false,
        };
        outcomes.push(tp);
    }
    average_precision(&outcomes, n_gt)
}

/// All-point AP: the sum over true-positive ranks of the monotone precision
/// envelope, divided by the ground-truth count.
fn average_precision(outcomes: &[bool], n_gt: usize) -> f64 {
    let mut precisions = Vec::with_capacity(outcomes.len());
    let mut tp = 0usize;
    for (rank, &hit) in outcomes.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precisions.push(tp as f64 / (rank + 1) as f64);
    }
    // Monotone envelope from the right.
    let mut envelope = precisions.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    for (rank, &hit) in outcomes.iter().enumerate() {
        if hit {
            ap += envelope[rank];
        }
    }
    ap / n_gt as f64
}

/// The machine-readable report record: canonical single-line JSON that
/// parses back to an identical [`EvalResult`].
pub fn machine_record(r: &EvalResult) -> String {
    serde_json::to_string(r).expect("result serializes")
}

/// Render the result as an aligned text table, values in percent. Categories
/// without ground truth are flagged and excluded from the mean row.
pub fn format_report(r: &EvalResult) -> String {
    let mut labels: Vec<String> = r
        .iou_thresholds
        .iter()
        .map(|t| format!("IoU{:.0}", t * 100.0))
        .collect();
    labels.extend(r.pose_thresholds.iter().map(|p| p.label()));

    let mut out = String::new();
    out.push_str(&format!("{:<12} {:>6} {:>6}", "category", "gt", "pred"));
    for label in &labels {
        out.push_str(&format!(" {:>9}", label));
    }
    out.push('\n');

    let mut row = |name: &str, gt: Option<usize>, pred: Option<usize>, values: Vec<f64>| {
        let gt_s = gt.map_or("-".to_string(), |v| v.to_string());
        let pred_s = pred.map_or("-".to_string(), |v| v.to_string());
        let mut line = format!("{name:<12} {gt_s:>6} {pred_s:>6}");
        for v in values {
            line.push_str(&format!(" {:>9.1}", v * 100.0));
        }
        line.push('\n');
        out.push_str(&line);
    };

    for cat in &r.per_category {
        let mut values = cat.iou_ap.clone();
        values.extend(cat.pose_acc.iter());
        let name = if cat.gt_count == 0 {
            format!("{}*", cat.category)
        } else {
            cat.category.clone()
        };
        row(&name, Some(cat.gt_count), Some(cat.pred_count), values);
    }
    let mut mean_values = r.mean_iou_ap.clone();
    mean_values.extend(r.mean_pose_acc.iter());
    row("mean", None, None, mean_values);

    if r.per_category.iter().any(|c| c.gt_count == 0) {
        out.push_str("* no ground-truth instances; excluded from the mean\n");
    }
    out
}
