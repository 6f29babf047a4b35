//! Command implementations. Every command is deterministic given its inputs,
//! config, and seed; machine-readable outputs are byte-identical across
//! repeated runs and thread counts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use pose9d::error::{Error, Result};
use pose9d::geometry::{matrix_to_rot6d, project_center_clamped};
use pose9d::losses::{total_loss, InstanceTarget, LossBreakdown, QueryPrediction};
use pose9d::matching::{
    build_cost_matrix, pairwise_cost_breakdown, solve_assignment, CostBreakdown, GtLabel,
    MatchCandidate,
};
use pose9d::metrics::{evaluate_scene_set, format_report, EvalResult};
use pose9d::scene::{derive_boxes, parse_scenes, serialize_scenes, SceneRecord};
use pose9d::synth::generate_synthetic;
use pose9d::SymmetrySpec;

use crate::config::RunConfig;

fn load_scenes(path: &Path) -> Result<Vec<SceneRecord>> {
    let file = File::open(path)?;
    parse_scenes(BufReader::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    let text = serde_json::to_string(value).map_err(|e| Error::Schema {
        line: 0,
        message: e.to_string(),
    })?;
    writer.write_all(text.as_bytes())?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Human-readable output sink. A consumer closing the pipe early (e.g.
/// `pose9d match ... | head`) stops the printing but not the command, so
/// `--out` reports are still written.
struct HumanOut {
    out: std::io::Stdout,
    closed: bool,
}

impl HumanOut {
    fn new() -> Self {
        HumanOut {
            out: std::io::stdout(),
            closed: false,
        }
    }

    fn write(&mut self, text: std::fmt::Arguments) {
        if !self.closed && self.out.write_fmt(text).is_err() {
            self.closed = true;
        }
    }
}

macro_rules! human {
    ($sink:expr, $($arg:tt)*) => {
        $sink.write(format_args!($($arg)*))
    };
}

/// Order-preserving per-scene map, parallel when the feature is enabled.
fn map_scenes<U: Send, F: Fn(usize) -> U + Sync + Send>(n: usize, f: F) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    config: &'a RunConfig,
    result: &'a EvalResult,
}

pub fn cmd_evaluate(config: &RunConfig, scenes_path: &Path, out: Option<&Path>) -> Result<()> {
    let scenes = load_scenes(scenes_path)?;
    let result = evaluate_scene_set(&scenes, &config.eval_config())?;
    let mut stdout = HumanOut::new();
    human!(stdout, "{}", format_report(&result));
    human!(
        stdout,
        "scenes: {}  ground truths: {}  predictions: {}\n",
        scenes.len(),
        result.total_gt,
        result.total_predictions
    );
    if let Some(path) = out {
        write_json(path, &EvaluateReport {
            config,
            result: &result,
        })?;
    }
    Ok(())
}

/// Per-category class probabilities a bare (category, confidence) prediction
/// implies: the predicted class carries the confidence, the rest zero.
fn class_probs(cat_index: &BTreeMap<&str, usize>, category: &str, confidence: f64) -> Vec<f64> {
    let mut probs = vec![0.0; cat_index.len()];
    probs[cat_index[category]] = confidence;
    probs
}

fn category_index(config: &RunConfig) -> BTreeMap<&str, usize> {
    config
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect()
}

fn check_known_categories(
    cat_index: &BTreeMap<&str, usize>,
    scenes: &[SceneRecord],
) -> Result<()> {
    for scene in scenes {
        for gt in &scene.gts {
            if !cat_index.contains_key(gt.category.as_str()) {
                return Err(Error::Invariant {
                    context: format!("scene {}", scene.scene_id),
                    message: format!("unknown category {:?}", gt.category),
                });
            }
        }
        for pred in &scene.preds {
            if !cat_index.contains_key(pred.category.as_str()) {
                return Err(Error::Invariant {
                    context: format!("scene {}", scene.scene_id),
                    message: format!("unknown category {:?}", pred.category),
                });
            }
        }
    }
    Ok(())
}

fn derive_missing_boxes(scenes: &mut [SceneRecord], overwrite: bool) -> Result<()> {
    let failures = derive_boxes(scenes, overwrite);
    if let Some(f) = failures.first() {
        return Err(Error::Invariant {
            context: format!("scene {}, {}", f.scene_id, f.instance),
            message: format!("cannot derive 2D box: {}", f.error),
        });
    }
    Ok(())
}

fn require_box(
    bbox: Option<pose9d::BBox2D>,
    scene_id: &str,
    what: &str,
) -> Result<pose9d::BBox2D> {
    bbox.ok_or_else(|| Error::Invariant {
        context: format!("scene {scene_id}, {what}"),
        message: "missing 2D box".into(),
    })
}

#[derive(Serialize)]
struct PairDump {
    pred: usize,
    gt: usize,
    terms: CostBreakdown,
}

#[derive(Serialize)]
struct SceneMatchDump {
    scene_id: String,
    pairs: Vec<PairDump>,
    unmatched_predictions: Vec<usize>,
    total_cost: f64,
}

#[derive(Serialize)]
struct MatchReport<'a> {
    config: &'a RunConfig,
    scenes: Vec<SceneMatchDump>,
}

fn scene_match_dump(config: &RunConfig, scene: &SceneRecord) -> Result<SceneMatchDump> {
    let cat_index = category_index(config);
    let preds: Vec<MatchCandidate> = scene
        .preds
        .iter()
        .map(|p| {
            Ok(MatchCandidate {
                class_probs: class_probs(&cat_index, &p.category, p.confidence),
                bbox: require_box(p.bbox, &scene.scene_id, "prediction")?,
                pose: p.pose,
            })
        })
        .collect::<Result<_>>()?;
    let gts: Vec<GtLabel> = scene
        .gts
        .iter()
        .map(|g| {
            Ok(GtLabel {
                class_index: cat_index[g.category.as_str()],
                bbox: require_box(g.bbox, &scene.scene_id, "ground truth")?,
                pose: g.pose,
            })
        })
        .collect::<Result<_>>()?;
    let syms: Vec<SymmetrySpec> = scene
        .gts
        .iter()
        .map(|g| config.symmetry_for(&g.category))
        .collect();

    let cost = build_cost_matrix(&preds, &gts, &config.cost_weights, &syms)?;
    let assignment = solve_assignment(&cost)?;
    let pairs: Vec<PairDump> = assignment
        .pairs
        .iter()
        .map(|&(pi, gi)| PairDump {
            pred: pi,
            gt: gi,
            terms: pairwise_cost_breakdown(&preds[pi], &gts[gi], &config.cost_weights, &syms[gi]),
        })
        .collect();
    let total_cost = pairs.iter().map(|p| p.terms.total).sum();
    Ok(SceneMatchDump {
        scene_id: scene.scene_id.clone(),
        pairs,
        unmatched_predictions: assignment.unmatched_predictions,
        total_cost,
    })
}

pub fn cmd_match(
    config: &RunConfig,
    scenes_path: &Path,
    out: Option<&Path>,
    overwrite_boxes: bool,
) -> Result<()> {
    let mut scenes = load_scenes(scenes_path)?;
    let cat_index = category_index(config);
    check_known_categories(&cat_index, &scenes)?;
    derive_missing_boxes(&mut scenes, overwrite_boxes)?;

    let dumps: Vec<Result<SceneMatchDump>> =
        map_scenes(scenes.len(), |i| scene_match_dump(config, &scenes[i]));
    let mut report = MatchReport {
        config,
        scenes: Vec::with_capacity(dumps.len()),
    };
    for dump in dumps {
        report.scenes.push(dump?);
    }

    let mut stdout = HumanOut::new();
    for scene in &report.scenes {
        human!(
            stdout,
            "{}: {} pairs, {} unmatched, total cost {:.6}\n",
            scene.scene_id,
            scene.pairs.len(),
            scene.unmatched_predictions.len(),
            scene.total_cost
        );
        for p in &scene.pairs {
            human!(
                stdout,
                "  pred {:>3} -> gt {:>3}  total {:>10.6}  cls {:>9.6}  bbox {:>9.6}  iou {:>9.6}  trans {:>9.6}  rot {:>9.6}\n",
                p.pred, p.gt, p.terms.total, p.terms.cls, p.terms.bbox, p.terms.iou,
                p.terms.trans, p.terms.rot
            );
        }
    }
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}

pub fn cmd_synth(
    config: &RunConfig,
    count: usize,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<()> {
    let mut noise = config.synth.noise;
    if let Some(seed) = seed_override {
        noise.seed = seed;
    }
    let scenes = generate_synthetic(
        count,
        config.synth.objects_min,
        config.synth.objects_max,
        &config.synth.camera,
        &config.categories,
        &noise,
    )?;
    let file = File::create(out)?;
    serialize_scenes(&scenes, BufWriter::new(file))?;
    human!(
        HumanOut::new(),
        "wrote {} scenes to {}\n",
        scenes.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SceneLossDump {
    scene_id: String,
    breakdown: LossBreakdown,
}

#[derive(Serialize)]
struct LossReport<'a> {
    config: &'a RunConfig,
    scenes: Vec<SceneLossDump>,
    /// Plain per-field sums over the per-scene breakdowns.
    aggregate: LossBreakdown,
}

fn scene_loss_dump(config: &RunConfig, scene: &SceneRecord) -> Result<SceneLossDump> {
    let cat_index = category_index(config);
    let preds: Vec<QueryPrediction> = scene
        .preds
        .iter()
        .map(|p| {
            let (center, depth) = project_center_clamped(&p.pose.translation, &scene.intrinsics)?;
            Ok(QueryPrediction {
                class_probs: class_probs(&cat_index, &p.category, p.confidence),
                bbox: require_box(p.bbox, &scene.scene_id, "prediction")?,
                center: [center.x(), center.y()],
                depth,
                rot6d: matrix_to_rot6d(&p.pose.rotation),
                scale: p.pose.scale,
            })
        })
        .collect::<Result<_>>()?;
    let targets: Vec<InstanceTarget> = scene
        .gts
        .iter()
        .map(|g| {
            let (center, depth) = project_center_clamped(&g.pose.translation, &scene.intrinsics)?;
            Ok(InstanceTarget {
                class_index: cat_index[g.category.as_str()],
                bbox: require_box(g.bbox, &scene.scene_id, "ground truth")?,
                center: [center.x(), center.y()],
                depth,
                rotation: g.pose.rotation,
                scale: g.pose.scale,
            })
        })
        .collect::<Result<_>>()?;
    // Matching runs on the full original poses.
    let candidates: Vec<MatchCandidate> = scene
        .preds
        .iter()
        .zip(preds.iter())
        .map(|(p, q)| MatchCandidate {
            class_probs: q.class_probs.clone(),
            bbox: q.bbox,
            pose: p.pose,
        })
        .collect();
    let labels: Vec<GtLabel> = scene
        .gts
        .iter()
        .zip(targets.iter())
        .map(|(g, t)| GtLabel {
            class_index: t.class_index,
            bbox: t.bbox,
            pose: g.pose,
        })
        .collect();
    let syms: Vec<SymmetrySpec> = scene
        .gts
        .iter()
        .map(|g| config.symmetry_for(&g.category))
        .collect();
    let cost = build_cost_matrix(&candidates, &labels, &config.cost_weights, &syms)?;
    let assignment = solve_assignment(&cost)?;
    let breakdown = total_loss(
        &preds,
        &targets,
        &assignment,
        &config.loss_weights,
        config.loss_symmetry_aware.then_some(syms.as_slice()),
    )?;
    Ok(SceneLossDump {
        scene_id: scene.scene_id.clone(),
        breakdown,
    })
}

pub fn cmd_losses(
    config: &RunConfig,
    scenes_path: &Path,
    out: Option<&Path>,
    overwrite_boxes: bool,
) -> Result<()> {
    let mut scenes = load_scenes(scenes_path)?;
    let cat_index = category_index(config);
    check_known_categories(&cat_index, &scenes)?;
    derive_missing_boxes(&mut scenes, overwrite_boxes)?;

    // Scenes without ground truth carry no supervisable pairs.
    let eligible: Vec<&SceneRecord> = scenes.iter().filter(|s| !s.gts.is_empty()).collect();
    if eligible.is_empty() {
        return Err(Error::EmptyAssignment);
    }
    let dumps: Vec<Result<SceneLossDump>> =
        map_scenes(eligible.len(), |i| scene_loss_dump(config, eligible[i]));
    let mut scene_dumps = Vec::with_capacity(dumps.len());
    for dump in dumps {
        scene_dumps.push(dump?);
    }

    let mut aggregate = LossBreakdown {
        cls: 0.0,
        bbox: 0.0,
        iou: 0.0,
        center2d: 0.0,
        depth: 0.0,
        rot: 0.0,
        scale: 0.0,
        total: 0.0,
        pair_count: 0,
    };
    for d in &scene_dumps {
        aggregate.cls += d.breakdown.cls;
        aggregate.bbox += d.breakdown.bbox;
        aggregate.iou += d.breakdown.iou;
        aggregate.center2d += d.breakdown.center2d;
        aggregate.depth += d.breakdown.depth;
        aggregate.rot += d.breakdown.rot;
        aggregate.scale += d.breakdown.scale;
        aggregate.total += d.breakdown.total;
        aggregate.pair_count += d.breakdown.pair_count;
    }

    let mut stdout = HumanOut::new();
    for d in &scene_dumps {
        let b = &d.breakdown;
        human!(
            stdout,
            "{}: total {:.6} (cls {:.6} bbox {:.6} iou {:.6} center {:.6} depth {:.6} rot {:.6} scale {:.6}, {} pairs)\n",
            d.scene_id, b.total, b.cls, b.bbox, b.iou, b.center2d, b.depth, b.rot, b.scale,
            b.pair_count
        );
    }
    let b = &aggregate;
    human!(
        stdout,
        "aggregate over {} scenes: total {:.6} (cls {:.6} bbox {:.6} iou {:.6} center {:.6} depth {:.6} rot {:.6} scale {:.6}, {} pairs)\n",
        scene_dumps.len(), b.total, b.cls, b.bbox, b.iou, b.center2d, b.depth, b.rot, b.scale,
        b.pair_count
    );

    if let Some(path) = out {
        write_json(path, &LossReport {
            config,
            scenes: scene_dumps,
            aggregate,
        })?;
    }
    Ok(())
}
