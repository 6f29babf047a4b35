//! Composite 2D+3D matching costs and one-to-one bipartite assignment.
//!
//! The cost couples the usual detection terms (classification, box L1,
//! negative generalized IoU) with 3D translation and rotation distances so
//! that assignment is pose-aware. The solver is verified against an
//! exhaustive oracle.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    giou_2d, symmetry_aware_rot_distance, BBox2D, Pose9D, SymmetrySpec,
};
use crate::losses::{focal_classification_cost, PROB_CLAMP};
use crate::par;

/// Weights of the composite matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub lambda_cls: f64,
    pub lambda_bbox: f64,
    pub lambda_iou: f64,
    pub lambda_trans: f64,
    pub lambda_rot: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            lambda_cls: 2.0,
            lambda_bbox: 5.0,
            lambda_iou: 2.0,
            lambda_trans: 5.0,
            lambda_rot: 2.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_cls,
            self.lambda_bbox,
            self.lambda_iou,
            self.lambda_trans,
            self.lambda_rot,
        ];
        if all.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::invariant(
                "cost_weights",
                "weights must be finite and non-negative",
            ));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::invariant(
                "cost_weights",
                "at least one weight must be positive",
            ));
        }
        Ok(())
    }
}

/// A prediction entering the matcher.
#[derive(Debug, Clone)]
pub struct MatchCandidate {
    pub class_probs: Vec<f64>,
    pub bbox: BBox2D,
    pub pose: Pose9D,
}

/// A labeled ground-truth instance.
#[derive(Debug, Clone)]
pub struct GtLabel {
    pub class_index: usize,
    pub bbox: BBox2D,
    pub pose: Pose9D,
}

/// One-to-one assignment: every ground truth matched, surplus predictions
/// listed as unmatched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// (prediction index, ground-truth index) pairs, sorted by ground truth.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predictions: Vec<usize>,
}

impl Assignment {
    fn from_gt_to_pred(gt_to_pred: &[usize], n_preds: usize) -> Self {
        let pairs: Vec<(usize, usize)> = gt_to_pred
            .iter()
            .enumerate()
            .map(|(gt, &pred)| (pred, gt))
            .collect();
        let mut matched = vec![false; n_preds];
        for &(p, _) in &pairs {
            matched[p] = true;
        }
        let unmatched_predictions = (0..n_preds).filter(|&p| !matched[p]).collect();
        Assignment {
            pairs,
            unmatched_predictions,
        }
    }
}

/// Per-term breakdown of one pairwise cost.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostBreakdown {
    pub cls: f64,
    pub bbox: f64,
    pub iou: f64,
    pub trans: f64,
    pub rot: f64,
    pub total: f64,
}

/// Composite matching cost between one prediction and one ground truth.
pub fn pairwise_cost(
    pred: &MatchCandidate,
    gt: &GtLabel,
    w: &CostWeights,
    sym: &SymmetrySpec,
) -> f64 {
    pairwise_cost_breakdown(pred, gt, w, sym).total
}

pub fn pairwise_cost_breakdown(
    pred: &MatchCandidate,
    gt: &GtLabel,
    w: &CostWeights,
    sym: &SymmetrySpec,
) -> CostBreakdown {
    let p = pred
        .class_probs
        .get(gt.class_index)
        .copied()
        .unwrap_or(PROB_CLAMP);
    let cls = focal_classification_cost(p);
    let bbox = pred
        .bbox
        .params()
        .iter()
        .zip(gt.bbox.params().iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>();
    let iou = -giou_2d(&pred.bbox, &gt.bbox);
    let trans = (pred.pose.translation - gt.pose.translation).norm();
    let rot = symmetry_aware_rot_distance(&pred.pose.rotation, &gt.pose.rotation, sym);
    let total = w.lambda_cls * cls
        + w.lambda_bbox * bbox
        + w.lambda_iou * iou
        + w.lambda_trans * trans
        + w.lambda_rot * rot;
    CostBreakdown {
        cls,
        bbox,
        iou,
        trans,
        rot,
        total,
    }
}

/// Full #preds x #gts cost matrix. `syms` carries the per-ground-truth
/// symmetry (one entry per ground truth).
pub fn build_cost_matrix(
    preds: &[MatchCandidate],
    gts: &[GtLabel],
    w: &CostWeights,
    syms: &[SymmetrySpec],
) -> Result<DMatrix<f64>> {
    if syms.len() != gts.len() {
        return Err(Error::DimensionMismatch {
            expected: gts.len(),
            actual: syms.len(),
        });
    }
    let rows = par::map_range(preds.len(), |i| {
        gts.iter()
            .zip(syms.iter())
            .map(|(gt, sym)| pairwise_cost(&preds[i], gt, w, sym))
            .collect::<Vec<f64>>()
    });
    let mut m = DMatrix::zeros(preds.len(), gts.len());
    for (i, row) in rows.into_iter().enumerate() {
        for (j, c) in row.into_iter().enumerate() {
            m[(i, j)] = c;
        }
    }
    Ok(m)
}

fn check_feasible(cost: &DMatrix<f64>) -> Result<()> {
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InfeasibleMatrix("non-finite entry".into()));
    }
    if cost.nrows() < cost.ncols() {
        return Err(Error::InfeasibleMatrix(format!(
            "{} predictions cannot cover {} ground truths",
            cost.nrows(),
            cost.ncols()
        )));
    }
    Ok(())
}

/// Globally optimal one-to-one assignment covering every column, by the
/// O(n^2 m) shortest-augmenting-path Hungarian algorithm with potentials.
///
/// Ties may resolve to any cost-minimal assignment.
pub fn solve_assignment(cost: &DMatrix<f64>) -> Result<Assignment> {
    check_feasible(cost)?;
    let n = cost.ncols(); // ground truths, the small side
    let m = cost.nrows(); // predictions
    if n == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_predictions: (0..m).collect(),
        });
    }

    // 1-based potentials; p[j] = column currently assigned to row j, 0 = free.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for col in 1..=n {
        p[0] = col;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(j - 1, i0 - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut gt_to_pred = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            gt_to_pred[p[j] - 1] = j - 1;
        }
    }
    debug_assert!(gt_to_pred.iter().all(|&x| x != usize::MAX));
    Ok(Assignment::from_gt_to_pred(&gt_to_pred, m))
}

/// Hard cap on the exhaustive oracle's column count.
pub const BRUTE_FORCE_MAX_COLS: usize = 8;

/// Exact global minimum by enumerating all injections of columns into rows.
/// Verification oracle; factorial in the column count.
pub fn brute_force_assignment(cost: &DMatrix<f64>) -> Result<Assignment> {
    check_feasible(cost)?;
    let n = cost.ncols();
    let m = cost.nrows();
    if n > BRUTE_FORCE_MAX_COLS {
        return Err(Error::TooLarge {
            got: n,
            max: BRUTE_FORCE_MAX_COLS,
        });
    }
    if n == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_predictions: (0..m).collect(),
        });
    }

    let mut best_total = f64::INFINITY;
    let mut best: Vec<usize> = Vec::new();
    let mut current = vec![usize::MAX; n];
    let mut used = vec![false; m];

    fn recurse(
        cost: &DMatrix<f64>,
        col: usize,
        running: f64,
        current: &mut Vec<usize>,
        used: &mut Vec<bool>,
        best_total: &mut f64,
        best: &mut Vec<usize>,
    ) {
        let n = cost.ncols();
        if col == n {
            if running < *best_total {
                *best_total = running;
                *best = current.clone();
            }
            return;
        }
        for row in 0..cost.nrows() {
            if used[row] {
                continue;
            }
            used[row] = true;
            current[col] = row;
            recurse(
                cost,
                col + 1,
                running + cost[(row, col)],
                current,
                used,
                best_total,
                best,
            );
            used[row] = false;
        }
    }

    recurse(
        cost,
        0,
        0.0,
        &mut current,
        &mut used,
        &mut best_total,
        &mut best,
    );
    Ok(Assignment::from_gt_to_pred(&best, m))
}

/// Total cost of an assignment, summed in ground-truth order.
pub fn assignment_cost(cost: &DMatrix<f64>, assignment: &Assignment) -> f64 {
    let mut pairs = assignment.pairs.clone();
    pairs.sort_by_key(|&(_, gt)| gt);
    pairs.iter().map(|&(p, g)| cost[(p, g)]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationMatrix;
    use nalgebra::{dmatrix, Vector3};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn candidate(probs: Vec<f64>, bbox: BBox2D, pose: Pose9D) -> MatchCandidate {
        MatchCandidate {
            class_probs: probs,
            bbox,
            pose,
        }
    }

    fn simple_pose(t: Vector3<f64>) -> Pose9D {
        Pose9D::new(RotationMatrix::identity(), t, Vector3::new(0.2, 0.2, 0.2)).unwrap()
    }

    #[test]
    fn perfect_match_cost() {
        let bbox = BBox2D::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let pose = simple_pose(Vector3::new(0.0, 0.0, 2.0));
        let pred = candidate(vec![1.0], bbox, pose);
        let gt = GtLabel {
            class_index: 0,
            bbox,
            pose,
        };
        let w = CostWeights::default();
        let b = pairwise_cost_breakdown(&pred, &gt, &w, &SymmetrySpec::None);
        assert_eq!(b.bbox, 0.0);
        assert_eq!(b.trans, 0.0);
        assert_eq!(b.rot, 0.0);
        assert!((b.iou + 1.0).abs() < 1e-12);
        assert!((b.cls - focal_classification_cost(1.0)).abs() < 1e-12);
        let expected = w.lambda_cls * focal_classification_cost(1.0) - w.lambda_iou;
        assert!((b.total - expected).abs() < 1e-12);
    }

    #[test]
    fn translation_term_isolated() {
        let bbox = BBox2D::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let pred = candidate(vec![0.5], bbox, simple_pose(Vector3::new(0.0, 0.0, 2.0)));
        let gt = GtLabel {
            class_index: 0,
            bbox,
            pose: simple_pose(Vector3::new(0.3, 0.0, 2.0)),
        };
        let w = CostWeights {
            lambda_cls: 0.0,
            lambda_bbox: 0.0,
            lambda_iou: 0.0,
            lambda_trans: 1.0,
            lambda_rot: 0.0,
        };
        let c = pairwise_cost(&pred, &gt, &w, &SymmetrySpec::None);
        assert!((c - 0.3).abs() < 1e-12);
    }

    #[test]
    fn disjoint_boxes_giou_range() {
        let pose = simple_pose(Vector3::new(0.0, 0.0, 2.0));
        let pred = candidate(
            vec![0.5],
            BBox2D::new(0.1, 0.1, 0.1, 0.1).unwrap(),
            pose,
        );
        let gt = GtLabel {
            class_index: 0,
            bbox: BBox2D::new(0.9, 0.9, 0.1, 0.1).unwrap(),
            pose,
        };
        let w = CostWeights {
            lambda_cls: 0.0,
            lambda_bbox: 0.0,
            lambda_iou: 1.0,
            lambda_trans: 0.0,
            lambda_rot: 0.0,
        };
        let c = pairwise_cost(&pred, &gt, &w, &SymmetrySpec::None);
        assert!(c > -1.0 && c <= 1.0);
        assert!(c > 0.0, "disjoint boxes should have positive -GIoU cost");
    }

    #[test]
    fn cost_matrix_permutation_functoriality() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let bbox = |rng: &mut ChaCha12Rng| {
            BBox2D::new(
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.05..0.3),
                rng.random_range(0.05..0.3),
            )
            .unwrap()
        };
        let preds: Vec<MatchCandidate> = (0..5)
            .map(|_| {
                candidate(
                    vec![rng.random::<f64>(), rng.random::<f64>()],
                    bbox(&mut rng),
                    simple_pose(Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(1.0..3.0),
                    )),
                )
            })
            .collect();
        let gts: Vec<GtLabel> = (0..3)
            .map(|k| GtLabel {
                class_index: k % 2,
                bbox: bbox(&mut rng),
                pose: simple_pose(Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(1.0..3.0),
                )),
            })
            .collect();
        let syms = vec![SymmetrySpec::None; 3];
        let w = CostWeights::default();
        let m = build_cost_matrix(&preds, &gts, &w, &syms).unwrap();

        // Entry-by-entry recomputation.
        for i in 0..5 {
            for j in 0..3 {
                assert_eq!(m[(i, j)], pairwise_cost(&preds[i], &gts[j], &w, &syms[j]));
            }
        }

        // Permuting ground truths permutes columns.
        let perm = [2usize, 0, 1];
        let gts_p: Vec<GtLabel> = perm.iter().map(|&j| gts[j].clone()).collect();
        let mp = build_cost_matrix(&preds, &gts_p, &w, &syms).unwrap();
        for i in 0..5 {
            for (jp, &j) in perm.iter().enumerate() {
                assert_eq!(mp[(i, jp)], m[(i, j)]);
            }
        }
    }

    #[test]
    fn solver_trivial_cases() {
        let cost = dmatrix![0.0, 1.0; 1.0, 0.0];
        let a = solve_assignment(&cost).unwrap();
        assert_eq!(assignment_cost(&cost, &a), 0.0);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!(a.unmatched_predictions.is_empty());

        let cost = dmatrix![1.0, 2.0; 2.0, 1.0; 5.0, 5.0];
        let a = solve_assignment(&cost).unwrap();
        assert_eq!(assignment_cost(&cost, &a), 2.0);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.unmatched_predictions, vec![2]);
    }

    #[test]
    fn solver_rejects_bad_matrices() {
        let cost = dmatrix![1.0, f64::NAN; 1.0, 2.0];
        assert!(matches!(
            solve_assignment(&cost),
            Err(Error::InfeasibleMatrix(_))
        ));
        let wide = dmatrix![1.0, 2.0, 3.0];
        assert!(matches!(
            solve_assignment(&DMatrix::from_row_slice(1, 3, wide.as_slice())),
            Err(Error::InfeasibleMatrix(_))
        ));
    }

    #[test]
    fn brute_force_guard_and_base_cases() {
        let cost = DMatrix::from_element(9, 9, 1.0);
        assert!(matches!(
            brute_force_assignment(&cost),
            Err(Error::TooLarge { .. })
        ));

        let single = dmatrix![3.5];
        let a = brute_force_assignment(&single).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);

        // Unique minimum per column without conflicts: greedy column minima.
        let cost = dmatrix![0.1, 5.0, 5.0; 5.0, 0.2, 5.0; 5.0, 5.0, 0.3];
        let a = brute_force_assignment(&cost).unwrap();
        assert_eq!(assignment_cost(&cost, &a), 0.1 + 0.2 + 0.3);
    }

    #[test]
    fn solver_matches_oracle_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(97);
        for _ in 0..1000 {
            let rows = rng.random_range(1..=8usize);
            let cols = rng.random_range(1..=rows);
            let cost = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..10.0));
            let fast = solve_assignment(&cost).unwrap();
            let slow = brute_force_assignment(&cost).unwrap();
            assert_eq!(
                assignment_cost(&cost, &fast),
                assignment_cost(&cost, &slow),
                "optimality mismatch on {rows}x{cols}"
            );
        }
    }

    #[test]
    fn solver_matches_oracle_on_wide_matrices() {
        // Wide rectangles (many predictions, few ground truths) are the
        // shape the detection workload actually produces.
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let shapes = [(12usize, 5usize), (30, 3), (100, 2), (50, 4)];
        for &(rows, cols) in &shapes {
            for _ in 0..20 {
                let cost = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..10.0));
                let fast = solve_assignment(&cost).unwrap();
                let slow = brute_force_assignment(&cost).unwrap();
                assert_eq!(
                    assignment_cost(&cost, &fast),
                    assignment_cost(&cost, &slow),
                    "{rows}x{cols}"
                );
                assert_eq!(fast.pairs.len(), cols);
                assert_eq!(fast.unmatched_predictions.len(), rows - cols);
            }
        }
    }

    #[test]
    fn constant_shift_leaves_argmin_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        for _ in 0..200 {
            let rows = rng.random_range(2..=7usize);
            let cols = rng.random_range(1..=rows);
            let cost = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..10.0));
            let shift = rng.random_range(-5.0..5.0);
            let shifted = cost.map(|c| c + shift);
            let a = solve_assignment(&cost).unwrap();
            let b = solve_assignment(&shifted).unwrap();
            let delta = assignment_cost(&shifted, &b) - assignment_cost(&cost, &a);
            assert!((delta - shift * cols as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_weight_scaling_preserves_assignment() {
        let mut rng = ChaCha12Rng::seed_from_u64(103);
        let bbox = |rng: &mut ChaCha12Rng| {
            BBox2D::new(
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.05..0.3),
                rng.random_range(0.05..0.3),
            )
            .unwrap()
        };
        for _ in 0..50 {
            let preds: Vec<MatchCandidate> = (0..6)
                .map(|_| {
                    candidate(
                        vec![rng.random::<f64>().clamp(0.01, 0.99)],
                        bbox(&mut rng),
                        simple_pose(Vector3::new(
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(1.0..3.0),
                        )),
                    )
                })
                .collect();
            let gts: Vec<GtLabel> = (0..4)
                .map(|_| GtLabel {
                    class_index: 0,
                    bbox: bbox(&mut rng),
                    pose: simple_pose(Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(1.0..3.0),
                    )),
                })
                .collect();
            let syms = vec![SymmetrySpec::None; gts.len()];
            let w = CostWeights::default();
            let k = rng.random_range(0.5..4.0);
            let kw = CostWeights {
                lambda_cls: w.lambda_cls * k,
                lambda_bbox: w.lambda_bbox * k,
                lambda_iou: w.lambda_iou * k,
                lambda_trans: w.lambda_trans * k,
                lambda_rot: w.lambda_rot * k,
            };
            let m = build_cost_matrix(&preds, &gts, &w, &syms).unwrap();
            let mk = build_cost_matrix(&preds, &gts, &kw, &syms).unwrap();
            let a = solve_assignment(&m).unwrap();
            let ak = solve_assignment(&mk).unwrap();
            // Argmin invariance up to ties: compare totals cross-evaluated.
            let t = assignment_cost(&m, &a);
            let tk_on_base = assignment_cost(&m, &ak);
            assert!((t - tk_on_base).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_validation() {
        assert!(CostWeights::default().validate().is_ok());
        let zero = CostWeights {
            lambda_cls: 0.0,
            lambda_bbox: 0.0,
            lambda_iou: 0.0,
            lambda_trans: 0.0,
            lambda_rot: 0.0,
        };
        assert!(zero.validate().is_err());
        let negative = CostWeights {
            lambda_cls: -1.0,
            ..CostWeights::default()
        };
        assert!(negative.validate().is_err());
    }
}
