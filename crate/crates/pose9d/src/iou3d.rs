//! Exact intersection-over-union between oriented 3D cuboids.
//!
//! The intersection volume comes from clipping one cuboid against the other's
//! six face half-spaces (Sutherland-Hodgman generalized to 3D), which is
//! deterministic and testable against the Monte-Carlo estimator below.

use nalgebra::{Matrix3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::geometry::{cuboid_corners, Pose9D, RotationMatrix, SymmetrySpec};
use crate::par;

/// Vertices closer than this to a clip plane are treated as lying on it.
const PLANE_EPS: f64 = 1e-12;

/// Crossing points closer than this are merged into one vertex.
const MERGE_EPS: f64 = 1e-9;

/// Half-space `{ x : normal · x <= offset }`.
#[derive(Debug, Clone, Copy)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

/// Convex polytope as a vertex pool plus outward-oriented face loops.
#[derive(Debug, Clone)]
pub struct ConvexPolytope {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<Vec<usize>>,
}

impl ConvexPolytope {
    pub fn empty() -> Self {
        ConvexPolytope {
            vertices: Vec::new(),
            faces: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// The oriented cuboid of a 9-DoF pose, with quad faces.
    pub fn cuboid(pose: &Pose9D) -> Self {
        let vertices = cuboid_corners(pose).to_vec();
        // Outward-oriented quads for the corner layout of `cuboid_corners`
        // (bit 0 -> +x, bit 1 -> +y, bit 2 -> +z).
        let faces = vec![
            vec![1, 3, 7, 5], // +x
            vec![0, 4, 6, 2], // -x
            vec![2, 6, 7, 3], // +y
            vec![0, 1, 5, 4], // -y
            vec![4, 5, 7, 6], // +z
            vec![0, 2, 3, 1], // -z
        ];
        ConvexPolytope { vertices, faces }
    }

    /// The six face half-spaces of an oriented cuboid.
    pub fn cuboid_halfspaces(pose: &Pose9D) -> [HalfSpace; 6] {
        let r = pose.rotation.matrix();
        let half = pose.scale / 2.0;
        let mut out = [HalfSpace {
            normal: Vector3::zeros(),
            offset: 0.0,
        }; 6];
        for axis in 0..3 {
            let dir = r.column(axis).into_owned();
            let h = half[axis];
            out[2 * axis] = HalfSpace {
                normal: dir,
                offset: dir.dot(&pose.translation) + h,
            };
            out[2 * axis + 1] = HalfSpace {
                normal: -dir,
                offset: -dir.dot(&pose.translation) + h,
            };
        }
        out
    }

    /// Largest signed distance of any vertex outside any face plane; a valid
    /// convex polytope keeps this below the tolerance.
    pub fn convexity_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for face in &self.faces {
            if face.len() < 3 {
                continue;
            }
            let a = self.vertices[face[0]];
            let b = self.vertices[face[1]];
            let c = self.vertices[face[2]];
            let n = (b - a).cross(&(c - a));
            let norm = n.norm();
            if norm <= PLANE_EPS {
                continue;
            }
            let n = n / norm;
            let d = n.dot(&a);
            for v in &self.vertices {
                worst = worst.max(n.dot(v) - d);
            }
        }
        worst
    }
}

/// Clip a convex polytope by a half-space, preserving convexity. The result
/// may be empty.
pub fn clip_polytope(p: &ConvexPolytope, half: &HalfSpace) -> ConvexPolytope {
    if p.is_empty() {
        return ConvexPolytope::empty();
    }
    let dist: Vec<f64> = p
        .vertices
        .iter()
        .map(|v| half.normal.dot(v) - half.offset)
        .collect();
    if dist.iter().all(|&d| d <= PLANE_EPS) {
        return p.clone();
    }
    if dist.iter().all(|&d| d >= -PLANE_EPS) {
        return ConvexPolytope::empty();
    }

    let mut vertices: Vec<Vector3<f64>> = Vec::with_capacity(p.vertices.len() + 8);
    let mut remap: Vec<Option<usize>> = vec![None; p.vertices.len()];
    let keep = |vertices: &mut Vec<Vector3<f64>>, remap: &mut Vec<Option<usize>>, i: usize| {
        *remap[i].get_or_insert_with(|| {
            vertices.push(p.vertices[i]);
            vertices.len() - 1
        })
    };
    // Crossing points are shared between the two faces adjacent to an edge;
    // merge within tolerance so the cap closes up.
    let mut cut_points: Vec<usize> = Vec::new();
    let add_cut = |vertices: &mut Vec<Vector3<f64>>,
                   cut_points: &mut Vec<usize>,
                   point: Vector3<f64>| {
        for &idx in cut_points.iter() {
            if (vertices[idx] - point).norm() < MERGE_EPS {
                return idx;
            }
        }
        vertices.push(point);
        cut_points.push(vertices.len() - 1);
        vertices.len() - 1
    };

    let mut faces: Vec<Vec<usize>> = Vec::with_capacity(p.faces.len() + 1);
    for face in &p.faces {
        let mut out: Vec<usize> = Vec::with_capacity(face.len() + 2);
        let n = face.len();
        for k in 0..n {
            let a = face[k];
            let b = face[(k + 1) % n];
            let da = dist[a];
            let db = dist[b];
            let a_in = da <= PLANE_EPS;
            let b_in = db <= PLANE_EPS;
            match (a_in, b_in) {
                (true, true) => {
                    out.push(keep(&mut vertices, &mut remap, b));
                }
                (true, false) => {
                    let t = da / (da - db);
                    let point = p.vertices[a] + (p.vertices[b] - p.vertices[a]) * t;
                    out.push(add_cut(&mut vertices, &mut cut_points, point));
                }
                (false, true) => {
                    let t = da / (da - db);
                    let point = p.vertices[a] + (p.vertices[b] - p.vertices[a]) * t;
                    out.push(add_cut(&mut vertices, &mut cut_points, point));
                    out.push(keep(&mut vertices, &mut remap, b));
                }
                (false, false) => {}
            }
        }
        out.dedup();
        if out.len() >= 2 && out[0] == *out.last().unwrap() {
            out.pop();
        }
        if out.len() >= 3 {
            faces.push(out);
        }
    }

    // On-plane originals also bound the cap.
    for (i, &d) in dist.iter().enumerate() {
        if d.abs() <= PLANE_EPS {
            if let Some(idx) = remap[i] {
                if !cut_points.contains(&idx) {
                    cut_points.push(idx);
                }
            }
        }
    }

    if cut_points.len() >= 3 {
        faces.push(order_cap_face(&vertices, &cut_points, &half.normal));
    }

    ConvexPolytope { vertices, faces }
}

/// Order a coplanar vertex set counterclockwise around `normal` so the cap
/// face is outward-oriented.
fn order_cap_face(vertices: &[Vector3<f64>], cap: &[usize], normal: &Vector3<f64>) -> Vec<usize> {
    let n = normal.normalize();
    let centroid: Vector3<f64> =
        cap.iter().map(|&i| vertices[i]).sum::<Vector3<f64>>() / cap.len() as f64;
    let mut e1 = vertices[cap[0]] - centroid;
    e1 -= n * n.dot(&e1);
    if e1.norm() <= PLANE_EPS {
        e1 = if n.x.abs() < 0.9 {
            Vector3::x().cross(&n)
        } else {
            Vector3::y().cross(&n)
        };
    }
    let e1 = e1.normalize();
    let e2 = n.cross(&e1);
    let mut ordered: Vec<usize> = cap.to_vec();
    ordered.sort_by(|&a, &b| {
        let pa = vertices[a] - centroid;
        let pb = vertices[b] - centroid;
        let ta = pa.dot(&e2).atan2(pa.dot(&e1));
        let tb = pb.dot(&e2).atan2(pb.dot(&e1));
        ta.total_cmp(&tb)
    });
    ordered
}

/// Volume by signed tetrahedra fanned from the vertex centroid.
pub fn polytope_volume(p: &ConvexPolytope) -> f64 {
    if p.vertices.is_empty() || p.faces.is_empty() {
        return 0.0;
    }
    let centroid: Vector3<f64> =
        p.vertices.iter().sum::<Vector3<f64>>() / p.vertices.len() as f64;
    let mut vol = 0.0;
    for face in &p.faces {
        if face.len() < 3 {
            continue;
        }
        let v0 = p.vertices[face[0]] - centroid;
        for k in 1..face.len() - 1 {
            let v1 = p.vertices[face[k]] - centroid;
            let v2 = p.vertices[face[k + 1]] - centroid;
            vol += v0.dot(&v1.cross(&v2)) / 6.0;
        }
    }
    vol.max(0.0)
}

/// Axis-aligned bounds of a cuboid's corners.
fn cuboid_aabb(pose: &Pose9D) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for c in cuboid_corners(pose) {
        lo = lo.inf(&c);
        hi = hi.sup(&c);
    }
    (lo, hi)
}

/// Exact IoU between two oriented cuboids, in [0, 1].
pub fn iou_3d(a: &Pose9D, b: &Pose9D) -> f64 {
    let vol_a = a.volume();
    let vol_b = b.volume();
    if vol_a <= 0.0 || vol_b <= 0.0 {
        return 0.0;
    }
    let (alo, ahi) = cuboid_aabb(a);
    let (blo, bhi) = cuboid_aabb(b);
    if alo.x > bhi.x || blo.x > ahi.x || alo.y > bhi.y || blo.y > ahi.y || alo.z > bhi.z
        || blo.z > ahi.z
    {
        return 0.0;
    }

    let mut inter = ConvexPolytope::cuboid(a);
    for half in ConvexPolytope::cuboid_halfspaces(b) {
        inter = clip_polytope(&inter, &half);
        if inter.is_empty() {
            return 0.0;
        }
    }
    let vol_i = polytope_volume(&inter).min(vol_a).min(vol_b);
    let union = vol_a + vol_b - vol_i;
    if union <= 0.0 {
        return 0.0;
    }
    (vol_i / union).clamp(0.0, 1.0)
}

/// IoU modulo a continuous rotational symmetry, maximized over `steps`
/// discretized rotations of `b` about its own symmetry axis. Other symmetry
/// kinds fall back to [`iou_3d`].
pub fn iou_3d_symmetric(a: &Pose9D, b: &Pose9D, sym: &SymmetrySpec, steps: usize) -> f64 {
    match sym {
        SymmetrySpec::Continuous { .. } => {
            let axis = sym.unit_axis().expect("continuous symmetry has an axis");
            let mut best: f64 = 0.0;
            for k in 0..steps.max(1) {
                let angle = std::f64::consts::TAU * k as f64 / steps.max(1) as f64;
                let spin = RotationMatrix::from_axis_angle(&axis, angle)
                    .expect("unit axis is non-degenerate");
                let spun = Pose9D {
                    rotation: b.rotation.compose(&spin),
                    translation: b.translation,
                    scale: b.scale,
                };
                best = best.max(iou_3d(a, &spun));
                if best >= 1.0 {
                    break;
                }
            }
            best
        }
        _ => iou_3d(a, b),
    }
}

/// Monte-Carlo IoU estimate: rejection sampling inside the union's
/// axis-aligned bound. Deterministic given `seed` and independent of thread
/// count (fixed per-block sub-seeds).
pub fn iou_3d_monte_carlo(a: &Pose9D, b: &Pose9D, samples: usize, seed: u64) -> f64 {
    assert!(samples >= 10_000, "estimator needs at least 1e4 samples");
    let (alo, ahi) = cuboid_aabb(a);
    let (blo, bhi) = cuboid_aabb(b);
    let lo = alo.inf(&blo);
    let hi = ahi.sup(&bhi);
    let extent = hi - lo;

    let in_a = point_in_cuboid_fn(a);
    let in_b = point_in_cuboid_fn(b);

    const BLOCK: usize = 1 << 16;
    let blocks = samples.div_ceil(BLOCK);
    let counts = par::map_range(blocks, |bi| {
        let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(bi as u64));
        let n = BLOCK.min(samples - bi * BLOCK);
        let mut both = 0u64;
        let mut either = 0u64;
        for _ in 0..n {
            let p = Vector3::new(
                lo.x + extent.x * rng.random::<f64>(),
                lo.y + extent.y * rng.random::<f64>(),
                lo.z + extent.z * rng.random::<f64>(),
            );
            let ia = in_a(&p);
            let ib = in_b(&p);
            if ia && ib {
                both += 1;
            }
            if ia || ib {
                either += 1;
            }
        }
        (both, either)
    });
    let (both, either) = counts
        .into_iter()
        .fold((0u64, 0u64), |(s1, s2), (a, b)| (s1 + a, s2 + b));
    if either == 0 {
        return 0.0;
    }
    both as f64 / either as f64
}

fn point_in_cuboid_fn(pose: &Pose9D) -> impl Fn(&Vector3<f64>) -> bool {
    let rt: Matrix3<f64> = pose.rotation.matrix().transpose();
    let t = pose.translation;
    let half = pose.scale / 2.0;
    move |p: &Vector3<f64>| {
        let local = rt * (p - t);
        local.x.abs() <= half.x && local.y.abs() <= half.y && local.z.abs() <= half.z
    }
}
