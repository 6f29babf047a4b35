//! 9-DoF pose data model, rotation parameterizations, and pinhole camera math.
//!
//! Everything here is a pure function over immutable values; angles are
//! radians internally and degrees only at report boundaries.

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the SO(3) membership check (orthonormality and determinant).
pub const ROTATION_TOL: f64 = 1e-9;

/// Minimum norm accepted by the Gram-Schmidt orthonormalization.
pub const DEGENERACY_EPS: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Proper rotation matrix, an element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Validates orthonormality (`‖RᵀR − I‖∞ < 1e-9`) and `det R = 1`.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho >= ROTATION_TOL {
            return Err(Error::invariant(
                "rotation",
                format!("columns not orthonormal (residual {ortho:.3e})"),
            ));
        }
        let det = m.determinant();
        if (det - 1.0).abs() >= ROTATION_TOL {
            return Err(Error::invariant(
                "rotation",
                format!("determinant {det} is not 1 (improper rotation)"),
            ));
        }
        Ok(RotationMatrix(m))
    }

    /// For products of already-validated rotations, where the invariant holds
    /// by construction.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        if axis.norm() <= DEGENERACY_EPS {
            return Err(Error::DegenerateInput("zero rotation axis".into()));
        }
        let m = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Ok(RotationMatrix(m.into_inner()))
    }

    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        RotationMatrix::new(Matrix3::new(
            v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8],
        ))
    }
}

/// Raw 6D rotation regression output: two unconstrained 3-vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D {
    pub a1: Vector3<f64>,
    pub a2: Vector3<f64>,
}

impl Rotation6D {
    pub fn new(a1: Vector3<f64>, a2: Vector3<f64>) -> Self {
        Rotation6D { a1, a2 }
    }

    pub fn from_array(v: &[f64; 6]) -> Self {
        Rotation6D {
            a1: Vector3::new(v[0], v[1], v[2]),
            a2: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.a1.x, self.a1.y, self.a1.z, self.a2.x, self.a2.y, self.a2.z,
        ]
    }
}

/// Full 9-DoF pose: rotation, translation (m), per-axis metric extent (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose9D {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
    pub scale: Vector3<f64>,
}

impl Pose9D {
    /// Scale components must be strictly positive (full extents, not halves).
    pub fn new(
        rotation: RotationMatrix,
        translation: Vector3<f64>,
        scale: Vector3<f64>,
    ) -> Result<Self> {
        if !(scale.x > 0.0 && scale.y > 0.0 && scale.z > 0.0) {
            return Err(Error::invariant(
                "pose.scale",
                format!("scale must be strictly positive, got {:?}", scale),
            ));
        }
        Ok(Pose9D {
            rotation,
            translation,
            scale,
        })
    }

    pub fn volume(&self) -> f64 {
        self.scale.x * self.scale.y * self.scale.z
    }
}

/// Pinhole camera intrinsics plus image dimensions, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let cam = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invariant(
                "intrinsics",
                format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy),
            ));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::invariant(
                "intrinsics",
                format!(
                    "image dimensions must be positive, got {}x{}",
                    self.width, self.height
                ),
            ));
        }
        Ok(())
    }
}

/// 2D bounding box in normalized center-size form, coordinates in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox2D {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox2D {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox2D { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cx) || !(0.0..=1.0).contains(&self.cy) {
            return Err(Error::invariant(
                "bbox",
                format!("center ({}, {}) outside [0,1]^2", self.cx, self.cy),
            ));
        }
        if !(self.w > 0.0 && self.w <= 1.0 && self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::invariant(
                "bbox",
                format!("size ({}, {}) outside (0,1]", self.w, self.h),
            ));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }

    pub fn params(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Normalized 2D image point in [0,1]^2 (the sigmoid range of a center head).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedCenter(pub Vector2<f64>);

impl NormalizedCenter {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::invariant(
                "center",
                format!("({x}, {y}) outside [0,1]^2"),
            ));
        }
        Ok(NormalizedCenter(Vector2::new(x, y)))
    }

    /// Construct by clamping into the valid range.
    pub fn clamped(x: f64, y: f64) -> Self {
        NormalizedCenter(Vector2::new(x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }
}

/// Per-category rotational symmetry declaration.
///
/// `Continuous` means invariance under any rotation about `axis` (object
/// frame); `DiscreteCyclic` under the cyclic group of `order` rotations
/// about `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SymmetrySpec {
    None,
    Continuous { axis: [f64; 3] },
    DiscreteCyclic { axis: [f64; 3], order: u32 },
}

impl SymmetrySpec {
    pub fn continuous_y() -> Self {
        SymmetrySpec::Continuous {
            axis: [0.0, 1.0, 0.0],
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, SymmetrySpec::None)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SymmetrySpec::None => Ok(()),
            SymmetrySpec::Continuous { axis } | SymmetrySpec::DiscreteCyclic { axis, .. } => {
                let n = Vector3::from_column_slice(axis).norm();
                if n <= DEGENERACY_EPS {
                    return Err(Error::invariant("symmetry.axis", "zero symmetry axis"));
                }
                if let SymmetrySpec::DiscreteCyclic { order, .. } = self {
                    if *order == 0 {
                        return Err(Error::invariant("symmetry.order", "order must be >= 1"));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn unit_axis(&self) -> Option<Vector3<f64>> {
        match self {
            SymmetrySpec::None => None,
            SymmetrySpec::Continuous { axis } | SymmetrySpec::DiscreteCyclic { axis, .. } => {
                Some(Vector3::from_column_slice(axis).normalize())
            }
        }
    }

    /// The discrete symmetry group as rotation matrices (identity included).
    pub fn discrete_set(&self) -> Vec<Matrix3<f64>> {
        match self {
            SymmetrySpec::DiscreteCyclic { axis, order } => {
                let axis = Unit::new_normalize(Vector3::from_column_slice(axis));
                (0..*order)
                    .map(|k| {
                        let angle = std::f64::consts::TAU * f64::from(k) / f64::from(*order);
                        Rotation3::from_axis_angle(&axis, angle).into_inner()
                    })
                    .collect()
            }
            _ => vec![Matrix3::identity()],
        }
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Gram-Schmidt orthonormalization of the 6D rotation parameterization.
///
/// `b1 = a1/‖a1‖`, `b2 = normalize(a2 − (b1·a2)b1)`, `b3 = b1 × b2`; the
/// result has columns `[b1 b2 b3]`.
pub fn rot6d_to_matrix(r: &Rotation6D) -> Result<RotationMatrix> {
    let n1 = r.a1.norm();
    if n1 <= DEGENERACY_EPS {
        return Err(Error::DegenerateInput("6d rotation: a1 is near zero".into()));
    }
    let b1 = r.a1 / n1;
    let residual = r.a2 - b1 * b1.dot(&r.a2);
    let n2 = residual.norm();
    if n2 <= DEGENERACY_EPS {
        return Err(Error::DegenerateInput(
            "6d rotation: a2 is parallel to a1".into(),
        ));
    }
    let b2 = residual / n2;
    let b3 = b1.cross(&b2);
    Ok(RotationMatrix(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Inverse of [`rot6d_to_matrix`]: the first two columns of `R`.
pub fn matrix_to_rot6d(r: &RotationMatrix) -> Rotation6D {
    let m = r.matrix();
    Rotation6D {
        a1: m.column(0).into_owned(),
        a2: m.column(1).into_owned(),
    }
}

/// Geodesic distance on SO(3): `arccos(clamp((tr(RaᵀRb) − 1)/2))`, in [0, π].
///
/// The clamp absorbs floating-point drift that can push the trace argument
/// marginally outside [−1, 1].
pub fn geodesic_distance(ra: &RotationMatrix, rb: &RotationMatrix) -> f64 {
    let c = ((ra.matrix().transpose() * rb.matrix()).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

/// Rotation distance modulo the declared object symmetry.
///
/// Continuous symmetry compares transformed symmetry axes; a discrete set
/// takes the minimum geodesic distance over the group; no symmetry falls
/// back to the plain geodesic distance.
pub fn symmetry_aware_rot_distance(
    ra: &RotationMatrix,
    rb: &RotationMatrix,
    sym: &SymmetrySpec,
) -> f64 {
    match sym {
        SymmetrySpec::None => geodesic_distance(ra, rb),
        SymmetrySpec::Continuous { axis } => {
            let e = Vector3::from_column_slice(axis).normalize();
            let va = ra.matrix() * e;
            let vb = rb.matrix() * e;
            va.dot(&vb).clamp(-1.0, 1.0).acos()
        }
        SymmetrySpec::DiscreteCyclic { .. } => sym
            .discrete_set()
            .into_iter()
            .map(|s| {
                let rs = RotationMatrix::from_matrix_unchecked(ra.matrix() * s);
                geodesic_distance(&rs, rb)
            })
            .fold(f64::INFINITY, f64::min),
    }
}

/// Recover the normalized 2D center from a box center plus predicted offset.
///
/// The sum is clamped into [0,1]^2 so back-projection stays in frame.
pub fn recover_center(bbox: &BBox2D, delta: [f64; 2]) -> NormalizedCenter {
    NormalizedCenter::clamped(bbox.cx + delta[0], bbox.cy + delta[1])
}

/// Perspective back-projection of a normalized center and depth into camera
/// coordinates. The z component equals `depth` exactly.
pub fn backproject(
    u: &NormalizedCenter,
    depth: f64,
    cam: &CameraIntrinsics,
) -> Result<Vector3<f64>> {
    if depth <= 0.0 {
        return Err(Error::NonPositiveDepth(depth));
    }
    let px = u.x() * cam.width;
    let py = u.y() * cam.height;
    Ok(Vector3::new(
        depth * (px - cam.cx) / cam.fx,
        depth * (py - cam.cy) / cam.fy,
        depth,
    ))
}

/// Exact inverse of [`backproject`] for points inside the viewing frustum.
pub fn project_point(
    t: &Vector3<f64>,
    cam: &CameraIntrinsics,
) -> Result<(NormalizedCenter, f64)> {
    let (x, y) = project_point_raw(t, cam)?;
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::OutOfFrame);
    }
    Ok((NormalizedCenter(Vector2::new(x, y)), t.z))
}

/// Projection with the center clamped into the frame, matching the clamping
/// contract of [`recover_center`]. For supervision targets built from poses
/// whose center may sit marginally outside the image.
pub fn project_center_clamped(
    t: &Vector3<f64>,
    cam: &CameraIntrinsics,
) -> Result<(NormalizedCenter, f64)> {
    let (x, y) = project_point_raw(t, cam)?;
    Ok((NormalizedCenter::clamped(x, y), t.z))
}

/// Pinhole projection in normalized image coordinates, without the frame
/// bound check (projected cuboid corners may legitimately fall outside).
fn project_point_raw(t: &Vector3<f64>, cam: &CameraIntrinsics) -> Result<(f64, f64)> {
    if t.z <= 0.0 {
        return Err(Error::NonPositiveDepth(t.z));
    }
    let px = cam.fx * t.x / t.z + cam.cx;
    let py = cam.fy * t.y / t.z + cam.cy;
    Ok((px / cam.width, py / cam.height))
}

/// The 8 cuboid corners `t + R·diag(s/2)·(±1,±1,±1)` in camera coordinates.
///
/// Corner `k` takes the + sign on axis `a` iff bit `a` of `k` is set.
pub fn cuboid_corners(pose: &Pose9D) -> [Vector3<f64>; 8] {
    let r = pose.rotation.matrix();
    let half = pose.scale / 2.0;
    std::array::from_fn(|k| {
        let sx = if k & 1 != 0 { half.x } else { -half.x };
        let sy = if k & 2 != 0 { half.y } else { -half.y };
        let sz = if k & 4 != 0 { half.z } else { -half.z };
        pose.translation + r * Vector3::new(sx, sy, sz)
    })
}

/// Axis-aligned bounding box of the 8 projected cuboid corners, normalized
/// and clipped to [0,1]^2.
pub fn project_cuboid_to_bbox(pose: &Pose9D, cam: &CameraIntrinsics) -> Result<BBox2D> {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for corner in cuboid_corners(pose) {
        if corner.z <= 0.0 {
            return Err(Error::BehindCamera(corner.z));
        }
        let (x, y) = project_point_raw(&corner, cam)?;
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let xmin = xmin.clamp(0.0, 1.0);
    let xmax = xmax.clamp(0.0, 1.0);
    let ymin = ymin.clamp(0.0, 1.0);
    let ymax = ymax.clamp(0.0, 1.0);
    if xmax <= xmin || ymax <= ymin {
        return Err(Error::OutOfFrame);
    }
    BBox2D::new(
        (xmin + xmax) / 2.0,
        (ymin + ymax) / 2.0,
        xmax - xmin,
        ymax - ymin,
    )
}

/// Generalized IoU of two normalized 2D boxes, in (−1, 1].
pub fn giou_2d(a: &BBox2D, b: &BBox2D) -> f64 {
    let (ax1, ax2) = (a.cx - a.w / 2.0, a.cx + a.w / 2.0);
    let (ay1, ay2) = (a.cy - a.h / 2.0, a.cy + a.h / 2.0);
    let (bx1, bx2) = (b.cx - b.w / 2.0, b.cx + b.w / 2.0);
    let (by1, by2) = (b.cy - b.h / 2.0, b.cy + b.h / 2.0);

    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;

    let hull = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    inter / union - (hull - union) / hull
}
