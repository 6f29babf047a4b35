//! Category-level 9-DoF pose toolkit.
//!
//! The non-neural core of single-stage category-level pose estimation:
//!
//! - [`geometry`]: the 9D pose data model (rotation, translation, anisotropic
//!   scale), the continuous 6D rotation parameterization, geodesic and
//!   symmetry-aware rotation distances, and pinhole projection math.
//! - [`matching`]: the composite 2D+3D matching cost and globally optimal
//!   one-to-one bipartite assignment, with an exhaustive verification oracle.
//! - [`iou3d`]: exact oriented-cuboid IoU by convex clipping, a symmetry
//!   sweep variant, and a Monte-Carlo oracle.
//! - [`metrics`]: mAP at 3D-IoU thresholds and detection-gated accuracy
//!   under rotation/translation bounds.
//! - [`losses`]: every term of the joint training loss as differentiable
//!   scalars with analytic gradients.
//! - [`heads`]: the pose head's forward math (box-conditioned MLPs,
//!   class-wise slicing, 9D assembly).
//! - [`scene`] / [`synth`]: the newline-delimited scene format and the
//!   deterministic synthetic generator used for verification.
//!
//! All numeric kernels are pure functions. With the default `parallel`
//! feature, batch operations run data-parallel on rayon; reductions keep a
//! fixed order so results are identical at any thread count, and without the
//! feature entirely.

pub mod error;
pub mod geometry;
pub mod heads;
pub mod iou3d;
pub mod losses;
pub mod matching;
pub mod metrics;
mod par;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    BBox2D, CameraIntrinsics, NormalizedCenter, Pose9D, Rotation6D, RotationMatrix, SymmetrySpec,
};
pub use matching::{Assignment, CostWeights};
pub use metrics::{EvalConfig, EvalResult, PoseThreshold};
pub use scene::{GtInstance, PredInstance, SceneRecord};
pub use synth::{ConfidenceModel, NoiseProfile};
