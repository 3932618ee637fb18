//! Camera model, absolute pose estimation and pose-accuracy metrics.

mod camera;
mod eval;
mod p3p;
mod ransac;

pub use camera::{project, CameraIntrinsics, CameraPose};
pub use eval::{pose_error, recall_at_thresholds, DEFAULT_RECALL_THRESHOLDS};
pub use p3p::{dlt_pose, minimal_pnp, p3p, MinimalSolution, PnpCorrespondence};
pub use ransac::{
    ransac_pnp, refine_pose, reprojection_error, LocalizationResult, LocalizationStatus, RansacParams,
    DEFAULT_CONFIDENCE, DEFAULT_INLIER_THRESHOLD_PX, DEFAULT_MAX_ITERATIONS, DEFAULT_MIN_INLIERS,
};
