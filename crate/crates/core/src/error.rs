use thiserror::Error;

/// Errors raised by the geometric and control primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth:.3e} m)")]
    PointBehindCamera { depth: f64 },
    #[error("ray is parallel to the deviation plane (|n·l| = {dot:.3e})")]
    RayParallelToPlane { dot: f64 },
    #[error("all peg-hole deviations are zero")]
    AllDeviationsZero,
    #[error("camera looks straight down the peg axis; no forward direction")]
    DegenerateViewDirection,
    #[error("joint {joint} of arm {arm} left its limits: q = {value:.4} rad")]
    JointLimitViolation { arm: usize, joint: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("cannot aggregate an empty batch")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, Error>;
