//! Manifold primitives, point-set alignment and geodetic conversions.

mod geodetic;
mod se3;
mod so3;
mod umeyama;

pub use geodetic::{
    ecef_to_enu_rotation, ecef_to_geodetic, enu_to_geodetic, geodetic_to_ecef, geodetic_to_enu,
    GeodeticPoint, WGS84_A, WGS84_B, WGS84_E2, WGS84_F,
};
pub use se3::{RigidTransform3, SimilarityTransform};
pub use so3::{
    exp as so3_exp, log as so3_log, right_jacobian, right_jacobian_inverse, skew, vee, Rotation3,
};
pub use umeyama::{alignment_residual, umeyama_align};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("alignment needs at least 3 point pairs, got {0}")]
    TooFewPoints(usize),
    #[error("point lists differ in length: {source_len} source vs {target_len} target")]
    LengthMismatch {
        source_len: usize,
        target_len: usize,
    },
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("invalid geodetic point: {0}")]
    InvalidGeodetic(String),
}
