//! Bootstrapping of the ENU anchor frame A0.

use nalgebra::Vector3;

use crate::factors::antenna_position;
use crate::geometry::{geodetic_to_enu, umeyama_align, GeometryError, RigidTransform3};

use super::{EnuAnchor, EstimatorError, GnssFix};

/// Spread below which a point cloud counts as a single point, meters.
const MIN_SPREAD: f64 = 1e-6;

/// Rigid alignment of `source` onto `target` with two extra correspondences
/// along the vertical, `centroid +- scale * down` in both clouds.
///
/// The pair leaves both centroids unchanged and pins the rotation about any
/// direction the points alone cannot observe, such as the axis of a straight
/// line. Both clouds must be expressed in gravity-aligned frames.
pub fn align_with_gravity(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<RigidTransform3, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::LengthMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(GeometryError::TooFewPoints(source.len()));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;
    let spread = |pts: &[Vector3<f64>], c: &Vector3<f64>| {
        (pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n).sqrt()
    };
    let (ss, st) = (spread(source, &cs), spread(target, &ct));
    if ss < MIN_SPREAD || st < MIN_SPREAD {
        return Err(GeometryError::Degenerate("all points coincide"));
    }
    let scale = 0.5 * (ss + st);
    let down = Vector3::new(0.0, 0.0, -scale);
    let mut src = source.to_vec();
    let mut tgt = target.to_vec();
    for sign in [1.0, -1.0] {
        src.push(cs + down * sign);
        tgt.push(ct + down * sign);
    }
    Ok(umeyama_align(&src, &tgt, false)?.rigid())
}

/// Builds the anchor from the first `k` associated fixes and the poses of
/// their keyframes.
///
/// The origin is the first fix; the rotation `R_{A0<-W}` aligns world
/// antenna displacements with ENU displacements (with the vertical
/// tie-break of [`align_with_gravity`]); the first keyframe pose is frozen.
pub fn bootstrap_anchor(
    pairs: &[(GnssFix, RigidTransform3)],
    k: usize,
    lever_arm: &Vector3<f64>,
) -> Result<EnuAnchor, EstimatorError> {
    if k < 3 {
        return Err(EstimatorError::Geometry(GeometryError::TooFewPoints(k)));
    }
    if pairs.len() < k {
        return Err(EstimatorError::InsufficientData(format!(
            "anchor bootstrap needs {k} associated fixes, got {}",
            pairs.len()
        )));
    }
    let pairs = &pairs[..k];
    let origin = pairs[0].0.geodetic;
    let first_antenna = antenna_position(&pairs[0].1, lever_arm);
    let enu: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|(fix, _)| geodetic_to_enu(&fix.geodetic, &origin))
        .collect();
    let world: Vec<Vector3<f64>> = pairs
        .iter()
        .map(|(_, pose)| antenna_position(pose, lever_arm) - first_antenna)
        .collect();
    let rotation = align_with_gravity(&world, &enu)?.rotation;
    Ok(EnuAnchor {
        origin,
        rotation,
        anchor_keyframe_pose: pairs[0].1,
    })
}
