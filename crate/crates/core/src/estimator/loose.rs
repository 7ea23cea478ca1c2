//! Loosely coupled comparison arm: the finished stereo-inertial trajectory
//! is aligned to GNSS piecewise, without any joint optimization.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::evaluation::{TimedPose, Trajectory};
use crate::factors::antenna_position;
use crate::geometry::{geodetic_to_enu, RigidTransform3};

use super::anchor::align_with_gravity;
use super::{EnuAnchor, GnssFix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LooseConfig {
    /// Length of each independently aligned piece, seconds.
    pub segment_duration: f64,
    /// Width of the linear blend centred on each segment boundary, seconds.
    pub blend_duration: f64,
}

impl Default for LooseConfig {
    fn default() -> Self {
        Self {
            segment_duration: 10.0,
            blend_duration: 1.0,
        }
    }
}

fn interpolate(a: &RigidTransform3, b: &RigidTransform3, w: f64) -> RigidTransform3 {
    let rotation = a.rotation.retract(&(a.rotation.local(&b.rotation) * w));
    RigidTransform3::new(rotation, a.translation * (1.0 - w) + b.translation * w)
}

/// Pose of the trajectory at `t`, interpolated between its samples.
fn pose_at(trajectory: &Trajectory, t: f64) -> Option<RigidTransform3> {
    let poses = trajectory.poses();
    let upper = poses.partition_point(|p| p.timestamp < t);
    if upper == poses.len() {
        return None;
    }
    if poses[upper].timestamp == t {
        return Some(poses[upper].pose);
    }
    if upper == 0 {
        return None;
    }
    let (a, b) = (&poses[upper - 1], &poses[upper]);
    let w = (t - a.timestamp) / (b.timestamp - a.timestamp);
    Some(interpolate(&a.pose, &b.pose, w))
}

/// Aligns `vi` to the fixes with one rigid transform per segment and blends
/// neighbouring transforms linearly across segment boundaries.
///
/// Fixes are mapped into the world frame through the anchor. Each segment's
/// transform comes from the antenna positions of `vi` at the fix times; a
/// segment with fewer than three usable fixes keeps the identity.
pub fn loose_coupled_baseline(
    vi: &Trajectory,
    fixes: &[GnssFix],
    anchor: &EnuAnchor,
    lever_arm: &Vector3<f64>,
    config: &LooseConfig,
) -> Trajectory {
    let poses = vi.poses();
    if poses.is_empty() {
        return vi.clone();
    }
    let start = poses[0].timestamp;
    let end = poses[poses.len() - 1].timestamp;
    let length = config.segment_duration.max(1e-6);
    let segments = ((end - start) / length).floor() as usize + 1;
    let anchor_antenna = antenna_position(&anchor.anchor_keyframe_pose, lever_arm);

    let mut source: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); segments];
    let mut target: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); segments];
    for fix in fixes {
        let Some(pose) = pose_at(vi, fix.timestamp) else {
            continue;
        };
        let k = (((fix.timestamp - start) / length).floor() as usize).min(segments - 1);
        let enu = geodetic_to_enu(&fix.geodetic, &anchor.origin);
        source[k].push(antenna_position(&pose, lever_arm));
        target[k].push(anchor_antenna + anchor.rotation.inverse_rotate(&enu));
    }
    let transforms: Vec<RigidTransform3> = (0..segments)
        .map(|k| {
            align_with_gravity(&source[k], &target[k])
                .unwrap_or_else(|_| RigidTransform3::identity())
        })
        .collect();

    let half = 0.5 * config.blend_duration.max(0.0);
    let aligned = poses
        .iter()
        .map(|p| {
            let k = (((p.timestamp - start) / length).floor() as usize).min(segments - 1);
            let lower = start + k as f64 * length;
            let upper = lower + length;
            let transform = if k + 1 < segments && p.timestamp > upper - half {
                let w = (p.timestamp - (upper - half)) / (2.0 * half);
                interpolate(&transforms[k], &transforms[k + 1], w)
            } else if k > 0 && p.timestamp < lower + half {
                let w = (p.timestamp - (lower - half)) / (2.0 * half);
                interpolate(&transforms[k - 1], &transforms[k], w)
            } else {
                transforms[k]
            };
            TimedPose {
                timestamp: p.timestamp,
                pose: transform.compose(&p.pose),
            }
        })
        .collect();
    Trajectory::new(aligned).expect("timestamps are unchanged")
}
