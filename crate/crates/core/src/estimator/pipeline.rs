//! End-to-end processing of an interleaved sensor stream.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::evaluation::{TimedPose, Trajectory};
use crate::factors::NavState;
use crate::geometry::{RigidTransform3, Rotation3};
use crate::preintegration::{integrate, predict, ImuSample, PreintegratedImu};
use crate::simulator::{SensorRecord, StereoFrame};

use super::{
    associate_gnss, bootstrap_anchor, build_problem, loose_coupled_baseline, solve, EnuAnchor,
    EstimatorConfig, EstimatorError, GnssFix, Keyframe, LooseConfig, RunMode, SensorRig,
};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub keyframes: usize,
    /// Keyframes with an associated GNSS fix.
    pub gnss_keyframes: usize,
    /// `gnss_keyframes / keyframes`
    pub gnss_coverage: f64,
    pub gnss_fixes: usize,
    pub discarded_fixes: usize,
    /// Timestamp of the keyframe after which the anchor was bootstrapped.
    pub anchor_time: Option<f64>,
    pub landmarks: usize,
    pub solves: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub keyframes: Vec<Keyframe>,
    pub anchor: Option<EnuAnchor>,
    pub stats: RunStats,
}

/// Indices of the frames that become keyframes: the first frame, then the
/// first frame at least `interval` seconds after the previous keyframe.
pub fn keyframe_times(frame_times: &[f64], interval: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (i, &t) in frame_times.iter().enumerate() {
        if out.is_empty() || t - last >= interval - 1e-9 {
            out.push(i);
            last = t;
        }
    }
    out
}

/// IMU samples covering `[t0, t1)`, the first re-stamped to `t0`.
fn imu_segment(imu: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>, EstimatorError> {
    let first = imu.partition_point(|s| s.timestamp <= t0);
    if first == 0 {
        return Err(EstimatorError::InsufficientData(format!(
            "no IMU sample at or before t = {t0}"
        )));
    }
    let mut out = vec![ImuSample {
        timestamp: t0,
        ..imu[first - 1]
    }];
    out.extend(
        imu[first..]
            .iter()
            .take_while(|s| s.timestamp < t1)
            .copied(),
    );
    Ok(out)
}

/// Roll and pitch from the mean specific force, zero yaw.
fn gravity_aligned_rotation(samples: &[ImuSample]) -> Rotation3 {
    let f = samples.iter().map(|s| s.accel).sum::<Vector3<f64>>() / samples.len() as f64;
    let roll = f.y.atan2(f.z);
    let pitch = (-f.x).atan2((f.y * f.y + f.z * f.z).sqrt());
    // R = Ry(pitch) Rx(roll)
    Rotation3::from_matrix_unchecked(
        *nalgebra::Rotation3::from_euler_angles(roll, pitch, 0.0).matrix(),
    )
}

fn check_stream(records: &[SensorRecord], max_gap: f64) -> Result<(), EstimatorError> {
    for (index, pair) in records.windows(2).enumerate() {
        let (a, b) = (pair[0].timestamp(), pair[1].timestamp());
        if !(b >= a) {
            return Err(EstimatorError::Unsorted {
                what: "sensor records",
                index: index + 1,
            });
        }
        if b - a > max_gap {
            return Err(EstimatorError::Gap { from: a, to: b });
        }
    }
    Ok(())
}

/// Runs the sliding-window estimator over a timestamp-ordered stream.
///
/// Keyframes are inserted at a fixed interval on camera frames. The first
/// keyframe takes roll and pitch from the accelerometer and sits at the
/// origin; later keyframes are predicted from the IMU and refined by a solve
/// after every insertion. With `use_gnss`, the anchor is bootstrapped once
/// enough fixes are associated, and from then on GNSS factors join every
/// window keyframe holding a fix.
pub fn run_sequence(
    records: &[SensorRecord],
    rig: &SensorRig,
    config: &EstimatorConfig,
    use_gnss: bool,
) -> Result<RunOutput, EstimatorError> {
    config.validate()?;
    rig.imu_noise.validate()?;
    rig.camera
        .validate()
        .map_err(|e| EstimatorError::InvalidConfig(e.to_string()))?;
    check_stream(records, config.max_gap)?;

    let mut imu = Vec::new();
    let mut frames: Vec<&StereoFrame> = Vec::new();
    let mut fixes: Vec<GnssFix> = Vec::new();
    for record in records {
        match record {
            SensorRecord::Imu(s) => imu.push(*s),
            SensorRecord::Frame(f) => frames.push(f),
            SensorRecord::Gnss(g) if use_gnss => fixes.push(g.clone()),
            SensorRecord::Gnss(_) => {}
        }
    }
    if imu.len() < 2 {
        return Err(EstimatorError::InsufficientData(
            "fewer than two IMU samples".into(),
        ));
    }
    for (index, w) in imu.windows(2).enumerate() {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(EstimatorError::Unsorted {
                what: "IMU timestamps",
                index: index + 1,
            });
        }
    }
    let frame_times: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
    let selected: Vec<usize> = keyframe_times(&frame_times, config.keyframe_interval)
        .into_iter()
        .filter(|&i| frame_times[i] >= imu[0].timestamp)
        .collect();
    if selected.len() < 2 {
        return Err(EstimatorError::InsufficientData(
            "fewer than two keyframes".into(),
        ));
    }
    let kf_times: Vec<f64> = selected.iter().map(|&i| frame_times[i]).collect();
    let association = associate_gnss(&kf_times, &fixes, config.association_threshold)?;

    let mut keyframes: Vec<Keyframe> = Vec::with_capacity(selected.len());
    let mut landmarks: BTreeMap<u64, Vector3<f64>> = BTreeMap::new();
    let mut anchor: Option<EnuAnchor> = None;
    let mut stats = RunStats {
        gnss_fixes: fixes.len(),
        discarded_fixes: association.discarded.len(),
        ..RunStats::default()
    };
    let mut associated: Vec<usize> = Vec::new();

    for (j, &frame_index) in selected.iter().enumerate() {
        let t = kf_times[j];
        let frame = frames[frame_index];
        let (state, preintegration): (NavState, Option<PreintegratedImu>) = if j == 0 {
            let end = kf_times[1];
            let samples = imu_segment(&imu, t, end)?;
            let rotation = gravity_aligned_rotation(&samples);
            (
                NavState::at_rest(RigidTransform3::new(rotation, Vector3::zeros())),
                None,
            )
        } else {
            let prev = &keyframes[j - 1];
            let samples = imu_segment(&imu, prev.timestamp, t)?;
            let pre = integrate(&samples, t, prev.state.bias, &rig.imu_noise)?;
            (predict(&prev.state, &pre, &rig.gravity), Some(pre))
        };
        let gnss = association.by_keyframe[j].map(|i| fixes[i].clone());
        if gnss.is_some() {
            associated.push(j);
        }
        keyframes.push(Keyframe {
            id: j as u64,
            timestamp: t,
            state,
            observations: frame.observations.clone(),
            preintegration_from_prev: preintegration,
            gnss,
        });

        let body_from_camera = rig.camera.body_to_camera.inverse();
        for (id, obs) in &frame.observations {
            if landmarks.contains_key(id) || obs.disparity() < config.min_init_disparity {
                continue;
            }
            if let Some(pc) = rig.camera.triangulate(obs) {
                let pw = state
                    .pose
                    .transform_point(&body_from_camera.transform_point(&pc));
                landmarks.insert(*id, pw);
            }
        }

        if j >= 1 {
            let mut problem = build_problem(&keyframes, &landmarks, anchor.as_ref(), rig, config);
            let report = solve(&mut problem)?;
            stats.solves += 1;
            stats.iterations += report.iterations;
            for kf in &problem.keyframes {
                keyframes[kf.id as usize].state = kf.state;
            }
            for (id, p) in problem.landmark_ids.iter().zip(&problem.landmarks) {
                landmarks.insert(*id, *p);
            }
        }

        if use_gnss && anchor.is_none() && associated.len() >= config.bootstrap_fixes {
            let pairs: Vec<(GnssFix, RigidTransform3)> = associated
                .iter()
                .map(|&k| {
                    (
                        keyframes[k].gnss.clone().expect("associated"),
                        keyframes[k].state.pose,
                    )
                })
                .collect();
            anchor = Some(bootstrap_anchor(
                &pairs,
                config.bootstrap_fixes,
                &rig.lever_arm,
            )?);
            stats.anchor_time = Some(t);
        }
    }

    stats.keyframes = keyframes.len();
    stats.gnss_keyframes = associated.len();
    stats.gnss_coverage = associated.len() as f64 / keyframes.len() as f64;
    stats.landmarks = landmarks.len();
    let trajectory = Trajectory::new(
        keyframes
            .iter()
            .map(|k| TimedPose {
                timestamp: k.timestamp,
                pose: k.state.pose,
            })
            .collect(),
    )
    .map_err(|e| EstimatorError::InsufficientData(e.to_string()))?;
    Ok(RunOutput {
        trajectory,
        keyframes,
        anchor,
        stats,
    })
}

/// Runs one comparison arm. The loose arm runs without GNSS, bootstraps an
/// anchor from the finished keyframes and aligns the result piecewise.
pub fn run_mode(
    records: &[SensorRecord],
    rig: &SensorRig,
    config: &EstimatorConfig,
    loose: &LooseConfig,
    mode: RunMode,
) -> Result<RunOutput, EstimatorError> {
    match mode {
        RunMode::ViOnly => run_sequence(records, rig, config, false),
        RunMode::TightGnss => run_sequence(records, rig, config, true),
        RunMode::LooseGnss => {
            let mut out = run_sequence(records, rig, config, false)?;
            let fixes: Vec<GnssFix> = records
                .iter()
                .filter_map(|r| match r {
                    SensorRecord::Gnss(g) => Some(g.clone()),
                    _ => None,
                })
                .collect();
            let times: Vec<f64> = out.keyframes.iter().map(|k| k.timestamp).collect();
            let association = associate_gnss(&times, &fixes, config.association_threshold)?;
            let pairs: Vec<(GnssFix, RigidTransform3)> = association
                .by_keyframe
                .iter()
                .enumerate()
                .filter_map(|(k, a)| a.map(|i| (fixes[i].clone(), out.keyframes[k].state.pose)))
                .collect();
            let anchor = bootstrap_anchor(&pairs, config.bootstrap_fixes, &rig.lever_arm)?;
            out.trajectory =
                loose_coupled_baseline(&out.trajectory, &fixes, &anchor, &rig.lever_arm, loose);
            out.stats.gnss_fixes = fixes.len();
            out.stats.gnss_keyframes = association.assigned_count();
            out.stats.gnss_coverage = association.assigned_count() as f64 / times.len() as f64;
            out.stats.discarded_fixes = association.discarded.len();
            out.anchor = Some(anchor);
            Ok(out)
        }
    }
}
