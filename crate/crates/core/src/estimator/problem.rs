//! Assembly of the sliding-window least-squares problem.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Matrix3, Vector3};

use crate::factors::{
    stereo_project, GnssFactorData, NavState, StereoCameraModel, StereoObservation,
};
use crate::geometry::geodetic_to_enu;
use crate::preintegration::{ImuBias, ImuNoiseModel, Matrix9, PreintegratedImu};

use super::{EnuAnchor, EstimatorConfig, Keyframe, SensorRig, SolverSettings};

/// Which parts of a keyframe state the solver may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateRole {
    Free,
    /// Pose held, velocity and biases free (gauge of the first window).
    PoseFixed,
    /// Entire state held.
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemKeyframe {
    pub id: u64,
    pub timestamp: f64,
    pub state: NavState,
    pub role: StateRole,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InertialFactor {
    pub prev: usize,
    pub curr: usize,
    pub preintegration: PreintegratedImu,
    /// Inverse of the preintegration covariance.
    pub information: Matrix9,
    /// Per-axis information of the bias random walk over the interval.
    pub accel_walk_information: f64,
    pub gyro_walk_information: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualFactor {
    pub keyframe: usize,
    pub landmark: usize,
    pub observation: StereoObservation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnssFactor {
    pub keyframe: usize,
    pub data: GnssFactorData,
}

/// Weak prior keeping the biases of the first keyframe observable.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasPrior {
    pub keyframe: usize,
    pub mean: ImuBias,
    pub accel_sigma: f64,
    pub gyro_sigma: f64,
}

#[derive(Clone, Debug)]
pub struct SlidingWindowProblem {
    /// Window keyframes and the held states around them, ordered by id.
    pub keyframes: Vec<ProblemKeyframe>,
    pub landmark_ids: Vec<u64>,
    pub landmarks: Vec<Vector3<f64>>,
    pub inertial: Vec<InertialFactor>,
    pub visual: Vec<VisualFactor>,
    pub gnss: Vec<GnssFactor>,
    pub bias_priors: Vec<BiasPrior>,
    pub gravity: Vector3<f64>,
    pub camera: StereoCameraModel,
    pub pixel_sigma: f64,
    pub visual_delta: f64,
    pub gnss_delta: f64,
    pub settings: SolverSettings,
}

impl SlidingWindowProblem {
    /// Keyframes the solver may change.
    pub fn optimized_count(&self) -> usize {
        self.keyframes
            .iter()
            .filter(|k| k.role != StateRole::Fixed)
            .count()
    }

    pub fn state_of(&self, id: u64) -> Option<&NavState> {
        self.keyframes.iter().find(|k| k.id == id).map(|k| &k.state)
    }
}

fn inertial_factor(
    prev: usize,
    curr: usize,
    pre: &PreintegratedImu,
    noise: &ImuNoiseModel,
) -> InertialFactor {
    // a tiny ridge keeps noise-free preintegrations invertible
    let cov = pre.covariance + Matrix9::identity() * 1e-14;
    let information = cov
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| Matrix9::identity() * 1e14);
    let dt = pre.delta_t.max(1e-9);
    InertialFactor {
        prev,
        curr,
        preintegration: pre.clone(),
        information: (information + information.transpose()) * 0.5,
        accel_walk_information: 1.0 / (noise.accel_bias_random_walk.powi(2) * dt),
        gyro_walk_information: 1.0 / (noise.gyro_bias_random_walk.powi(2) * dt),
    }
}

/// GNSS factor data of a keyframe fix relative to the anchor.
pub(crate) fn gnss_data(
    fix: &super::GnssFix,
    anchor: &EnuAnchor,
    lever_arm: &Vector3<f64>,
) -> GnssFactorData {
    GnssFactorData {
        z_hat: geodetic_to_enu(&fix.geodetic, &anchor.origin),
        lever_arm: *lever_arm,
        sigma: fix.sigma_enu,
        anchor_rotation: anchor.rotation,
        anchor_pose: anchor.anchor_keyframe_pose,
    }
}

/// Builds the problem over the last `config.window_size` keyframes.
///
/// Inertial factors join consecutive window keyframes and the window to its
/// predecessor, which is held fixed. Every landmark seen from the window with
/// at least two observations in total enters with all its observations;
/// observers outside the window are held fixed. When no keyframe precedes
/// the window, the oldest window pose is held instead, unless at least two
/// GNSS factors already pin the gauge. GNSS factors are added for window
/// keyframes with an associated fix once an anchor exists.
pub fn build_problem(
    keyframes: &[Keyframe],
    landmarks: &BTreeMap<u64, Vector3<f64>>,
    anchor: Option<&EnuAnchor>,
    rig: &SensorRig,
    config: &EstimatorConfig,
) -> SlidingWindowProblem {
    let n = keyframes.len();
    let w0 = n.saturating_sub(config.window_size);

    let window_tracks: BTreeSet<u64> = keyframes[w0..]
        .iter()
        .flat_map(|kf| kf.observations.iter().map(|(id, _)| *id))
        .filter(|id| landmarks.contains_key(id))
        .collect();
    let mut observers: HashMap<u64, Vec<usize>> = HashMap::new();
    for (k, kf) in keyframes.iter().enumerate() {
        for (id, _) in &kf.observations {
            if window_tracks.contains(id) {
                observers.entry(*id).or_default().push(k);
            }
        }
    }
    let included: BTreeSet<u64> = window_tracks
        .iter()
        .copied()
        .filter(|id| observers.get(id).is_some_and(|o| o.len() >= 2))
        .collect();

    let mut roles: BTreeMap<usize, StateRole> = BTreeMap::new();
    for k in w0..n {
        roles.insert(k, StateRole::Free);
    }
    // Two fixes pin translation and yaw; gravity pins the rest.
    let pinned = anchor.is_some() && keyframes.iter().filter(|kf| kf.gnss.is_some()).count() >= 2;
    if w0 == 0 {
        if !pinned {
            roles.insert(0, StateRole::PoseFixed);
        }
    } else {
        roles.insert(w0 - 1, StateRole::Fixed);
    }
    for id in &included {
        for &k in &observers[id] {
            roles.entry(k).or_insert(StateRole::Fixed);
        }
    }

    let index_of: HashMap<usize, usize> = roles.keys().enumerate().map(|(i, &k)| (k, i)).collect();
    let problem_keyframes: Vec<ProblemKeyframe> = roles
        .iter()
        .map(|(&k, &role)| ProblemKeyframe {
            id: keyframes[k].id,
            timestamp: keyframes[k].timestamp,
            state: keyframes[k].state,
            role,
        })
        .collect();

    let landmark_ids: Vec<u64> = included.iter().copied().collect();
    let landmark_index: HashMap<u64, usize> = landmark_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let landmark_positions: Vec<Vector3<f64>> =
        landmark_ids.iter().map(|id| landmarks[id]).collect();

    let mut visual = Vec::new();
    for (&k, &i) in &index_of {
        let kf = &keyframes[k];
        for (id, obs) in &kf.observations {
            let Some(&l) = landmark_index.get(id) else {
                continue;
            };
            if stereo_project(&landmark_positions[l], &kf.state.pose, &rig.camera).is_err() {
                continue;
            }
            visual.push(VisualFactor {
                keyframe: i,
                landmark: l,
                observation: *obs,
            });
        }
    }
    visual.sort_by_key(|f| (f.keyframe, f.landmark));

    let first_inertial = if w0 == 0 { 1 } else { w0 };
    let inertial = (first_inertial..n)
        .filter_map(|k| {
            let pre = keyframes[k].preintegration_from_prev.as_ref()?;
            Some(inertial_factor(
                index_of[&(k - 1)],
                index_of[&k],
                pre,
                &rig.imu_noise,
            ))
        })
        .collect();

    let gnss = match anchor {
        Some(anchor) => (w0..n)
            .filter_map(|k| {
                let fix = keyframes[k].gnss.as_ref()?;
                Some(GnssFactor {
                    keyframe: index_of[&k],
                    data: gnss_data(fix, anchor, &rig.lever_arm),
                })
            })
            .collect(),
        None => Vec::new(),
    };

    let bias_priors = if w0 == 0 {
        vec![BiasPrior {
            keyframe: index_of[&0],
            mean: ImuBias::default(),
            accel_sigma: config.accel_bias_prior_sigma,
            gyro_sigma: config.gyro_bias_prior_sigma,
        }]
    } else {
        Vec::new()
    };

    SlidingWindowProblem {
        keyframes: problem_keyframes,
        landmark_ids,
        landmarks: landmark_positions,
        inertial,
        visual,
        gnss,
        bias_priors,
        gravity: rig.gravity,
        camera: rig.camera,
        pixel_sigma: config.pixel_sigma,
        visual_delta: config.visual_chi2.sqrt(),
        gnss_delta: config.gnss_chi2.sqrt(),
        settings: config.solver_settings(),
    }
}

/// Visual information matrix of one stereo observation.
pub(crate) fn visual_information(pixel_sigma: f64) -> Matrix3<f64> {
    Matrix3::identity() / (pixel_sigma * pixel_sigma)
}
