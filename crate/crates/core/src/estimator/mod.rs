//! Sliding-window estimation: keyframe bookkeeping, GNSS association,
//! anchor bootstrap and the Levenberg-Marquardt solve over keyframe states
//! and landmarks.

mod anchor;
mod association;
mod loose;
mod pipeline;
mod problem;
mod solver;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::factors::{NavState, StereoCameraModel, StereoObservation};
use crate::geometry::{GeodeticPoint, GeometryError, RigidTransform3, Rotation3};
use crate::preintegration::{ImuNoiseModel, PreintegratedImu, PreintegrationError};

pub use anchor::{align_with_gravity, bootstrap_anchor};
pub use association::{associate_gnss, Association};
pub use loose::{loose_coupled_baseline, LooseConfig};
pub use pipeline::{keyframe_times, run_mode, run_sequence, RunOutput, RunStats};
pub use problem::{
    build_problem, BiasPrior, GnssFactor, InertialFactor, ProblemKeyframe, SlidingWindowProblem,
    StateRole, VisualFactor,
};
pub use solver::{solve, CostBreakdown, SolveReport, SolverError, SolverSettings};

/// Geodetic GNSS fix with per-axis ENU standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct GnssFix {
    pub timestamp: f64,
    pub geodetic: GeodeticPoint,
    /// (East, North, Up) standard deviations, meters.
    pub sigma_enu: Vector3<f64>,
}

/// Local ENU frame A0 and its fixed relation to the estimator world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnuAnchor {
    pub origin: GeodeticPoint,
    /// `R_{A0<-W}`
    pub rotation: Rotation3,
    /// `T_{W<-B0}` of the keyframe holding the first associated fix.
    pub anchor_keyframe_pose: RigidTransform3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe {
    pub id: u64,
    pub timestamp: f64,
    pub state: NavState,
    /// (track id, observation)
    pub observations: Vec<(u64, StereoObservation)>,
    pub preintegration_from_prev: Option<PreintegratedImu>,
    pub gnss: Option<GnssFix>,
}

/// Estimator comparison arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Stereo-inertial only; GNSS is ignored.
    ViOnly,
    /// GNSS residuals inside the sliding-window cost.
    TightGnss,
    /// Stereo-inertial estimate aligned to GNSS afterwards.
    LooseGnss,
}

/// Sensors and their calibration as seen by the estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorRig {
    pub camera: StereoCameraModel,
    /// `t_{B<-A}`
    pub lever_arm: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub imu_noise: ImuNoiseModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub window_size: usize,
    /// Seconds between keyframes; keyframes land on the first camera frame
    /// at or after each interval.
    pub keyframe_interval: f64,
    pub association_threshold: f64,
    /// Associated fixes needed before the anchor is bootstrapped.
    pub bootstrap_fixes: usize,
    /// Largest tolerated silence between consecutive sensor records.
    pub max_gap: f64,
    /// Huber thresholds on the squared Mahalanobis scale; the kernel delta is
    /// their square root.
    pub visual_chi2: f64,
    pub gnss_chi2: f64,
    pub pixel_sigma: f64,
    /// Stereo observations below this disparity do not initialize landmarks.
    pub min_init_disparity: f64,
    pub accel_bias_prior_sigma: f64,
    pub gyro_bias_prior_sigma: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window_size: 10,
            keyframe_interval: 0.5,
            association_threshold: 0.05,
            bootstrap_fixes: 20,
            max_gap: 1.0,
            visual_chi2: 5.991,
            gnss_chi2: 7.815,
            pixel_sigma: 1.0,
            min_init_disparity: 2.0,
            accel_bias_prior_sigma: 0.2,
            gyro_bias_prior_sigma: 0.02,
            max_iterations: 15,
            relative_tolerance: 1e-6,
            step_tolerance: 1e-8,
            initial_damping: 1e-4,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidConfig(m.to_string()));
        if self.window_size < 2 {
            return bad("window_size must be at least 2");
        }
        if self.bootstrap_fixes < 3 {
            return bad("bootstrap_fixes must be at least 3");
        }
        let positive = [
            ("keyframe_interval", self.keyframe_interval),
            ("association_threshold", self.association_threshold),
            ("max_gap", self.max_gap),
            ("visual_chi2", self.visual_chi2),
            ("gnss_chi2", self.gnss_chi2),
            ("pixel_sigma", self.pixel_sigma),
            ("accel_bias_prior_sigma", self.accel_bias_prior_sigma),
            ("gyro_bias_prior_sigma", self.gyro_bias_prior_sigma),
            ("initial_damping", self.initial_damping),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        Ok(())
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            max_iterations: self.max_iterations,
            relative_tolerance: self.relative_tolerance,
            step_tolerance: self.step_tolerance,
            initial_damping: self.initial_damping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("{what} are not sorted (at index {index})")]
    Unsorted { what: &'static str, index: usize },
    #[error("sensor stream gap from {from:.3} s to {to:.3} s exceeds the limit")]
    Gap { from: f64, to: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Preintegration(#[from] PreintegrationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}
