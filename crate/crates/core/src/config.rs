//! TOML configuration shared by the simulator, the estimator and the
//! command-line tool. Every section and field is optional.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::estimator::{EstimatorConfig, LooseConfig, SensorRig};
use crate::factors::StereoCameraModel;
use crate::geometry::{RigidTransform3, Rotation3};
use crate::preintegration::ImuNoiseModel;
use crate::simulator::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    /// Syntax or type error; the message names the line and field.
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for {field}: {message}")]
    Invalid { field: String, message: String },
}

/// Forward-looking rectified stereo pair. The camera optical axis is the
/// body x axis, image right is body -y and image down is body -z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub width: f64,
    pub height: f64,
    /// Left camera centre in the body frame, meters.
    pub position: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 350.0,
            fy: 350.0,
            cx: 336.0,
            cy: 188.0,
            baseline: 0.12,
            width: 672.0,
            height: 376.0,
            position: [0.0, 0.0, 0.0],
        }
    }
}

impl CameraConfig {
    pub fn model(&self) -> StereoCameraModel {
        // rows: camera x, y, z in body coordinates
        let r_cb = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let rotation = Rotation3::from_matrix_unchecked(r_cb);
        let position = Vector3::from(self.position);
        StereoCameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            baseline: self.baseline,
            body_to_camera: RigidTransform3::new(rotation, -rotation.rotate(&position)),
            width: self.width,
            height: self.height,
        }
    }
}

/// Camera of the default configuration.
pub fn default_camera() -> StereoCameraModel {
    CameraConfig::default().model()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    /// GNSS antenna in the body frame, `t_{B<-A}`, meters.
    pub lever_arm: [f64; 3],
    /// World-frame gravity, m/s^2.
    pub gravity: [f64; 3],
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            lever_arm: [0.0, 0.0, 0.6],
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub imu: ImuNoiseModel,
    pub camera: CameraConfig,
    pub rig: RigConfig,
    pub estimator: EstimatorConfig,
    pub loose: LooseConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, message: String| ConfigError::Invalid {
            field: field.to_string(),
            message,
        };
        self.scenario
            .validate()
            .map_err(|e| invalid("scenario", e.to_string()))?;
        self.imu
            .validate()
            .map_err(|e| invalid("imu", e.to_string()))?;
        self.camera
            .model()
            .validate()
            .map_err(|e| invalid("camera", e.to_string()))?;
        if !(self.camera.width > 0.0 && self.camera.height > 0.0) {
            return Err(invalid("camera", "image size must be positive".into()));
        }
        let finite = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
        if !finite(&self.rig.lever_arm) {
            return Err(invalid("rig.lever_arm", "must be finite".into()));
        }
        if !finite(&self.rig.gravity) || Vector3::from(self.rig.gravity).norm() == 0.0 {
            return Err(invalid("rig.gravity", "must be finite and non-zero".into()));
        }
        self.estimator
            .validate()
            .map_err(|e| invalid("estimator", e.to_string()))?;
        if !(self.loose.segment_duration > 0.0 && self.loose.blend_duration >= 0.0) {
            return Err(invalid(
                "loose",
                "segment_duration must be positive and blend_duration non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn rig(&self) -> SensorRig {
        SensorRig {
            camera: self.camera.model(),
            lever_arm: Vector3::from(self.rig.lever_arm),
            gravity: Vector3::from(self.rig.gravity),
            imu_noise: self.imu,
        }
    }
}
