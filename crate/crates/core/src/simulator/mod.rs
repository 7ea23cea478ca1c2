//! Deterministic synthesis of agricultural field-robot datasets: ground
//! truth, IMU samples, stereo landmark observations and GNSS fixes.
//!
//! Every noise source draws from its own ChaCha stream derived from the
//! scenario seed, so enabling one source never shifts another's draws.

mod gnss;
mod imu;
mod stereo;
mod trajectory;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::GnssFix;
use crate::evaluation::{TimedPose, Trajectory};
use crate::factors::{StereoCameraModel, StereoObservation};
use crate::geometry::{GeodeticPoint, GeometryError, Rotation3};
use crate::preintegration::{ImuBias, ImuNoiseModel, ImuSample};

pub use gnss::{corrupt_gnss, synthesize_gnss};
pub use imu::synthesize_imu;
pub use stereo::{generate_landmarks, synthesize_stereo, StereoOptions};
pub use trajectory::{generate_trajectory, GroundTruthSample, TruthTrajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("turn radius {radius} m exceeds half the row spacing {spacing} m")]
    InfeasibleGeometry { radius: f64, spacing: f64 },
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Scenario description. Rates in Hz, lengths in meters, angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rows: usize,
    pub row_length: f64,
    pub row_spacing: f64,
    pub turn_radius: f64,
    pub speed: f64,
    pub imu_rate: f64,
    pub frame_rate: f64,
    pub gnss_rate: f64,
    /// Isotropic standard deviation of simulated conventional GNSS, meters.
    pub gnss_sigma: f64,
    /// Standard deviation written to the fixes; defaults to `gnss_sigma`
    /// (or 0.05 m when that is zero, so fixes stay usable).
    pub gnss_reported_sigma: Option<f64>,
    /// Constant Up offset added to every fix and not reflected in its sigma.
    pub gnss_altitude_bias: f64,
    /// GNSS outage `[start, start + duration)` in seconds; zero disables it.
    pub gnss_dropout_start: f64,
    pub gnss_dropout_duration: f64,
    /// Landmarks per square meter over the field bounding box.
    pub landmark_density: f64,
    /// Extra border around the rows where landmarks are scattered.
    pub landmark_margin: f64,
    /// Height of the body frame above the ground the landmarks grow from.
    pub body_height: f64,
    pub pixel_sigma: f64,
    /// Probability of dropping any single stereo observation.
    pub observation_dropout: f64,
    /// Observations farther than this from the camera are not emitted.
    pub max_range: f64,
    /// Keep at most this many (nearest) observations per frame.
    pub max_features: usize,
    /// A landmark unseen for longer than this gets a fresh track id, which
    /// models the lack of long-term data association.
    pub track_gap: f64,
    pub imu_noise: bool,
    pub initial_accel_bias: [f64; 3],
    pub initial_gyro_bias: [f64; 3],
    /// Heading of the world x axis, counter-clockwise from East.
    pub world_yaw_deg: f64,
    pub origin_latitude: f64,
    pub origin_longitude: f64,
    pub origin_altitude: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            row_length: 50.0,
            row_spacing: 3.0,
            turn_radius: 1.5,
            speed: 1.0,
            imu_rate: 200.0,
            frame_rate: 15.0,
            gnss_rate: 5.0,
            gnss_sigma: 0.5,
            gnss_reported_sigma: None,
            gnss_altitude_bias: 0.0,
            gnss_dropout_start: 0.0,
            gnss_dropout_duration: 0.0,
            landmark_density: 0.5,
            landmark_margin: 12.0,
            body_height: 1.0,
            pixel_sigma: 1.0,
            observation_dropout: 0.05,
            max_range: 20.0,
            max_features: 150,
            track_gap: 0.5,
            imu_noise: true,
            initial_accel_bias: [0.05, -0.03, 0.04],
            initial_gyro_bias: [0.002, -0.001, 0.0015],
            world_yaw_deg: 30.0,
            origin_latitude: -33.0347,
            origin_longitude: -60.8796,
            origin_altitude: 25.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Same scenario with every noise source and the IMU biases switched off.
    pub fn noise_free(&self) -> Self {
        Self {
            gnss_sigma: 0.0,
            gnss_altitude_bias: 0.0,
            pixel_sigma: 0.0,
            observation_dropout: 0.0,
            imu_noise: false,
            initial_accel_bias: [0.0; 3],
            initial_gyro_bias: [0.0; 3],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("imu_rate", self.imu_rate),
            ("frame_rate", self.frame_rate),
            ("gnss_rate", self.gnss_rate),
            ("speed", self.speed),
            ("row_length", self.row_length),
            ("max_range", self.max_range),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.rows == 0 {
            return Err(SimError::InvalidConfig("rows must be at least 1".into()));
        }
        if self.rows > 1 {
            if !(self.turn_radius > 0.0) {
                return Err(SimError::InvalidConfig(
                    "turn_radius must be positive".into(),
                ));
            }
            if self.turn_radius > self.row_spacing / 2.0 + 1e-12 {
                return Err(SimError::InfeasibleGeometry {
                    radius: self.turn_radius,
                    spacing: self.row_spacing,
                });
            }
        }
        let non_negative = [
            ("gnss_sigma", self.gnss_sigma),
            ("pixel_sigma", self.pixel_sigma),
            ("landmark_density", self.landmark_density),
            ("gnss_dropout_duration", self.gnss_dropout_duration),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be non-negative"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.observation_dropout) {
            return Err(SimError::InvalidConfig(
                "observation_dropout must be in [0, 1)".into(),
            ));
        }
        if let Some(s) = self.gnss_reported_sigma {
            if !(s > 0.0) {
                return Err(SimError::InvalidConfig(
                    "gnss_reported_sigma must be positive".into(),
                ));
            }
        }
        self.origin()?;
        Ok(())
    }

    pub fn origin(&self) -> Result<GeodeticPoint, SimError> {
        Ok(GeodeticPoint::new(
            self.origin_latitude,
            self.origin_longitude,
            self.origin_altitude,
        )?)
    }

    /// `R_{ENU<-W}` of the scenario.
    pub fn world_to_enu(&self) -> Rotation3 {
        Rotation3::from_yaw(self.world_yaw_deg.to_radians())
    }

    pub fn reported_gnss_sigma(&self) -> f64 {
        self.gnss_reported_sigma
            .unwrap_or(if self.gnss_sigma > 0.0 {
                self.gnss_sigma
            } else {
                0.05
            })
    }

    pub fn initial_bias(&self) -> ImuBias {
        ImuBias::new(
            Vector3::from(self.initial_accel_bias),
            Vector3::from(self.initial_gyro_bias),
        )
    }
}

/// Random streams, one per noise source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum NoiseStream {
    Landmarks = 1,
    ImuNoise = 2,
    BiasWalk = 3,
    PixelNoise = 4,
    ObservationDropout = 5,
    GnssNoise = 6,
    Corruption = 7,
}

pub(crate) fn rng_for(seed: u64, stream: NoiseStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// All landmarks observed at one camera timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoFrame {
    pub timestamp: f64,
    /// (track id, observation)
    pub observations: Vec<(u64, StereoObservation)>,
}

/// One record of the interleaved sensor stream.
#[derive(Clone, Debug, PartialEq)]
pub enum SensorRecord {
    Imu(ImuSample),
    Frame(StereoFrame),
    Gnss(GnssFix),
}

impl SensorRecord {
    pub fn timestamp(&self) -> f64 {
        match self {
            SensorRecord::Imu(s) => s.timestamp,
            SensorRecord::Frame(f) => f.timestamp,
            SensorRecord::Gnss(g) => g.timestamp,
        }
    }

    fn order(&self) -> u8 {
        match self {
            SensorRecord::Imu(_) => 0,
            SensorRecord::Gnss(_) => 1,
            SensorRecord::Frame(_) => 2,
        }
    }
}

/// Merges per-sensor streams into one timestamp-ordered stream. At equal
/// timestamps IMU precedes GNSS, which precedes frames.
pub fn merge_streams(
    imu: &[ImuSample],
    frames: &[StereoFrame],
    gnss: &[GnssFix],
) -> Vec<SensorRecord> {
    let mut records: Vec<SensorRecord> = imu
        .iter()
        .copied()
        .map(SensorRecord::Imu)
        .chain(frames.iter().cloned().map(SensorRecord::Frame))
        .chain(gnss.iter().cloned().map(SensorRecord::Gnss))
        .collect();
    records.sort_by(|a, b| {
        a.timestamp()
            .total_cmp(&b.timestamp())
            .then(a.order().cmp(&b.order()))
    });
    records
}

/// A complete synthetic dataset together with the hidden truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub truth: TruthTrajectory,
    pub landmarks: Vec<Vector3<f64>>,
    /// Landmark index of every track id.
    pub track_landmarks: Vec<usize>,
    pub true_biases: Vec<ImuBias>,
    pub imu: Vec<ImuSample>,
    pub frames: Vec<StereoFrame>,
    pub gnss: Vec<GnssFix>,
}

impl Dataset {
    pub fn records(&self) -> Vec<SensorRecord> {
        merge_streams(&self.imu, &self.frames, &self.gnss)
    }

    /// Ground truth at the camera frame times.
    pub fn truth_trajectory(&self) -> Trajectory {
        let poses = self
            .frames
            .iter()
            .map(|f| {
                let t = f.timestamp;
                TimedPose {
                    timestamp: t,
                    pose: self.truth.state_at(t).pose,
                }
            })
            .collect();
        Trajectory::new(poses).expect("frame timestamps increase")
    }
}

/// Generates the full dataset of a scenario.
pub fn simulate(
    config: &ScenarioConfig,
    noise: &ImuNoiseModel,
    camera: &StereoCameraModel,
    lever_arm: &Vector3<f64>,
    gravity: &Vector3<f64>,
) -> Result<Dataset, SimError> {
    let truth = generate_trajectory(config)?;
    let imu_noise = if config.imu_noise {
        *noise
    } else {
        ImuNoiseModel::zero()
    };
    let (imu, true_biases) = synthesize_imu(
        &truth,
        &imu_noise,
        config.initial_bias(),
        gravity,
        config.seed,
    );
    let landmarks = generate_landmarks(config, &truth);
    let options = StereoOptions::from_config(config);
    let (frames, track_landmarks) = synthesize_stereo(&truth, &landmarks, camera, &options);
    let gnss = synthesize_gnss(&truth, config, lever_arm)?;
    Ok(Dataset {
        config: config.clone(),
        truth,
        landmarks,
        track_landmarks,
        true_biases,
        imu,
        frames,
        gnss,
    })
}
