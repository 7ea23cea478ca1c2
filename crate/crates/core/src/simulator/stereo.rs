//! Landmark field and stereo observation synthesis.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::factors::{stereo_project, StereoCameraModel, StereoObservation};

use super::{rng_for, NoiseStream, ScenarioConfig, StereoFrame, TruthTrajectory};

/// Landmark heights above the ground, meters.
const LANDMARK_HEIGHT: (f64, f64) = (0.0, 2.0);

/// Uniform landmarks over the trajectory bounding box grown by the margin.
pub fn generate_landmarks(config: &ScenarioConfig, truth: &TruthTrajectory) -> Vec<Vector3<f64>> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for s in &truth.samples {
        lo = lo.inf(&s.pose.translation);
        hi = hi.sup(&s.pose.translation);
    }
    let m = config.landmark_margin;
    let (x0, x1) = (lo.x - m, hi.x + m);
    let (y0, y1) = (lo.y - m, hi.y + m);
    let count = (config.landmark_density * (x1 - x0) * (y1 - y0)).round() as usize;
    let ground = -config.body_height;
    let mut rng = rng_for(config.seed, NoiseStream::Landmarks);
    (0..count)
        .map(|_| {
            Vector3::new(
                rng.random_range(x0..x1),
                rng.random_range(y0..y1),
                ground + rng.random_range(LANDMARK_HEIGHT.0..LANDMARK_HEIGHT.1),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoOptions {
    pub frame_rate: f64,
    pub pixel_sigma: f64,
    pub dropout: f64,
    pub max_range: f64,
    pub max_features: usize,
    pub track_gap: f64,
    pub seed: u64,
}

impl StereoOptions {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            frame_rate: config.frame_rate,
            pixel_sigma: config.pixel_sigma,
            dropout: config.observation_dropout,
            max_range: config.max_range,
            max_features: config.max_features,
            track_gap: config.track_gap,
            seed: config.seed,
        }
    }
}

/// Frames at the camera rate, each on the nearest IMU tick. Returns the frames and, for every track id,
/// the index of the landmark it observes.
///
/// A landmark keeps its track id while it is seen at least every
/// `track_gap` seconds; after a longer absence it is re-observed under a new
/// id, as a front end without long-term data association would.
pub fn synthesize_stereo(
    truth: &TruthTrajectory,
    landmarks: &[Vector3<f64>],
    camera: &StereoCameraModel,
    options: &StereoOptions,
) -> (Vec<StereoFrame>, Vec<usize>) {
    let mut pixel_rng = rng_for(options.seed, NoiseStream::PixelNoise);
    let mut dropout_rng = rng_for(options.seed, NoiseStream::ObservationDropout);
    let count = (truth.duration() * options.frame_rate + 1e-9).floor() as usize;
    let mut track_of: Vec<Option<(u64, f64)>> = vec![None; landmarks.len()];
    let mut track_landmarks = Vec::new();
    let mut frames = Vec::with_capacity(count + 1);

    for j in 0..=count {
        let t = truth.snap_to_grid(j as f64 / options.frame_rate);
        let pose = truth.state_at(t).pose;
        let camera_center = pose.transform_point(&camera.body_to_camera.inverse().translation);
        let mut visible: Vec<(f64, usize, StereoObservation)> = Vec::new();
        for (index, lm) in landmarks.iter().enumerate() {
            let range = (lm - camera_center).norm();
            if range > options.max_range {
                continue;
            }
            let Ok(obs) = stereo_project(lm, &pose, camera) else {
                continue;
            };
            if !camera.in_image(&obs) {
                continue;
            }
            visible.push((range, index, obs));
        }

        let mut kept = Vec::with_capacity(visible.len());
        for (range, index, obs) in visible {
            let noise = Vector3::new(
                pixel_rng.sample::<f64, _>(StandardNormal),
                pixel_rng.sample::<f64, _>(StandardNormal),
                pixel_rng.sample::<f64, _>(StandardNormal),
            ) * options.pixel_sigma;
            let dropped = dropout_rng.random::<f64>() < options.dropout;
            if !dropped {
                let noisy = StereoObservation::from_vector(&(obs.as_vector() + noise));
                kept.push((range, index, noisy));
            }
        }
        kept.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        kept.truncate(options.max_features);
        kept.sort_by_key(|k| k.1);

        let mut observations = Vec::with_capacity(kept.len());
        for (_, index, obs) in kept {
            let id = match track_of[index] {
                Some((id, last)) if t - last <= options.track_gap + 1e-9 => id,
                _ => {
                    track_landmarks.push(index);
                    (track_landmarks.len() - 1) as u64
                }
            };
            track_of[index] = Some((id, t));
            observations.push((id, obs));
        }
        observations.sort_by_key(|o| o.0);
        frames.push(StereoFrame {
            timestamp: t,
            observations,
        });
    }
    (frames, track_landmarks)
}
