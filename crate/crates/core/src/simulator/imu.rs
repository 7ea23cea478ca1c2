//! IMU measurement synthesis from the truth trajectory.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::preintegration::{ImuBias, ImuNoiseModel, ImuSample};

use super::{rng_for, NoiseStream, TruthTrajectory};

fn normal3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// One IMU sample per truth grid point. Returns the samples and the true
/// bias in effect over each sample's interval.
///
/// `gyro = w + b_g + n_g`, `accel = R^T (a - g) + b_a + n_a`, with white noise
/// of standard deviation `density * sqrt(rate)` and biases following a
/// discrete random walk of standard deviation `walk * sqrt(dt)` per step.
pub fn synthesize_imu(
    truth: &TruthTrajectory,
    noise: &ImuNoiseModel,
    initial_bias: ImuBias,
    gravity: &Vector3<f64>,
    seed: u64,
) -> (Vec<ImuSample>, Vec<ImuBias>) {
    let dt = truth.dt;
    let mut white = rng_for(seed, NoiseStream::ImuNoise);
    let mut walk = rng_for(seed, NoiseStream::BiasWalk);
    let gyro_sigma = noise.gyro_noise_density / dt.sqrt();
    let accel_sigma = noise.accel_noise_density / dt.sqrt();
    let gyro_walk = noise.gyro_bias_random_walk * dt.sqrt();
    let accel_walk = noise.accel_bias_random_walk * dt.sqrt();

    let mut bias = initial_bias;
    let mut samples = Vec::with_capacity(truth.samples.len());
    let mut biases = Vec::with_capacity(truth.samples.len());
    for s in &truth.samples {
        let n_g = normal3(&mut white) * gyro_sigma;
        let n_a = normal3(&mut white) * accel_sigma;
        let specific_force = s.pose.rotation.inverse_rotate(&(s.acceleration - gravity));
        samples.push(ImuSample {
            timestamp: s.timestamp,
            gyro: s.angular_velocity + bias.gyro + n_g,
            accel: specific_force + bias.accel + n_a,
        });
        biases.push(bias);
        bias.gyro += normal3(&mut walk) * gyro_walk;
        bias.accel += normal3(&mut walk) * accel_walk;
    }
    (samples, biases)
}
