//! On-manifold IMU preintegration between consecutive keyframes.
//!
//! Samples are zero-order held: each sample's value applies from its own
//! timestamp until the next sample (the last one until an explicit end time).
//! The error state is ordered (rotation, velocity, position), matching the
//! stacking of the inertial residual, so the covariance is used without
//! permutation.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::factors::NavState;
use crate::geometry::{right_jacobian, skew, so3_exp, RigidTransform3, Rotation3};

pub type Matrix9 = SMatrix<f64, 9, 9>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Body-frame angular rate, rad/s.
    pub gyro: Vector3<f64>,
    /// Body-frame specific force, m/s^2.
    pub accel: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuBias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl ImuBias {
    pub fn new(accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self { accel, gyro }
    }

    pub fn is_finite(&self) -> bool {
        self.accel
            .iter()
            .chain(self.gyro.iter())
            .all(|v| v.is_finite())
    }
}

/// Continuous-time noise densities of an IMU.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoiseModel {
    /// rad/s/sqrt(Hz)
    pub gyro_noise_density: f64,
    /// m/s^2/sqrt(Hz)
    pub accel_noise_density: f64,
    /// rad/s^2/sqrt(Hz)
    pub gyro_bias_random_walk: f64,
    /// m/s^3/sqrt(Hz)
    pub accel_bias_random_walk: f64,
}

impl Default for ImuNoiseModel {
    /// Densities of a consumer-grade MEMS unit (MPU-9250 class).
    fn default() -> Self {
        Self {
            gyro_noise_density: 1.7e-4,
            accel_noise_density: 2.0e-3,
            gyro_bias_random_walk: 2.0e-5,
            accel_bias_random_walk: 3.0e-4,
        }
    }
}

impl ImuNoiseModel {
    pub fn zero() -> Self {
        Self {
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            gyro_bias_random_walk: 0.0,
            accel_bias_random_walk: 0.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            gyro_noise_density: self.gyro_noise_density * factor,
            accel_noise_density: self.accel_noise_density * factor,
            gyro_bias_random_walk: self.gyro_bias_random_walk * factor,
            accel_bias_random_walk: self.accel_bias_random_walk * factor,
        }
    }

    /// The estimator needs every density strictly positive to form
    /// information matrices.
    pub fn validate(&self) -> Result<(), PreintegrationError> {
        let all = [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_random_walk,
            self.accel_bias_random_walk,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(PreintegrationError::InvalidNoise(*self))
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreintegrationError {
    #[error("no IMU samples to integrate")]
    Empty,
    #[error("IMU timestamps not strictly increasing at sample {index} (t = {timestamp})")]
    NonMonotonic { index: usize, timestamp: f64 },
    #[error("noise densities must be finite and strictly positive: {0:?}")]
    InvalidNoise(ImuNoiseModel),
    #[error("preintegrations linearized at different biases cannot be composed")]
    BiasMismatch,
}

/// Accumulated relative motion between two keyframes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedImu {
    pub delta_rotation: Rotation3,
    pub delta_velocity: Vector3<f64>,
    pub delta_position: Vector3<f64>,
    pub delta_t: f64,
    /// Covariance of (dtheta, dv, dp).
    pub covariance: Matrix9,
    pub jacobians: BiasJacobians,
    pub linearization_bias: ImuBias,
}

/// First-order sensitivities of the preintegrated terms to the biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasJacobians {
    pub rotation_gyro: Matrix3<f64>,
    pub velocity_gyro: Matrix3<f64>,
    pub velocity_accel: Matrix3<f64>,
    pub position_gyro: Matrix3<f64>,
    pub position_accel: Matrix3<f64>,
}

impl Default for BiasJacobians {
    fn default() -> Self {
        Self {
            rotation_gyro: Matrix3::zeros(),
            velocity_gyro: Matrix3::zeros(),
            velocity_accel: Matrix3::zeros(),
            position_gyro: Matrix3::zeros(),
            position_accel: Matrix3::zeros(),
        }
    }
}

impl PreintegratedImu {
    /// Zero-length preintegration at `bias`.
    pub fn identity(bias: ImuBias) -> Self {
        Self {
            delta_rotation: Rotation3::identity(),
            delta_velocity: Vector3::zeros(),
            delta_position: Vector3::zeros(),
            delta_t: 0.0,
            covariance: Matrix9::zeros(),
            jacobians: BiasJacobians::default(),
            linearization_bias: bias,
        }
    }

    /// Preintegration of a single held measurement over `dt`.
    fn single_step(
        gyro: &Vector3<f64>,
        accel: &Vector3<f64>,
        dt: f64,
        bias: ImuBias,
        noise: &ImuNoiseModel,
    ) -> Self {
        let omega = (gyro - bias.gyro) * dt;
        let acc = accel - bias.accel;
        let jr = right_jacobian(&omega);

        // Discrete noise variances are density^2 / dt.
        let var_g = noise.gyro_noise_density.powi(2) / dt;
        let var_a = noise.accel_noise_density.powi(2) / dt;
        let mut covariance = Matrix9::zeros();
        covariance
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(jr * jr.transpose() * (var_g * dt * dt)));
        let i3 = Matrix3::identity();
        covariance
            .fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(i3 * (var_a * dt * dt)));
        covariance
            .fixed_view_mut::<3, 3>(3, 6)
            .copy_from(&(i3 * (0.5 * var_a * dt.powi(3))));
        covariance
            .fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(i3 * (0.5 * var_a * dt.powi(3))));
        covariance
            .fixed_view_mut::<3, 3>(6, 6)
            .copy_from(&(i3 * (0.25 * var_a * dt.powi(4))));

        Self {
            delta_rotation: so3_exp(&omega),
            delta_velocity: acc * dt,
            delta_position: acc * (0.5 * dt * dt),
            delta_t: dt,
            covariance,
            jacobians: BiasJacobians {
                rotation_gyro: -jr * dt,
                velocity_gyro: Matrix3::zeros(),
                velocity_accel: -i3 * dt,
                position_gyro: Matrix3::zeros(),
                position_accel: -i3 * (0.5 * dt * dt),
            },
            linearization_bias: bias,
        }
    }

    /// `self` followed by `next`; both must share the linearization bias.
    pub fn compose(&self, next: &PreintegratedImu) -> Result<Self, PreintegrationError> {
        if self.linearization_bias != next.linearization_bias {
            return Err(PreintegrationError::BiasMismatch);
        }
        Ok(self.compose_unchecked(next))
    }

    fn compose_unchecked(&self, next: &PreintegratedImu) -> Self {
        let r1 = *self.delta_rotation.matrix();
        let r2 = *next.delta_rotation.matrix();
        let dt2 = next.delta_t;
        let skew_v2 = skew(&next.delta_velocity);
        let skew_p2 = skew(&next.delta_position);

        let mut a = Matrix9::identity();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&r2.transpose());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r1 * skew_v2));
        a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-r1 * skew_p2));
        a.fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(Matrix3::identity() * dt2));
        let mut b = Matrix9::identity();
        b.fixed_view_mut::<3, 3>(3, 3).copy_from(&r1);
        b.fixed_view_mut::<3, 3>(6, 6).copy_from(&r1);

        let covariance = a * self.covariance * a.transpose() + b * next.covariance * b.transpose();
        let covariance = (covariance + covariance.transpose()) * 0.5;

        let j1 = &self.jacobians;
        let j2 = &next.jacobians;
        let jacobians = BiasJacobians {
            rotation_gyro: r2.transpose() * j1.rotation_gyro + j2.rotation_gyro,
            velocity_gyro: j1.velocity_gyro - r1 * skew_v2 * j1.rotation_gyro
                + r1 * j2.velocity_gyro,
            velocity_accel: j1.velocity_accel + r1 * j2.velocity_accel,
            position_gyro: j1.position_gyro + j1.velocity_gyro * dt2
                - r1 * skew_p2 * j1.rotation_gyro
                + r1 * j2.position_gyro,
            position_accel: j1.position_accel + j1.velocity_accel * dt2 + r1 * j2.position_accel,
        };

        Self {
            delta_rotation: self.delta_rotation.compose(&next.delta_rotation),
            delta_velocity: self.delta_velocity + r1 * next.delta_velocity,
            delta_position: self.delta_position
                + self.delta_velocity * dt2
                + r1 * next.delta_position,
            delta_t: self.delta_t + dt2,
            covariance,
            jacobians,
            linearization_bias: self.linearization_bias,
        }
    }

    /// Covariance with a tiny diagonal floor so it can always be inverted.
    pub fn information(&self) -> Matrix9 {
        let floor = 1e-12 * self.covariance.diagonal().max().max(1e-18);
        let reg = self.covariance + Matrix9::identity() * floor;
        reg.try_inverse().unwrap_or_else(Matrix9::identity)
    }
}

/// Incremental preintegrator fed one held measurement at a time.
#[derive(Clone, Debug)]
pub struct Preintegrator {
    noise: ImuNoiseModel,
    state: PreintegratedImu,
}

impl Preintegrator {
    pub fn new(bias: ImuBias, noise: ImuNoiseModel) -> Self {
        Self {
            noise,
            state: PreintegratedImu::identity(bias),
        }
    }

    /// Holds `(gyro, accel)` for `dt` seconds.
    pub fn integrate_measurement(&mut self, gyro: &Vector3<f64>, accel: &Vector3<f64>, dt: f64) {
        let step = PreintegratedImu::single_step(
            gyro,
            accel,
            dt,
            self.state.linearization_bias,
            &self.noise,
        );
        self.state = self.state.compose_unchecked(&step);
    }

    pub fn current(&self) -> &PreintegratedImu {
        &self.state
    }

    pub fn finish(self) -> PreintegratedImu {
        self.state
    }
}

/// Preintegrates `samples`, each held until the next sample's timestamp and
/// the last one until `end_time`.
pub fn integrate(
    samples: &[ImuSample],
    end_time: f64,
    bias: ImuBias,
    noise: &ImuNoiseModel,
) -> Result<PreintegratedImu, PreintegrationError> {
    let first = samples.first().ok_or(PreintegrationError::Empty)?;
    let mut pre = Preintegrator::new(bias, *noise);
    let mut previous = first;
    for (index, sample) in samples.iter().enumerate().skip(1) {
        let dt = sample.timestamp - previous.timestamp;
        if !(dt > 0.0) {
            return Err(PreintegrationError::NonMonotonic {
                index,
                timestamp: sample.timestamp,
            });
        }
        pre.integrate_measurement(&previous.gyro, &previous.accel, dt);
        previous = sample;
    }
    let dt = end_time - previous.timestamp;
    if !(dt > 0.0) {
        return Err(PreintegrationError::NonMonotonic {
            index: samples.len(),
            timestamp: end_time,
        });
    }
    pre.integrate_measurement(&previous.gyro, &previous.accel, dt);
    let mut out = pre.finish();
    // Keep the reported duration exact rather than a running float sum.
    out.delta_t = end_time - first.timestamp;
    Ok(out)
}

/// First-order update of the preintegrated terms to a new bias estimate.
/// The covariance is left unchanged.
pub fn correct_bias(pre: &PreintegratedImu, new_bias: &ImuBias) -> PreintegratedImu {
    let dbg = new_bias.gyro - pre.linearization_bias.gyro;
    let dba = new_bias.accel - pre.linearization_bias.accel;
    let j = &pre.jacobians;
    let mut out = pre.clone();
    out.delta_rotation = pre.delta_rotation.retract(&(j.rotation_gyro * dbg));
    out.delta_velocity += j.velocity_gyro * dbg + j.velocity_accel * dba;
    out.delta_position += j.position_gyro * dbg + j.position_accel * dba;
    out
}

/// The state that zeroes every inertial residual given `prev` and `pre`.
pub fn predict(prev: &NavState, pre: &PreintegratedImu, gravity: &Vector3<f64>) -> NavState {
    let pre = correct_bias(pre, &prev.bias);
    let dt = pre.delta_t;
    let r_prev = prev.pose.rotation;
    let p_prev = prev.pose.translation;
    let rotation = r_prev.compose(&pre.delta_rotation);
    let velocity = prev.velocity + gravity * dt + r_prev.rotate(&pre.delta_velocity);
    let position = p_prev
        + prev.velocity * dt
        + gravity * (0.5 * dt * dt)
        + r_prev.rotate(&pre.delta_position);
    NavState {
        pose: RigidTransform3::new(rotation, position),
        velocity,
        bias: prev.bias,
    }
}
