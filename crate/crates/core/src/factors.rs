//! Residuals and Jacobians of the inertial, stereo-visual and GNSS factors,
//! and the Huber kernel applied to the visual and GNSS terms.
//!
//! Pose perturbations follow one convention everywhere: the rotation is
//! perturbed on the right, `R <- R exp(dtheta)`, and the translation
//! additively in the world frame, `p <- p + dp`. Jacobian column blocks are
//! ordered rotation first, then translation.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::geometry::{
    right_jacobian, right_jacobian_inverse, skew, so3_exp, so3_log, RigidTransform3, Rotation3,
};
use crate::preintegration::{correct_bias, ImuBias, PreintegratedImu};

pub type Vector9 = SVector<f64, 9>;
pub type Matrix3x6 = SMatrix<f64, 3, 6>;
pub type Matrix9x3 = SMatrix<f64, 9, 3>;
pub type Matrix9x6 = SMatrix<f64, 9, 6>;

/// Closest admissible depth of a point in front of the camera, meters.
pub const DEPTH_MIN: f64 = 0.05;

/// Per-keyframe state: body pose in the world, world-frame velocity and IMU
/// biases.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct NavState {
    /// `T_{W<-B}`
    pub pose: RigidTransform3,
    pub velocity: Vector3<f64>,
    pub bias: ImuBias,
}

impl NavState {
    pub fn at_rest(pose: RigidTransform3) -> Self {
        Self {
            pose,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.translation.iter().all(|v| v.is_finite())
            && self.pose.rotation.matrix().iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.bias.is_finite()
    }
}

/// Applies the pose perturbation convention of this module.
pub fn retract_pose(
    pose: &RigidTransform3,
    dtheta: &Vector3<f64>,
    dp: &Vector3<f64>,
) -> RigidTransform3 {
    RigidTransform3::new(pose.rotation.retract(dtheta), pose.translation + dp)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    /// World-frame position, meters.
    pub position: Vector3<f64>,
}

/// Row-rectified stereo measurement in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoObservation {
    pub u_left: f64,
    pub v: f64,
    pub u_right: f64,
}

impl StereoObservation {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.u_left, self.v, self.u_right)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self {
            u_left: v.x,
            v: v.y,
            u_right: v.z,
        }
    }

    pub fn disparity(&self) -> f64 {
        self.u_left - self.u_right
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoCameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// meters
    pub baseline: f64,
    /// `T_{C<-B}`
    pub body_to_camera: RigidTransform3,
    /// Image size in pixels, used to decide visibility.
    pub width: f64,
    pub height: f64,
}

impl StereoCameraModel {
    pub fn validate(&self) -> Result<(), FactorError> {
        if self.fx > 0.0 && self.fy > 0.0 && self.baseline > 0.0 {
            Ok(())
        } else {
            Err(FactorError::InvalidCamera)
        }
    }

    pub fn in_image(&self, obs: &StereoObservation) -> bool {
        let inside = |u: f64| u >= 0.0 && u < self.width;
        inside(obs.u_left) && inside(obs.u_right) && obs.v >= 0.0 && obs.v < self.height
    }

    /// Camera-frame point from a stereo measurement.
    pub fn triangulate(&self, obs: &StereoObservation) -> Option<Vector3<f64>> {
        let disparity = obs.disparity();
        if !(disparity > 0.0) {
            return None;
        }
        let z = self.fx * self.baseline / disparity;
        Some(Vector3::new(
            (obs.u_left - self.cx) * z / self.fx,
            (obs.v - self.cy) * z / self.fy,
            z,
        ))
    }

    fn project_camera_point(&self, pc: &Vector3<f64>) -> Result<StereoObservation, FactorError> {
        if !(pc.z > DEPTH_MIN) {
            return Err(FactorError::BehindCamera { depth: pc.z });
        }
        let u_left = self.fx * pc.x / pc.z + self.cx;
        Ok(StereoObservation {
            u_left,
            v: self.fy * pc.y / pc.z + self.cy,
            u_right: u_left - self.fx * self.baseline / pc.z,
        })
    }

    /// d(projection)/d(camera point).
    fn projection_jacobian(&self, pc: &Vector3<f64>) -> Matrix3<f64> {
        let inv_z = 1.0 / pc.z;
        let inv_z2 = inv_z * inv_z;
        Matrix3::new(
            self.fx * inv_z,
            0.0,
            -self.fx * pc.x * inv_z2,
            0.0,
            self.fy * inv_z,
            -self.fy * pc.y * inv_z2,
            self.fx * inv_z,
            0.0,
            -self.fx * (pc.x - self.baseline) * inv_z2,
        )
    }
}

/// Everything a GNSS factor needs besides the keyframe state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnssFactorData {
    /// Measurement in the anchor ENU frame A0, meters.
    pub z_hat: Vector3<f64>,
    /// Antenna position in the body frame, `t_{B<-A}`.
    pub lever_arm: Vector3<f64>,
    /// Per-axis (E, N, U) standard deviations, meters.
    pub sigma: Vector3<f64>,
    /// `R_{A0<-W}`
    pub anchor_rotation: Rotation3,
    /// `T_{W<-B0}`, frozen at bootstrap.
    pub anchor_pose: RigidTransform3,
}

impl GnssFactorData {
    pub fn validate(&self) -> Result<(), FactorError> {
        if self.sigma.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(FactorError::InvalidSigma(self.sigma))
        }
    }

    /// Diagonal information `diag(1/sigma^2)`.
    pub fn information(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.sigma.map(|s| 1.0 / (s * s)))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FactorError {
    #[error("point is behind the camera or too close (depth {depth:.4} m)")]
    BehindCamera { depth: f64 },
    #[error("camera focal lengths and baseline must be positive")]
    InvalidCamera,
    #[error("GNSS standard deviations must be positive, got {0:?}")]
    InvalidSigma(Vector3<f64>),
}

// ---------------------------------------------------------------------------
// Inertial

/// Stacked rotation, velocity and position residuals between consecutive
/// keyframes. The preintegration is first corrected to `prev.bias`.
pub fn inertial_residual(
    prev: &NavState,
    curr: &NavState,
    pre: &PreintegratedImu,
    gravity: &Vector3<f64>,
) -> Vector9 {
    inertial_residual_and_jacobians(prev, curr, pre, gravity).0
}

/// Jacobians of the inertial residual with respect to each state block.
#[derive(Clone, Debug)]
pub struct InertialJacobians {
    pub prev_pose: Matrix9x6,
    pub prev_velocity: Matrix9x3,
    pub prev_gyro_bias: Matrix9x3,
    pub prev_accel_bias: Matrix9x3,
    pub curr_pose: Matrix9x6,
    pub curr_velocity: Matrix9x3,
}

pub fn inertial_residual_and_jacobians(
    prev: &NavState,
    curr: &NavState,
    pre: &PreintegratedImu,
    gravity: &Vector3<f64>,
) -> (Vector9, InertialJacobians) {
    let corrected = correct_bias(pre, &prev.bias);
    let dt = pre.delta_t;
    let r_prev = prev.pose.rotation;
    let r_curr = curr.pose.rotation;
    let rt_prev = r_prev.matrix().transpose();

    let relative = r_prev.inverse().compose(&r_curr);
    let err_rot = corrected.delta_rotation.inverse().compose(&relative);
    let r_rot = so3_log(&err_rot);

    let dv_world = curr.velocity - prev.velocity - gravity * dt;
    let dp_world = curr.pose.translation
        - prev.pose.translation
        - prev.velocity * dt
        - gravity * (0.5 * dt * dt);
    let r_vel = rt_prev * dv_world - corrected.delta_velocity;
    let r_pos = rt_prev * dp_world - corrected.delta_position;

    let mut residual = Vector9::zeros();
    residual.fixed_rows_mut::<3>(0).copy_from(&r_rot);
    residual.fixed_rows_mut::<3>(3).copy_from(&r_vel);
    residual.fixed_rows_mut::<3>(6).copy_from(&r_pos);

    let jr_inv = right_jacobian_inverse(&r_rot);
    let j = &pre.jacobians;
    let dbg = prev.bias.gyro - pre.linearization_bias.gyro;

    let mut prev_pose = Matrix9x6::zeros();
    prev_pose
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-jr_inv * relative.matrix().transpose()));
    prev_pose
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&skew(&(rt_prev * dv_world)));
    prev_pose
        .fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&skew(&(rt_prev * dp_world)));
    prev_pose
        .fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(-rt_prev));

    let mut prev_velocity = Matrix9x3::zeros();
    prev_velocity
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-rt_prev));
    prev_velocity
        .fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&(-rt_prev * dt));

    let mut prev_gyro_bias = Matrix9x3::zeros();
    prev_gyro_bias.fixed_view_mut::<3, 3>(0, 0).copy_from(
        &(-jr_inv
            * so3_exp(&r_rot).matrix().transpose()
            * right_jacobian(&(j.rotation_gyro * dbg))
            * j.rotation_gyro),
    );
    prev_gyro_bias
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-j.velocity_gyro));
    prev_gyro_bias
        .fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&(-j.position_gyro));

    let mut prev_accel_bias = Matrix9x3::zeros();
    prev_accel_bias
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-j.velocity_accel));
    prev_accel_bias
        .fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&(-j.position_accel));

    let mut curr_pose = Matrix9x6::zeros();
    curr_pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);
    curr_pose.fixed_view_mut::<3, 3>(6, 3).copy_from(&rt_prev);

    let mut curr_velocity = Matrix9x3::zeros();
    curr_velocity
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&rt_prev);

    (
        residual,
        InertialJacobians {
            prev_pose,
            prev_velocity,
            prev_gyro_bias,
            prev_accel_bias,
            curr_pose,
            curr_velocity,
        },
    )
}

// ---------------------------------------------------------------------------
// Visual

/// Projects a world point into the stereo pair of a body at `pose`.
pub fn stereo_project(
    point_world: &Vector3<f64>,
    pose: &RigidTransform3,
    cam: &StereoCameraModel,
) -> Result<StereoObservation, FactorError> {
    let pc = cam
        .body_to_camera
        .transform_point(&pose.inverse_transform_point(point_world));
    cam.project_camera_point(&pc)
}

/// Observation minus predicted projection, stacked (u_left, v, u_right).
pub fn visual_residual(
    state: &NavState,
    lm: &Landmark,
    obs: &StereoObservation,
    cam: &StereoCameraModel,
) -> Result<Vector3<f64>, FactorError> {
    let predicted = stereo_project(&lm.position, &state.pose, cam)?;
    Ok(obs.as_vector() - predicted.as_vector())
}

/// Residual plus Jacobians with respect to the body pose (3x6) and the
/// landmark position (3x3).
pub fn visual_residual_and_jacobians(
    pose: &RigidTransform3,
    landmark: &Vector3<f64>,
    obs: &StereoObservation,
    cam: &StereoCameraModel,
) -> Result<(Vector3<f64>, Matrix3x6, Matrix3<f64>), FactorError> {
    let q = pose.inverse_transform_point(landmark);
    let pc = cam.body_to_camera.transform_point(&q);
    let predicted = cam.project_camera_point(&pc)?;
    let proj = cam.projection_jacobian(&pc);
    let r_cb = cam.body_to_camera.rotation.matrix();
    let r_t = pose.rotation.matrix().transpose();

    let mut d_pose = Matrix3x6::zeros();
    d_pose
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-proj * r_cb * skew(&q)));
    d_pose
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(proj * r_cb * r_t));
    let d_landmark = -proj * r_cb * r_t;
    Ok((obs.as_vector() - predicted.as_vector(), d_pose, d_landmark))
}

// ---------------------------------------------------------------------------
// GNSS

/// Antenna position in the world frame for a body pose.
pub fn antenna_position(pose: &RigidTransform3, lever_arm: &Vector3<f64>) -> Vector3<f64> {
    pose.transform_point(lever_arm)
}

/// Measured minus predicted antenna displacement since the anchor keyframe,
/// expressed in the anchor ENU frame.
pub fn gnss_residual(state: &NavState, data: &GnssFactorData) -> Vector3<f64> {
    let displacement = antenna_position(&state.pose, &data.lever_arm)
        - antenna_position(&data.anchor_pose, &data.lever_arm);
    data.z_hat - data.anchor_rotation.rotate(&displacement)
}

/// `[R_{A0<-W} R_{W<-B} [t_BA]x, -R_{A0<-W}]`
pub fn gnss_jacobian(state: &NavState, data: &GnssFactorData) -> Matrix3x6 {
    let r_aw = data.anchor_rotation.matrix();
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(r_aw * state.pose.rotation.matrix() * skew(&data.lever_arm)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r_aw));
    j
}

// ---------------------------------------------------------------------------
// Robust kernel

/// Huber kernel on the Mahalanobis norm `s = sqrt(squared_mahalanobis)`.
///
/// Returns the robust cost (`s^2` inside the threshold, `2 delta s - delta^2`
/// outside) and the IRLS weight `cost'(s) / (2 s)`.
pub fn robust_kernel(squared_mahalanobis: f64, delta: f64) -> (f64, f64) {
    let s = squared_mahalanobis.max(0.0).sqrt();
    if s <= delta {
        (squared_mahalanobis.max(0.0), 1.0)
    } else {
        (2.0 * delta * s - delta * delta, delta / s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preintegration::{integrate, predict, ImuNoiseModel, ImuSample};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform3 {
        RigidTransform3::new(so3_exp(&random_vec(rng, 2.5)), random_vec(rng, 50.0))
    }

    fn random_state(rng: &mut ChaCha8Rng) -> NavState {
        NavState {
            pose: random_pose(rng),
            velocity: random_vec(rng, 2.0),
            bias: ImuBias::new(random_vec(rng, 0.1), random_vec(rng, 0.01)),
        }
    }

    fn forward_camera() -> StereoCameraModel {
        // camera z along body x, camera x along -body y, camera y along -body z
        let r_cb = Rotation3::from_matrix_unchecked(Matrix3::new(
            0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0,
        ));
        StereoCameraModel {
            fx: 350.0,
            fy: 350.0,
            cx: 336.0,
            cy: 188.0,
            baseline: 0.12,
            body_to_camera: RigidTransform3::new(r_cb, Vector3::new(0.06, 0.1, -0.2)),
            width: 672.0,
            height: 376.0,
        }
    }

    fn rel_close(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>, tol: f64) -> bool {
        let scale = a.norm().max(b.norm()).max(1e-6);
        (a - b).norm() / scale < tol
    }

    // --- inertial -----------------------------------------------------------

    fn random_preintegration(rng: &mut ChaCha8Rng, lin: ImuBias) -> PreintegratedImu {
        let samples: Vec<_> = (0..80)
            .map(|k| ImuSample {
                timestamp: k as f64 * 0.005,
                gyro: random_vec(rng, 0.8),
                accel: random_vec(rng, 2.0) + Vector3::new(0.0, 0.0, 9.81),
            })
            .collect();
        integrate(&samples, 0.4, lin, &ImuNoiseModel::default()).unwrap()
    }

    #[test]
    fn inertial_residual_zero_at_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let g = Vector3::new(0.0, 0.0, -9.81);
        let prev = random_state(&mut rng);
        let pre = random_preintegration(&mut rng, prev.bias);
        let curr = predict(&prev, &pre, &g);
        assert!(inertial_residual(&prev, &curr, &pre, &g).norm() < 1e-9);
    }

    #[test]
    fn inertial_rotation_residual_is_first_order_in_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let g = Vector3::new(0.0, 0.0, -9.81);
        let prev = random_state(&mut rng);
        let pre = random_preintegration(&mut rng, prev.bias);
        let mut curr = predict(&prev, &pre, &g);
        let dtheta = random_vec(&mut rng, 1.0).normalize() * 1e-4;
        curr.pose.rotation = curr.pose.rotation.retract(&dtheta);
        let r = inertial_residual(&prev, &curr, &pre, &g);
        assert!((r.fixed_rows::<3>(0) - dtheta).norm() < 1e-8);
    }

    #[test]
    fn inertial_stationary_rest_is_zero() {
        let samples: Vec<_> = (0..200)
            .map(|k| ImuSample {
                timestamp: k as f64 / 200.0,
                gyro: Vector3::zeros(),
                accel: Vector3::new(0.0, 0.0, 9.81),
            })
            .collect();
        let pre = integrate(&samples, 1.0, ImuBias::default(), &ImuNoiseModel::default()).unwrap();
        let rest = NavState::at_rest(RigidTransform3::from_translation(Vector3::new(
            3.0, 1.0, 0.5,
        )));
        let r = inertial_residual(&rest, &rest, &pre, &Vector3::new(0.0, 0.0, -9.81));
        assert!(r.norm() < 1e-9, "{r:?}");
    }

    #[test]
    fn inertial_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = Vector3::new(0.0, 0.0, -9.81);
        let h = 1e-6;
        for _ in 0..100 {
            let prev = random_state(&mut rng);
            let lin = ImuBias::new(
                prev.bias.accel + random_vec(&mut rng, 0.02),
                prev.bias.gyro + random_vec(&mut rng, 0.002),
            );
            let pre = random_preintegration(&mut rng, lin);
            let mut curr = predict(&prev, &pre, &g);
            curr.pose = retract_pose(
                &curr.pose,
                &random_vec(&mut rng, 0.05),
                &random_vec(&mut rng, 0.1),
            );
            curr.velocity += random_vec(&mut rng, 0.1);
            let (_, jac) = inertial_residual_and_jacobians(&prev, &curr, &pre, &g);

            // numeric: 15 prev params, 9 curr params
            let eval = |p: &NavState, c: &NavState| inertial_residual(p, c, &pre, &g);
            let perturb = |s: &NavState, k: usize, d: f64| {
                let mut s = *s;
                let mut e = Vector3::zeros();
                e[k % 3] = d;
                match k / 3 {
                    0 => s.pose = retract_pose(&s.pose, &e, &Vector3::zeros()),
                    1 => s.pose = retract_pose(&s.pose, &Vector3::zeros(), &e),
                    2 => s.velocity += e,
                    3 => s.bias.gyro += e,
                    _ => s.bias.accel += e,
                }
                s
            };
            let mut num_prev = nalgebra::DMatrix::zeros(9, 15);
            let mut num_curr = nalgebra::DMatrix::zeros(9, 9);
            for k in 0..15 {
                let col = (eval(&perturb(&prev, k, h), &curr)
                    - eval(&perturb(&prev, k, -h), &curr))
                    / (2.0 * h);
                num_prev.set_column(k, &col);
            }
            for k in 0..9 {
                let col = (eval(&prev, &perturb(&curr, k, h))
                    - eval(&prev, &perturb(&curr, k, -h)))
                    / (2.0 * h);
                num_curr.set_column(k, &col);
            }
            let mut ana_prev = nalgebra::DMatrix::zeros(9, 15);
            ana_prev.view_mut((0, 0), (9, 6)).copy_from(&jac.prev_pose);
            ana_prev
                .view_mut((0, 6), (9, 3))
                .copy_from(&jac.prev_velocity);
            ana_prev
                .view_mut((0, 9), (9, 3))
                .copy_from(&jac.prev_gyro_bias);
            ana_prev
                .view_mut((0, 12), (9, 3))
                .copy_from(&jac.prev_accel_bias);
            let mut ana_curr = nalgebra::DMatrix::zeros(9, 9);
            ana_curr.view_mut((0, 0), (9, 6)).copy_from(&jac.curr_pose);
            ana_curr
                .view_mut((0, 6), (9, 3))
                .copy_from(&jac.curr_velocity);
            assert!(
                rel_close(&ana_prev, &num_prev, 1e-5),
                "{ana_prev} {num_prev}"
            );
            assert!(
                rel_close(&ana_curr, &num_curr, 1e-5),
                "{ana_curr} {num_curr}"
            );
        }
    }

    // --- visual -------------------------------------------------------------

    #[test]
    fn axis_point_projection() {
        let cam = StereoCameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 0.0,
            cy: 0.0,
            baseline: 0.1,
            body_to_camera: RigidTransform3::identity(),
            width: 640.0,
            height: 480.0,
        };
        let obs = stereo_project(
            &Vector3::new(0.0, 0.0, 1.0),
            &RigidTransform3::identity(),
            &cam,
        )
        .unwrap();
        assert_relative_eq!(obs.u_left, 0.0);
        assert_relative_eq!(obs.v, 0.0);
        assert_relative_eq!(obs.u_right, -10.0);
        assert!(matches!(
            stereo_project(
                &Vector3::new(0.0, 0.0, -1.0),
                &RigidTransform3::identity(),
                &cam
            ),
            Err(FactorError::BehindCamera { .. })
        ));
        assert!(stereo_project(
            &Vector3::new(0.0, 0.0, DEPTH_MIN),
            &RigidTransform3::identity(),
            &cam
        )
        .is_err());
    }

    #[test]
    fn triangulated_points_reproject_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let cam = forward_camera();
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let pc = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..30.0),
            );
            let world = pose.transform_point(&cam.body_to_camera.inverse().transform_point(&pc));
            let obs = stereo_project(&world, &pose, &cam).unwrap();
            let back = cam.triangulate(&obs).unwrap();
            let world_back =
                pose.transform_point(&cam.body_to_camera.inverse().transform_point(&back));
            let state = NavState::at_rest(pose);
            let r = visual_residual(
                &state,
                &Landmark {
                    position: world_back,
                },
                &obs,
                &cam,
            )
            .unwrap();
            assert!(r.norm() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn visual_residual_is_linear_in_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let cam = forward_camera();
        let pose = random_pose(&mut rng);
        let world = pose.transform_point(&Vector3::new(5.0, 0.3, 0.2));
        let state = NavState::at_rest(pose);
        let lm = Landmark { position: world };
        let mut obs = stereo_project(&world, &pose, &cam).unwrap();
        assert_eq!(
            visual_residual(&state, &lm, &obs, &cam).unwrap(),
            Vector3::zeros()
        );
        obs.u_left += 1.0;
        assert_relative_eq!(
            visual_residual(&state, &lm, &obs, &cam).unwrap(),
            Vector3::new(1.0, 0.0, 0.0),
            epsilon = 1e-9
        );
    }

    #[test]
    fn visual_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let cam = forward_camera();
        let h = 1e-6;
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let pb = Vector3::new(
                rng.random_range(1.0..20.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-1.0..1.0),
            );
            let lm = pose.transform_point(&pb);
            let obs = StereoObservation {
                u_left: 300.0,
                v: 200.0,
                u_right: 290.0,
            };
            let (_, d_pose, d_lm) = visual_residual_and_jacobians(&pose, &lm, &obs, &cam).unwrap();
            let res = |p: &RigidTransform3, l: &Vector3<f64>| {
                visual_residual_and_jacobians(p, l, &obs, &cam).unwrap().0
            };
            let mut num_pose = nalgebra::DMatrix::zeros(3, 6);
            let mut num_lm = nalgebra::DMatrix::zeros(3, 3);
            for k in 0..6 {
                let mut e = Vector3::zeros();
                e[k % 3] = h;
                let (plus, minus) = if k < 3 {
                    (
                        retract_pose(&pose, &e, &Vector3::zeros()),
                        retract_pose(&pose, &-e, &Vector3::zeros()),
                    )
                } else {
                    (
                        retract_pose(&pose, &Vector3::zeros(), &e),
                        retract_pose(&pose, &Vector3::zeros(), &-e),
                    )
                };
                num_pose.set_column(k, &((res(&plus, &lm) - res(&minus, &lm)) / (2.0 * h)));
            }
            for k in 0..3 {
                let mut e = Vector3::zeros();
                e[k] = h;
                num_lm.set_column(
                    k,
                    &((res(&pose, &(lm + e)) - res(&pose, &(lm - e))) / (2.0 * h)),
                );
            }
            let ana_pose = nalgebra::DMatrix::from_iterator(3, 6, d_pose.iter().copied());
            let ana_lm = nalgebra::DMatrix::from_iterator(3, 3, d_lm.iter().copied());
            assert!(
                rel_close(&ana_pose, &num_pose, 1e-5),
                "{ana_pose} {num_pose}"
            );
            assert!(rel_close(&ana_lm, &num_lm, 1e-5));
        }
    }

    // --- GNSS ---------------------------------------------------------------

    fn random_gnss(rng: &mut ChaCha8Rng) -> GnssFactorData {
        GnssFactorData {
            z_hat: random_vec(rng, 30.0),
            lever_arm: random_vec(rng, 0.8),
            sigma: Vector3::new(0.5, 0.5, 0.8),
            anchor_rotation: so3_exp(&random_vec(rng, 2.0)),
            anchor_pose: random_pose(rng),
        }
    }

    #[test]
    fn gnss_residual_zero_at_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let mut data = random_gnss(&mut rng);
        data.z_hat = Vector3::zeros();
        let state = NavState::at_rest(data.anchor_pose);
        assert_eq!(gnss_residual(&state, &data), Vector3::zeros());
    }

    #[test]
    fn gnss_residual_structural_simplification() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let data = GnssFactorData {
            z_hat: random_vec(&mut rng, 10.0),
            lever_arm: Vector3::zeros(),
            sigma: Vector3::repeat(0.5),
            anchor_rotation: Rotation3::identity(),
            anchor_pose: RigidTransform3::identity(),
        };
        let state = NavState::at_rest(random_pose(&mut rng));
        assert_relative_eq!(
            gnss_residual(&state, &data),
            data.z_hat - state.pose.translation,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gnss_residual_zero_on_generated_measurements() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for _ in 0..100 {
            let mut data = random_gnss(&mut rng);
            let state = NavState::at_rest(random_pose(&mut rng));
            let a_i = state.pose.transform_point(&data.lever_arm);
            let a_0 = data.anchor_pose.transform_point(&data.lever_arm);
            data.z_hat = data.anchor_rotation.rotate(&(a_i - a_0));
            assert!(gnss_residual(&state, &data).norm() < 1e-9);
        }
    }

    #[test]
    fn gnss_translation_consistency() {
        // Shifting the body and the measurement by the same amount, expressed
        // in A0, leaves the residual unchanged; shifting in W does not unless
        // R_{A0<-W} is the identity.
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let data = random_gnss(&mut rng);
        let state = NavState::at_rest(random_pose(&mut rng));
        let offset_a0 = Vector3::new(1.0, -2.0, 0.5);
        let mut moved = state;
        moved.pose.translation += data.anchor_rotation.inverse_rotate(&offset_a0);
        let mut shifted = data;
        shifted.z_hat += offset_a0;
        assert_relative_eq!(
            gnss_residual(&moved, &shifted),
            gnss_residual(&state, &data),
            epsilon = 1e-9
        );
        let mut moved_world = state;
        moved_world.pose.translation += offset_a0;
        assert!(
            (gnss_residual(&moved_world, &shifted) - gnss_residual(&state, &data)).norm() > 1e-3
        );
    }

    #[test]
    fn gnss_jacobian_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut data = random_gnss(&mut rng);
        data.lever_arm = Vector3::zeros();
        let state = NavState::at_rest(random_pose(&mut rng));
        let j = gnss_jacobian(&state, &data);
        assert_eq!(j.fixed_view::<3, 3>(0, 0).into_owned(), Matrix3::zeros());
        data.anchor_rotation = Rotation3::identity();
        let j = gnss_jacobian(&state, &data);
        assert_eq!(
            j.fixed_view::<3, 3>(0, 3).into_owned(),
            -Matrix3::identity()
        );
    }

    #[test]
    fn gnss_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let h = 1e-6;
        for _ in 0..100 {
            let data = random_gnss(&mut rng);
            let state = NavState::at_rest(random_pose(&mut rng));
            let analytic = gnss_jacobian(&state, &data);
            let mut numeric = Matrix3x6::zeros();
            for k in 0..6 {
                let mut e = Vector3::zeros();
                e[k % 3] = h;
                let (mut plus, mut minus) = (state, state);
                if k < 3 {
                    plus.pose = retract_pose(&state.pose, &e, &Vector3::zeros());
                    minus.pose = retract_pose(&state.pose, &-e, &Vector3::zeros());
                } else {
                    plus.pose = retract_pose(&state.pose, &Vector3::zeros(), &e);
                    minus.pose = retract_pose(&state.pose, &Vector3::zeros(), &-e);
                }
                numeric.set_column(
                    k,
                    &((gnss_residual(&plus, &data) - gnss_residual(&minus, &data)) / (2.0 * h)),
                );
            }
            let rel = (analytic - numeric).norm() / analytic.norm();
            assert!(rel < 1e-5, "{rel}");
        }
    }

    // --- robust kernel ------------------------------------------------------

    #[test]
    fn huber_values() {
        assert_eq!(robust_kernel(0.0, 1.0), (0.0, 1.0));
        let delta = 2.5;
        let (inside, _) = robust_kernel(delta * delta, delta);
        assert_relative_eq!(inside, delta * delta);
        assert_relative_eq!(2.0 * delta * delta - delta * delta, delta * delta);
        assert_eq!(robust_kernel(4.0, 1.0), (3.0, 0.5));
    }

    #[test]
    fn huber_is_c1_at_the_branch_point() {
        for delta in [0.5, 1.0, 2.447_651_936_039_926, 5.0] {
            let eps = 1e-9;
            let below = robust_kernel((delta - eps) * (delta - eps), delta);
            let above = robust_kernel((delta + eps) * (delta + eps), delta);
            assert!((below.0 - above.0).abs() < 1e-7);
            // derivative w.r.t. s is 2 s * weight on both sides
            let d_below = 2.0 * (delta - eps) * below.1;
            let d_above = 2.0 * (delta + eps) * above.1;
            assert!((d_below - d_above).abs() < 1e-7);
        }
    }
}
