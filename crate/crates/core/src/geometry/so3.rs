//! Rotations in 3D and the exponential/logarithm maps of SO(3).
//!
//! Rotations are stored as orthonormal 3x3 matrices. Tangent vectors are
//! axis-angle vectors in radians, with the direction giving the axis and the
//! norm the angle.

use nalgebra::{Matrix3, Vector3};

/// Angle below which the Rodrigues coefficients switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-6;

/// Distance from pi below which the logarithm recovers the axis from the
/// symmetric part of the matrix instead of the skew part.
const NEAR_PI: f64 = 1e-3;

/// Skew-symmetric (cross-product) matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]; reads the axial vector of the skew part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// An element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3 {
    matrix: Matrix3<f64>,
}

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    /// Wraps a matrix that is already orthonormal with determinant +1.
    ///
    /// No projection is performed; use [`Rotation3::from_matrix_projected`]
    /// for matrices that only approximately satisfy the constraints.
    pub fn from_matrix_unchecked(matrix: Matrix3<f64>) -> Self {
        Self { matrix }
    }

    /// Nearest rotation (in the Frobenius sense) to an arbitrary 3x3 matrix.
    pub fn from_matrix_projected(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut correction = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            correction[(2, 2)] = -1.0;
        }
        Self {
            matrix: u * correction * v_t,
        }
    }

    /// Rotation from a unit quaternion given as (x, y, z, w), the TUM ordering.
    pub fn from_quaternion_xyzw(q: [f64; 4]) -> Self {
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        let unit = nalgebra::UnitQuaternion::from_quaternion(quat);
        Self {
            matrix: unit.to_rotation_matrix().into_inner(),
        }
    }

    /// Unit quaternion (x, y, z, w) with non-negative w.
    pub fn to_quaternion_xyzw(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.matrix);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
        [sign * q.i, sign * q.j, sign * q.k, sign * q.w]
    }

    /// Rotation about the world z axis by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        exp(&Vector3::new(0.0, 0.0, yaw))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn compose(&self, other: &Rotation3) -> Rotation3 {
        Rotation3 {
            matrix: self.matrix * other.matrix,
        }
    }

    pub fn inverse(&self) -> Rotation3 {
        Rotation3 {
            matrix: self.matrix.transpose(),
        }
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix * v
    }

    /// Rotates by the inverse, i.e. `R^T v`.
    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix.tr_mul(v)
    }

    /// Right perturbation `self * exp(delta)`.
    pub fn retract(&self, delta: &Vector3<f64>) -> Rotation3 {
        self.compose(&exp(delta))
    }

    /// Right difference `log(self^-1 * other)`.
    pub fn local(&self, other: &Rotation3) -> Vector3<f64> {
        log(&self.inverse().compose(other))
    }

    pub fn log(&self) -> Vector3<f64> {
        log(self)
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    /// Angle of `self^-1 * other`.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        self.local(other).norm()
    }

    /// Re-projects onto SO(3) to remove accumulated floating point drift.
    pub fn renormalized(&self) -> Rotation3 {
        Self::from_matrix_projected(&self.matrix)
    }

    /// Frobenius norm of `R^T R - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.matrix.tr_mul(&self.matrix) - Matrix3::identity()).norm()
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        self.compose(&rhs)
    }
}

/// Exponential map (Rodrigues formula).
pub fn exp(omega: &Vector3<f64>) -> Rotation3 {
    let theta_sq = omega.norm_squared();
    let theta = theta_sq.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    let k = skew(omega);
    Rotation3 {
        matrix: Matrix3::identity() + k * a + k * k * b,
    }
}

/// Principal logarithm, `|result| <= pi`.
///
/// At exactly pi the axis sign is ambiguous; the representative with a
/// non-negative z component (then y, then x) is returned.
pub fn log(r: &Rotation3) -> Vector3<f64> {
    let m = &r.matrix;
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = vee(m);
    let sin = w.norm();
    let theta = sin.atan2(cos);

    if theta < SMALL_ANGLE {
        return w * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > NEAR_PI {
        return w * (theta / sin);
    }

    // (R + R^T)/2 - cos I = (1 - cos) a a^T
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let k = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(k).into_owned();
    axis /= axis.norm();
    let dot = axis.dot(&w);
    if dot < 0.0 {
        axis = -axis;
    } else if dot.abs() < 1e-14 {
        axis = canonical_sign(axis);
    }
    axis * theta
}

fn canonical_sign(axis: Vector3<f64>) -> Vector3<f64> {
    for i in [2usize, 1, 0] {
        if axis[i].abs() > 1e-12 {
            return if axis[i] < 0.0 { -axis } else { axis };
        }
    }
    axis
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = omega.norm_squared();
    let theta = theta_sq.sqrt();
    let k = skew(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta_sq / 24.0, 1.0 / 6.0 - theta_sq / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta_sq,
            (theta - theta.sin()) / (theta_sq * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Inverse of [`right_jacobian`].
pub fn right_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = omega.norm_squared();
    let theta = theta_sq.sqrt();
    let k = skew(omega);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta_sq / 720.0
    } else {
        1.0 / theta_sq - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * c
}
