use nalgebra::Vector3;

use super::so3::Rotation3;

/// Rigid transform `T_{A<-B}`: maps points expressed in B into A.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RigidTransform3 {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl RigidTransform3 {
    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Rotation3::identity(), translation)
    }

    pub fn compose(&self, other: &RigidTransform3) -> RigidTransform3 {
        RigidTransform3 {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform3 {
        let rotation = self.rotation.inverse();
        RigidTransform3 {
            translation: -rotation.rotate(&self.translation),
            rotation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Applies the inverse transform without forming it.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_rotate(&(p - self.translation))
    }
}

impl std::ops::Mul for RigidTransform3 {
    type Output = RigidTransform3;
    fn mul(self, rhs: RigidTransform3) -> RigidTransform3 {
        self.compose(&rhs)
    }
}

/// `p -> scale * R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self {
            scale: 1.0,
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }
}

impl SimilarityTransform {
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) * self.scale + self.translation
    }

    /// Applies the transform to a pose; the scale only affects translation.
    pub fn transform_pose(&self, pose: &RigidTransform3) -> RigidTransform3 {
        RigidTransform3 {
            rotation: self.rotation.compose(&pose.rotation),
            translation: self.transform_point(&pose.translation),
        }
    }

    pub fn rigid(&self) -> RigidTransform3 {
        RigidTransform3::new(self.rotation, self.translation)
    }
}
