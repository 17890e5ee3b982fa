//! 6D continuous rotation representation.
//!
//! Rotations are carried through the pipeline as the first two columns of
//! the rotation matrix, decoded back via Gram-Schmidt. The representation is
//! continuous, which keeps it friendly to regression and diffusion outputs.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Orthonormality / determinant tolerance for [`RotationMatrix`] validation.
pub const ROTATION_TOL: f64 = 1e-5;

/// Norm threshold below which a 6D input is considered degenerate.
const DEGENERATE_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum RotationError {
    #[error("degenerate 6D rotation input: {0}")]
    Degenerate(&'static str),
    #[error("matrix is not a rotation: {0}")]
    NotARotation(&'static str),
}

/// A proper rotation: orthonormal columns, determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Validates orthonormality (within [`ROTATION_TOL`]) and det = +1.
    pub fn try_new(m: Matrix3<f64>) -> Result<Self, RotationError> {
        let gram = m.transpose() * m;
        let err = (gram - Matrix3::identity()).abs().max();
        if err > ROTATION_TOL {
            return Err(RotationError::NotARotation("columns not orthonormal"));
        }
        if (m.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(RotationError::NotARotation("determinant is not +1"));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Rotation by `angle` radians about a (non-zero) axis.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Self(nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }

    /// Geodesic angle to another rotation, in radians.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let cos = ((self.0 * other.0.transpose()).trace() - 1.0) / 2.0;
        cos.clamp(-1.0, 1.0).acos()
    }
}

/// Decodes a 6D rotation vector `[a1 | a2]` into a rotation matrix.
///
/// Gram-Schmidt: `c1 = normalize(a1)`, `c2 = normalize(a2 - (a2.c1) c1)`,
/// `c3 = c1 x c2`. Inputs whose halves are zero or parallel are rejected.
pub fn rot6d_to_matrix(v: &[f64; 6]) -> Result<RotationMatrix, RotationError> {
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 < DEGENERATE_EPS {
        return Err(RotationError::Degenerate("first 3-subvector is zero"));
    }
    let c1 = a1 / n1;
    if a2.norm() < DEGENERATE_EPS {
        return Err(RotationError::Degenerate("second 3-subvector is zero"));
    }
    let proj = a2 - c1 * a2.dot(&c1);
    let n2 = proj.norm();
    if n2 < DEGENERATE_EPS * a2.norm() {
        return Err(RotationError::Degenerate("subvectors are parallel"));
    }
    let c2 = proj / n2;
    let c3 = c1.cross(&c2);
    Ok(RotationMatrix(Matrix3::from_columns(&[c1, c2, c3])))
}

/// Encodes a rotation as its first two columns, concatenated.
///
/// Exact inverse of [`rot6d_to_matrix`] on valid rotations.
pub fn matrix_to_rot6d(r: &RotationMatrix) -> [f64; 6] {
    let m = r.matrix();
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// Uniformly random rotation (via quaternion sampling), for tests and datagen.
pub fn random_rotation(rng: &mut impl rand::Rng) -> RotationMatrix {
    use rand_distr::StandardNormal;
    loop {
        let q = nalgebra::Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-3 {
            let uq = nalgebra::UnitQuaternion::from_quaternion(q);
            return RotationMatrix(uq.to_rotation_matrix().into_inner());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_round_trip() {
        let v = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let r = rot6d_to_matrix(&v).unwrap();
        assert_abs_diff_eq!(r.matrix(), &Matrix3::identity(), epsilon = 1e-12);
        assert_eq!(matrix_to_rot6d(&RotationMatrix::identity()), v);
    }

    #[test]
    fn gram_schmidt_removes_parallel_part() {
        // Second half (1,1,0) projects to e2 after removing its e1 component.
        let v = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let r = rot6d_to_matrix(&v).unwrap();
        assert_abs_diff_eq!(r.matrix(), &Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn z90_encodes_to_expected_columns() {
        let r = RotationMatrix::from_axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2);
        let v = matrix_to_rot6d(&r);
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in v.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn round_trip_1000_random_rotations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let v = matrix_to_rot6d(&r);
            let back = rot6d_to_matrix(&v).unwrap();
            let err = (back.matrix() - r.matrix()).norm();
            assert!(err < 1e-6, "round-trip error {err}");
        }
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(rot6d_to_matrix(&[0.0; 6]).is_err());
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn non_rotation_rejected() {
        let m = Matrix3::new(2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RotationMatrix::try_new(m).is_err());
        // Reflection: orthonormal but det = -1.
        let m = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RotationMatrix::try_new(m).is_err());
    }

    #[test]
    fn decoded_outputs_are_proper() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let v: [f64; 6] = std::array::from_fn(|_| rng.sample(rand_distr::StandardNormal));
            if let Ok(r) = rot6d_to_matrix(&v) {
                let m = r.matrix();
                let gram_err = (m.transpose() * m - Matrix3::identity()).abs().max();
                assert!(gram_err < 1e-6);
                assert!((m.determinant() - 1.0).abs() < 1e-6);
            }
        }
    }
}
