//! Least-squares rigid alignment (Kabsch with reflection handling).

use nalgebra::Matrix3;

use super::{GeomError, PointCloud, RigidTransform};
use crate::rot::RotationMatrix;

/// Finds the rigid transform minimizing `sum ||R s_i + t - t_i||^2` over
/// index-corresponded clouds.
///
/// Centroid subtraction, cross-covariance SVD, and a determinant guard that
/// corrects reflections to proper rotations. Rank-deficient (collinear)
/// configurations are rejected.
pub fn procrustes_align(
    source: &PointCloud,
    target: &PointCloud,
) -> Result<RigidTransform, GeomError> {
    let n = source.len();
    if n < 3 || target.len() != n {
        return Err(GeomError::DegenerateAlignment("need >= 3 corresponded points"));
    }
    let mu_s = source.centroid();
    let mu_t = target.centroid();
    let mut h = Matrix3::zeros();
    for (s, t) in source.points.iter().zip(&target.points) {
        h += (t - mu_t) * (s - mu_s).transpose();
    }
    h /= n as f64;
    let svd = nalgebra::SVD::new(h, true, true);
    let u = svd.u.ok_or(GeomError::DegenerateAlignment("svd failed"))?;
    let v_t = svd.v_t.ok_or(GeomError::DegenerateAlignment("svd failed"))?;
    let sv = svd.singular_values;
    // Collinear sources leave the rotation about the line unconstrained.
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return Err(GeomError::DegenerateAlignment("rank-deficient configuration"));
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let rotation = RotationMatrix::try_new(r)
        .map_err(|_| GeomError::DegenerateAlignment("factorization not orthonormal"))?;
    let translation = mu_t - rotation.apply(&mu_s);
    Ok(RigidTransform { rotation, translation })
}
