//! Deterministic geometry kernels shared by both pipeline stages and the
//! metric suite: point sampling, nearest-neighbor selection, signed distance
//! queries, basis-point-set encoding, and rigid alignment.

mod bps;
mod procrustes;
mod template;

pub use bps::{bps_basis, bps_encode, BPS_BASIS_COUNT, BPS_BASIS_RADIUS, BPS_BASIS_SEED};
pub use procrustes::procrustes_align;
pub use template::{
    box_mesh, octahedron_mesh, read_mesh, GeometryKind, ObjectTemplate, SdfGrid, TemplateError,
};

use nalgebra::Vector3;
use thiserror::Error;

use crate::rot::RotationMatrix;
use crate::sequence::ObjectPose;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("requested {requested} points from a cloud of {available}")]
    SizeError { requested: usize, available: usize },
    #[error("point cloud must be nonempty")]
    EmptyCloud,
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(&'static str),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Rotation(#[from] crate::rot::RotationError),
}

/// A cloud of 3D points, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeomError> {
        if points.is_empty() {
            return Err(GeomError::EmptyCloud);
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }
}

/// Points carrying a binary human/object tag in the fourth column.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedPointCloud {
    /// Rows of `[x, y, z, tag]` with tag 1 for human, 0 for object points.
    pub rows: Vec<[f64; 4]>,
}

impl TaggedPointCloud {
    /// Splits by the tag column, recovering (human, object) in row order.
    pub fn split(&self) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let mut human = Vec::new();
        let mut object = Vec::new();
        for r in &self.rows {
            let p = Vector3::new(r[0], r[1], r[2]);
            if r[3] == 1.0 {
                human.push(p);
            } else {
                object.push(p);
            }
        }
        (human, object)
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: RotationMatrix::identity(), translation: Vector3::zeros() }
    }

    pub fn from_pose(pose: &ObjectPose) -> Result<Self, crate::rot::RotationError> {
        Ok(Self {
            rotation: crate::rot::rot6d_to_matrix(&pose.rotation)?,
            translation: pose.position_vec(),
        })
    }

    pub fn to_pose(&self) -> ObjectPose {
        ObjectPose {
            position: self.translation.into(),
            rotation: crate::rot::matrix_to_rot6d(&self.rotation),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    /// Maps world-frame points back into the canonical frame.
    pub fn apply_inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse().apply(&(p - self.translation))
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }
}

/// Greedy farthest point sampling.
///
/// Starts at `seed_index`, then repeatedly adds the point maximizing its
/// minimum distance to the selected set. Ties break toward the lowest index;
/// output order is selection order.
pub fn farthest_point_sample(
    pc: &PointCloud,
    m: usize,
    seed_index: usize,
) -> Result<PointCloud, GeomError> {
    farthest_point_sample_indices(pc, m, seed_index)
        .map(|idx| PointCloud { points: idx.iter().map(|&i| pc.points[i]).collect() })
}

/// Index form of [`farthest_point_sample`].
pub fn farthest_point_sample_indices(
    pc: &PointCloud,
    m: usize,
    seed_index: usize,
) -> Result<Vec<usize>, GeomError> {
    let n = pc.len();
    if m > n || m == 0 {
        return Err(GeomError::SizeError { requested: m, available: n });
    }
    assert!(seed_index < n, "seed index out of range");
    let mut selected = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = seed_index;
    selected.push(current);
    for _ in 1..m {
        let cp = pc.points[current];
        let mut best = 0;
        let mut best_d2 = f64::NEG_INFINITY;
        for i in 0..n {
            let d2 = (pc.points[i] - cp).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            // Strict > keeps the lowest index on ties.
            if min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
        selected.push(current);
    }
    Ok(selected)
}

/// Selects the `m` human points nearest (by min point-to-point distance) to
/// the object cloud, ties broken by lowest index, output sorted ascending by
/// that distance.
pub fn knn_select_near(
    human: &PointCloud,
    object: &PointCloud,
    m: usize,
) -> Result<PointCloud, GeomError> {
    if m > human.len() || m == 0 {
        return Err(GeomError::SizeError { requested: m, available: human.len() });
    }
    let mut scored: Vec<(f64, usize)> = human
        .points
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let d2 = object
                .points
                .iter()
                .map(|o| (h - o).norm_squared())
                .fold(f64::INFINITY, f64::min);
            (d2, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(PointCloud { points: scored[..m].iter().map(|&(_, i)| human.points[i]).collect() })
}

/// Tags human rows with 1 and object rows with 0, concatenated human-first.
pub fn one_hot_tag(human: &PointCloud, object: &PointCloud) -> TaggedPointCloud {
    let mut rows = Vec::with_capacity(human.len() + object.len());
    for p in &human.points {
        rows.push([p.x, p.y, p.z, 1.0]);
    }
    for p in &object.points {
        rows.push([p.x, p.y, p.z, 0.0]);
    }
    TaggedPointCloud { rows }
}

/// Signed distances from `points` to the posed object surface, negative inside.
pub fn sdf_query(
    template: &ObjectTemplate,
    pose: &ObjectPose,
    points: &[Vector3<f64>],
) -> Result<Vec<f64>, GeomError> {
    let xf = RigidTransform::from_pose(pose)?;
    Ok(points.iter().map(|p| template.signed_distance(&xf.apply_inverse(p))).collect())
}

/// Hand-to-object distance: clamped surface distance plus the raw signed
/// value for penetration measures.
#[derive(Debug, Clone, Copy)]
pub struct HandObjectDistance {
    /// `max(signed, 0)`: zero when touching or inside.
    pub surface: f64,
    pub signed: f64,
}

pub fn min_hand_object_distance(
    hand: &Vector3<f64>,
    template: &ObjectTemplate,
    pose: &ObjectPose,
) -> Result<HandObjectDistance, GeomError> {
    let signed = sdf_query(template, pose, std::slice::from_ref(hand))?[0];
    Ok(HandObjectDistance { surface: signed.max(0.0), signed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    /// Brute-force greedy FPS used as the oracle in property tests.
    pub(crate) fn fps_oracle(pc: &PointCloud, m: usize, seed: usize) -> Vec<usize> {
        let mut selected = vec![seed];
        while selected.len() < m {
            let mut best = usize::MAX;
            let mut best_d = f64::NEG_INFINITY;
            for i in 0..pc.len() {
                let d = selected
                    .iter()
                    .map(|&s| (pc.points[i] - pc.points[s]).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
            selected.push(best);
        }
        selected
    }

    #[test]
    fn fps_selects_all_when_m_equals_len() {
        let pc = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        let out = farthest_point_sample(&pc, 3, 0).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.points[0], pc.points[0]);
    }

    #[test]
    fn fps_cube_corner_opposite() {
        let mut pts = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let pc = cloud(&pts);
        let out = farthest_point_sample(&pc, 2, 0).unwrap();
        assert_abs_diff_eq!(out.points[1], Vector3::new(1.0, 1.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn fps_errors_when_m_too_large() {
        let pc = cloud(&[[0.0; 3]]);
        assert!(matches!(
            farthest_point_sample(&pc, 2, 0),
            Err(GeomError::SizeError { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn knn_line_nearest_three() {
        let human = cloud(
            &(1..=10).map(|i| [i as f64, 0.0, 0.0]).collect::<Vec<_>>(),
        );
        let object = cloud(&[[0.0; 3]]);
        let out = knn_select_near(&human, &object, 3).unwrap();
        assert_eq!(out.points[0].x, 1.0);
        assert_eq!(out.points[1].x, 2.0);
        assert_eq!(out.points[2].x, 3.0);
    }

    #[test]
    fn knn_all_points_distance_sorted() {
        let human = cloud(&[[3.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let object = cloud(&[[0.0; 3]]);
        let out = knn_select_near(&human, &object, 3).unwrap();
        assert_eq!(out.points[0].x, 1.0);
        assert_eq!(out.points[2].x, 3.0);
    }

    #[test]
    fn one_hot_roundtrip() {
        let human = cloud(&[[1.0, 2.0, 3.0]]);
        let object = cloud(&[[4.0, 5.0, 6.0]]);
        let tagged = one_hot_tag(&human, &object);
        assert_eq!(tagged.rows[0], [1.0, 2.0, 3.0, 1.0]);
        assert_eq!(tagged.rows[1], [4.0, 5.0, 6.0, 0.0]);
        let (h, o) = tagged.split();
        assert_eq!(h, human.points);
        assert_eq!(o, object.points);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
            prop::collection::vec(
                (-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0),
                1..=max,
            )
            .prop_map(|pts| {
                PointCloud::new(pts.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect())
                    .unwrap()
            })
        }

        proptest! {
            #[test]
            fn fps_matches_oracle(pc in arb_cloud(64), m_frac in 0.0f64..1.0) {
                let m = 1 + ((pc.len() - 1) as f64 * m_frac) as usize;
                let ours = farthest_point_sample_indices(&pc, m, 0).unwrap();
                let oracle = fps_oracle(&pc, m, 0);
                prop_assert_eq!(ours, oracle);
            }

            #[test]
            fn knn_matches_bruteforce(h in arb_cloud(64), o in arb_cloud(16), m_frac in 0.0f64..1.0) {
                let m = 1 + ((h.len() - 1) as f64 * m_frac) as usize;
                let ours = knn_select_near(&h, &o, m).unwrap();
                let mut scored: Vec<(f64, usize)> = h.points.iter().enumerate().map(|(i, p)| {
                    (o.points.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min), i)
                }).collect();
                scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let expect: Vec<_> = scored[..m].iter().map(|&(_, i)| h.points[i]).collect();
                prop_assert_eq!(ours.points, expect);
            }

            #[test]
            fn tag_split_is_identity(h in arb_cloud(16), o in arb_cloud(16)) {
                let (hh, oo) = one_hot_tag(&h, &o).split();
                prop_assert_eq!(hh, h.points);
                prop_assert_eq!(oo, o.points);
            }
        }
    }
}
