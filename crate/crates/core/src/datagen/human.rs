//! The 22-joint synthetic humanoid: rest pose, analytic two-bone arm reach,
//! and capsule-surface point cloud synthesis.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::PointCloud;
use crate::rot::{matrix_to_rot6d, RotationMatrix};
use crate::sequence::HumanPose;
use crate::skeleton::SkeletonSpec;

/// Default pelvis height above the ground plane (z-up), meters.
pub const ROOT_HEIGHT: f64 = 0.92;

/// Joint indices of the 22-joint humanoid.
pub mod joints {
    pub const ROOT: usize = 0;
    pub const CHEST: usize = 3;
    pub const L_SHOULDER: usize = 6;
    pub const L_ELBOW: usize = 7;
    pub const L_WRIST: usize = 8;
    pub const L_HAND: usize = 9;
    pub const R_SHOULDER: usize = 10;
    pub const R_ELBOW: usize = 11;
    pub const R_WRIST: usize = 12;
    pub const R_HAND: usize = 13;
    pub const L_FOOT: usize = 16;
    pub const R_FOOT: usize = 20;
}

/// Builds the 22-joint humanoid skeleton (z-up, facing +x, T-pose arms
/// along +/-y).
pub fn skeleton22() -> SkeletonSpec {
    // (parent, offset, radius)
    let def: [(i32, [f64; 3], f64); 22] = [
        (-1, [0.0, 0.0, 0.0], 0.10),      // 0 root (pelvis)
        (0, [0.0, 0.0, 0.12], 0.09),      // 1 spine1
        (1, [0.0, 0.0, 0.12], 0.09),      // 2 spine2
        (2, [0.0, 0.0, 0.12], 0.10),      // 3 chest
        (3, [0.0, 0.0, 0.10], 0.05),      // 4 neck
        (4, [0.0, 0.0, 0.12], 0.09),      // 5 head
        (3, [0.0, 0.16, 0.02], 0.05),     // 6 l_shoulder
        (6, [0.0, 0.28, 0.0], 0.045),     // 7 l_elbow
        (7, [0.0, 0.27, 0.0], 0.04),      // 8 l_wrist
        (8, [0.0, 0.08, 0.0], 0.04),      // 9 l_hand
        (3, [0.0, -0.16, 0.02], 0.05),    // 10 r_shoulder
        (10, [0.0, -0.28, 0.0], 0.045),   // 11 r_elbow
        (11, [0.0, -0.27, 0.0], 0.04),    // 12 r_wrist
        (12, [0.0, -0.08, 0.0], 0.04),    // 13 r_hand
        (0, [0.0, 0.10, -0.02], 0.07),    // 14 l_hip
        (14, [0.0, 0.0, -0.42], 0.06),    // 15 l_knee
        (15, [0.0, 0.0, -0.43], 0.05),    // 16 l_foot
        (16, [0.12, 0.0, -0.04], 0.03),   // 17 l_toe
        (0, [0.0, -0.10, -0.02], 0.07),   // 18 r_hip
        (18, [0.0, 0.0, -0.42], 0.06),    // 19 r_knee
        (19, [0.0, 0.0, -0.43], 0.05),    // 20 r_foot
        (20, [0.12, 0.0, -0.04], 0.03),   // 21 r_toe
    ];
    let mut named = BTreeMap::new();
    named.insert("root".into(), joints::ROOT);
    named.insert("left_hand".into(), joints::L_HAND);
    named.insert("right_hand".into(), joints::R_HAND);
    named.insert("left_foot".into(), joints::L_FOOT);
    named.insert("right_foot".into(), joints::R_FOOT);
    let spec = SkeletonSpec {
        joint_count: 22,
        parent_index: def.iter().map(|d| d.0).collect(),
        bone_rest_offsets: def.iter().map(|d| d.1).collect(),
        bone_radii: def.iter().map(|d| d.2).collect(),
        named_joints: named,
    };
    spec.validate().expect("built-in skeleton is valid");
    spec
}

/// Identity local rotations: the T-pose.
pub fn rest_pose_rotations(spec: &SkeletonSpec) -> Vec<[f64; 6]> {
    vec![[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]; spec.joint_count]
}

/// Shortest-arc rotation mapping unit vector `a` onto unit vector `b`.
pub fn shortest_arc(a: &Vector3<f64>, b: &Vector3<f64>) -> RotationMatrix {
    let cross = a.cross(b);
    let dot = a.dot(b).clamp(-1.0, 1.0);
    let sin = cross.norm();
    if sin < 1e-12 {
        if dot > 0.0 {
            return RotationMatrix::identity();
        }
        // Antiparallel: rotate pi about any axis orthogonal to a.
        let axis = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let perp = (axis - a * axis.dot(a)).normalize();
        return RotationMatrix::from_axis_angle(perp, std::f64::consts::PI);
    }
    RotationMatrix::from_axis_angle(cross / sin, sin.atan2(dot))
}

#[derive(Debug, Error)]
pub enum IkError {
    #[error("reach target {distance:.3} m from shoulder exceeds arm length {reach:.3} m")]
    Unreachable { distance: f64, reach: f64 },
}

/// Sets the shoulder and elbow local rotations of one arm so the hand joint
/// lands exactly on `target` (world frame). The wrist stays straight, so the
/// effective second bone spans elbow to hand.
///
/// `rotations` must already position the torso; the caller passes the global
/// chest rotation and shoulder position obtained from forward kinematics of
/// the torso chain.
#[allow(clippy::too_many_arguments)]
pub fn two_bone_ik(
    spec: &SkeletonSpec,
    rotations: &mut [[f64; 6]],
    left: bool,
    shoulder_pos: &Vector3<f64>,
    chest_global: &RotationMatrix,
    target: &Vector3<f64>,
    pole_hint: &Vector3<f64>,
) -> Result<(), IkError> {
    let (sh, el) = if left {
        (joints::L_SHOULDER, joints::L_ELBOW)
    } else {
        (joints::R_SHOULDER, joints::R_ELBOW)
    };
    let (wr, ha) = if left {
        (joints::L_WRIST, joints::L_HAND)
    } else {
        (joints::R_WRIST, joints::R_HAND)
    };
    let o_upper = spec.offset(el);
    let o_fore = spec.offset(wr) + spec.offset(ha);
    let l1 = o_upper.norm();
    let l2 = o_fore.norm();
    let to_target = target - shoulder_pos;
    let d = to_target.norm();
    if d > l1 + l2 {
        return Err(IkError::Unreachable { distance: d, reach: l1 + l2 });
    }
    let d = d.clamp((l1 - l2).abs() + 1e-6, l1 + l2 - 1e-9);
    let dir = to_target / to_target.norm();
    // Elbow interior geometry from the law of cosines.
    let cos_alpha = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).clamp(-1.0, 1.0);
    let sin_alpha = (1.0 - cos_alpha * cos_alpha).sqrt();
    let mut pole = pole_hint - dir * pole_hint.dot(&dir);
    if pole.norm() < 1e-9 {
        pole = Vector3::z() - dir * Vector3::z().dot(&dir);
        if pole.norm() < 1e-9 {
            pole = Vector3::x() - dir * Vector3::x().dot(&dir);
        }
    }
    let pole = pole.normalize();
    let elbow = shoulder_pos + (dir * cos_alpha + pole * sin_alpha) * l1;

    // Shoulder: map the rest upper-arm direction onto shoulder->elbow.
    let g_chest = chest_global;
    let upper_rest_world = g_chest.apply(&(o_upper / l1));
    let g_shoulder = shortest_arc(&upper_rest_world, &((elbow - shoulder_pos) / l1))
        .compose(g_chest);
    rotations[sh] = matrix_to_rot6d(&g_chest.inverse().compose(&g_shoulder));
    // Elbow: map the straight forearm direction onto elbow->target.
    let fore_rest_world = g_shoulder.apply(&(o_fore / l2));
    let g_elbow =
        shortest_arc(&fore_rest_world, &((target - elbow).normalize())).compose(&g_shoulder);
    rotations[el] = matrix_to_rot6d(&g_shoulder.inverse().compose(&g_elbow));
    rotations[wr] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    Ok(())
}

/// Samples `m1` points over the union of per-bone capsules, area-weighted
/// per capsule. Offsets are drawn in bone-local frames, so identical seeds
/// give clouds that are exactly equivariant to global pose translation.
pub fn synthesize_human_pointcloud(
    spec: &SkeletonSpec,
    pose: &HumanPose,
    m1: usize,
    seed: u64,
) -> PointCloud {
    assert!(m1 >= spec.joint_count, "need at least one point per joint");
    struct Bone {
        base: Vector3<f64>,
        frame: RotationMatrix,
        length: f64,
        radius: f64,
    }
    let mut bones = Vec::new();
    let mut areas = Vec::new();
    for i in 0..spec.joint_count {
        let p = spec.parent_index[i];
        if p == -1 {
            continue;
        }
        let a = pose.joint(p as usize);
        let b = pose.joint(i);
        let r = spec.bone_radii[i];
        let len = (b - a).norm();
        let axis = if len > 1e-9 { (b - a) / len } else { Vector3::z() };
        bones.push(Bone { base: a, frame: shortest_arc(&Vector3::z(), &axis), length: len, radius: r });
        areas.push(2.0 * std::f64::consts::PI * r * len + 4.0 * std::f64::consts::PI * r * r);
    }
    let total: f64 = areas.iter().sum();
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(m1);
    for _ in 0..m1 {
        let pick = rng.gen_range(0.0..total);
        let bi = cumulative.partition_point(|&c| c < pick).min(bones.len() - 1);
        let bone = &bones[bi];
        let side = 2.0 * std::f64::consts::PI * bone.radius * bone.length;
        let caps = 4.0 * std::f64::consts::PI * bone.radius * bone.radius;
        let local = if rng.gen_range(0.0..side + caps) < side {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let z = rng.gen_range(0.0..bone.length);
            Vector3::new(bone.radius * theta.cos(), bone.radius * theta.sin(), z)
        } else {
            // Hemispherical caps at both ends.
            let v = loop {
                let v = Vector3::new(
                    rng.gen_range(-1.0f64..1.0),
                    rng.gen_range(-1.0f64..1.0),
                    rng.gen_range(-1.0f64..1.0),
                );
                let n = v.norm();
                if n > 1e-6 && n <= 1.0 {
                    break v / n;
                }
            };
            if v.z >= 0.0 {
                Vector3::new(v.x * bone.radius, v.y * bone.radius, bone.length + v.z * bone.radius)
            } else {
                v * bone.radius
            }
        };
        points.push(bone.base + bone.frame.apply(&local));
    }
    PointCloud { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::forward_kinematics_full;
    use approx::assert_abs_diff_eq;

    #[test]
    fn skeleton22_shape() {
        let spec = skeleton22();
        assert_eq!(spec.joint_count, 22);
        assert_eq!(spec.joint("left_hand"), joints::L_HAND);
        assert_eq!(spec.joint("right_foot"), joints::R_FOOT);
    }

    #[test]
    fn rest_pose_feet_near_ground() {
        let spec = skeleton22();
        let rots = rest_pose_rotations(&spec);
        let joints_pos =
            crate::skeleton::forward_kinematics(&spec, Vector3::new(0.0, 0.0, ROOT_HEIGHT), &rots)
                .unwrap();
        assert!(joints_pos[joints::L_FOOT].z < 0.08);
        assert!(joints_pos[joints::L_FOOT].z > 0.0);
    }

    #[test]
    fn ik_places_hand_on_target() {
        let spec = skeleton22();
        let mut rots = rest_pose_rotations(&spec);
        let root = Vector3::new(0.0, 0.0, ROOT_HEIGHT);
        let (pos, globals) = forward_kinematics_full(&spec, root, &rots).unwrap();
        let target = pos[joints::R_SHOULDER] + Vector3::new(0.35, 0.05, -0.25);
        two_bone_ik(
            &spec,
            &mut rots,
            false,
            &pos[joints::R_SHOULDER],
            &globals[joints::CHEST],
            &target,
            &Vector3::new(-0.2, 0.0, -1.0),
        )
        .unwrap();
        let after = crate::skeleton::forward_kinematics(&spec, root, &rots).unwrap();
        assert_abs_diff_eq!(after[joints::R_HAND], target, epsilon = 1e-9);
    }

    #[test]
    fn ik_rejects_unreachable() {
        let spec = skeleton22();
        let mut rots = rest_pose_rotations(&spec);
        let root = Vector3::new(0.0, 0.0, ROOT_HEIGHT);
        let (pos, globals) = forward_kinematics_full(&spec, root, &rots).unwrap();
        let err = two_bone_ik(
            &spec,
            &mut rots,
            true,
            &pos[joints::L_SHOULDER],
            &globals[joints::CHEST],
            &(pos[joints::L_SHOULDER] + Vector3::new(2.0, 0.0, 0.0)),
            &Vector3::new(-0.2, 0.0, -1.0),
        );
        assert!(matches!(err, Err(IkError::Unreachable { .. })));
    }

    #[test]
    fn cloud_points_hug_bones() {
        let spec = skeleton22();
        let rots = rest_pose_rotations(&spec);
        let joints_pos =
            crate::skeleton::forward_kinematics(&spec, Vector3::new(0.0, 0.0, ROOT_HEIGHT), &rots)
                .unwrap();
        let pose = HumanPose {
            joints: joints_pos.iter().map(|p| [p.x, p.y, p.z]).collect(),
            rotations: rots,
        };
        let cloud = synthesize_human_pointcloud(&spec, &pose, 512, 3);
        let max_r = spec.bone_radii.iter().cloned().fold(0.0, f64::max);
        for p in &cloud.points {
            let mut best = f64::INFINITY;
            for i in 0..spec.joint_count {
                let parent = spec.parent_index[i];
                if parent == -1 {
                    continue;
                }
                let a = pose.joint(parent as usize);
                let b = pose.joint(i);
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                best = best.min((p - (a + ab * t)).norm());
            }
            assert!(best <= max_r + 1e-9, "point {best} m from every bone");
        }
    }

    #[test]
    fn cloud_translation_equivariance_given_same_seed() {
        let spec = skeleton22();
        let rots = rest_pose_rotations(&spec);
        let t = Vector3::new(1.5, -2.0, 0.3);
        let build = |root: Vector3<f64>| {
            let joints_pos = crate::skeleton::forward_kinematics(&spec, root, &rots).unwrap();
            HumanPose {
                joints: joints_pos.iter().map(|p| [p.x, p.y, p.z]).collect(),
                rotations: rots.clone(),
            }
        };
        let a = synthesize_human_pointcloud(&spec, &build(Vector3::zeros()), 256, 9);
        let b = synthesize_human_pointcloud(&spec, &build(t), 256, 9);
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_abs_diff_eq!(pa + t, *pb, epsilon = 1e-12);
        }
    }
}
