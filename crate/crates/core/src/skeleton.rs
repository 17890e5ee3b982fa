//! Skeleton description and forward kinematics.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rot::{rot6d_to_matrix, RotationError, RotationMatrix};

/// Joint roles every skeleton must name.
pub const REQUIRED_ROLES: [&str; 5] = ["root", "left_hand", "right_hand", "left_foot", "right_foot"];

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("skeleton must have exactly one root (parent -1), found {0}")]
    RootCount(usize),
    #[error("joint {0} has out-of-range parent {1}")]
    BadParent(usize, i32),
    #[error("parent graph is not a tree (cycle or unreachable joint {0})")]
    NotATree(usize),
    #[error("bone radius of joint {0} must be positive")]
    BadRadius(usize),
    #[error("named role '{0}' missing or out of range")]
    BadRole(String),
    #[error(transparent)]
    Rotation(#[from] RotationError),
}

/// Rest-pose skeleton: a tree of joints with per-bone rest offsets and radii.
///
/// `parent_index[i] == -1` marks the root. `bone_rest_offsets[i]` is the
/// offset of joint `i` from its parent in the parent's local frame, meters.
/// `bone_radii` drive capsule surface sampling in the data generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub joint_count: usize,
    pub parent_index: Vec<i32>,
    pub bone_rest_offsets: Vec<[f64; 3]>,
    pub bone_radii: Vec<f64>,
    pub named_joints: BTreeMap<String, usize>,
}

impl SkeletonSpec {
    /// Validates the tree structure, radii, and required named roles.
    pub fn validate(&self) -> Result<(), SkeletonError> {
        let j = self.joint_count;
        if self.parent_index.len() != j
            || self.bone_rest_offsets.len() != j
            || self.bone_radii.len() != j
        {
            return Err(SkeletonError::NotATree(j));
        }
        let roots = self.parent_index.iter().filter(|&&p| p == -1).count();
        if roots != 1 {
            return Err(SkeletonError::RootCount(roots));
        }
        for (i, &p) in self.parent_index.iter().enumerate() {
            if p != -1 && (p < 0 || p as usize >= j) {
                return Err(SkeletonError::BadParent(i, p));
            }
        }
        // Every joint must reach the root without revisiting a joint.
        for i in 0..j {
            let mut cur = i;
            let mut steps = 0;
            while self.parent_index[cur] != -1 {
                cur = self.parent_index[cur] as usize;
                steps += 1;
                if steps > j {
                    return Err(SkeletonError::NotATree(i));
                }
            }
        }
        for (i, &r) in self.bone_radii.iter().enumerate() {
            if !(r > 0.0) {
                return Err(SkeletonError::BadRadius(i));
            }
        }
        for role in REQUIRED_ROLES {
            match self.named_joints.get(role) {
                Some(&idx) if idx < j => {}
                _ => return Err(SkeletonError::BadRole(role.to_string())),
            }
        }
        let root = self.named_joints["root"];
        if self.parent_index[root] != -1 {
            return Err(SkeletonError::BadRole("root".to_string()));
        }
        Ok(())
    }

    pub fn joint(&self, role: &str) -> usize {
        self.named_joints[role]
    }

    pub fn offset(&self, joint: usize) -> Vector3<f64> {
        Vector3::from(self.bone_rest_offsets[joint])
    }

    /// Joints in parent-before-child order (root first).
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.joint_count);
        let mut placed = vec![false; self.joint_count];
        while order.len() < self.joint_count {
            for i in 0..self.joint_count {
                if placed[i] {
                    continue;
                }
                let p = self.parent_index[i];
                if p == -1 || placed[p as usize] {
                    placed[i] = true;
                    order.push(i);
                }
            }
        }
        order
    }
}

/// Poses a skeleton: local 6D rotations per joint, root pinned at `root_position`.
///
/// Global rotation composes down the chain (`G_i = G_parent * R_i`); joint
/// positions are `p_i = p_parent + G_parent * offset_i`.
pub fn forward_kinematics(
    spec: &SkeletonSpec,
    root_position: Vector3<f64>,
    rotations: &[[f64; 6]],
) -> Result<Vec<Vector3<f64>>, SkeletonError> {
    assert_eq!(rotations.len(), spec.joint_count, "one 6D rotation per joint");
    let mut globals: Vec<RotationMatrix> = vec![RotationMatrix::identity(); spec.joint_count];
    let mut positions = vec![Vector3::zeros(); spec.joint_count];
    for &i in &spec.topological_order() {
        let local = rot6d_to_matrix(&rotations[i])?;
        match spec.parent_index[i] {
            -1 => {
                globals[i] = local;
                positions[i] = root_position;
            }
            p => {
                let p = p as usize;
                globals[i] = globals[p].compose(&local);
                positions[i] = positions[p] + globals[p].apply(&spec.offset(i));
            }
        }
    }
    Ok(positions)
}

/// Global joint rotations alongside positions; the data generator needs both.
pub fn forward_kinematics_full(
    spec: &SkeletonSpec,
    root_position: Vector3<f64>,
    rotations: &[[f64; 6]],
) -> Result<(Vec<Vector3<f64>>, Vec<RotationMatrix>), SkeletonError> {
    assert_eq!(rotations.len(), spec.joint_count);
    let mut globals: Vec<RotationMatrix> = vec![RotationMatrix::identity(); spec.joint_count];
    let mut positions = vec![Vector3::zeros(); spec.joint_count];
    for &i in &spec.topological_order() {
        let local = rot6d_to_matrix(&rotations[i])?;
        match spec.parent_index[i] {
            -1 => {
                globals[i] = local;
                positions[i] = root_position;
            }
            p => {
                let p = p as usize;
                globals[i] = globals[p].compose(&local);
                positions[i] = positions[p] + globals[p].apply(&spec.offset(i));
            }
        }
    }
    Ok((positions, globals))
}
