//! Sequence-level data types and the flat per-frame feature layout.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rot::{rot6d_to_matrix, RotationError};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("frame index {0} out of range (N = {1})")]
    FrameOutOfRange(usize, usize),
    #[error("per-frame array '{0}' has length {1}, expected {2}")]
    LengthMismatch(&'static str, usize, usize),
    #[error("sequence must have at least one frame")]
    Empty,
    #[error("contact labels must be 0 or 1")]
    NonBinaryContact,
    #[error("flat frame has length {0}, expected {1}")]
    BadFlatWidth(usize, usize),
    #[error(transparent)]
    Rotation(#[from] RotationError),
}

/// One frame of human state: global joint positions and local 6D rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanPose {
    /// J x 3 global joint positions, meters.
    pub joints: Vec<[f64; 3]>,
    /// J x 6 local continuous rotations.
    pub rotations: Vec<[f64; 6]>,
}

impl HumanPose {
    pub fn joint(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.joints[i])
    }
}

/// One frame of object state: centroid position and 6D rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub position: [f64; 3],
    pub rotation: [f64; 6],
}

impl ObjectPose {
    pub fn identity() -> Self {
        Self { position: [0.0; 3], rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] }
    }

    pub fn position_vec(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

/// A 4D human-object interaction sequence.
///
/// Contact labels are binary, one per (frame, hand): column 0 left hand,
/// column 1 right hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiSequence {
    pub fps: f64,
    pub human: Vec<HumanPose>,
    pub object: Vec<ObjectPose>,
    pub contact: Vec<[f64; 2]>,
    pub text_prompt: String,
    pub object_id: String,
}

impl HoiSequence {
    pub fn frame_count(&self) -> usize {
        self.human.len()
    }

    pub fn joint_count(&self) -> usize {
        self.human.first().map_or(0, |p| p.joints.len())
    }

    /// Width of one flattened frame: `3J + 6J + 3 + 6 + 2`.
    pub fn feature_width(joint_count: usize) -> usize {
        9 * joint_count + 11
    }

    /// Checks lengths, binary contact labels, and that all rotations decode
    /// to proper rotations.
    pub fn validate(&self) -> Result<(), SequenceError> {
        let n = self.human.len();
        if n == 0 {
            return Err(SequenceError::Empty);
        }
        if self.object.len() != n {
            return Err(SequenceError::LengthMismatch("object", self.object.len(), n));
        }
        if self.contact.len() != n {
            return Err(SequenceError::LengthMismatch("contact", self.contact.len(), n));
        }
        let j = self.joint_count();
        for pose in &self.human {
            if pose.joints.len() != j {
                return Err(SequenceError::LengthMismatch("joints", pose.joints.len(), j));
            }
            if pose.rotations.len() != j {
                return Err(SequenceError::LengthMismatch("rotations", pose.rotations.len(), j));
            }
            for r in &pose.rotations {
                rot6d_to_matrix(r)?;
            }
        }
        for pose in &self.object {
            rot6d_to_matrix(&pose.rotation)?;
        }
        for c in &self.contact {
            if !c.iter().all(|&v| v == 0.0 || v == 1.0) {
                return Err(SequenceError::NonBinaryContact);
            }
        }
        Ok(())
    }
}

/// Flattens frame `n` as `[j (3J) | q (6J) | o (3) | r (6) | H (2)]`.
///
/// This layout is the single source of truth for the diffusion feature
/// vector; [`unflatten_frame`] inverts it exactly.
pub fn flatten_frame(seq: &HoiSequence, n: usize) -> Result<Vec<f64>, SequenceError> {
    let total = seq.frame_count();
    if n >= total {
        return Err(SequenceError::FrameOutOfRange(n, total));
    }
    let j = seq.joint_count();
    let mut out = Vec::with_capacity(HoiSequence::feature_width(j));
    for p in &seq.human[n].joints {
        out.extend_from_slice(p);
    }
    for r in &seq.human[n].rotations {
        out.extend_from_slice(r);
    }
    out.extend_from_slice(&seq.object[n].position);
    out.extend_from_slice(&seq.object[n].rotation);
    out.extend_from_slice(&seq.contact[n]);
    Ok(out)
}

/// Inverts [`flatten_frame`] for a skeleton with `joint_count` joints.
pub fn unflatten_frame(
    flat: &[f64],
    joint_count: usize,
) -> Result<(HumanPose, ObjectPose, [f64; 2]), SequenceError> {
    let d = HoiSequence::feature_width(joint_count);
    if flat.len() != d {
        return Err(SequenceError::BadFlatWidth(flat.len(), d));
    }
    let mut joints = Vec::with_capacity(joint_count);
    for i in 0..joint_count {
        joints.push([flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]]);
    }
    let qb = 3 * joint_count;
    let mut rotations = Vec::with_capacity(joint_count);
    for i in 0..joint_count {
        let s = qb + 6 * i;
        rotations.push([flat[s], flat[s + 1], flat[s + 2], flat[s + 3], flat[s + 4], flat[s + 5]]);
    }
    let ob = 9 * joint_count;
    let position = [flat[ob], flat[ob + 1], flat[ob + 2]];
    let mut rotation = [0.0; 6];
    rotation.copy_from_slice(&flat[ob + 3..ob + 9]);
    let contact = [flat[ob + 9], flat[ob + 10]];
    Ok((HumanPose { joints, rotations }, ObjectPose { position, rotation }, contact))
}

/// Layout offsets into a flattened frame, used by guidance and samplers to
/// address hand-joint and object slots without re-deriving arithmetic.
pub struct FrameLayout {
    pub joint_count: usize,
}

impl FrameLayout {
    pub fn width(&self) -> usize {
        HoiSequence::feature_width(self.joint_count)
    }

    /// Offset of joint `i`'s xyz block.
    pub fn joint_offset(&self, i: usize) -> usize {
        3 * i
    }

    pub fn rotations_offset(&self) -> usize {
        3 * self.joint_count
    }

    pub fn object_position_offset(&self) -> usize {
        9 * self.joint_count
    }

    pub fn object_rotation_offset(&self) -> usize {
        9 * self.joint_count + 3
    }

    pub fn contact_offset(&self) -> usize {
        9 * self.joint_count + 9
    }
}
