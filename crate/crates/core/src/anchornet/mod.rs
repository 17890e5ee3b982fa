//! Stage 1: keyframe sampling from a motion sequence, and the object anchor
//! network that predicts the posed object point cloud for each keyframe from
//! the human point cloud, the object template, and the text prompt.

mod model;
mod train;

pub use model::{
    recover_keyframe, recover_keyframe_oracle, AnchorModel, AnchorNetConfig, EncoderStructure,
    ModelError,
};
pub use train::{
    build_training_pairs, decayed_lr, log_to_csv, pair_loss, train_anchornet, train_fresh,
    AnchorTrainConfig, TrainError, TrainLogRow, TrainingPair,
};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geom::{GeomError, PointCloud, RigidTransform};
use crate::rot::{rot6d_to_matrix, RotationError};
use crate::sequence::{HoiSequence, HumanPose, ObjectPose};

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("requested {requested} keyframes from {available} frames")]
    TooManyKeyframes { requested: usize, available: usize },
    #[error(transparent)]
    Rotation(#[from] RotationError),
}

/// How a window is summarized into a keyframe pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframeMode {
    /// Take the window's center frame (default).
    Center,
    /// Average positions over the window; rotations average in 6D and are
    /// re-orthonormalized, falling back to the center frame when degenerate.
    PoseMean,
}

/// Partitions `[0, n)` into `k` equal-width windows and returns each
/// window's center frame index (floor of the midpoint), strictly increasing.
pub fn sample_keyframes(n: usize, k: usize) -> Result<Vec<usize>, KeyframeError> {
    if k == 0 || k > n {
        return Err(KeyframeError::TooManyKeyframes { requested: k, available: n });
    }
    Ok((0..k)
        .map(|w| {
            let start = w * n / k;
            let end = (w + 1) * n / k;
            (start + end) / 2
        })
        .collect())
}

/// Representative `(frame_index, human pose, object pose)` per window.
pub fn keyframe_poses(
    seq: &HoiSequence,
    k: usize,
    mode: KeyframeMode,
) -> Result<Vec<(usize, HumanPose, ObjectPose)>, KeyframeError> {
    let n = seq.frame_count();
    let centers = sample_keyframes(n, k)?;
    match mode {
        KeyframeMode::Center => Ok(centers
            .into_iter()
            .map(|c| (c, seq.human[c].clone(), seq.object[c].clone()))
            .collect()),
        KeyframeMode::PoseMean => {
            let mut out = Vec::with_capacity(k);
            for (w, &c) in centers.iter().enumerate() {
                let (start, end) = (w * n / k, (w + 1) * n / k);
                let count = (end - start) as f64;
                let j = seq.joint_count();
                let mut joints = vec![[0.0; 3]; j];
                let mut rots = vec![[0.0; 6]; j];
                let mut opos = [0.0; 3];
                let mut orot = [0.0; 6];
                for f in start..end {
                    for (ji, p) in seq.human[f].joints.iter().enumerate() {
                        for a in 0..3 {
                            joints[ji][a] += p[a] / count;
                        }
                    }
                    for (ji, r) in seq.human[f].rotations.iter().enumerate() {
                        for a in 0..6 {
                            rots[ji][a] += r[a] / count;
                        }
                    }
                    for a in 0..3 {
                        opos[a] += seq.object[f].position[a] / count;
                    }
                    for a in 0..6 {
                        orot[a] += seq.object[f].rotation[a] / count;
                    }
                }
                let fix = |avg: [f64; 6], center: &[f64; 6]| match rot6d_to_matrix(&avg) {
                    Ok(m) => crate::rot::matrix_to_rot6d(&m),
                    Err(_) => *center,
                };
                let rots = rots
                    .iter()
                    .enumerate()
                    .map(|(ji, r)| fix(*r, &seq.human[c].rotations[ji]))
                    .collect();
                let orot = fix(orot, &seq.object[c].rotation);
                out.push((
                    c,
                    HumanPose { joints, rotations: rots },
                    ObjectPose { position: opos, rotation: orot },
                ));
            }
            Ok(out)
        }
    }
}

/// A recovered 3D interaction keyframe: paired human and object clouds plus
/// the rigid pose that generated the object cloud.
#[derive(Debug, Clone)]
pub struct HoiKeyframe {
    pub frame_index: usize,
    pub human_cloud: PointCloud,
    pub object_cloud: PointCloud,
    pub pose: RigidTransform,
    pub text_prompt: String,
}

impl HoiKeyframe {
    /// The object cloud must equal the template's canonical samples under
    /// `pose`, within 1e-6.
    pub fn validate(&self, canonical: &[Vector3<f64>]) -> Result<(), GeomError> {
        assert_eq!(self.object_cloud.len(), canonical.len());
        for (p, c) in self.object_cloud.points.iter().zip(canonical) {
            if (p - self.pose.apply(c)).norm() > 1e-6 {
                return Err(GeomError::DegenerateAlignment("object cloud is not posed canonical"));
            }
        }
        Ok(())
    }
}
