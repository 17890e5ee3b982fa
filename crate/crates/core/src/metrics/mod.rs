//! The evaluation suite: human-motion metrics (foot sliding, FID,
//! R-precision), interaction metrics (contact precision/recall/F1, contact
//! percentage, hand penetration), and ground-truth difference metrics
//! (MPJPE, root/object translation, object orientation).
//!
//! Distances are reported in centimeters, orientations in radians.

mod extractor;
mod fid;
mod report;

pub use extractor::{train_extractor, ExtractorConfig, TrainedExtractor};
pub use fid::{fid_from_features, r_precision, RetrievalItem, SequenceEmbedder};
pub use report::{evaluate_corpus, report_csv, MetricReport, SequenceMetrics, METRIC_COLUMNS};

use nalgebra::Vector3;
use thiserror::Error;

use crate::datagen::TAU_CONTACT;
use crate::geom::{sdf_query, GeomError, ObjectTemplate};
use crate::rot::{rot6d_to_matrix, RotationError};
use crate::sequence::HoiSequence;
use crate::skeleton::SkeletonSpec;

pub const M_TO_CM: f64 = 100.0;
/// Foot-height gate for the sliding score, meters.
pub const FOOT_HEIGHT_THRESH: f64 = 0.05;
/// Per-axis hand probe offset for the penetration score, meters.
pub const HAND_PROBE_OFFSET: f64 = 0.015;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("sequences differ in shape: {0}")]
    ShapeMismatch(&'static str),
    #[error("contact labels must be binary")]
    NonBinary,
    #[error("retrieval pool of {pool} exceeds {available} distinct prompts")]
    PoolTooLarge { pool: usize, available: usize },
    #[error(transparent)]
    Rotation(#[from] RotationError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

fn check_same_shape(pred: &HoiSequence, gt: &HoiSequence) -> Result<(), MetricError> {
    if pred.frame_count() != gt.frame_count() {
        return Err(MetricError::ShapeMismatch("frame count"));
    }
    if pred.joint_count() != gt.joint_count() {
        return Err(MetricError::ShapeMismatch("joint count"));
    }
    Ok(())
}

/// Mean per-joint position error, centimeters.
pub fn mpjpe(pred: &HoiSequence, gt: &HoiSequence) -> Result<f64, MetricError> {
    check_same_shape(pred, gt)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (hp, hg) in pred.human.iter().zip(&gt.human) {
        for (a, b) in hp.joints.iter().zip(&hg.joints) {
            total += (Vector3::from(*a) - Vector3::from(*b)).norm();
            count += 1;
        }
    }
    Ok(total / count as f64 * M_TO_CM)
}

/// Root-joint translation error, centimeters.
pub fn t_root(pred: &HoiSequence, gt: &HoiSequence, root_joint: usize) -> Result<f64, MetricError> {
    check_same_shape(pred, gt)?;
    let n = pred.frame_count() as f64;
    let total: f64 = pred
        .human
        .iter()
        .zip(&gt.human)
        .map(|(a, b)| (a.joint(root_joint) - b.joint(root_joint)).norm())
        .sum();
    Ok(total / n * M_TO_CM)
}

/// Object centroid position error, centimeters.
pub fn t_obj(pred: &HoiSequence, gt: &HoiSequence) -> Result<f64, MetricError> {
    check_same_shape(pred, gt)?;
    let n = pred.frame_count() as f64;
    let total: f64 = pred
        .object
        .iter()
        .zip(&gt.object)
        .map(|(a, b)| (a.position_vec() - b.position_vec()).norm())
        .sum();
    Ok(total / n * M_TO_CM)
}

/// Mean geodesic object orientation error, radians.
pub fn o_obj(pred: &HoiSequence, gt: &HoiSequence) -> Result<f64, MetricError> {
    check_same_shape(pred, gt)?;
    let n = pred.frame_count() as f64;
    let mut total = 0.0;
    for (a, b) in pred.object.iter().zip(&gt.object) {
        let ra = rot6d_to_matrix(&a.rotation)?;
        let rb = rot6d_to_matrix(&b.rotation)?;
        total += ra.angle_to(&rb);
    }
    Ok(total / n)
}

/// Foot sliding score, centimeters: height-weighted accumulated horizontal
/// translation of the named feet while near the ground, averaged over frame
/// transitions. The transition height is the lower of the two endpoint
/// heights; the weight `2 - 2^(h / H)` fades to zero at the gate height.
pub fn foot_sliding(seq: &HoiSequence, spec: &SkeletonSpec, h_thresh: f64) -> f64 {
    let feet = [spec.joint("left_foot"), spec.joint("right_foot")];
    let n = seq.frame_count();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for w in seq.human.windows(2) {
        for &foot in &feet {
            let a = w[0].joint(foot);
            let b = w[1].joint(foot);
            let h = a.z.min(b.z);
            if h < h_thresh {
                let dxy = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
                total += dxy * (2.0 - 2f64.powf(h / h_thresh));
            }
        }
    }
    total / (n - 1) as f64 * M_TO_CM
}

/// Micro-averaged contact precision, recall, and F1 over all (frame, hand)
/// cells. Empty denominators yield 0 by convention.
pub fn contact_prf(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<(f64, f64, f64), MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::ShapeMismatch("label length"));
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (p, g) in pred.iter().zip(gt) {
        for hand in 0..2 {
            let (pv, gv) = (p[hand], g[hand]);
            if !((pv == 0.0 || pv == 1.0) && (gv == 0.0 || gv == 1.0)) {
                return Err(MetricError::NonBinary);
            }
            match (pv == 1.0, gv == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Per-frame geometric contact detection: hand surface distance <= tau.
pub fn per_frame_contact(
    seq: &HoiSequence,
    spec: &SkeletonSpec,
    template: &ObjectTemplate,
    tau: f64,
) -> Result<Vec<[bool; 2]>, MetricError> {
    let lh = spec.joint("left_hand");
    let rh = spec.joint("right_hand");
    let mut out = Vec::with_capacity(seq.frame_count());
    for (pose, obj) in seq.human.iter().zip(&seq.object) {
        let d = sdf_query(template, obj, &[pose.joint(lh), pose.joint(rh)])?;
        out.push([d[0].max(0.0) <= tau, d[1].max(0.0) <= tau]);
    }
    Ok(out)
}

/// Fraction of frames with detected contact. Either-hand by default;
/// `per_hand` averages the two per-hand rates instead.
pub fn contact_percentage(
    seq: &HoiSequence,
    spec: &SkeletonSpec,
    template: &ObjectTemplate,
    tau: f64,
    per_hand: bool,
) -> Result<f64, MetricError> {
    let flags = per_frame_contact(seq, spec, template, tau)?;
    let n = flags.len() as f64;
    if per_hand {
        let l = flags.iter().filter(|f| f[0]).count() as f64;
        let r = flags.iter().filter(|f| f[1]).count() as f64;
        Ok((l + r) / (2.0 * n))
    } else {
        Ok(flags.iter().filter(|f| f[0] || f[1]).count() as f64 / n)
    }
}

/// Default-threshold contact percentage (either hand).
pub fn contact_percentage_default(
    seq: &HoiSequence,
    spec: &SkeletonSpec,
    template: &ObjectTemplate,
) -> Result<f64, MetricError> {
    contact_percentage(seq, spec, template, TAU_CONTACT, false)
}

/// The 7 penetration probe points around one hand joint.
pub fn hand_probes(hand: Vector3<f64>) -> [Vector3<f64>; 7] {
    let e = HAND_PROBE_OFFSET;
    [
        hand,
        hand + Vector3::new(e, 0.0, 0.0),
        hand - Vector3::new(e, 0.0, 0.0),
        hand + Vector3::new(0.0, e, 0.0),
        hand - Vector3::new(0.0, e, 0.0),
        hand + Vector3::new(0.0, 0.0, e),
        hand - Vector3::new(0.0, 0.0, e),
    ]
}

/// Mean depth over penetrating probes (negative SDF values), 0 when none
/// penetrate. Input in meters, output in meters.
pub fn mean_penetration_depth(sdf_values: &[f64]) -> f64 {
    let penetrating: Vec<f64> = sdf_values.iter().filter(|&&v| v < 0.0).map(|v| -v).collect();
    if penetrating.is_empty() {
        0.0
    } else {
        penetrating.iter().sum::<f64>() / penetrating.len() as f64
    }
}

/// Hand penetration score, centimeters: per frame, the mean |SDF| over
/// penetrating probe points (both hands pooled, 0 when none penetrate),
/// averaged over frames.
pub fn penetration_score(
    seq: &HoiSequence,
    spec: &SkeletonSpec,
    template: &ObjectTemplate,
) -> Result<f64, MetricError> {
    let lh = spec.joint("left_hand");
    let rh = spec.joint("right_hand");
    let mut total = 0.0;
    for (pose, obj) in seq.human.iter().zip(&seq.object) {
        let mut probes = Vec::with_capacity(14);
        probes.extend(hand_probes(pose.joint(lh)));
        probes.extend(hand_probes(pose.joint(rh)));
        total += mean_penetration_depth(&sdf_query(template, obj, &probes)?);
    }
    Ok(total / seq.frame_count() as f64 * M_TO_CM)
}
