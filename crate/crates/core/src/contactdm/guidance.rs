//! Reconstruction guidance: a gradient step on the clean-signal estimate
//! that pulls labeled hands onto the object surface during sampling.

use ndarray::Array2;

use crate::geom::{sdf_query, GeomError, ObjectTemplate};
use crate::rot::rot6d_to_matrix;
use crate::sequence::{FrameLayout, ObjectPose};

/// Result of one guidance application.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceOutcome {
    pub loss_before: f64,
    pub loss_after: f64,
    /// Step halvings taken before the loss decreased (0 when the first
    /// attempt already decreased it; capped at `MAX_HALVINGS`).
    pub halvings: u32,
    /// True when every attempt increased the loss and the correction was
    /// dropped entirely.
    pub reverted: bool,
}

pub const MAX_HALVINGS: u32 = 5;
/// Finite-difference step for surface-distance gradients, meters.
const SDF_GRAD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GuidanceConfig {
    pub enabled: bool,
    /// Base weight w0; the applied step is `w0 * (1 - alpha_bar_t)`.
    pub weight: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { enabled: true, weight: 1.0 }
    }
}

/// Contact loss over a denormalized frame matrix:
/// `sum over (frame, hand) with label >= 0.5 of max(surface distance, 0)^2`.
pub fn contact_loss(
    x0: &Array2<f64>,
    layout: &FrameLayout,
    hand_joints: (usize, usize),
    template: &ObjectTemplate,
) -> Result<f64, GeomError> {
    let mut total = 0.0;
    for frame in x0.rows() {
        let frame = frame.as_slice().expect("contiguous row");
        let Some((pose, hands)) = frame_pose_and_hands(frame, layout, hand_joints) else {
            continue;
        };
        for (active, hand) in hands {
            if !active {
                continue;
            }
            let d = sdf_query(template, &pose, &[hand])?[0].max(0.0);
            total += d * d;
        }
    }
    Ok(total)
}

fn frame_pose_and_hands(
    frame: &[f64],
    layout: &FrameLayout,
    hand_joints: (usize, usize),
) -> Option<(ObjectPose, [(bool, nalgebra::Vector3<f64>); 2])> {
    let ob = layout.object_position_offset();
    let rb = layout.object_rotation_offset();
    let cb = layout.contact_offset();
    let mut rotation = [0.0; 6];
    rotation.copy_from_slice(&frame[rb..rb + 6]);
    // Mid-sampling estimates can carry degenerate rotations; those frames
    // are skipped rather than guided.
    rot6d_to_matrix(&rotation).ok()?;
    let pose = ObjectPose { position: [frame[ob], frame[ob + 1], frame[ob + 2]], rotation };
    let hand = |j: usize| {
        let o = layout.joint_offset(j);
        nalgebra::Vector3::new(frame[o], frame[o + 1], frame[o + 2])
    };
    Some((
        pose,
        [
            (frame[cb] >= 0.5, hand(hand_joints.0)),
            (frame[cb + 1] >= 0.5, hand(hand_joints.1)),
        ],
    ))
}

/// The gradient of `contact_loss` with respect to hand-joint coordinates
/// only (the object SDF is treated as fixed within the step). Entries
/// outside hand slots are zero.
pub fn contact_loss_gradient(
    x0: &Array2<f64>,
    layout: &FrameLayout,
    hand_joints: (usize, usize),
    template: &ObjectTemplate,
) -> Result<Array2<f64>, GeomError> {
    let mut grad = Array2::zeros(x0.raw_dim());
    for (fi, frame) in x0.rows().into_iter().enumerate() {
        let frame = frame.as_slice().expect("contiguous row");
        let Some((pose, hands)) = frame_pose_and_hands(frame, layout, hand_joints) else {
            continue;
        };
        for (hi, (active, hand)) in hands.iter().enumerate() {
            if !active {
                continue;
            }
            let d = sdf_query(template, &pose, std::slice::from_ref(hand))?[0];
            if d <= 0.0 {
                continue;
            }
            // d L / d p = 2 d * grad(sdf), central differences per axis.
            let joint = if hi == 0 { hand_joints.0 } else { hand_joints.1 };
            let off = layout.joint_offset(joint);
            for axis in 0..3 {
                let mut plus = *hand;
                let mut minus = *hand;
                plus[axis] += SDF_GRAD_EPS;
                minus[axis] -= SDF_GRAD_EPS;
                let dp = sdf_query(template, &pose, &[plus, minus])?;
                let slope = (dp[0] - dp[1]) / (2.0 * SDF_GRAD_EPS);
                grad[[fi, off + axis]] = 2.0 * d * slope;
            }
        }
    }
    Ok(grad)
}

/// Applies one guidance correction to a denormalized clean-signal estimate:
/// `x0 <- x0 - weight * (1 - alpha_bar_t) * grad(contact loss)`, halving the
/// step until the loss decreases (at most [`MAX_HALVINGS`] times) and
/// reverting when no decrease is found. Zero active labels make this a
/// no-op with an exactly unchanged matrix.
pub fn reconstruction_guidance(
    x0: &mut Array2<f64>,
    layout: &FrameLayout,
    hand_joints: (usize, usize),
    template: &ObjectTemplate,
    alpha_bar_t: f64,
    weight: f64,
) -> Result<GuidanceOutcome, GeomError> {
    let loss_before = contact_loss(x0, layout, hand_joints, template)?;
    if loss_before == 0.0 {
        return Ok(GuidanceOutcome { loss_before, loss_after: loss_before, halvings: 0, reverted: false });
    }
    let grad = contact_loss_gradient(x0, layout, hand_joints, template)?;
    let mut scale = weight * (1.0 - alpha_bar_t);
    for halvings in 0..=MAX_HALVINGS {
        let candidate = &*x0 - &(&grad * scale);
        let loss_after = contact_loss(&candidate, layout, hand_joints, template)?;
        if loss_after < loss_before {
            *x0 = candidate;
            return Ok(GuidanceOutcome { loss_before, loss_after, halvings, reverted: false });
        }
        scale *= 0.5;
    }
    Ok(GuidanceOutcome { loss_before, loss_after: loss_before, halvings: MAX_HALVINGS, reverted: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::GeometryKind;
    use crate::sequence::HoiSequence;
    use nalgebra::Vector3;

    fn sphere() -> ObjectTemplate {
        ObjectTemplate::new("s", GeometryKind::Sphere { radius: 0.1 }, 64, 1, Vector3::zeros())
            .unwrap()
    }

    /// Single-frame matrix with one 2-joint "skeleton": hands are joints 0/1.
    fn frame_with(hand_r: [f64; 3], label_r: f64, obj: [f64; 3]) -> (Array2<f64>, FrameLayout) {
        let layout = FrameLayout { joint_count: 2 };
        let d = layout.width();
        let mut m = Array2::zeros((1, d));
        // left hand far away
        m[[0, 0]] = 5.0;
        for (a, v) in hand_r.iter().enumerate() {
            m[[0, 3 + a]] = *v;
        }
        // identity rotations for both joints and the object
        for base in [layout.rotations_offset(), layout.rotations_offset() + 6] {
            m[[0, base]] = 1.0;
            m[[0, base + 4]] = 1.0;
        }
        for (a, v) in obj.iter().enumerate() {
            m[[0, layout.object_position_offset() + a]] = *v;
        }
        m[[0, layout.object_rotation_offset()]] = 1.0;
        m[[0, layout.object_rotation_offset() + 4]] = 1.0;
        m[[0, layout.contact_offset() + 1]] = label_r;
        (m, layout)
    }

    #[test]
    fn zero_labels_mean_zero_correction() {
        let t = sphere();
        let (mut m, layout) = frame_with([0.5, 0.0, 0.0], 0.0, [0.0; 3]);
        let before = m.clone();
        let out = reconstruction_guidance(&mut m, &layout, (0, 1), &t, 0.5, 1.0).unwrap();
        assert_eq!(m, before);
        assert_eq!(out.loss_before, 0.0);
    }

    #[test]
    fn one_step_reduces_hand_distance() {
        let t = sphere();
        // Hand 10 cm from the sphere surface (|p| = 0.2, radius 0.1).
        let (mut m, layout) = frame_with([0.2, 0.0, 0.0], 1.0, [0.0; 3]);
        let d_before = m[[0, 3]] - 0.1;
        let out = reconstruction_guidance(&mut m, &layout, (0, 1), &t, 0.3, 1.0).unwrap();
        let d_after = (m[[0, 3]].powi(2) + m[[0, 4]].powi(2) + m[[0, 5]].powi(2)).sqrt() - 0.1;
        assert!(out.loss_after < out.loss_before);
        assert!(d_after.max(0.0) < d_before, "distance {d_before} -> {d_after}");
    }

    #[test]
    fn guidance_gradient_matches_finite_differences() {
        let t = sphere();
        let (m, layout) = frame_with([0.17, 0.08, -0.05], 1.0, [0.02, 0.01, 0.0]);
        let grad = contact_loss_gradient(&m, &layout, (0, 1), &t).unwrap();
        let h = 1e-4;
        for axis in 0..3 {
            let col = 3 + axis;
            let mut p = m.clone();
            p[[0, col]] += h;
            let mut q = m.clone();
            q[[0, col]] -= h;
            let fd = (contact_loss(&p, &layout, (0, 1), &t).unwrap()
                - contact_loss(&q, &layout, (0, 1), &t).unwrap())
                / (2.0 * h);
            let re = crate::nn::relative_error(grad[[0, col]], fd);
            assert!(re < 1e-4, "axis {axis}: {} vs {fd}", grad[[0, col]]);
        }
        // Non-hand slots carry no gradient.
        assert_eq!(grad[[0, layout.object_position_offset()]], 0.0);
    }

    #[test]
    fn line_search_never_ends_worse() {
        let t = sphere();
        // Large weight forces overshoot; halving must still find a decrease
        // or revert.
        let (mut m, layout) = frame_with([0.3, 0.0, 0.0], 1.0, [0.0; 3]);
        let out = reconstruction_guidance(&mut m, &layout, (0, 1), &t, 0.99, 50.0).unwrap();
        assert!(out.loss_after <= out.loss_before);
    }

    #[test]
    fn layout_width_sanity() {
        assert_eq!(FrameLayout { joint_count: 22 }.width(), HoiSequence::feature_width(22));
    }
}
