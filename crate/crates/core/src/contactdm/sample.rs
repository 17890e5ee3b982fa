//! Ancestral sampling: the reverse diffusion loop with optional contact
//! guidance, producing a valid interaction sequence.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geom::ObjectTemplate;
use crate::nn::{derive_seed, ParamStore};
use crate::rot::{matrix_to_rot6d, rot6d_to_matrix, RotationError};
use crate::sequence::{FrameLayout, HoiSequence, HumanPose, ObjectPose};

use super::denoiser::{predict_x0, ConditioningBundle, DenoiserConfig, DenoiserError};
use super::guidance::{reconstruction_guidance, GuidanceConfig, GuidanceOutcome};
use super::schedule::DiffusionSchedule;
use super::train::Normalizer;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("denoiser failed at t = {t}: {source}")]
    Denoiser {
        t: usize,
        #[source]
        source: DenoiserError,
    },
    #[error("generated rotation invalid at frame {frame}, joint {joint}: {source}")]
    BadRotation {
        frame: usize,
        joint: usize,
        #[source]
        source: RotationError,
    },
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
}

/// Ancestral reverse loop from pure noise.
///
/// When guidance is enabled, each step corrects the clean-signal estimate in
/// physical units before the posterior update. The generated contact
/// channels are real-valued during diffusion and binarized at 0.5 only at
/// the end. Deterministic given the seed.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    store: &ParamStore,
    cfg: &DenoiserConfig,
    schedule: &DiffusionSchedule,
    normalizer: &Normalizer,
    cond: &ConditioningBundle,
    template: &ObjectTemplate,
    hand_joints: (usize, usize),
    guidance: GuidanceConfig,
    seed: u64,
) -> Result<(HoiSequence, Vec<GuidanceOutcome>), SampleError> {
    let n = cond.n_frames;
    let d = cfg.feature_width();
    let layout = FrameLayout { joint_count: cfg.joint_count };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "sample", 0));
    let mut x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    let mut outcomes = Vec::new();

    for t in (1..=schedule.t_max).rev() {
        let mut x0_hat =
            predict_x0(store, cfg, &x, t, cond).map_err(|source| SampleError::Denoiser { t, source })?;
        if guidance.enabled {
            let mut physical = normalizer.denormalize(&x0_hat);
            let outcome = reconstruction_guidance(
                &mut physical,
                &layout,
                hand_joints,
                template,
                schedule.alpha_bar[t],
                guidance.weight,
            )?;
            outcomes.push(outcome);
            x0_hat = normalizer.normalize(&physical);
        }
        // Posterior q(x_{t-1} | x_t, x0_hat).
        let ab_t = schedule.alpha_bar[t];
        let ab_prev = schedule.alpha_bar[t - 1];
        let beta = schedule.beta[t];
        let alpha = schedule.alpha(t);
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let mut mean = &x0_hat * c0 + &x * ct;
        if t > 1 {
            let var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
            let sigma = var.sqrt();
            let mut step_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "step-noise", t as u64));
            mean = &mean
                + &Array2::from_shape_fn((n, d), |_| {
                    sigma * step_rng.sample::<f64, _>(StandardNormal)
                });
        }
        x = mean;
    }

    let physical = normalizer.denormalize(&x);
    let seq = matrix_to_sequence(&physical, cfg.joint_count, cond.fps, &cond.prompt, &cond.object_id)?;
    Ok((seq, outcomes))
}

/// Converts a denormalized frame matrix into a sequence: rotations are
/// re-orthonormalized through the 6D decode/encode pair and contact channels
/// binarized at 0.5.
pub fn matrix_to_sequence(
    m: &Array2<f64>,
    joint_count: usize,
    fps: f64,
    prompt: &str,
    object_id: &str,
) -> Result<HoiSequence, SampleError> {
    let layout = FrameLayout { joint_count };
    assert_eq!(m.ncols(), layout.width());
    let mut human = Vec::with_capacity(m.nrows());
    let mut object = Vec::with_capacity(m.nrows());
    let mut contact = Vec::with_capacity(m.nrows());
    for (fi, row) in m.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("contiguous");
        let mut joints = Vec::with_capacity(joint_count);
        let mut rotations = Vec::with_capacity(joint_count);
        for j in 0..joint_count {
            let o = layout.joint_offset(j);
            joints.push([row[o], row[o + 1], row[o + 2]]);
            let r = layout.rotations_offset() + 6 * j;
            let mut v = [0.0; 6];
            v.copy_from_slice(&row[r..r + 6]);
            let rot = rot6d_to_matrix(&v)
                .map_err(|source| SampleError::BadRotation { frame: fi, joint: j, source })?;
            rotations.push(matrix_to_rot6d(&rot));
        }
        human.push(HumanPose { joints, rotations });
        let ob = layout.object_position_offset();
        let rb = layout.object_rotation_offset();
        let mut v = [0.0; 6];
        v.copy_from_slice(&row[rb..rb + 6]);
        let rot = rot6d_to_matrix(&v)
            .map_err(|source| SampleError::BadRotation { frame: fi, joint: usize::MAX, source })?;
        object.push(ObjectPose {
            position: [row[ob], row[ob + 1], row[ob + 2]],
            rotation: matrix_to_rot6d(&rot),
        });
        let cb = layout.contact_offset();
        contact.push([(row[cb] >= 0.5) as u8 as f64, (row[cb + 1] >= 0.5) as u8 as f64]);
    }
    Ok(HoiSequence {
        fps,
        human,
        object,
        contact,
        text_prompt: prompt.to_string(),
        object_id: object_id.to_string(),
    })
}
