//! Scripted sequence synthesis: eased root trajectories, analytic arm
//! reaches, rigid carry tracking, and geometry-derived contact labels.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{min_hand_object_distance, GeomError, ObjectTemplate};
use crate::rot::{matrix_to_rot6d, RotationMatrix};
use crate::sequence::{HoiSequence, HumanPose, ObjectPose};
use crate::skeleton::{forward_kinematics_full, SkeletonError, SkeletonSpec};

use super::human::{joints, rest_pose_rotations, two_bone_ik, IkError};
use super::script::{Hands, PhaseKind, ScenarioScript, ScriptError};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("script infeasible at frame {frame}: {source}")]
    Infeasible {
        frame: usize,
        #[source]
        source: IkError,
    },
    #[error("script infeasible: grip point {distance:.3} m from the stand position")]
    OutOfReach { distance: f64 },
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Cubic ease (smoothstep) on [0, 1].
fn ease(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn q32(x: f64) -> f64 {
    x as f32 as f64
}

/// Shoulder-to-grip distance the generator crouches to maintain.
const COMFORT_REACH: f64 = 0.55;
/// Horizontal shoulder-to-grip distance beyond which no crouch helps.
const MAX_HORIZONTAL_REACH: f64 = 0.60;

struct HandPlan {
    active: bool,
    /// Lateral spread for two-handed grips, world frame.
    lateral: Vector3<f64>,
    /// Per-sequence grip jitter (xy, and upward-only z).
    jitter: Vector3<f64>,
}

/// Generates one sequence from a script.
///
/// The root follows cubic-eased waypoints and crouches as needed to keep
/// grips in comfortable reach; arms reach analytically toward per-object
/// grip points; during carry and place the object tracks the grip hand with
/// a constant offset; idle holds the current pose. All emitted values are
/// quantized to f32 precision so the JSON dataset round-trips losslessly.
pub fn generate_sequence(
    script: &ScenarioScript,
    spec: &SkeletonSpec,
    template: &ObjectTemplate,
    seed: u64,
) -> Result<HoiSequence, GenerateError> {
    script.validate()?;
    let n = script.total_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = || {
        Vector3::new(
            rng.gen_range(-0.015..0.015),
            rng.gen_range(-0.015..0.015),
            rng.gen_range(0.0..0.015),
        )
    };
    let jit_left = jitter();
    let jit_right = jitter();

    let start = Vector3::new(script.start_root[0], script.start_root[1], super::ROOT_HEIGHT);
    let spot = Vector3::from(script.object_spot);
    let heading = (spot.y - start.y).atan2(spot.x - start.x);
    let root_yaw = RotationMatrix::from_axis_angle(Vector3::z(), heading);
    let side = Vector3::new(-heading.sin(), heading.cos(), 0.0);
    let obj_rot = RotationMatrix::from_axis_angle(Vector3::z(), script.object_yaw);
    let obj_rot6 = matrix_to_rot6d(&obj_rot);
    let grip_world = obj_rot.apply(&template.grip_offset);

    let (left_plan, right_plan) = match script.hands_used {
        Hands::Left => (
            HandPlan { active: true, lateral: Vector3::zeros(), jitter: jit_left },
            HandPlan { active: false, lateral: Vector3::zeros(), jitter: jit_right },
        ),
        Hands::Right => (
            HandPlan { active: false, lateral: Vector3::zeros(), jitter: jit_left },
            HandPlan { active: true, lateral: Vector3::zeros(), jitter: jit_right },
        ),
        Hands::Both => (
            HandPlan { active: true, lateral: side * 0.045, jitter: jit_left },
            HandPlan { active: true, lateral: side * -0.045, jitter: jit_right },
        ),
    };
    let grip_left = matches!(script.hands_used, Hands::Left);
    // Hand target for an object centered at `o`, and the exact centroid
    // offset the grip hand maintains while the object is held.
    let grip_target = |o: &Vector3<f64>, plan: &HandPlan| o - grip_world + plan.lateral + plan.jitter;
    let grip_plan = if grip_left { &left_plan } else { &right_plan };
    let grip_vec = grip_world - grip_plan.lateral - grip_plan.jitter;

    let rest = rest_pose_rotations(spec);
    let pole = Vector3::new(-0.3 * heading.cos(), -0.3 * heading.sin(), -1.0);
    let mut human: Vec<HumanPose> = Vec::with_capacity(n);
    let mut object: Vec<ObjectPose> = Vec::with_capacity(n);

    let mut root = start;
    let mut obj_pos = spot;
    let mut rotations = rest.clone();
    rotations[joints::ROOT] = matrix_to_rot6d(&root_yaw);
    let mut crouch = 0.0f64;

    // Reaches both arms toward their grip targets for an object at `o`.
    let reach_arms = |rotations: &mut Vec<[f64; 6]>,
                      root: &Vector3<f64>,
                      o: &Vector3<f64>,
                      blend: Option<(&Vector3<f64>, &Vector3<f64>, f64)>,
                      frame: usize|
     -> Result<(), GenerateError> {
        let (pos, globals) = forward_kinematics_full(spec, *root, rotations)?;
        let mut next = rest.clone();
        next[joints::ROOT] = matrix_to_rot6d(&root_yaw);
        for (left, plan) in [(true, &left_plan), (false, &right_plan)] {
            if !plan.active {
                continue;
            }
            let goal = grip_target(o, plan);
            let target = match blend {
                Some((from_l, from_r, t)) => {
                    let from = if left { from_l } else { from_r };
                    from + (goal - from) * t
                }
                None => goal,
            };
            let shoulder = if left { pos[joints::L_SHOULDER] } else { pos[joints::R_SHOULDER] };
            two_bone_ik(spec, &mut next, left, &shoulder, &globals[joints::CHEST], &target, &pole)
                .map_err(|source| GenerateError::Infeasible { frame, source })?;
        }
        *rotations = next;
        Ok(())
    };

    let mut frame = 0usize;
    for phase in &script.phases {
        let origin = (root, obj_pos, crouch);
        let mut reach_start: Option<(Vector3<f64>, Vector3<f64>)> = None;
        let mut crouch_target: Option<f64> = None;
        for k in 0..phase.duration {
            let t = ease((k + 1) as f64 / phase.duration as f64);
            match phase.kind {
                PhaseKind::Approach => {
                    let target = Vector3::from(phase.target);
                    root = origin.0 + (target - origin.0) * t;
                }
                PhaseKind::Reach => {
                    if reach_start.is_none() {
                        let (pos, _) = forward_kinematics_full(spec, root, &rotations)?;
                        reach_start = Some((pos[joints::L_HAND], pos[joints::R_HAND]));
                        // How far must the root drop so the grip point sits
                        // within comfortable reach of the shoulder?
                        let mut need = 0.0f64;
                        for (left, plan) in [(true, &left_plan), (false, &right_plan)] {
                            if !plan.active {
                                continue;
                            }
                            let g = grip_target(&obj_pos, plan);
                            let s =
                                if left { pos[joints::L_SHOULDER] } else { pos[joints::R_SHOULDER] };
                            let hx = ((s.x - g.x).powi(2) + (s.y - g.y).powi(2)).sqrt();
                            if hx > MAX_HORIZONTAL_REACH {
                                return Err(GenerateError::OutOfReach { distance: hx });
                            }
                            let dz_ok = (COMFORT_REACH * COMFORT_REACH - hx * hx).max(0.0).sqrt();
                            need = need.max((s.z - g.z) - dz_ok);
                        }
                        crouch_target = Some(need.max(0.0));
                    }
                    let target_crouch = crouch_target.unwrap_or(0.0);
                    crouch = origin.2 + (target_crouch - origin.2) * t;
                    root.z = super::ROOT_HEIGHT - crouch;
                    let (fl, fr) = reach_start.as_ref().unwrap();
                    let (fl, fr) = (*fl, *fr);
                    reach_arms(&mut rotations, &root, &obj_pos, Some((&fl, &fr, t)), frame)?;
                }
                PhaseKind::Carry | PhaseKind::Place => {
                    // The object goal eases toward the phase target; the root
                    // follows in xy, the arms track exactly.
                    let target = Vector3::from(phase.target);
                    let goal = origin.1 + (target - origin.1) * t;
                    let delta = goal - origin.1;
                    root = Vector3::new(origin.0.x + delta.x, origin.0.y + delta.y, origin.0.z);
                    reach_arms(&mut rotations, &root, &goal, None, frame)?;
                    obj_pos = goal;
                }
                // Hold everything: a lifted object stays held.
                PhaseKind::Idle => {}
            }

            let (pos, _) = forward_kinematics_full(spec, root, &rotations)?;
            if matches!(phase.kind, PhaseKind::Carry | PhaseKind::Place) {
                let hand = if grip_left { pos[joints::L_HAND] } else { pos[joints::R_HAND] };
                obj_pos = hand + grip_vec;
            }
            human.push(HumanPose {
                joints: pos.iter().map(|p| [q32(p.x), q32(p.y), q32(p.z)]).collect(),
                rotations: rotations.iter().map(|r| r.map(q32)).collect(),
            });
            object.push(ObjectPose {
                position: [q32(obj_pos.x), q32(obj_pos.y), q32(obj_pos.z)],
                rotation: obj_rot6.map(q32),
            });
            frame += 1;
        }
    }

    let mut seq = HoiSequence {
        fps: script.fps,
        human,
        object,
        contact: vec![[0.0, 0.0]; n],
        text_prompt: script.prompt(),
        object_id: script.object_id.clone(),
    };
    seq.contact = derive_contact_labels(&seq, template, super::TAU_CONTACT, spec)?;
    Ok(seq)
}

/// Binary contact labels: 1 when the hand joint's surface distance to the
/// posed object is at most `tau`.
pub fn derive_contact_labels(
    seq: &HoiSequence,
    template: &ObjectTemplate,
    tau: f64,
    spec: &SkeletonSpec,
) -> Result<Vec<[f64; 2]>, GeomError> {
    assert!(tau > 0.0, "tau must be positive");
    let lh = spec.joint("left_hand");
    let rh = spec.joint("right_hand");
    let mut out = Vec::with_capacity(seq.frame_count());
    for (pose, obj) in seq.human.iter().zip(&seq.object) {
        let l = min_hand_object_distance(&pose.joint(lh), template, obj)?.surface;
        let r = min_hand_object_distance(&pose.joint(rh), template, obj)?.surface;
        out.push([(l <= tau) as u8 as f64, (r <= tau) as u8 as f64]);
    }
    Ok(out)
}
