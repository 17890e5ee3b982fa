//! Two-stage synthesis of 4D human-object interaction sequences.
//!
//! Stage 1 recovers sparse 3D interaction keyframes (a posed object point
//! cloud per keyframe) from a human motion track, an object template, and a
//! text prompt. Stage 2 interpolates those keyframes into a dense, temporally
//! coherent sequence with a contact-aware conditional diffusion model, using
//! reconstruction guidance on hand-object contact at sampling time.
//!
//! The crate also ships a procedural synthetic dataset generator, the full
//! evaluation metric suite (motion, interaction, and ground-truth difference
//! metrics), and the numeric kernels both stages share (point sampling, rigid
//! alignment, signed distance queries, basis-point-set encoding).

pub mod anchornet;
pub mod config;
pub mod contact;
pub mod contactdm;
pub mod datagen;
pub mod geom;
pub mod metrics;
pub mod nn;
pub mod rot;
pub mod sequence;
pub mod skeleton;

pub use rot::{matrix_to_rot6d, rot6d_to_matrix, RotationError, RotationMatrix};
pub use sequence::{flatten_frame, unflatten_frame, HoiSequence, HumanPose, ObjectPose};
pub use skeleton::{forward_kinematics, SkeletonError, SkeletonSpec};

/// Version string embedded into every output artifact.
pub const VERSION: &str = concat!("hoisynth-", env!("CARGO_PKG_VERSION"));
