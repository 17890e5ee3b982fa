//! Procedural generator of synthetic 4D interaction sequences: scripted
//! approach / reach / carry / place interactions between a capsule-skeleton
//! human and primitive or mesh objects, with geometry-derived contact labels,
//! templated text prompts, and a persisted dataset format.

mod dataset;
mod generate;
mod human;
mod objects;
mod script;

pub use dataset::{
    read_dataset, read_sequence_file, write_dataset, write_sequence_file, Dataset, DatasetError,
    DatasetManifest, ObjectEntry, SequenceEntry, Split, DATASET_FORMAT, DATASET_VERSION,
};
pub use generate::{derive_contact_labels, generate_sequence, GenerateError};
pub use human::{rest_pose_rotations, skeleton22, synthesize_human_pointcloud, two_bone_ik, IkError, ROOT_HEIGHT};
pub use objects::{default_object_set, make_template, object_recipes, ObjectRecipe};
pub use script::{
    build_corpus_scripts, build_script, tokenize, vocabulary_for, CorpusConfig, Hands, Phase,
    PhaseKind, ScenarioScript, ScriptError,
};

/// Contact distance threshold tau, meters. Shared between label derivation
/// and the geometric contact metrics.
pub const TAU_CONTACT: f64 = 0.05;

/// Documented object speed bound: consecutive object positions never move
/// faster than this, meters/second.
pub const V_MAX: f64 = 2.0;
