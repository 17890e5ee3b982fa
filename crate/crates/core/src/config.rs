//! Run configuration: every tunable of the pipeline in one validated
//! structure, loadable from a key-value file with overrides, echoed into
//! every output artifact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchornet::{AnchorNetConfig, AnchorTrainConfig, KeyframeMode};
use crate::contact::{ContactEncoderConfig, ContactSampleConfig, SamplingMode};
use crate::contactdm::{ConditioningMode, DenoiserConfig, DmTrainConfig, GuidanceConfig};
use crate::datagen::CorpusConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for key '{key}': {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("config violates '{0}'")]
    Invalid(String),
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed line {line} in {path}: expected 'key = value'")]
    Malformed { path: String, line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

/// The resolved run configuration. Desk-scale values are the defaults; the
/// paper profile swaps in the full-scale settings (latent 1024, T = 1000,
/// 50k steps, batch 32, learning rate 1e-4).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,

    // Data generation.
    pub objects: usize,
    pub unseen: usize,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub holdout_per_object: usize,
    pub frames: usize,
    pub fps: f64,
    pub template_samples: usize,
    pub human_cloud_points: usize,
    pub tau: f64,

    // Stage 1.
    pub keyframes: usize,
    pub keyframe_mode: KeyframeMode,
    pub anchor_text: bool,
    pub anchor_steps: u64,
    pub anchor_batch: usize,
    pub anchor_lr: f64,

    // Stage 2.
    pub m_o: usize,
    pub m_h: usize,
    pub sampling_mode: SamplingMode,
    pub contact_d: usize,
    pub contact_centroids: usize,
    pub latent: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_mult: usize,
    pub t_steps: usize,
    pub dm_steps: u64,
    pub dm_batch: usize,
    pub dm_lr: f64,
    pub conditioning_mode: ConditioningMode,
    pub guidance: bool,
    pub guidance_w0: f64,
    pub bps_dim: usize,

    // Evaluation.
    pub pool_size: usize,
    pub extractor_seed: u64,

    // Training infrastructure.
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            seed: 1,
            objects: 15,
            unseen: 3,
            train_sequences: 200,
            test_sequences: 40,
            holdout_per_object: 5,
            frames: 120,
            fps: 30.0,
            template_samples: 2048,
            human_cloud_points: 4096,
            tau: crate::datagen::TAU_CONTACT,
            keyframes: 5,
            keyframe_mode: KeyframeMode::Center,
            anchor_text: true,
            anchor_steps: 6000,
            anchor_batch: 16,
            anchor_lr: 1e-3,
            m_o: 500,
            m_h: 1000,
            sampling_mode: SamplingMode::Knn,
            contact_d: 256,
            contact_centroids: 64,
            latent: 64,
            heads: 4,
            blocks: 4,
            ff_mult: 2,
            t_steps: 100,
            dm_steps: 4000,
            dm_batch: 4,
            dm_lr: 1e-3,
            conditioning_mode: ConditioningMode::CrossAttention,
            guidance: true,
            guidance_w0: 1.0,
            bps_dim: crate::geom::BPS_BASIS_COUNT,
            pool_size: 8,
            extractor_seed: 7,
            checkpoint_every: 500,
            log_every: 25,
        }
    }
}

impl RunConfig {
    /// Full-scale profile: the training settings of the reference setup.
    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            latent: 1024,
            ff_mult: 4,
            t_steps: 1000,
            dm_steps: 50_000,
            dm_batch: 32,
            dm_lr: 1e-4,
            anchor_steps: 50_000,
            anchor_batch: 32,
            anchor_lr: 1e-4,
            contact_centroids: 256,
            pool_size: 32,
            ..Self::default()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::default(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Loads `key = value` lines (with `#` comments) over a base profile.
    pub fn from_file(path: &std::path::Path, base: Self) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut cfg = base;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed { path: path.display().to_string(), line: i + 1 });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `key = value` override; fails fast on unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        macro_rules! parse {
            ($field:expr, $ty:ty) => {
                $field = value.parse::<$ty>().map_err(|e| bad(&e.to_string()))?
            };
        }
        match key {
            "profile" => {
                *self = match value {
                    "desk" => Self::for_profile(Profile::Desk),
                    "paper" => Self::for_profile(Profile::Paper),
                    _ => return Err(bad("expected 'desk' or 'paper'")),
                }
            }
            "seed" => parse!(self.seed, u64),
            "objects" => parse!(self.objects, usize),
            "unseen" => parse!(self.unseen, usize),
            "train_sequences" => parse!(self.train_sequences, usize),
            "test_sequences" => parse!(self.test_sequences, usize),
            "holdout_per_object" => parse!(self.holdout_per_object, usize),
            "frames" => parse!(self.frames, usize),
            "fps" => parse!(self.fps, f64),
            "template_samples" => parse!(self.template_samples, usize),
            "human_cloud_points" => parse!(self.human_cloud_points, usize),
            "tau" => parse!(self.tau, f64),
            "keyframes" => parse!(self.keyframes, usize),
            "keyframe_mode" => {
                self.keyframe_mode = match value {
                    "center" => KeyframeMode::Center,
                    "pose_mean" => KeyframeMode::PoseMean,
                    _ => return Err(bad("expected 'center' or 'pose_mean'")),
                }
            }
            "anchor_text" => parse!(self.anchor_text, bool),
            "anchor_steps" => parse!(self.anchor_steps, u64),
            "anchor_batch" => parse!(self.anchor_batch, usize),
            "anchor_lr" => parse!(self.anchor_lr, f64),
            "m_o" => parse!(self.m_o, usize),
            "m_h" => parse!(self.m_h, usize),
            "sampling_mode" => {
                self.sampling_mode = match value {
                    "knn" => SamplingMode::Knn,
                    "uniform" => SamplingMode::Uniform,
                    _ => return Err(bad("expected 'knn' or 'uniform'")),
                }
            }
            "contact_d" => parse!(self.contact_d, usize),
            "contact_centroids" => parse!(self.contact_centroids, usize),
            "latent" => parse!(self.latent, usize),
            "heads" => parse!(self.heads, usize),
            "blocks" => parse!(self.blocks, usize),
            "ff_mult" => parse!(self.ff_mult, usize),
            "t_steps" => parse!(self.t_steps, usize),
            "dm_steps" => parse!(self.dm_steps, u64),
            "dm_batch" => parse!(self.dm_batch, usize),
            "dm_lr" => parse!(self.dm_lr, f64),
            "conditioning_mode" => {
                self.conditioning_mode = match value {
                    "cross_attention" => ConditioningMode::CrossAttention,
                    "additive_fusion" => ConditioningMode::AdditiveFusion,
                    _ => return Err(bad("expected 'cross_attention' or 'additive_fusion'")),
                }
            }
            "guidance" => parse!(self.guidance, bool),
            "guidance_w0" => parse!(self.guidance_w0, f64),
            "bps_dim" => parse!(self.bps_dim, usize),
            "pool_size" => parse!(self.pool_size, usize),
            "extractor_seed" => parse!(self.extractor_seed, u64),
            "checkpoint_every" => parse!(self.checkpoint_every, u64),
            "log_every" => parse!(self.log_every, u64),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Validates every value against the module preconditions it feeds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid(what.to_string()))
            }
        };
        check(self.objects >= 2, "objects >= 2")?;
        check(self.unseen >= 1 && self.unseen < self.objects, "1 <= unseen < objects")?;
        check(self.objects <= crate::datagen::object_recipes().len(), "objects <= 15 built-ins")?;
        check(self.frames >= 24, "frames >= 24")?;
        check(self.fps > 0.0, "fps > 0")?;
        check(self.tau > 0.0, "tau > 0")?;
        check(self.keyframes >= 1 && self.keyframes <= self.frames, "1 <= keyframes <= frames")?;
        check(self.m_o >= 1 && self.m_o <= self.template_samples, "1 <= m_o <= template_samples")?;
        check(self.m_h >= 1 && self.m_h <= self.human_cloud_points, "1 <= m_h <= human_cloud_points")?;
        check(self.latent % self.heads == 0 && self.heads >= 1, "latent divisible by heads")?;
        check(self.blocks >= 1, "blocks >= 1")?;
        check(self.t_steps >= 2, "t_steps >= 2")?;
        check(self.dm_batch >= 1 && self.anchor_batch >= 1, "batch >= 1")?;
        check(self.dm_lr > 0.0 && self.anchor_lr > 0.0, "learning rates > 0")?;
        check(self.pool_size >= 2, "pool_size >= 2")?;
        check(self.guidance_w0 >= 0.0, "guidance_w0 >= 0")?;
        check(self.checkpoint_every >= 1 && self.log_every >= 1, "intervals >= 1")?;
        check(self.human_cloud_points >= 22, "human_cloud_points >= joint count")?;
        Ok(())
    }

    /// JSON echo for artifact embedding.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self,
            "tool_version": crate::VERSION,
        })
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            train_sequences: self.train_sequences,
            test_sequences: self.test_sequences,
            holdout_per_object: self.holdout_per_object,
            object_count: self.objects,
            unseen_count: self.unseen,
            frames: self.frames,
            fps: self.fps,
            template_samples: self.template_samples,
            human_cloud_points: self.human_cloud_points,
            seed: self.seed,
        }
    }

    pub fn anchor_config(&self, vocab_size: usize) -> AnchorNetConfig {
        let mut cfg = match self.profile {
            Profile::Desk => AnchorNetConfig::desk(vocab_size),
            Profile::Paper => AnchorNetConfig::paper(vocab_size),
        };
        cfg.use_text = self.anchor_text;
        cfg
    }

    pub fn anchor_train_config(&self) -> AnchorTrainConfig {
        AnchorTrainConfig {
            steps: self.anchor_steps,
            batch_size: self.anchor_batch,
            learning_rate: self.anchor_lr,
            keyframes_per_sequence: self.keyframes,
            cloud_points: self.human_cloud_points,
            seed: self.seed,
            log_every: self.log_every,
        }
    }

    pub fn denoiser_config(&self, joint_count: usize, vocab_size: usize) -> DenoiserConfig {
        let mut contact = match self.profile {
            Profile::Desk => ContactEncoderConfig::desk(),
            Profile::Paper => ContactEncoderConfig::default(),
        };
        contact.d = self.contact_d;
        for s in &mut contact.scales {
            s.centroids = self.contact_centroids;
        }
        DenoiserConfig {
            joint_count,
            latent: self.latent,
            blocks: self.blocks,
            heads: self.heads,
            ff_mult: self.ff_mult,
            t_max: self.t_steps,
            vocab_size,
            bps_dim: self.bps_dim,
            bps_hidden: if self.profile == Profile::Paper { 256 } else { 128 },
            conditioning: self.conditioning_mode,
            contact,
            sample: ContactSampleConfig { m_o: self.m_o, m_h: self.m_h, mode: self.sampling_mode },
        }
    }

    pub fn dm_train_config(&self) -> DmTrainConfig {
        DmTrainConfig {
            steps: self.dm_steps,
            batch_size: self.dm_batch,
            learning_rate: self.dm_lr,
            keyframes: self.keyframes,
            keyframe_mode: self.keyframe_mode,
            human_cloud_points: self.human_cloud_points,
            seed: self.seed,
            log_every: self.log_every,
        }
    }

    pub fn guidance_config(&self) -> GuidanceConfig {
        GuidanceConfig { enabled: self.guidance, weight: self.guidance_w0 }
    }
}
