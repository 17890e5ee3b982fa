//! Stage-2 training: x0-prediction diffusion loss over normalized frame
//! matrices, conditioned on ground-truth keyframes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchornet::{keyframe_poses, HoiKeyframe, KeyframeMode};
use crate::contact::{sample_contact_points, ContactStructure};
use crate::datagen::{synthesize_human_pointcloud, Dataset, Split};
use crate::geom::{bps_basis, bps_encode, PointCloud, RigidTransform};
use crate::nn::{derive_seed, Adam, ParamStore, Tape};
use crate::sequence::{flatten_frame, HoiSequence};
use crate::skeleton::SkeletonSpec;

use super::denoiser::{predict_x0_graph, ConditioningBundle, DenoiserConfig, KeyframeCondition};
use super::schedule::{forward_noise, DiffusionSchedule};

#[derive(Debug, Error)]
pub enum DmTrainError {
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
    #[error(transparent)]
    Keyframe(#[from] crate::anchornet::KeyframeError),
    #[error(transparent)]
    Rotation(#[from] crate::rot::RotationError),
}

/// Per-channel standardization fitted on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(matrices: &[Array2<f64>]) -> Self {
        let d = matrices[0].ncols();
        let mut mean = vec![0.0; d];
        let mut count = 0usize;
        for m in matrices {
            for row in m.rows() {
                for (c, v) in row.iter().enumerate() {
                    mean[c] += v;
                }
            }
            count += m.nrows();
        }
        for v in &mut mean {
            *v /= count as f64;
        }
        let mut var = vec![0.0; d];
        for m in matrices {
            for row in m.rows() {
                for (c, v) in row.iter().enumerate() {
                    var[c] += (v - mean[c]) * (v - mean[c]);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(1e-3))
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn denormalize(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }

    pub fn to_arrays(&self) -> Vec<(String, Array2<f64>)> {
        let d = self.mean.len();
        vec![
            ("norm.mean".into(), Array2::from_shape_vec((1, d), self.mean.clone()).unwrap()),
            ("norm.std".into(), Array2::from_shape_vec((1, d), self.std.clone()).unwrap()),
        ]
    }

    pub fn from_arrays(arrays: &std::collections::BTreeMap<String, Array2<f64>>) -> Option<Self> {
        let mean = arrays.get("norm.mean")?.row(0).to_vec();
        let std = arrays.get("norm.std")?.row(0).to_vec();
        Some(Self { mean, std })
    }
}

/// One training item: normalized clean matrix plus its conditioning.
pub struct PreparedSequence {
    pub x0: Array2<f64>,
    pub cond: ConditioningBundle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DmTrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub keyframes: usize,
    pub keyframe_mode: KeyframeMode,
    pub human_cloud_points: usize,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for DmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 4,
            learning_rate: 1e-3,
            keyframes: 5,
            keyframe_mode: KeyframeMode::Center,
            human_cloud_points: 4096,
            seed: 1,
            log_every: 25,
        }
    }
}

/// Flattens a sequence into an N x D matrix using the canonical layout.
pub fn sequence_to_matrix(seq: &HoiSequence) -> Array2<f64> {
    let n = seq.frame_count();
    let d = HoiSequence::feature_width(seq.joint_count());
    let mut m = Array2::zeros((n, d));
    for f in 0..n {
        let flat = flatten_frame(seq, f).expect("frame in range");
        for (c, v) in flat.iter().enumerate() {
            m[[f, c]] = *v;
        }
    }
    m
}

/// Builds the conditioning bundle for one sequence from ground-truth
/// keyframes (used for training and for the keyframe-oracle evaluation).
pub fn conditioning_from_gt(
    seq: &HoiSequence,
    spec: &SkeletonSpec,
    template: &crate::geom::ObjectTemplate,
    cfg: &DenoiserConfig,
    k: usize,
    mode: KeyframeMode,
    human_cloud_points: usize,
    bps: &[f64],
    vocab: &[String],
    seed: u64,
) -> Result<ConditioningBundle, DmTrainError> {
    let kps = keyframe_poses(seq, k, mode)?;
    let n = seq.frame_count();
    let mut keyframes = Vec::with_capacity(k);
    let mut gt_positions = Vec::with_capacity(k);
    for (i, (frame, human, object)) in kps.iter().enumerate() {
        let cloud =
            synthesize_human_pointcloud(spec, human, human_cloud_points, derive_seed(seed, "kf-cloud", i as u64));
        let pose = RigidTransform::from_pose(object)?;
        let object_cloud =
            PointCloud { points: template.surface_samples.iter().map(|p| pose.apply(p)).collect() };
        let kf = HoiKeyframe {
            frame_index: *frame,
            human_cloud: cloud,
            object_cloud,
            pose,
            text_prompt: seq.text_prompt.clone(),
        };
        let tagged = sample_contact_points(&kf, &cfg.sample)?;
        keyframes.push(KeyframeCondition {
            structure: ContactStructure::build(&tagged, &cfg.contact),
            keyframe_index: *frame,
            phase: *frame as f64 / n as f64,
        });
        gt_positions.push(object.position);
    }
    Ok(ConditioningBundle {
        keyframes,
        object_bps: bps.to_vec(),
        text_tokens: crate::datagen::tokenize(&seq.text_prompt, vocab),
        prompt: seq.text_prompt.clone(),
        object_id: seq.object_id.clone(),
        n_frames: n,
        fps: seq.fps,
        gt_keyframe_positions: Some(gt_positions),
    })
}

/// Conditioning built from keyframes recovered by Stage 1 (inference path).
pub fn conditioning_from_keyframes(
    keyframes: &[HoiKeyframe],
    cfg: &DenoiserConfig,
    n_frames: usize,
    fps: f64,
    bps: &[f64],
    text_tokens: Vec<usize>,
    prompt: String,
    object_id: String,
) -> Result<ConditioningBundle, DmTrainError> {
    let mut kcs = Vec::with_capacity(keyframes.len());
    for kf in keyframes {
        let tagged = sample_contact_points(kf, &cfg.sample)?;
        kcs.push(KeyframeCondition {
            structure: ContactStructure::build(&tagged, &cfg.contact),
            keyframe_index: kf.frame_index,
            phase: kf.frame_index as f64 / n_frames as f64,
        });
    }
    Ok(ConditioningBundle {
        keyframes: kcs,
        object_bps: bps.to_vec(),
        text_tokens,
        prompt,
        object_id,
        n_frames,
        fps,
        gt_keyframe_positions: None,
    })
}

/// Prepares the full training set: normalized matrices plus ground-truth
/// keyframe conditioning, and the fitted normalizer.
pub fn prepare_training_set(
    dataset: &Dataset,
    spec: &SkeletonSpec,
    cfg: &DenoiserConfig,
    train_cfg: &DmTrainConfig,
    vocab: &[String],
) -> Result<(Vec<PreparedSequence>, Normalizer), DmTrainError> {
    let idx = dataset.indices(Split::Train);
    let basis = bps_basis(
        cfg.bps_dim,
        crate::geom::BPS_BASIS_RADIUS,
        crate::geom::BPS_BASIS_SEED,
    );
    let mut bps_cache: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for (id, t) in &dataset.templates {
        bps_cache.insert(
            id.clone(),
            bps_encode(t, &crate::sequence::ObjectPose::identity(), &basis)?,
        );
    }
    let matrices: Vec<Array2<f64>> =
        idx.iter().map(|&i| sequence_to_matrix(&dataset.sequences[i])).collect();
    let normalizer = Normalizer::fit(&matrices);
    let prepared: Result<Vec<PreparedSequence>, DmTrainError> = idx
        .par_iter()
        .zip(matrices.into_par_iter())
        .map(|(&i, m)| {
            let seq = &dataset.sequences[i];
            let template = dataset.template(&seq.object_id);
            let cond = conditioning_from_gt(
                seq,
                spec,
                template,
                cfg,
                train_cfg.keyframes.min(seq.frame_count()),
                train_cfg.keyframe_mode,
                train_cfg.human_cloud_points,
                &bps_cache[&seq.object_id],
                vocab,
                derive_seed(train_cfg.seed, "prep", i as u64),
            )?;
            Ok(PreparedSequence { x0: normalizer.normalize(&m), cond })
        })
        .collect();
    Ok((prepared?, normalizer))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DmLogRow {
    pub step: u64,
    pub loss: f64,
}

/// One optimizer step over a batch; returns the batch loss.
pub fn train_step(
    store: &mut ParamStore,
    cfg: &DenoiserConfig,
    schedule: &DiffusionSchedule,
    batch: &[&PreparedSequence],
    adam: &mut Adam,
    step_seed: u64,
) -> Result<f64, DmTrainError> {
    assert!(!batch.is_empty());
    let results: Vec<(f64, std::collections::BTreeMap<String, Array2<f64>>)> = batch
        .par_iter()
        .enumerate()
        .map(|(bi, item)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(step_seed, "item", bi as u64));
            let t = rng.gen_range(1..=schedule.t_max);
            let noise =
                Array2::from_shape_fn(item.x0.raw_dim(), |_| rng.sample::<f64, _>(StandardNormal));
            let x_t = forward_noise(schedule, &item.x0, t, &noise).expect("t in range");
            let mut tape = Tape::new();
            let xt = tape.constant(x_t);
            let (out, _) = predict_x0_graph(&mut tape, store, cfg, xt, t, &item.cond, false);
            let loss = tape.mse(out, &item.x0);
            let l = tape.scalar(loss);
            (l, tape.backward(loss))
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut grads: std::collections::BTreeMap<String, Array2<f64>> = Default::default();
    let mut total = 0.0;
    for (l, g) in results {
        total += l * scale;
        for (name, ga) in g {
            grads.entry(name).and_modify(|acc| *acc += &ga).or_insert(ga);
        }
    }
    for g in grads.values_mut() {
        *g *= scale;
    }
    if !total.is_finite() {
        return Err(DmTrainError::NonFiniteLoss { step: adam.step_count });
    }
    adam.step(store, &grads);
    Ok(total)
}

/// Training loop up to `until` steps (capped at `train_cfg.steps`); the
/// learning-rate schedule spans `train_cfg.steps`, so chunked or resumed
/// runs match an uninterrupted run exactly. Deterministic in `cfg.seed`.
pub fn train_contactdm(
    store: &mut ParamStore,
    cfg: &DenoiserConfig,
    schedule: &DiffusionSchedule,
    prepared: &[PreparedSequence],
    train_cfg: &DmTrainConfig,
    adam: &mut Adam,
    until: u64,
) -> Result<Vec<DmLogRow>, DmTrainError> {
    assert!(!prepared.is_empty(), "no training sequences");
    let mut log = Vec::new();
    let mut acc = (0.0, 0u64);
    for step in adam.step_count..until.min(train_cfg.steps) {
        adam.config.learning_rate =
            crate::anchornet::decayed_lr(train_cfg.learning_rate, step, train_cfg.steps);
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(train_cfg.seed, "dm-step", step));
        let batch: Vec<&PreparedSequence> = (0..train_cfg.batch_size)
            .map(|_| &prepared[rng.gen_range(0..prepared.len())])
            .collect();
        let loss = train_step(
            store,
            cfg,
            schedule,
            &batch,
            adam,
            derive_seed(train_cfg.seed, "dm-batch", step),
        )?;
        acc.0 += loss;
        acc.1 += 1;
        if (step + 1) % train_cfg.log_every == 0 || step + 1 == train_cfg.steps {
            log.push(DmLogRow { step: step + 1, loss: acc.0 / acc.1 as f64 });
            acc = (0.0, 0);
        }
    }
    Ok(log)
}

pub fn dm_log_to_csv(rows: &[DmLogRow]) -> String {
    let mut s = String::from("step,loss\n");
    for r in rows {
        s.push_str(&format!("{},{:.9}\n", r.step, r.loss));
    }
    s
}

/// A trained Stage-2 bundle: parameters (denoiser plus embedded contact
/// encoder), configuration, vocabulary, and the fitted normalizer.
pub struct DmBundle {
    pub store: ParamStore,
    pub config: super::DenoiserConfig,
    pub vocab: Vec<String>,
    pub normalizer: Normalizer,
}

impl DmBundle {
    pub fn save(
        &self,
        path: &std::path::Path,
        seed: u64,
        adam: &Adam,
    ) -> Result<(), crate::nn::CheckpointError> {
        let config = serde_json::json!({
            "kind": "contactdm",
            "config": self.config,
            "vocab": self.vocab,
            "adam": adam.config,
        });
        let opt = adam.state_arrays();
        let norm = self.normalizer.to_arrays();
        let mut arrays: Vec<(String, &Array2<f64>)> =
            self.store.iter().map(|(n, a)| (n.clone(), a)).collect();
        for (n, a) in opt.iter().chain(norm.iter()) {
            arrays.push((n.clone(), a));
        }
        crate::nn::save_checkpoint(path, seed, adam.step_count, &config, &arrays)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, Adam), crate::nn::CheckpointError> {
        let ck = crate::nn::load_checkpoint(path)?;
        let header = |e: serde_json::Error| crate::nn::CheckpointError::Header(e.to_string());
        let config: super::DenoiserConfig =
            serde_json::from_value(ck.config["config"].clone()).map_err(header)?;
        let vocab: Vec<String> =
            serde_json::from_value(ck.config["vocab"].clone()).map_err(header)?;
        let adam_cfg: crate::nn::AdamConfig =
            serde_json::from_value(ck.config["adam"].clone()).map_err(header)?;
        let step = ck.step;
        let (store, rest) = ck.into_store();
        let normalizer = Normalizer::from_arrays(&rest).ok_or_else(|| {
            crate::nn::CheckpointError::Header("missing normalizer arrays".into())
        })?;
        let adam = Adam::restore(adam_cfg, step, &rest);
        Ok((Self { store, config, vocab, normalizer }, adam))
    }
}
