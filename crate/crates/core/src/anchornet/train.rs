//! Stage-1 training: supervised center and keypoint regression on
//! single-frame pairs extracted at keyframe indices.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{synthesize_human_pointcloud, Dataset, Split};
use crate::geom::PointCloud;
use crate::nn::{derive_seed, Adam, AdamConfig, ParamStore, Tape};
use crate::skeleton::SkeletonSpec;

use super::model::{
    neighborhood_input, predict_center, predict_offsets, select_local_neighborhood,
    template_keypoints, AnchorModel, EncoderStructure,
};
use super::sample_keyframes;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
}

/// One supervised pair: a human cloud's precomputed encoder structure, the
/// ground-truth object center, and the posed canonical keypoints.
pub struct TrainingPair {
    pub structure: EncoderStructure,
    pub gt_center: Vector3<f64>,
    pub gt_keypoints: Array2<f64>,
    pub canonical_keypoints: Array2<f64>,
    pub tokens: Vec<usize>,
    pub object_id: String,
}

impl TrainingPair {
    /// Reconstructs the full cloud from the cached centered copy.
    pub fn cloud(&self) -> PointCloud {
        PointCloud {
            points: self
                .structure
                .centered
                .iter()
                .map(|p| {
                    Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) + self.structure.centroid
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorTrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Keyframes per sequence when extracting pairs.
    pub keyframes_per_sequence: usize,
    pub cloud_points: usize,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for AnchorTrainConfig {
    fn default() -> Self {
        Self {
            steps: 6000,
            batch_size: 16,
            learning_rate: 1e-3,
            keyframes_per_sequence: 5,
            cloud_points: 4096,
            seed: 1,
            log_every: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub epoch: f64,
    pub loss_center: f64,
    pub loss_offset: f64,
}

/// Extracts `(cloud, gt pose)` pairs at keyframe indices of every
/// train-split sequence. Cloud synthesis seeds derive from `(seed, index)`,
/// so parallel and serial extraction agree bit-for-bit.
pub fn build_training_pairs(
    dataset: &Dataset,
    spec: &SkeletonSpec,
    model: &AnchorModel,
    cfg: &AnchorTrainConfig,
    split: Split,
) -> Vec<TrainingPair> {
    let indices = dataset.indices(split);
    let jobs: Vec<(usize, usize, usize)> = indices
        .iter()
        .flat_map(|&si| {
            let n = dataset.sequences[si].frame_count();
            let k = cfg.keyframes_per_sequence.min(n);
            sample_keyframes(n, k)
                .expect("k <= n")
                .into_iter()
                .enumerate()
                .map(move |(ki, f)| (si, ki, f))
        })
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(job_idx, &(si, _ki, frame))| {
            let seq = &dataset.sequences[si];
            let cloud = synthesize_human_pointcloud(
                spec,
                &seq.human[frame],
                cfg.cloud_points,
                derive_seed(cfg.seed, "pair-cloud", job_idx as u64),
            );
            let structure = EncoderStructure::build(&cloud, &model.config);
            let template = dataset.template(&seq.object_id);
            let canonical = template_keypoints(template, model.config.template_keypoints);
            let pose = crate::geom::RigidTransform::from_pose(&seq.object[frame])
                .expect("dataset rotations are valid");
            let mut gt_keypoints = canonical.clone();
            for mut row in gt_keypoints.rows_mut() {
                let p = pose.apply(&Vector3::new(row[0], row[1], row[2]));
                row[0] = p.x;
                row[1] = p.y;
                row[2] = p.z;
            }
            TrainingPair {
                structure,
                gt_center: seq.object[frame].position_vec(),
                gt_keypoints,
                canonical_keypoints: canonical,
                tokens: model.tokenize(&seq.text_prompt),
                object_id: seq.object_id.clone(),
            }
        })
        .collect()
}

/// Loss of one pair under the current parameters:
/// `|center - gt|^2 + mean_k |keypoint_k - gt_k|^2`.
pub fn pair_loss(
    store: &ParamStore,
    model: &AnchorModel,
    pair: &TrainingPair,
) -> (f64, f64, std::collections::BTreeMap<String, Array2<f64>>) {
    let keypoints = &pair.canonical_keypoints;
    let mut tape = Tape::new();
    let center = predict_center(&mut tape, store, &model.config, &pair.structure, keypoints, &pair.tokens);
    let gt_c = Array2::from_shape_vec((1, 3), pair.gt_center.iter().cloned().collect()).unwrap();
    let mse_c = tape.mse(center, &gt_c);
    let loss_c = tape.scale(mse_c, 3.0);

    let cv = tape.value(center);
    let center_val = Vector3::new(cv[[0, 0]], cv[[0, 1]], cv[[0, 2]]);
    let cloud = pair.cloud();
    let m = model.config.local_neighborhood.min(cloud.len());
    let neighborhood = select_local_neighborhood(&cloud, &center_val, m).expect("m <= cloud");
    let local = neighborhood_input(&neighborhood, model.config.offset_input_points);
    let pred = predict_offsets(&mut tape, store, &model.config, &local, keypoints, &pair.tokens, center);
    let mse_k = tape.mse(pred, &pair.gt_keypoints);
    let loss_k = tape.scale(mse_k, 3.0);

    let total = tape.add(loss_c, loss_k);
    let lc = tape.scalar(loss_c);
    let lk = tape.scalar(loss_k);
    let grads = tape.backward(total);
    (lc, lk, grads)
}

/// Trains in place up to `until` steps (capped at `cfg.steps`), returning
/// the per-interval loss log. The learning-rate schedule always spans
/// `cfg.steps`, so chunked or resumed runs reproduce an uninterrupted run
/// exactly. Deterministic in `cfg.seed`.
pub fn train_anchornet(
    model: &mut AnchorModel,
    pairs: &[TrainingPair],
    cfg: &AnchorTrainConfig,
    adam: &mut Adam,
    until: u64,
) -> Result<Vec<TrainLogRow>, TrainError> {
    assert!(!pairs.is_empty(), "no training pairs");
    let mut log = Vec::new();
    let mut acc = (0.0, 0.0, 0u64);
    let start = adam.step_count;
    for step in start..until.min(cfg.steps) {
        adam.config.learning_rate = decayed_lr(cfg.learning_rate, step, cfg.steps);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "anchor-step", step));
        let batch: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.gen_range(0..pairs.len())).collect();
        let results: Vec<_> = batch
            .par_iter()
            .map(|&i| pair_loss(&model.store, model, &pairs[i]))
            .collect();
        let scale = 1.0 / cfg.batch_size as f64;
        let mut grads: std::collections::BTreeMap<String, Array2<f64>> = Default::default();
        let mut lc = 0.0;
        let mut lk = 0.0;
        for (c, k, g) in results {
            lc += c * scale;
            lk += k * scale;
            for (name, ga) in g {
                grads
                    .entry(name)
                    .and_modify(|acc| *acc += &ga)
                    .or_insert(ga);
            }
        }
        for g in grads.values_mut() {
            *g *= scale;
        }
        if !lc.is_finite() || !lk.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        adam.step(&mut model.store, &grads);
        acc.0 += lc;
        acc.1 += lk;
        acc.2 += 1;
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let denom = acc.2 as f64;
            log.push(TrainLogRow {
                step: step + 1,
                epoch: (step + 1) as f64 * cfg.batch_size as f64 / pairs.len() as f64,
                loss_center: acc.0 / denom,
                loss_offset: acc.1 / denom,
            });
            acc = (0.0, 0.0, 0);
        }
    }
    Ok(log)
}

/// Convenience wrapper: fresh optimizer, full run.
pub fn train_fresh(
    model: &mut AnchorModel,
    pairs: &[TrainingPair],
    cfg: &AnchorTrainConfig,
) -> Result<(Vec<TrainLogRow>, Adam), TrainError> {
    let mut adam = Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() });
    let log = train_anchornet(model, pairs, cfg, &mut adam, cfg.steps)?;
    Ok((log, adam))
}

/// Cosine decay from the base rate to 10% of it across the run; a pure
/// function of the step so resumed runs follow the same schedule.
pub fn decayed_lr(base: f64, step: u64, total: u64) -> f64 {
    let p = (step as f64 / total.max(1) as f64).clamp(0.0, 1.0);
    base * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
}

/// Serializes log rows as CSV with a header.
pub fn log_to_csv(rows: &[TrainLogRow]) -> String {
    let mut s = String::from("step,epoch,loss_center,loss_offset\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.9},{:.9}\n", r.step, r.epoch, r.loss_center, r.loss_offset));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchornet::model::{AnchorModel, AnchorNetConfig, SetAbstraction};
    use crate::datagen::{
        build_script, generate_sequence, make_template, object_recipes, skeleton22,
        vocabulary_for, Dataset, DatasetManifest, SequenceEntry, Split,
    };

    pub(crate) fn tiny_dataset(n_seqs: usize) -> (Dataset, SkeletonSpec) {
        let spec = skeleton22();
        let template = make_template(&object_recipes()[0], 512, 3).unwrap();
        let mut sequences = Vec::new();
        let mut entries = Vec::new();
        for i in 0..n_seqs {
            let script = build_script(&template, 60, 30.0, 40 + i as u64);
            sequences.push(generate_sequence(&script, &spec, &template, i as u64).unwrap());
            entries.push(SequenceEntry {
                file: format!("sequences/{i:06}.json"),
                split: Split::Train,
                object_id: template.object_id.clone(),
                crc32: 0,
            });
        }
        let manifest = DatasetManifest {
            format: crate::datagen::DATASET_FORMAT.into(),
            version: crate::datagen::DATASET_VERSION,
            seed: 1,
            tool_version: crate::VERSION.into(),
            skeleton: spec.clone(),
            vocabulary: vocabulary_for(&["ball".into()]),
            objects: vec![crate::datagen::ObjectEntry { id: "ball".into(), unseen: false }],
            sequences: entries,
            config_echo: serde_json::json!({}),
        };
        let mut templates = std::collections::BTreeMap::new();
        templates.insert("ball".to_string(), template);
        (Dataset { manifest, templates, sequences }, spec)
    }

    pub(crate) fn tiny_model(vocab: Vec<String>) -> AnchorModel {
        let config = AnchorNetConfig {
            sa1: SetAbstraction { centroids: 64, group_cap: 12, radius: 0.25, widths: [16, 32] },
            sa2: SetAbstraction { centroids: 16, group_cap: 8, radius: 0.5, widths: [32, 64] },
            global_dim: 64,
            template_keypoints: 32,
            template_emb_dim: 32,
            text_emb_dim: 16,
            use_text: true,
            center_hidden: 64,
            offset_hidden: 64,
            local_widths: [32, 64],
            local_neighborhood: 256,
            offset_input_points: 64,
            vocab_size: vocab.len(),
        };
        AnchorModel::init(config, vocab, 7)
    }

    #[test]
    fn loss_decreases_and_training_is_deterministic() {
        let (dataset, spec) = tiny_dataset(2);
        let run = || {
            let mut model = tiny_model(dataset.manifest.vocabulary.clone());
            let cfg = AnchorTrainConfig {
                steps: 60,
                batch_size: 4,
                learning_rate: 1e-3,
                keyframes_per_sequence: 3,
                cloud_points: 512,
                seed: 5,
                log_every: 10,
            };
            let pairs = build_training_pairs(&dataset, &spec, &model, &cfg, Split::Train);
            let (log, _) = train_fresh(&mut model, &pairs, &cfg).unwrap();
            log
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.loss_center, rb.loss_center, "training not deterministic");
            assert_eq!(ra.loss_offset, rb.loss_offset);
        }
        let first = a.first().unwrap();
        let last = a.last().unwrap();
        assert!(
            last.loss_center + last.loss_offset < first.loss_center + first.loss_offset,
            "loss did not decrease: {first:?} -> {last:?}"
        );
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (dataset, spec) = tiny_dataset(1);
        let cfg = AnchorTrainConfig {
            steps: 30,
            batch_size: 2,
            learning_rate: 1e-3,
            keyframes_per_sequence: 2,
            cloud_points: 256,
            seed: 9,
            log_every: 6,
        };
        let mut full = tiny_model(dataset.manifest.vocabulary.clone());
        let pairs = build_training_pairs(&dataset, &spec, &full, &cfg, Split::Train);
        let (log_full, _) = train_fresh(&mut full, &pairs, &cfg).unwrap();

        // Interrupted run: stop at 12, then continue to 30.
        let mut part = tiny_model(dataset.manifest.vocabulary.clone());
        let mut adam =
            Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() });
        train_anchornet(&mut part, &pairs, &cfg, &mut adam, 12).unwrap();
        let log_resumed = train_anchornet(&mut part, &pairs, &cfg, &mut adam, cfg.steps).unwrap();

        assert_eq!(
            log_full.last().unwrap().loss_center,
            log_resumed.last().unwrap().loss_center,
            "resumed run diverged"
        );
        for (name, a) in full.store.iter() {
            assert_eq!(a, part.store.get(name), "parameter {name} diverged");
        }
    }
}
