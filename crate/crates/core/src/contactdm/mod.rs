//! Stage 2: the contact-aware conditional diffusion model. Forward noising,
//! a transformer denoiser with condition-token fusion and keyframe
//! cross-attention, x0-prediction training, ancestral sampling, and
//! contact-label reconstruction guidance.

mod denoiser;
mod guidance;
mod sample;
mod schedule;
mod train;

pub use denoiser::{
    additive_fusion_condition, contact_cross_attention_graph, init_denoiser,
    keyframe_features_graph, multi_head_attention, phase_encoding, positional_encoding,
    predict_x0, predict_x0_graph, token_fuse, validate_denoiser_shapes, ConditioningBundle,
    ConditioningMode, DenoiserConfig, DenoiserError, KeyframeCondition,
};
pub use guidance::{
    contact_loss, contact_loss_gradient, reconstruction_guidance, GuidanceConfig,
    GuidanceOutcome, MAX_HALVINGS,
};
pub use sample::{matrix_to_sequence, sample, SampleError};
pub use schedule::{forward_noise, DiffusionSchedule, ScheduleError};
pub use train::{
    conditioning_from_gt, conditioning_from_keyframes, dm_log_to_csv, prepare_training_set,
    sequence_to_matrix, train_contactdm, train_step, DmBundle, DmLogRow, DmTrainConfig,
    DmTrainError, Normalizer, PreparedSequence,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{ContactEncoderConfig, ContactSampleConfig, ContactScale, SamplingMode};
    use crate::nn::{ParamStore, Tape};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    pub(crate) fn tiny_dm_config() -> DenoiserConfig {
        DenoiserConfig {
            joint_count: 2,
            latent: 16,
            blocks: 2,
            heads: 4,
            ff_mult: 2,
            t_max: 10,
            vocab_size: 6,
            bps_dim: 32,
            bps_hidden: 16,
            conditioning: ConditioningMode::CrossAttention,
            contact: ContactEncoderConfig {
                scales: [
                    ContactScale { radius: 0.2, centroids: 6, group_cap: 4, widths: [6, 8] },
                    ContactScale { radius: 0.5, centroids: 6, group_cap: 4, widths: [6, 8] },
                ],
                d: 12,
            },
            sample: ContactSampleConfig { m_o: 8, m_h: 12, mode: SamplingMode::Knn },
        }
    }

    pub(crate) fn tiny_cond(cfg: &DenoiserConfig, k: usize, n_frames: usize) -> ConditioningBundle {
        use crate::anchornet::HoiKeyframe;
        use crate::contact::{sample_contact_points, ContactStructure};
        use crate::geom::{PointCloud, RigidTransform};
        use nalgebra::Vector3;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let keyframes = (0..k)
            .map(|i| {
                let mut randv = |s: f64| {
                    Vector3::new(
                        rng.gen_range(-s..s),
                        rng.gen_range(-s..s),
                        rng.gen_range(0.0..s),
                    )
                };
                let human = PointCloud { points: (0..20).map(|_| randv(1.0)).collect() };
                let object = PointCloud {
                    points: (0..10).map(|_| randv(0.2) + Vector3::new(0.4, 0.0, 0.5)).collect(),
                };
                let frame = (i * n_frames) / k + n_frames / (2 * k);
                let kf = HoiKeyframe {
                    frame_index: frame,
                    human_cloud: human,
                    object_cloud: object,
                    pose: RigidTransform::identity(),
                    text_prompt: String::new(),
                };
                let tagged = sample_contact_points(&kf, &cfg.sample).unwrap();
                KeyframeCondition {
                    structure: ContactStructure::build(&tagged, &cfg.contact),
                    keyframe_index: frame,
                    phase: frame as f64 / n_frames as f64,
                }
            })
            .collect();
        let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(78);
        ConditioningBundle {
            keyframes,
            object_bps: (0..cfg.bps_dim).map(|_| rng2.gen_range(0.0..1.0)).collect(),
            text_tokens: vec![1, 3],
            prompt: "lift the ball".into(),
            object_id: "ball".into(),
            n_frames,
            fps: 30.0,
            gt_keyframe_positions: None,
        }
    }

    #[test]
    fn predict_shape_and_finiteness() {
        let cfg = tiny_dm_config();
        let store = init_denoiser(&cfg, 3);
        validate_denoiser_shapes(&store, &cfg).unwrap();
        let cond = tiny_cond(&cfg, 3, 12);
        let x = Array2::zeros((12, cfg.feature_width()));
        let out = predict_x0(&store, &cfg, &x, 5, &cond).unwrap();
        assert_eq!(out.dim(), (12, cfg.feature_width()));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_skeleton_width_is_209() {
        let cfg = DenoiserConfig::desk(22, 10);
        assert_eq!(cfg.feature_width(), 209);
        let paper = DenoiserConfig::paper(22, 10);
        assert_eq!(paper.latent, 1024);
        assert_eq!(paper.head_width(), 256);
        assert_eq!(paper.heads, 4);
    }

    #[test]
    fn denoiser_is_deterministic() {
        let cfg = tiny_dm_config();
        let store = init_denoiser(&cfg, 3);
        let cond = tiny_cond(&cfg, 2, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((8, cfg.feature_width()), |_| rng.gen_range(-1.0..1.0));
        let a = predict_x0(&store, &cfg, &x, 3, &cond).unwrap();
        let b = predict_x0(&store, &cfg, &x, 3, &cond).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_key_cross_attention_degeneracy() {
        // With one key row, softmax weights are 1, so the pre-residual
        // output is exactly out-proj(value-proj(F1)) for every query row.
        let cfg = tiny_dm_config();
        let store = init_denoiser(&cfg, 3);
        let mut tape = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let f1 = Array2::from_shape_fn((1, cfg.contact.d), |_| rng.gen_range(-1.0..1.0));
        let q = Array2::from_shape_fn((5, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let fv = tape.constant(f1.clone());
        let qv = tape.constant(q);
        let out = contact_cross_attention_graph(&mut tape, &store, "dm.b0.cross", qv, fv, cfg.heads);
        let direct = {
            let v = tape.constant(f1);
            let val = tape.linear(&store, "dm.b0.cross.v", v);
            tape.linear(&store, "dm.b0.cross.o", val)
        };
        let ov = tape.value(out).clone();
        let dv = tape.value(direct).clone();
        for r in 0..ov.nrows() {
            for c in 0..ov.ncols() {
                assert!(
                    (ov[[r, c]] - dv[[0, c]]).abs() < 1e-12,
                    "row {r} col {c}: {} vs {}",
                    ov[[r, c]],
                    dv[[0, c]]
                );
            }
        }
    }

    #[test]
    fn identical_keys_give_identical_rows() {
        let cfg = tiny_dm_config();
        let store = init_denoiser(&cfg, 3);
        let mut tape = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let row: Vec<f64> = (0..cfg.contact.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut f = Array2::zeros((4, cfg.contact.d));
        for mut r in f.rows_mut() {
            for (c, v) in r.iter_mut().enumerate() {
                *v = row[c];
            }
        }
        let q = Array2::from_shape_fn((3, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let fv = tape.constant(f);
        let qv = tape.constant(q.clone());
        let out = contact_cross_attention_graph(&mut tape, &store, "dm.b0.cross", qv, fv, cfg.heads);
        // All key rows identical: softmax over equal logits averages equal
        // values, so the result matches the single-key case for each query.
        let single = {
            let one = Array2::from_shape_vec((1, cfg.contact.d), row).unwrap();
            let f1 = tape.constant(one);
            let q1 = tape.constant(q);
            contact_cross_attention_graph(&mut tape, &store, "dm.b0.cross", q1, f1, cfg.heads)
        };
        let a = tape.value(out).clone();
        let b = tape.value(single).clone();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn token_fuse_shapes_and_mask_equivalence() {
        let cfg = tiny_dm_config();
        let store = init_denoiser(&cfg, 3);
        let mut tape = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let frames = Array2::from_shape_fn((1, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let text = Array2::from_shape_fn((1, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let obj = Array2::from_shape_fn((1, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let f = tape.constant(frames.clone());
        let tx = tape.constant(text);
        let ob = tape.constant(obj);
        let out = token_fuse(&mut tape, &store, "dm.b0.attn", f, tx, ob, cfg.heads, false);
        assert_eq!(tape.value(out).dim(), (1, cfg.latent));

        // Masked mode equals plain self-attention over the frames alone.
        let frames8 = Array2::from_shape_fn((8, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let f8 = tape.constant(frames8.clone());
        let tx2 = tape.constant(Array2::zeros((1, cfg.latent)));
        let ob2 = tape.constant(Array2::zeros((1, cfg.latent)));
        let masked = token_fuse(&mut tape, &store, "dm.b0.attn", f8, tx2, ob2, cfg.heads, true);
        let f8b = tape.constant(frames8);
        let plain = multi_head_attention(&mut tape, &store, "dm.b0.attn", f8b, f8b, cfg.heads);
        let a = tape.value(masked).clone();
        let b = tape.value(plain).clone();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn token_fuse_permutation_equivariance() {
        let cfg = tiny_dm_config();
        let store = init_denoiser(&cfg, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        // Positional encodings already added: permuting tokens with their
        // encodings permutes outputs.
        let frames = Array2::from_shape_fn((6, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let mut swapped = frames.clone();
        for c in 0..cfg.latent {
            swapped.swap([2, c], [4, c]);
        }
        let text = Array2::from_shape_fn((1, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let obj = Array2::from_shape_fn((1, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let run = |m: &Array2<f64>| {
            let mut tape = Tape::new();
            let f = tape.constant(m.clone());
            let tx = tape.constant(text.clone());
            let ob = tape.constant(obj.clone());
            let out = token_fuse(&mut tape, &store, "dm.b0.attn", f, tx, ob, cfg.heads, false);
            tape.value(out).clone()
        };
        let a = run(&frames);
        let b = run(&swapped);
        for c in 0..cfg.latent {
            assert!((a[[2, c]] - b[[4, c]]).abs() < 1e-12);
            assert!((a[[4, c]] - b[[2, c]]).abs() < 1e-12);
            assert!((a[[0, c]] - b[[0, c]]).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_attention_gradient_matches_finite_differences() {
        let cfg = tiny_dm_config();
        let mut store = init_denoiser(&cfg, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        // Perturb away from relu kinks and zero-bias symmetry.
        let names: Vec<String> = store.names().cloned().collect();
        for name in &names {
            let jittered = store.get(name).mapv(|v| v + 0.01 * rng.gen_range(-1.0f64..1.0));
            store.insert(name, jittered);
        }
        let q = Array2::from_shape_fn((3, cfg.latent), |_| rng.gen_range(-1.0..1.0));
        let f = Array2::from_shape_fn((2, cfg.contact.d), |_| rng.gen_range(-1.0..1.0));
        let target = Array2::from_shape_fn((3, cfg.latent), |(i, j)| ((i + j) as f64 * 0.1).sin());
        let eval = |st: &ParamStore| {
            let mut tape = Tape::new();
            let qv = tape.constant(q.clone());
            let fv = tape.constant(f.clone());
            let out = contact_cross_attention_graph(&mut tape, st, "dm.b1.cross", qv, fv, cfg.heads);
            let res = tape.add(out, qv);
            let loss = tape.mse(res, &target);
            tape.scalar(loss)
        };
        let grads = {
            let mut tape = Tape::new();
            let qv = tape.constant(q.clone());
            let fv = tape.constant(f.clone());
            let out =
                contact_cross_attention_graph(&mut tape, &store, "dm.b1.cross", qv, fv, cfg.heads);
            let res = tape.add(out, qv);
            let loss = tape.mse(res, &target);
            tape.backward(loss)
        };
        for name in ["dm.b1.cross.q.w", "dm.b1.cross.k.w", "dm.b1.cross.v.w", "dm.b1.cross.o.w"] {
            let g = &grads[name];
            for (r, c) in [(0, 0), (1, 3), (g.nrows() - 1, g.ncols() - 1)] {
                let fd = crate::nn::finite_diff(&mut store, name, r, c, 1e-5, eval);
                let re = crate::nn::relative_error(g[[r, c]], fd);
                assert!(re < 1e-4, "{name}[{r},{c}]: {} vs {fd}", g[[r, c]]);
            }
        }
    }

    #[test]
    fn phase_encoding_distinguishes_keyframe_order() {
        let cfg = tiny_dm_config();
        let store = init_denoiser(&cfg, 3);
        let cond = tiny_cond(&cfg, 3, 12);
        let x = {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
            Array2::from_shape_fn((12, cfg.feature_width()), |_| rng.gen_range(-1.0..1.0))
        };
        let base = predict_x0(&store, &cfg, &x, 4, &cond).unwrap();

        // Permuting features together with their phases: same output.
        let mut together = cond.clone();
        together.keyframes.swap(0, 2);
        let same = predict_x0(&store, &cfg, &x, 4, &together).unwrap();
        let max_diff = base
            .iter()
            .zip(same.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "co-permutation changed output by {max_diff}");

        // Permuting features while keeping phases: output changes.
        let mut alone = cond.clone();
        let p0 = alone.keyframes[0].phase;
        let p2 = alone.keyframes[2].phase;
        alone.keyframes.swap(0, 2);
        alone.keyframes[0].phase = p0;
        alone.keyframes[2].phase = p2;
        let moved = predict_x0(&store, &cfg, &x, 4, &alone).unwrap();
        let diff: f64 = base.iter().zip(moved.iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "phase encoding is not live");
    }

    #[test]
    fn additive_fusion_mean_of_one_is_projection() {
        let cfg = tiny_dm_config();
        let store = init_denoiser(&cfg, 3);
        let mut tape = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let f1 = Array2::from_shape_fn((1, cfg.contact.d), |_| rng.gen_range(-1.0..1.0));
        let fv = tape.constant(f1.clone());
        let fused = additive_fusion_condition(&mut tape, &store, fv);
        let direct = {
            let v = tape.constant(f1.clone());
            tape.linear(&store, "dm.fuse", v)
        };
        assert_eq!(tape.value(fused), tape.value(direct));
        // Identical rows: mean equals any single row.
        let mut f3 = Array2::zeros((3, cfg.contact.d));
        for mut r in f3.rows_mut() {
            for (c, v) in r.iter_mut().enumerate() {
                *v = f1[[0, c]];
            }
        }
        let f3v = tape.constant(f3);
        let fused3 = additive_fusion_condition(&mut tape, &store, f3v);
        let a = tape.value(fused3).clone();
        let b = tape.value(fused).clone();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn train_step_loss_nonnegative_and_deterministic() {
        let cfg = tiny_dm_config();
        let schedule = DiffusionSchedule::cosine(cfg.t_max).unwrap();
        let cond = tiny_cond(&cfg, 2, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(55);
        let x0 = Array2::from_shape_fn((8, cfg.feature_width()), |_| rng.gen_range(-1.0..1.0));
        let prepared = PreparedSequence { x0, cond };
        let run = || {
            let mut store = init_denoiser(&cfg, 3);
            let mut adam = crate::nn::Adam::new(crate::nn::AdamConfig {
                learning_rate: 1e-3,
                ..Default::default()
            });
            let mut losses = Vec::new();
            for step in 0..5 {
                let l = train_step(&mut store, &cfg, &schedule, &[&prepared], &mut adam, 100 + step)
                    .unwrap();
                assert!(l >= 0.0);
                losses.push(l);
            }
            losses
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn end_to_end_gradient_check_on_parameter_slice() {
        let cfg = tiny_dm_config();
        let mut store = init_denoiser(&cfg, 3);
        let schedule = DiffusionSchedule::cosine(cfg.t_max).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
        let names: Vec<String> = store.names().cloned().collect();
        for name in &names {
            let jittered = store.get(name).mapv(|v| v + 0.01 * rng.gen_range(-1.0f64..1.0));
            store.insert(name, jittered);
        }
        // Two-frame toy instance.
        let cond = tiny_cond(&cfg, 2, 2);
        let x0 = Array2::from_shape_fn((2, cfg.feature_width()), |_| rng.gen_range(-1.0..1.0));
        let noise = Array2::from_shape_fn((2, cfg.feature_width()), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let t = 4;
        let x_t = forward_noise(&schedule, &x0, t, &noise).unwrap();
        let eval = |st: &ParamStore| {
            let mut tape = Tape::new();
            let xv = tape.constant(x_t.clone());
            let (out, _) = predict_x0_graph(&mut tape, st, &cfg, xv, t, &cond, false);
            let loss = tape.mse(out, &x0);
            tape.scalar(loss)
        };
        let grads = {
            let mut tape = Tape::new();
            let xv = tape.constant(x_t.clone());
            let (out, _) = predict_x0_graph(&mut tape, &store, &cfg, xv, t, &cond, false);
            let loss = tape.mse(out, &x0);
            tape.backward(loss)
        };
        let names: Vec<String> = grads.keys().cloned().collect();
        let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(63);
        for _ in 0..32 {
            let name = &names[rng2.gen_range(0..names.len())];
            let g = &grads[name];
            let (r, c) = (rng2.gen_range(0..g.nrows()), rng2.gen_range(0..g.ncols()));
            let fd = crate::nn::finite_diff(&mut store, name, r, c, 1e-5, eval);
            let re = crate::nn::relative_error(g[[r, c]], fd);
            assert!(re < 1e-3, "{name}[{r},{c}]: analytic {} vs fd {fd}", g[[r, c]]);
        }
    }
}

#[cfg(test)]
mod timing_probe {
    use super::*;
    use crate::datagen::*;
    use crate::nn::{Adam, AdamConfig};

    #[test]
    #[ignore = "manual timing probe"]
    fn probe_train_step_cost() {
        let spec = skeleton22();
        let (templates, _unseen) = default_object_set(4, 1, 1024, 1).unwrap();
        let mut sequences = Vec::new();
        let mut entries = Vec::new();
        for i in 0..8 {
            let t = &templates[i % 3];
            let script = build_script(t, 120, 30.0, 500 + i as u64);
            sequences.push(generate_sequence(&script, &spec, t, i as u64).unwrap());
            entries.push(SequenceEntry {
                file: format!("sequences/{i:06}.json"),
                split: Split::Train,
                object_id: t.object_id.clone(),
                crc32: 0,
            });
        }
        let ids: Vec<String> = templates.iter().map(|t| t.object_id.clone()).collect();
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            seed: 1,
            tool_version: crate::VERSION.into(),
            skeleton: spec.clone(),
            vocabulary: vocabulary_for(&ids),
            objects: templates
                .iter()
                .enumerate()
                .map(|(i, t)| ObjectEntry { id: t.object_id.clone(), unseen: i == 3 })
                .collect(),
            sequences: entries,
            config_echo: serde_json::json!({}),
        };
        let mut tmap = std::collections::BTreeMap::new();
        for t in templates {
            tmap.insert(t.object_id.clone(), t);
        }
        let dataset = Dataset { manifest, templates: tmap, sequences };
        let vocab = dataset.manifest.vocabulary.clone();
        let cfg = DenoiserConfig::desk(22, vocab.len());
        let train_cfg = DmTrainConfig { batch_size: 4, ..Default::default() };
        let t0 = std::time::Instant::now();
        let (prepared, _norm) =
            prepare_training_set(&dataset, &spec, &cfg, &train_cfg, &vocab).unwrap();
        println!("prep of {} sequences: {:?}", prepared.len(), t0.elapsed());
        let schedule = DiffusionSchedule::cosine(cfg.t_max).unwrap();
        let mut store = init_denoiser(&cfg, 3);
        println!("params: {}", store.parameter_count());
        let mut adam = Adam::new(AdamConfig { learning_rate: 3e-4, ..Default::default() });
        let t1 = std::time::Instant::now();
        let steps = 20u64;
        for step in 0..steps {
            let batch: Vec<&PreparedSequence> =
                (0..4).map(|k| &prepared[(step as usize * 4 + k) % prepared.len()]).collect();
            train_step(&mut store, &cfg, &schedule, &batch, &mut adam, step).unwrap();
        }
        println!("{} steps took {:?} ({:?}/step)", steps, t1.elapsed(), t1.elapsed() / steps as u32);
    }
}
