//! The anchor network: a hierarchical point-set encoder predicting the
//! object center, plus a per-keypoint shift head refined into a rigid pose
//! by least-squares alignment.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    farthest_point_sample_indices, procrustes_align, GeomError, ObjectTemplate, PointCloud,
    RigidTransform,
};
use crate::nn::{ParamStore, Tape, Var};
use crate::sequence::HoiSequence;
use crate::skeleton::SkeletonSpec;

use super::HoiKeyframe;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter '{name}' has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, found: (usize, usize), expected: (usize, usize) },
    #[error("missing parameter '{0}'")]
    MissingParameter(String),
    #[error("recover stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: GeomError,
    },
}

/// One set-abstraction level: FPS centroids, radius grouping, shared MLP.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SetAbstraction {
    pub centroids: usize,
    pub group_cap: usize,
    pub radius: f64,
    pub widths: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorNetConfig {
    pub sa1: SetAbstraction,
    pub sa2: SetAbstraction,
    pub global_dim: usize,
    pub template_keypoints: usize,
    pub template_emb_dim: usize,
    pub text_emb_dim: usize,
    /// Text conditioning switch (the geometry-only variant disables it).
    pub use_text: bool,
    pub center_hidden: usize,
    pub offset_hidden: usize,
    /// Local-feature MLP widths for the offset head.
    pub local_widths: [usize; 2],
    /// Neighborhood size for local context selection around the center.
    pub local_neighborhood: usize,
    /// The neighborhood is strided down to this many points before encoding.
    pub offset_input_points: usize,
    pub vocab_size: usize,
}

impl AnchorNetConfig {
    /// Small configuration sized for CPU training.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            sa1: SetAbstraction { centroids: 128, group_cap: 16, radius: 0.2, widths: [32, 64] },
            sa2: SetAbstraction { centroids: 32, group_cap: 8, radius: 0.4, widths: [64, 128] },
            global_dim: 256,
            template_keypoints: 64,
            template_emb_dim: 64,
            text_emb_dim: 32,
            use_text: true,
            center_hidden: 128,
            offset_hidden: 128,
            local_widths: [64, 128],
            local_neighborhood: 3000,
            offset_input_points: 256,
            vocab_size,
        }
    }

    /// Full-size configuration (two levels, 512 -> 128 centroids).
    pub fn paper(vocab_size: usize) -> Self {
        Self {
            sa1: SetAbstraction { centroids: 512, group_cap: 32, radius: 0.2, widths: [64, 128] },
            sa2: SetAbstraction { centroids: 128, group_cap: 16, radius: 0.4, widths: [128, 256] },
            global_dim: 256,
            center_hidden: 256,
            offset_hidden: 256,
            ..Self::desk(vocab_size)
        }
    }
}

/// The model: parameters, configuration, and the prompt vocabulary.
pub struct AnchorModel {
    pub store: ParamStore,
    pub config: AnchorNetConfig,
    pub vocab: Vec<String>,
}

impl AnchorModel {
    pub fn init(config: AnchorNetConfig, vocab: Vec<String>, seed: u64) -> Self {
        assert_eq!(config.vocab_size, vocab.len(), "vocab size mismatch");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = &config;
        s.init_linear("anchor.sa1.l1", 3, c.sa1.widths[0], &mut rng);
        s.init_linear("anchor.sa1.l2", c.sa1.widths[0], c.sa1.widths[1], &mut rng);
        let sa2_in = 3 + 3 + c.sa1.widths[1];
        s.init_linear("anchor.sa2.l1", sa2_in, c.sa2.widths[0], &mut rng);
        s.init_linear("anchor.sa2.l2", c.sa2.widths[0], c.sa2.widths[1], &mut rng);
        s.init_linear("anchor.global", 2 * (3 + c.sa2.widths[1]), c.global_dim, &mut rng);
        s.init_linear("anchor.templ", 3, c.template_emb_dim, &mut rng);
        s.init_normal("anchor.text", c.vocab_size.max(1), c.text_emb_dim, 0.02, &mut rng);
        let head_in = c.global_dim + c.template_emb_dim + c.text_emb_dim;
        s.init_linear("anchor.center.h", head_in, c.center_hidden, &mut rng);
        s.init_linear("anchor.center.out", c.center_hidden, 3, &mut rng);
        s.init_linear("anchor.local.l1", 3, c.local_widths[0], &mut rng);
        s.init_linear("anchor.local.l2", c.local_widths[0], c.local_widths[1], &mut rng);
        let off_in = 3 + c.local_widths[1] + c.text_emb_dim;
        s.init_linear("anchor.off.h", off_in, c.offset_hidden, &mut rng);
        // Zero start: predictions begin at center + canonical keypoints.
        s.init_linear_zero("anchor.off.out", c.offset_hidden, 3);
        Self { store: s, config, vocab }
    }

    /// Checks that every expected parameter exists with consistent shape.
    pub fn validate_shapes(&self) -> Result<(), ModelError> {
        let c = &self.config;
        let expect: Vec<(String, (usize, usize))> = vec![
            ("anchor.sa1.l1.w".into(), (3, c.sa1.widths[0])),
            ("anchor.sa1.l2.w".into(), (c.sa1.widths[0], c.sa1.widths[1])),
            ("anchor.sa2.l1.w".into(), (6 + c.sa1.widths[1], c.sa2.widths[0])),
            ("anchor.sa2.l2.w".into(), (c.sa2.widths[0], c.sa2.widths[1])),
            ("anchor.global.w".into(), (2 * (3 + c.sa2.widths[1]), c.global_dim)),
            ("anchor.templ.w".into(), (3, c.template_emb_dim)),
            ("anchor.text".into(), (c.vocab_size.max(1), c.text_emb_dim)),
            (
                "anchor.center.h.w".into(),
                (c.global_dim + c.template_emb_dim + c.text_emb_dim, c.center_hidden),
            ),
            ("anchor.center.out.w".into(), (c.center_hidden, 3)),
            ("anchor.local.l1.w".into(), (3, c.local_widths[0])),
            ("anchor.local.l2.w".into(), (c.local_widths[0], c.local_widths[1])),
            (
                "anchor.off.h.w".into(),
                (3 + c.local_widths[1] + c.text_emb_dim, c.offset_hidden),
            ),
            ("anchor.off.out.w".into(), (c.offset_hidden, 3)),
        ];
        for (name, shape) in expect {
            if !self.store.contains(&name) {
                return Err(ModelError::MissingParameter(name));
            }
            let found = self.store.get(&name).dim();
            if found != shape {
                return Err(ModelError::ShapeMismatch { name, found, expected: shape });
            }
        }
        Ok(())
    }

    pub fn tokenize(&self, prompt: &str) -> Vec<usize> {
        crate::datagen::tokenize(prompt, &self.vocab)
    }
}

/// Precomputed, parameter-free grouping structure for one human cloud.
///
/// Built once per training pair; only the shared MLPs run per step. Stored
/// at f32 precision to keep large pair caches small.
#[derive(Debug, Clone)]
pub struct EncoderStructure {
    pub centroid: Vector3<f64>,
    /// Centered cloud, for center-relative neighborhood selection.
    pub centered: Vec<[f32; 3]>,
    g1_rel: Vec<[f32; 3]>,
    g1_seg: Vec<usize>,
    c1_pos: Vec<[f32; 3]>,
    g2_rows: Vec<usize>,
    g2_rel: Vec<[f32; 3]>,
    g2_seg: Vec<usize>,
    c2_pos: Vec<[f32; 3]>,
}

fn group_by_radius(
    points: &[Vector3<f64>],
    centroid_idx: &[usize],
    radius: f64,
    cap: usize,
) -> (Vec<usize>, Vec<[f32; 3]>, Vec<usize>) {
    let mut members = Vec::new();
    let mut rel = Vec::new();
    let mut seg = Vec::new();
    for (sid, &ci) in centroid_idx.iter().enumerate() {
        let c = points[ci];
        let mut near: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let d = (p - c).norm();
                (d <= radius).then_some((d, i))
            })
            .collect();
        near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        near.truncate(cap);
        if near.is_empty() {
            near.push((0.0, ci));
        }
        for (_, i) in near {
            let r = points[i] - c;
            members.push(i);
            rel.push([r.x as f32, r.y as f32, r.z as f32]);
            seg.push(sid);
        }
    }
    (members, rel, seg)
}

impl EncoderStructure {
    pub fn build(cloud: &PointCloud, cfg: &AnchorNetConfig) -> Self {
        let centroid = cloud.centroid();
        let centered: Vec<Vector3<f64>> = cloud.points.iter().map(|p| p - centroid).collect();
        let pc = PointCloud { points: centered.clone() };
        let c1_idx = farthest_point_sample_indices(&pc, cfg.sa1.centroids.min(pc.len()), 0)
            .expect("sa1 centroids");
        let (_, g1_rel, g1_seg) =
            group_by_radius(&centered, &c1_idx, cfg.sa1.radius, cfg.sa1.group_cap);
        let c1_points: Vec<Vector3<f64>> = c1_idx.iter().map(|&i| centered[i]).collect();
        let c1_pc = PointCloud { points: c1_points.clone() };
        let c2_idx = farthest_point_sample_indices(&c1_pc, cfg.sa2.centroids.min(c1_pc.len()), 0)
            .expect("sa2 centroids");
        let (g2_rows, g2_rel, g2_seg) =
            group_by_radius(&c1_points, &c2_idx, cfg.sa2.radius, cfg.sa2.group_cap);
        let f32v = |v: &Vector3<f64>| [v.x as f32, v.y as f32, v.z as f32];
        Self {
            centroid,
            centered: centered.iter().map(f32v).collect(),
            g1_rel,
            g1_seg,
            c1_pos: c1_points.iter().map(f32v).collect(),
            g2_rows,
            g2_rel,
            g2_seg,
            c2_pos: c2_idx.iter().map(|&i| f32v(&c1_points[i])).collect(),
        }
    }
}

fn rows_to_array(rows: &[[f32; 3]]) -> Array2<f64> {
    let mut a = Array2::zeros((rows.len(), 3));
    for (i, r) in rows.iter().enumerate() {
        for k in 0..3 {
            a[[i, k]] = r[k] as f64;
        }
    }
    a
}

/// Hierarchical encoding of a (centered) human cloud to a global feature.
pub fn encode_cloud(tape: &mut Tape, store: &ParamStore, es: &EncoderStructure) -> Var {
    let x = tape.constant(rows_to_array(&es.g1_rel));
    let h = tape.linear(store, "anchor.sa1.l1", x);
    let h = tape.relu(h);
    let h = tape.linear(store, "anchor.sa1.l2", h);
    let h = tape.relu(h);
    let f1 = tape.segment_max(h, &es.g1_seg, es.c1_pos.len());
    let c1 = tape.constant(rows_to_array(&es.c1_pos));
    let f1c = tape.concat_cols(&[c1, f1]);
    let gathered = tape.gather_rows(f1c, &es.g2_rows);
    let rel2 = tape.constant(rows_to_array(&es.g2_rel));
    let in2 = tape.concat_cols(&[rel2, gathered]);
    let h2 = tape.linear(store, "anchor.sa2.l1", in2);
    let h2 = tape.relu(h2);
    let h2 = tape.linear(store, "anchor.sa2.l2", h2);
    let h2 = tape.relu(h2);
    let f2 = tape.segment_max(h2, &es.g2_seg, es.c2_pos.len());
    let c2 = tape.constant(rows_to_array(&es.c2_pos));
    let f2c = tape.concat_cols(&[c2, f2]);
    let zeros = vec![0usize; es.c2_pos.len()];
    let maxed = tape.segment_max(f2c, &zeros, 1);
    let meaned = tape.mean_rows(f2c);
    let pooled = tape.concat_cols(&[maxed, meaned]);
    let g = tape.linear(store, "anchor.global", pooled);
    tape.relu(g)
}

/// Pooled embedding of the template keypoints.
pub fn template_embedding(tape: &mut Tape, store: &ParamStore, keypoints: &Array2<f64>) -> Var {
    let kp = tape.constant(keypoints.clone());
    let h = tape.linear(store, "anchor.templ", kp);
    let h = tape.relu(h);
    let zeros = vec![0usize; keypoints.nrows()];
    tape.segment_max(h, &zeros, 1)
}

/// Bag-of-tokens text embedding (mean of token rows); zeros when disabled
/// or when the prompt has no known tokens.
pub fn text_embedding(tape: &mut Tape, store: &ParamStore, cfg: &AnchorNetConfig, tokens: &[usize]) -> Var {
    if !cfg.use_text || tokens.is_empty() {
        return tape.constant(Array2::zeros((1, cfg.text_emb_dim)));
    }
    let table = tape.param(store, "anchor.text");
    let rows = tape.gather_rows(table, tokens);
    tape.mean_rows(rows)
}

/// Center prediction: cloud centroid plus a learned offset.
pub fn predict_center(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &AnchorNetConfig,
    es: &EncoderStructure,
    keypoints: &Array2<f64>,
    tokens: &[usize],
) -> Var {
    let g = encode_cloud(tape, store, es);
    let t = template_embedding(tape, store, keypoints);
    let txt = text_embedding(tape, store, cfg, tokens);
    let joint = tape.concat_cols(&[g, t, txt]);
    let h = tape.linear(store, "anchor.center.h", joint);
    let h = tape.gelu(h);
    let delta = tape.linear(store, "anchor.center.out", h);
    let centroid = tape.constant(Array2::from_shape_vec((1, 3), es.centroid.iter().cloned().collect()).unwrap());
    tape.add(delta, centroid)
}

/// The `m` cloud points nearest to the predicted center, ascending by
/// distance with index tie-breaks.
pub fn select_local_neighborhood(
    human: &PointCloud,
    center: &Vector3<f64>,
    m: usize,
) -> Result<PointCloud, GeomError> {
    if m > human.len() || m == 0 {
        return Err(GeomError::SizeError { requested: m, available: human.len() });
    }
    let mut scored: Vec<(f64, usize)> = human
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - center).norm_squared(), i))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(PointCloud { points: scored[..m].iter().map(|&(_, i)| human.points[i]).collect() })
}

/// Strided subsample of a neighborhood (absolute coordinates); the offset
/// head recenters them on the predicted center in-graph, so gradients reach
/// the center head through the local context too.
pub fn neighborhood_input(neighborhood: &PointCloud, count: usize) -> Array2<f64> {
    let n = neighborhood.len();
    let take = count.min(n);
    let mut a = Array2::zeros((take, 3));
    for i in 0..take {
        let p = neighborhood.points[i * n / take];
        a[[i, 0]] = p.x;
        a[[i, 1]] = p.y;
        a[[i, 2]] = p.z;
    }
    a
}

/// Per-keypoint world position prediction: `center + keypoint + shift`.
pub fn predict_offsets(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &AnchorNetConfig,
    local_points: &Array2<f64>,
    keypoints: &Array2<f64>,
    tokens: &[usize],
    center: Var,
) -> Var {
    let pts = tape.constant(local_points.clone());
    let center_for_local = tape.repeat_row(center, local_points.nrows());
    let x = tape.sub(pts, center_for_local);
    let h = tape.linear(store, "anchor.local.l1", x);
    let h = tape.relu(h);
    let h = tape.linear(store, "anchor.local.l2", h);
    let h = tape.relu(h);
    let zeros = vec![0usize; local_points.nrows()];
    let local = tape.segment_max(h, &zeros, 1);
    let txt = text_embedding(tape, store, cfg, tokens);
    let k = keypoints.nrows();
    let kp = tape.constant(keypoints.clone());
    let local_rep = tape.repeat_row(local, k);
    let txt_rep = tape.repeat_row(txt, k);
    let joint = tape.concat_cols(&[kp, local_rep, txt_rep]);
    let h = tape.linear(store, "anchor.off.h", joint);
    let h = tape.gelu(h);
    let shifts = tape.linear(store, "anchor.off.out", h);
    let center_rep = tape.repeat_row(center, k);
    let translated = tape.add(center_rep, kp);
    tape.add(translated, shifts)
}

/// Canonical template keypoints: FPS of the surface sample cache.
pub fn template_keypoints(template: &ObjectTemplate, count: usize) -> Array2<f64> {
    let pc = PointCloud { points: template.surface_samples.clone() };
    let idx = farthest_point_sample_indices(&pc, count.min(pc.len()), 0).expect("keypoints");
    let mut a = Array2::zeros((idx.len(), 3));
    for (r, &i) in idx.iter().enumerate() {
        let p = template.surface_samples[i];
        a[[r, 0]] = p.x;
        a[[r, 1]] = p.y;
        a[[r, 2]] = p.z;
    }
    a
}

/// Rigid pose from corresponded canonical and predicted world keypoints.
pub fn fit_pose(canonical: &Array2<f64>, predicted: &Array2<f64>) -> Result<RigidTransform, GeomError> {
    let to_cloud = |a: &Array2<f64>| PointCloud {
        points: a.rows().into_iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect(),
    };
    procrustes_align(&to_cloud(canonical), &to_cloud(predicted))
}

/// Full Stage-1 inference for one frame: synthesize the human cloud, predict
/// the object pose, and emit the posed keyframe.
pub fn recover_keyframe(
    model: &AnchorModel,
    seq: &HoiSequence,
    frame_index: usize,
    spec: &SkeletonSpec,
    template: &ObjectTemplate,
    cloud_points: usize,
    seed: u64,
) -> Result<HoiKeyframe, ModelError> {
    let cloud = crate::datagen::synthesize_human_pointcloud(
        spec,
        &seq.human[frame_index],
        cloud_points,
        seed,
    );
    let tokens = model.tokenize(&seq.text_prompt);
    let keypoints = template_keypoints(template, model.config.template_keypoints);
    let es = EncoderStructure::build(&cloud, &model.config);
    let mut tape = Tape::new();
    let center_var = predict_center(&mut tape, &model.store, &model.config, &es, &keypoints, &tokens);
    let cv = tape.value(center_var);
    let center = Vector3::new(cv[[0, 0]], cv[[0, 1]], cv[[0, 2]]);
    let m = model.config.local_neighborhood.min(cloud.len());
    let neighborhood = select_local_neighborhood(&cloud, &center, m)
        .map_err(|source| ModelError::Stage { stage: "select_local_neighborhood", source })?;
    let local = neighborhood_input(&neighborhood, model.config.offset_input_points);
    let pred = predict_offsets(
        &mut tape,
        &model.store,
        &model.config,
        &local,
        &keypoints,
        &tokens,
        center_var,
    );
    let pose = fit_pose(&keypoints, tape.value(pred))
        .map_err(|source| ModelError::Stage { stage: "fit_pose", source })?;
    let object_cloud =
        PointCloud { points: template.surface_samples.iter().map(|p| pose.apply(p)).collect() };
    Ok(HoiKeyframe {
        frame_index,
        human_cloud: cloud,
        object_cloud,
        pose,
        text_prompt: seq.text_prompt.clone(),
    })
}

/// Oracle ablation: bypasses the learned heads entirely. Keypoint
/// predictions are the ground-truth-posed canonical keypoints, so recovery
/// reduces to pure rigid alignment.
pub fn recover_keyframe_oracle(
    template: &ObjectTemplate,
    keypoint_count: usize,
    gt_pose: &RigidTransform,
) -> Result<RigidTransform, GeomError> {
    let canonical = template_keypoints(template, keypoint_count);
    let mut posed = canonical.clone();
    for mut row in posed.rows_mut() {
        let p = gt_pose.apply(&Vector3::new(row[0], row[1], row[2]));
        row[0] = p.x;
        row[1] = p.y;
        row[2] = p.z;
    }
    fit_pose(&canonical, &posed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_template, object_recipes, skeleton22, synthesize_human_pointcloud};

    fn tiny_config() -> AnchorNetConfig {
        AnchorNetConfig {
            sa1: SetAbstraction { centroids: 16, group_cap: 8, radius: 0.3, widths: [8, 16] },
            sa2: SetAbstraction { centroids: 8, group_cap: 4, radius: 0.6, widths: [16, 32] },
            global_dim: 32,
            template_keypoints: 16,
            template_emb_dim: 16,
            text_emb_dim: 8,
            use_text: true,
            center_hidden: 32,
            offset_hidden: 32,
            local_widths: [16, 32],
            local_neighborhood: 64,
            offset_input_points: 32,
            vocab_size: 10,
        }
    }

    fn vocab10() -> Vec<String> {
        (0..10).map(|i| format!("tok{i}")).collect()
    }

    #[test]
    fn untrained_center_is_finite() {
        let spec = skeleton22();
        let template = make_template(&object_recipes()[0], 128, 3).unwrap();
        let model = AnchorModel::init(tiny_config(), vocab10(), 5);
        model.validate_shapes().unwrap();
        let rots = crate::datagen::rest_pose_rotations(&spec);
        let joints = crate::skeleton::forward_kinematics(
            &spec,
            Vector3::new(0.0, 0.0, crate::datagen::ROOT_HEIGHT),
            &rots,
        )
        .unwrap();
        let pose = crate::sequence::HumanPose {
            joints: joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
            rotations: rots,
        };
        let cloud = synthesize_human_pointcloud(&spec, &pose, 256, 1);
        let es = EncoderStructure::build(&cloud, &model.config);
        let kp = template_keypoints(&template, model.config.template_keypoints);
        let mut tape = Tape::new();
        let c = predict_center(&mut tape, &model.store, &model.config, &es, &kp, &[1, 2]);
        assert!(tape.value(c).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_initialized_offsets_reproduce_translated_keypoints() {
        let template = make_template(&object_recipes()[0], 128, 3).unwrap();
        let model = AnchorModel::init(tiny_config(), vocab10(), 5);
        let kp = template_keypoints(&template, model.config.template_keypoints);
        let mut tape = Tape::new();
        let center = tape.constant(ndarray::array![[0.5, -0.2, 1.0]]);
        let local = Array2::from_elem((8, 3), 0.5);
        let pred =
            predict_offsets(&mut tape, &model.store, &model.config, &local, &kp, &[1], center);
        let pv = tape.value(pred);
        assert_eq!(pv.nrows(), model.config.template_keypoints);
        for r in 0..pv.nrows() {
            assert!((pv[[r, 0]] - (kp[[r, 0]] + 0.5)).abs() < 1e-12);
            assert!((pv[[r, 1]] - (kp[[r, 1]] - 0.2)).abs() < 1e-12);
            assert!((pv[[r, 2]] - (kp[[r, 2]] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn neighborhood_selection_matches_bruteforce() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let pts: Vec<Vector3<f64>> = (0..40)
            .map(|_| {
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            })
            .collect();
        let cloud = PointCloud { points: pts.clone() };
        let center = Vector3::new(0.1, 0.2, -0.1);
        let out = select_local_neighborhood(&cloud, &center, 7).unwrap();
        let mut scored: Vec<(f64, usize)> =
            pts.iter().enumerate().map(|(i, p)| ((p - center).norm_squared(), i)).collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for (k, &(_, i)) in scored[..7].iter().enumerate() {
            assert_eq!(out.points[k], pts[i]);
        }
        assert!(select_local_neighborhood(&cloud, &center, 41).is_err());
    }

    #[test]
    fn equidistant_points_resolve_by_index() {
        let pts = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.0, 1.0)];
        let cloud = PointCloud { points: pts.clone() };
        let out = select_local_neighborhood(&cloud, &Vector3::zeros(), 2).unwrap();
        assert_eq!(out.points, vec![pts[0], pts[1]]);
    }

    #[test]
    fn predict_center_is_translation_equivariant() {
        let spec = skeleton22();
        let template = make_template(&object_recipes()[0], 128, 3).unwrap();
        let model = AnchorModel::init(tiny_config(), vocab10(), 5);
        let kp = template_keypoints(&template, model.config.template_keypoints);
        let rots = crate::datagen::rest_pose_rotations(&spec);
        let build_cloud = |root: Vector3<f64>| {
            let joints = crate::skeleton::forward_kinematics(&spec, root, &rots).unwrap();
            let pose = crate::sequence::HumanPose {
                joints: joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
                rotations: rots.clone(),
            };
            synthesize_human_pointcloud(&spec, &pose, 256, 11)
        };
        let t = Vector3::new(0.7, -1.3, 0.0);
        let base = Vector3::new(0.0, 0.0, crate::datagen::ROOT_HEIGHT);
        let predict = |cloud: &crate::geom::PointCloud| {
            let es = EncoderStructure::build(cloud, &model.config);
            let mut tape = Tape::new();
            let c = predict_center(&mut tape, &model.store, &model.config, &es, &kp, &[1, 2]);
            let v = tape.value(c);
            Vector3::new(v[[0, 0]], v[[0, 1]], v[[0, 2]])
        };
        let a = predict(&build_cloud(base));
        let b = predict(&build_cloud(base + t));
        // Centered encoding makes the shift exact up to rounding.
        assert!(((b - a) - t).norm() < 1e-6, "equivariance error {}", ((b - a) - t).norm());
    }

    #[test]
    fn fit_pose_tolerates_centimeter_noise() {
        use rand::{Rng, SeedableRng};
        let template = make_template(&object_recipes()[2], 256, 3).unwrap();
        let canonical = template_keypoints(&template, 64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let gt = RigidTransform {
                rotation: crate::rot::random_rotation(&mut rng),
                translation: Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..1.5),
                ),
            };
            let mut noisy = canonical.clone();
            for mut row in noisy.rows_mut() {
                let p = gt.apply(&Vector3::new(row[0], row[1], row[2]));
                row[0] = p.x + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                row[1] = p.y + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                row[2] = p.z + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let rec = fit_pose(&canonical, &noisy).unwrap();
            worst = worst.max(rec.rotation.angle_to(&gt.rotation));
        }
        assert!(worst < 0.15, "orientation error {worst} rad under 1 cm noise");
    }

    #[test]
    fn oracle_recovery_is_exact() {
        let template = make_template(&object_recipes()[2], 256, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let gt = RigidTransform {
                rotation: crate::rot::random_rotation(&mut rng),
                translation: Vector3::new(0.3, -1.0, 0.8),
            };
            let rec = recover_keyframe_oracle(&template, 64, &gt).unwrap();
            let rot_err = (rec.rotation.matrix() - gt.rotation.matrix()).norm();
            let t_err = (rec.translation - gt.translation).norm();
            assert!(rot_err < 1e-5, "rotation error {rot_err}");
            assert!(t_err < 1e-5, "translation error {t_err}");
        }
    }
}

impl AnchorModel {
    /// Persists parameters, optimizer state, config, and vocabulary.
    pub fn save(
        &self,
        path: &std::path::Path,
        seed: u64,
        adam: &crate::nn::Adam,
    ) -> Result<(), crate::nn::CheckpointError> {
        let config = serde_json::json!({
            "kind": "anchor",
            "config": self.config,
            "vocab": self.vocab,
            "adam": adam.config,
        });
        let opt = adam.state_arrays();
        let mut arrays: Vec<(String, &ndarray::Array2<f64>)> =
            self.store.iter().map(|(n, a)| (n.clone(), a)).collect();
        for (n, a) in &opt {
            arrays.push((n.clone(), a));
        }
        crate::nn::save_checkpoint(path, seed, adam.step_count, &config, &arrays)
    }

    /// Restores a model and its optimizer from [`AnchorModel::save`] output.
    pub fn load(
        path: &std::path::Path,
    ) -> Result<(Self, crate::nn::Adam), crate::nn::CheckpointError> {
        let ck = crate::nn::load_checkpoint(path)?;
        let header = |e: serde_json::Error| crate::nn::CheckpointError::Header(e.to_string());
        let config: AnchorNetConfig =
            serde_json::from_value(ck.config["config"].clone()).map_err(header)?;
        let vocab: Vec<String> =
            serde_json::from_value(ck.config["vocab"].clone()).map_err(header)?;
        let adam_cfg: crate::nn::AdamConfig =
            serde_json::from_value(ck.config["adam"].clone()).map_err(header)?;
        let step = ck.step;
        let (store, rest) = ck.into_store();
        let adam = crate::nn::Adam::restore(adam_cfg, step, &rest);
        Ok((Self { store, config, vocab }, adam))
    }
}
