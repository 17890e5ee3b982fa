//! The contact-aware encoder: builds a tagged human/object point cloud per
//! keyframe (object downsampled by farthest-point sampling, human by
//! nearest-to-object selection) and encodes it with a two-scale grouping
//! network into one feature vector per keyframe.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::anchornet::HoiKeyframe;
use crate::geom::{
    farthest_point_sample, knn_select_near, one_hot_tag, GeomError, PointCloud, TaggedPointCloud,
};
use crate::nn::{derive_seed, ParamStore, Tape, Var};

/// Fixed seed for the uniform-subsampling ablation mode.
pub const UNIFORM_SAMPLE_SEED: u64 = 0x5550_4e49;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// FPS the object cloud, select human points nearest to the object.
    Knn,
    /// Seeded uniform subsampling of both clouds (ablation).
    Uniform,
}

/// How many points each keyframe contributes to the tagged cloud.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContactSampleConfig {
    pub m_o: usize,
    pub m_h: usize,
    pub mode: SamplingMode,
}

impl Default for ContactSampleConfig {
    fn default() -> Self {
        Self { m_o: 500, m_h: 1000, mode: SamplingMode::Knn }
    }
}

/// Per-keyframe feature vector with its temporal phase (frame / N).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactFeature {
    pub values: Vec<f64>,
    pub keyframe_index: usize,
    pub phase: f64,
}

/// Two grouping scales over the tagged cloud.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContactScale {
    pub radius: f64,
    pub centroids: usize,
    pub group_cap: usize,
    pub widths: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactEncoderConfig {
    pub scales: [ContactScale; 2],
    /// Output feature length d.
    pub d: usize,
}

impl Default for ContactEncoderConfig {
    fn default() -> Self {
        Self {
            scales: [
                ContactScale { radius: 0.1, centroids: 256, group_cap: 32, widths: [64, 128] },
                ContactScale { radius: 0.3, centroids: 256, group_cap: 32, widths: [64, 128] },
            ],
            d: 256,
        }
    }
}

impl ContactEncoderConfig {
    /// Reduced desk-scale configuration (same d, fewer centroids).
    pub fn desk() -> Self {
        Self {
            scales: [
                ContactScale { radius: 0.1, centroids: 64, group_cap: 16, widths: [32, 64] },
                ContactScale { radius: 0.3, centroids: 64, group_cap: 16, widths: [32, 64] },
            ],
            d: 256,
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl rand::Rng) {
        for (i, s) in self.scales.iter().enumerate() {
            store.init_linear(&format!("contact.s{i}.l1"), 4, s.widths[0], rng);
            store.init_linear(&format!("contact.s{i}.l2"), s.widths[0], s.widths[1], rng);
        }
        // Max and mean pooled halves per scale.
        let fused: usize = self.scales.iter().map(|s| 2 * (4 + s.widths[1])).sum();
        store.init_linear("contact.fuse", fused, self.d, rng);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.scales.len() {
            for l in ["l1", "l2"] {
                names.push(format!("contact.s{i}.{l}.w"));
                names.push(format!("contact.s{i}.{l}.b"));
            }
        }
        names.push("contact.fuse.w".into());
        names.push("contact.fuse.b".into());
        names
    }
}

/// Builds the tagged contact cloud for one keyframe.
///
/// In `Knn` mode the object cloud is reduced by farthest-point sampling and
/// the human cloud by nearest-to-object selection; `Uniform` subsamples both
/// with a fixed seed. Rows are human-first, tag 1 for human points.
pub fn sample_contact_points(
    kf: &HoiKeyframe,
    cfg: &ContactSampleConfig,
) -> Result<TaggedPointCloud, GeomError> {
    let (human, object) = match cfg.mode {
        SamplingMode::Knn => {
            let object = farthest_point_sample(&kf.object_cloud, cfg.m_o, 0)?;
            // Distances measured against the full object cloud.
            let human = knn_select_near(&kf.human_cloud, &kf.object_cloud, cfg.m_h)?;
            (human, object)
        }
        SamplingMode::Uniform => {
            let human = uniform_subsample(
                &kf.human_cloud,
                cfg.m_h,
                derive_seed(UNIFORM_SAMPLE_SEED, "human", kf.frame_index as u64),
            )?;
            let object = uniform_subsample(
                &kf.object_cloud,
                cfg.m_o,
                derive_seed(UNIFORM_SAMPLE_SEED, "object", kf.frame_index as u64),
            )?;
            (human, object)
        }
    };
    Ok(one_hot_tag(&human, &object))
}

fn uniform_subsample(pc: &PointCloud, m: usize, seed: u64) -> Result<PointCloud, GeomError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if m > pc.len() || m == 0 {
        return Err(GeomError::SizeError { requested: m, available: pc.len() });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pc.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(m);
    idx.sort_unstable();
    Ok(PointCloud { points: idx.iter().map(|&i| pc.points[i]).collect() })
}

/// Precomputed grouping structure of a tagged cloud.
///
/// Rows are first canonicalized by lexicographic sort over (x, y, z, tag),
/// making the encoding exactly invariant to input row permutation.
#[derive(Debug, Clone)]
pub struct ContactStructure {
    scales: Vec<ScaleStructure>,
}

#[derive(Debug, Clone)]
struct ScaleStructure {
    /// Per-member [rel x, rel y, rel z, tag] rows.
    rel: Vec<[f32; 4]>,
    seg: Vec<usize>,
    /// Per-centroid [x, y, z, tag].
    centroids: Vec<[f32; 4]>,
}

impl ContactStructure {
    pub fn build(tagged: &TaggedPointCloud, cfg: &ContactEncoderConfig) -> Self {
        let mut rows = tagged.rows.clone();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let points = PointCloud {
            points: rows.iter().map(|r| nalgebra::Vector3::new(r[0], r[1], r[2])).collect(),
        };
        let scales = cfg
            .scales
            .iter()
            .map(|s| {
                let m = s.centroids.min(points.len());
                let centroid_idx =
                    crate::geom::farthest_point_sample_indices(&points, m, 0).expect("centroids");
                let mut rel = Vec::new();
                let mut seg = Vec::new();
                let mut centroids = Vec::new();
                for (sid, &ci) in centroid_idx.iter().enumerate() {
                    let c = points.points[ci];
                    centroids.push([rows[ci][0] as f32, rows[ci][1] as f32, rows[ci][2] as f32, rows[ci][3] as f32]);
                    let mut near: Vec<(f64, usize)> = points
                        .points
                        .iter()
                        .enumerate()
                        .filter_map(|(i, p)| {
                            let d = (p - c).norm();
                            (d <= s.radius).then_some((d, i))
                        })
                        .collect();
                    near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    near.truncate(s.group_cap);
                    if near.is_empty() {
                        near.push((0.0, ci));
                    }
                    for (_, i) in near {
                        let p = points.points[i] - c;
                        rel.push([p.x as f32, p.y as f32, p.z as f32, rows[i][3] as f32]);
                        seg.push(sid);
                    }
                }
                ScaleStructure { rel, seg, centroids }
            })
            .collect();
        Self { scales }
    }
}

fn rows4_to_array(rows: &[[f32; 4]]) -> Array2<f64> {
    let mut a = Array2::zeros((rows.len(), 4));
    for (i, r) in rows.iter().enumerate() {
        for k in 0..4 {
            a[[i, k]] = r[k] as f64;
        }
    }
    a
}

/// Encoder graph: two grouping scales, shared MLPs, max pooling, fused to a
/// 1 x d feature.
pub fn encode_keyframe_graph(
    tape: &mut Tape,
    store: &ParamStore,
    cs: &ContactStructure,
) -> Var {
    let mut pooled = Vec::new();
    for (i, scale) in cs.scales.iter().enumerate() {
        let x = tape.constant(rows4_to_array(&scale.rel));
        let h = tape.linear(store, &format!("contact.s{i}.l1"), x);
        let h = tape.relu(h);
        let h = tape.linear(store, &format!("contact.s{i}.l2"), h);
        let h = tape.relu(h);
        let per_centroid = tape.segment_max(h, &scale.seg, scale.centroids.len());
        let cpos = tape.constant(rows4_to_array(&scale.centroids));
        let feat = tape.concat_cols(&[cpos, per_centroid]);
        // Max pooling keeps extremal structure; mean pooling keeps absolute
        // placement (object centroid and hand positions).
        let zeros = vec![0usize; scale.centroids.len()];
        let maxed = tape.segment_max(feat, &zeros, 1);
        let meaned = tape.mean_rows(feat);
        pooled.push(tape.concat_cols(&[maxed, meaned]));
    }
    let joined = tape.concat_cols(&pooled);
    tape.linear(store, "contact.fuse", joined)
}

/// Encodes one keyframe into its feature vector.
pub fn encode_keyframe(
    store: &ParamStore,
    enc_cfg: &ContactEncoderConfig,
    sample_cfg: &ContactSampleConfig,
    kf: &HoiKeyframe,
    sequence_frames: usize,
) -> Result<ContactFeature, GeomError> {
    let tagged = sample_contact_points(kf, sample_cfg)?;
    let cs = ContactStructure::build(&tagged, enc_cfg);
    let mut tape = Tape::new();
    let f = encode_keyframe_graph(&mut tape, store, &cs);
    Ok(ContactFeature {
        values: tape.value(f).iter().cloned().collect(),
        keyframe_index: kf.frame_index,
        phase: kf.frame_index as f64 / sequence_frames.max(1) as f64,
    })
}

/// Encodes keyframes in order; each feature carries its temporal phase.
pub fn encode_keyframes(
    store: &ParamStore,
    enc_cfg: &ContactEncoderConfig,
    sample_cfg: &ContactSampleConfig,
    kfs: &[HoiKeyframe],
    sequence_frames: usize,
) -> Result<Vec<ContactFeature>, GeomError> {
    assert!(!kfs.is_empty(), "need at least one keyframe");
    kfs.iter()
        .map(|kf| encode_keyframe(store, enc_cfg, sample_cfg, kf, sequence_frames))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RigidTransform;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    fn random_keyframe(nh: usize, no: usize, seed: u64) -> HoiKeyframe {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut randv = |s: f64| {
            Vector3::new(
                rng.gen_range(-s..s),
                rng.gen_range(-s..s),
                rng.gen_range(0.0..s),
            )
        };
        let human = PointCloud { points: (0..nh).map(|_| randv(1.0)).collect() };
        let object =
            PointCloud { points: (0..no).map(|_| randv(0.3) + Vector3::new(0.5, 0.0, 0.5)).collect() };
        HoiKeyframe {
            frame_index: 12,
            human_cloud: human,
            object_cloud: object,
            pose: RigidTransform::identity(),
            text_prompt: "lift the ball with both hands".into(),
        }
    }

    fn tiny_encoder() -> (ContactEncoderConfig, ParamStore) {
        let cfg = ContactEncoderConfig {
            scales: [
                ContactScale { radius: 0.2, centroids: 8, group_cap: 6, widths: [8, 16] },
                ContactScale { radius: 0.5, centroids: 8, group_cap: 6, widths: [8, 16] },
            ],
            d: 24,
        };
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        cfg.init_params(&mut store, &mut rng);
        (cfg, store)
    }

    #[test]
    fn default_sampling_yields_1500_rows() {
        let kf = random_keyframe(2000, 800, 1);
        let tagged = sample_contact_points(&kf, &ContactSampleConfig::default()).unwrap();
        assert_eq!(tagged.rows.len(), 1500);
        assert_eq!(tagged.rows.iter().filter(|r| r[3] == 1.0).count(), 1000);
    }

    #[test]
    fn human_cloud_exactly_m_h_is_fully_retained() {
        let kf = random_keyframe(50, 60, 2);
        let cfg = ContactSampleConfig { m_h: 50, m_o: 20, mode: SamplingMode::Knn };
        let tagged = sample_contact_points(&kf, &cfg).unwrap();
        let (h, _) = tagged.split();
        let mut expect = kf.human_cloud.points.clone();
        let mut got = h;
        let key = |v: &Vector3<f64>| (v.x, v.y, v.z);
        expect.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        assert_eq!(expect, got);
    }

    #[test]
    fn knn_mode_picks_closest_human_points() {
        let kf = random_keyframe(60, 30, 3);
        let cfg = ContactSampleConfig { m_h: 20, m_o: 10, mode: SamplingMode::Knn };
        let tagged = sample_contact_points(&kf, &cfg).unwrap();
        let (selected, _) = tagged.split();
        let dist = |p: &Vector3<f64>| {
            kf.object_cloud.points.iter().map(|o| (p - o).norm()).fold(f64::INFINITY, f64::min)
        };
        let max_sel = selected.iter().map(|p| dist(p)).fold(0.0, f64::max);
        let rejected_min = kf
            .human_cloud
            .points
            .iter()
            .filter(|p| !selected.contains(p))
            .map(|p| dist(p))
            .fold(f64::INFINITY, f64::min);
        assert!(max_sel <= rejected_min + 1e-12);
    }

    #[test]
    fn uniform_mode_is_seed_deterministic() {
        let kf = random_keyframe(60, 30, 4);
        let cfg = ContactSampleConfig { m_h: 20, m_o: 10, mode: SamplingMode::Uniform };
        let a = sample_contact_points(&kf, &cfg).unwrap();
        let b = sample_contact_points(&kf, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn size_errors_propagate() {
        let kf = random_keyframe(10, 10, 5);
        let cfg = ContactSampleConfig { m_h: 20, m_o: 5, mode: SamplingMode::Knn };
        assert!(matches!(
            sample_contact_points(&kf, &cfg),
            Err(GeomError::SizeError { requested: 20, available: 10 })
        ));
    }

    #[test]
    fn encoding_is_exactly_permutation_invariant() {
        let kf = random_keyframe(40, 20, 6);
        let (cfg, store) = tiny_encoder();
        let sample = ContactSampleConfig { m_h: 30, m_o: 15, mode: SamplingMode::Knn };
        let tagged = sample_contact_points(&kf, &sample).unwrap();
        let mut shuffled = tagged.clone();
        use rand::seq::SliceRandom;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        shuffled.rows.shuffle(&mut rng);
        let f = |t: &TaggedPointCloud| {
            let cs = ContactStructure::build(t, &cfg);
            let mut tape = Tape::new();
            let v = encode_keyframe_graph(&mut tape, &store, &cs);
            tape.value(v).clone()
        };
        assert_eq!(f(&tagged), f(&shuffled), "row order leaked into the feature");
    }

    #[test]
    fn output_length_is_d() {
        let kf = random_keyframe(40, 20, 7);
        let (cfg, store) = tiny_encoder();
        let sample = ContactSampleConfig { m_h: 30, m_o: 15, mode: SamplingMode::Knn };
        let f = encode_keyframe(&store, &cfg, &sample, &kf, 120).unwrap();
        assert_eq!(f.values.len(), 24);
        assert_eq!(ContactEncoderConfig::default().d, 256);
        assert!((f.phase - 0.1).abs() < 1e-12);
    }

    #[test]
    fn keyframe_order_maps_to_feature_order() {
        let (cfg, store) = tiny_encoder();
        let sample = ContactSampleConfig { m_h: 30, m_o: 15, mode: SamplingMode::Knn };
        let kfs: Vec<HoiKeyframe> = (0..3)
            .map(|i| {
                let mut kf = random_keyframe(40, 20, 20 + i);
                kf.frame_index = 10 * (i as usize + 1);
                kf
            })
            .collect();
        let fwd = encode_keyframes(&store, &cfg, &sample, &kfs, 120).unwrap();
        let rev_kfs: Vec<HoiKeyframe> = kfs.iter().rev().cloned().collect();
        let rev = encode_keyframes(&store, &cfg, &sample, &rev_kfs, 120).unwrap();
        assert_eq!(fwd.len(), 3);
        for (a, b) in fwd.iter().zip(rev.iter().rev()) {
            assert_eq!(a.values, b.values);
            assert_eq!(a.keyframe_index, b.keyframe_index);
        }
    }

    #[test]
    fn gradient_check_on_random_slice() {
        let kf = random_keyframe(40, 20, 8);
        let (cfg, mut store) = tiny_encoder();
        // Probe at a generic point: zero biases put single-member groups
        // exactly on the relu kink, where finite differences are one-sided.
        {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
            let names: Vec<String> = store.names().cloned().collect();
            for name in names {
                let noise = store.get(&name).mapv(|v| v + 0.0)
                    .mapv(|v| v + 0.01 * rng.gen_range(-1.0f64..1.0));
                store.insert(&name, noise);
            }
        }
        let sample = ContactSampleConfig { m_h: 30, m_o: 15, mode: SamplingMode::Knn };
        let tagged = sample_contact_points(&kf, &sample).unwrap();
        let cs = ContactStructure::build(&tagged, &cfg);
        let target = Array2::from_shape_fn((1, 24), |(_, j)| (j as f64 * 0.3).sin());
        let eval = |st: &ParamStore| {
            let mut tape = Tape::new();
            let f = encode_keyframe_graph(&mut tape, st, &cs);
            let loss = tape.mse(f, &target);
            tape.scalar(loss)
        };
        let grads = {
            let mut tape = Tape::new();
            let f = encode_keyframe_graph(&mut tape, &store, &cs);
            let loss = tape.mse(f, &target);
            tape.backward(loss)
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let names: Vec<String> = grads.keys().cloned().collect();
        let mut checked = 0;
        for _ in 0..16 {
            let name = &names[rng.gen_range(0..names.len())];
            let g = &grads[name];
            let (r, c) = (rng.gen_range(0..g.nrows()), rng.gen_range(0..g.ncols()));
            let fd = crate::nn::finite_diff(&mut store, name, r, c, 1e-6, eval);
            let re = crate::nn::relative_error(g[[r, c]], fd);
            assert!(re < 1e-3, "{name}[{r},{c}]: analytic {} vs fd {fd}", g[[r, c]]);
            checked += 1;
        }
        assert_eq!(checked, 16);
    }
}

