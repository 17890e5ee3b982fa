//! Benchmarks for the kernels the training and sampling loops lean on.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hoisynth_core::anchornet::HoiKeyframe;
use hoisynth_core::contact::{
    sample_contact_points, ContactEncoderConfig, ContactSampleConfig, ContactStructure,
};
use hoisynth_core::contactdm::{init_denoiser, predict_x0, DenoiserConfig};
use hoisynth_core::geom::{
    farthest_point_sample, knn_select_near, procrustes_align, GeometryKind, ObjectTemplate,
    PointCloud, RigidTransform,
};
use hoisynth_core::sequence::ObjectPose;

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud {
        points: (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect(),
    }
}

fn bench_sampling(c: &mut Criterion) {
    let cloud = random_cloud(2048, 1);
    c.bench_with_input(BenchmarkId::new("fps", "2048->500"), &cloud, |b, pc| {
        b.iter(|| farthest_point_sample(pc, 500, 0).unwrap())
    });
    let human = random_cloud(4096, 2);
    let object = random_cloud(2048, 3);
    c.bench_function("knn_select_near 4096x2048->1000", |b| {
        b.iter(|| knn_select_near(&human, &object, 1000).unwrap())
    });
}

fn bench_procrustes(c: &mut Criterion) {
    let src = random_cloud(64, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = hoisynth_core::rot::random_rotation(&mut rng);
    let dst = PointCloud { points: src.points.iter().map(|p| r.apply(p) + Vector3::x()).collect() };
    c.bench_function("procrustes_align 64", |b| {
        b.iter(|| procrustes_align(&src, &dst).unwrap())
    });
}

fn bench_sdf(c: &mut Criterion) {
    let template = ObjectTemplate::new(
        "bench",
        GeometryKind::Box { half_extents: [0.15, 0.12, 0.1] },
        512,
        1,
        Vector3::zeros(),
    )
    .unwrap();
    let points: Vec<Vector3<f64>> = random_cloud(256, 6).points;
    let pose = ObjectPose::identity();
    c.bench_function("sdf_query box 256 points", |b| {
        b.iter(|| hoisynth_core::geom::sdf_query(&template, &pose, &points).unwrap())
    });
}

fn bench_contact_encoder(c: &mut Criterion) {
    let kf = HoiKeyframe {
        frame_index: 12,
        human_cloud: random_cloud(4096, 7),
        object_cloud: random_cloud(2048, 8),
        pose: RigidTransform::identity(),
        text_prompt: String::new(),
    };
    let sample_cfg = ContactSampleConfig::default();
    c.bench_function("sample_contact_points 1500", |b| {
        b.iter(|| sample_contact_points(&kf, &sample_cfg).unwrap())
    });
    let tagged = sample_contact_points(&kf, &sample_cfg).unwrap();
    let enc = ContactEncoderConfig::desk();
    c.bench_function("contact_structure desk", |b| {
        b.iter(|| ContactStructure::build(&tagged, &enc))
    });
}

fn bench_denoiser(c: &mut Criterion) {
    let cfg = DenoiserConfig::desk(22, 32);
    let store = init_denoiser(&cfg, 1);
    // Minimal conditioning: one keyframe, tiny clouds.
    let kf = HoiKeyframe {
        frame_index: 12,
        human_cloud: random_cloud(1000, 9),
        object_cloud: random_cloud(500, 10),
        pose: RigidTransform::identity(),
        text_prompt: String::new(),
    };
    let cond = hoisynth_core::contactdm::conditioning_from_keyframes(
        &[kf],
        &cfg,
        120,
        30.0,
        &vec![0.5; cfg.bps_dim],
        vec![1, 2],
        "bench".into(),
        "bench".into(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = ndarray::Array2::from_shape_fn((120, cfg.feature_width()), |_| rng.gen_range(-1.0..1.0));
    c.bench_function("predict_x0 desk 120 frames", |b| {
        b.iter(|| predict_x0(&store, &cfg, &x, 50, &cond).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_sampling, bench_procrustes, bench_sdf, bench_contact_encoder, bench_denoiser
}
criterion_main!(benches);
