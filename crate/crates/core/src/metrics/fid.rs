//! Distributional and retrieval metrics over learned sequence features.

use nalgebra::DMatrix;

use crate::sequence::HoiSequence;

use super::MetricError;

/// Maps sequences and prompts into a shared feature space. Implementations
/// must be deterministic for a given id.
pub trait SequenceEmbedder {
    fn id(&self) -> &str;
    fn embed_motion(&self, seq: &HoiSequence) -> Vec<f64>;
    fn embed_text(&self, prompt: &str) -> Vec<f64>;
}

fn mean_and_cov(features: &[Vec<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = features.len();
    let d = features[0].len();
    let mut mean = DMatrix::zeros(d, 1);
    for f in features {
        for (i, v) in f.iter().enumerate() {
            mean[(i, 0)] += v / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let x = DMatrix::from_iterator(d, 1, f.iter().cloned()) - &mean;
        cov += &x * x.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    (mean, cov)
}

/// Symmetric PSD square root via eigendecomposition, negative eigenvalues
/// clamped to zero.
fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits of two feature populations:
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`.
///
/// Covariances are regularized by `1e-6 I`; the cross square root uses the
/// symmetric form `(S2^(1/2) S1 S2^(1/2))^(1/2)`.
pub fn fid_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricError::ShapeMismatch("need at least 2 sequences per corpus"));
    }
    if a[0].len() != b[0].len() {
        return Err(MetricError::ShapeMismatch("feature widths differ"));
    }
    let d = a[0].len();
    let reg = DMatrix::identity(d, d) * 1e-6;
    let (mu1, mut s1) = mean_and_cov(a);
    let (mu2, mut s2) = mean_and_cov(b);
    s1 += &reg;
    s2 += &reg;
    let diff = &mu1 - &mu2;
    let mean_term = diff.norm_squared();
    let s2h = sqrtm_psd(&s2);
    let cross = sqrtm_psd(&(&s2h * &s1 * &s2h));
    let score = mean_term + s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(score.max(0.0))
}

/// One retrieval item: a generated sequence's motion feature plus its true
/// prompt.
pub struct RetrievalItem {
    pub motion_feature: Vec<f64>,
    pub prompt: String,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Top-1 retrieval rate of the true prompt among `pool_size - 1` distinct
/// distractor prompts, ranked by cosine similarity between the motion
/// feature and prompt embeddings. Distractor choice is seeded.
pub fn r_precision(
    items: &[RetrievalItem],
    embedder: &dyn SequenceEmbedder,
    pool_size: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    assert!(pool_size >= 2, "pool must contain the true prompt plus distractors");
    let mut distinct: Vec<&str> = items.iter().map(|i| i.prompt.as_str()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if pool_size > distinct.len() {
        return Err(MetricError::PoolTooLarge { pool: pool_size, available: distinct.len() });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for item in items {
        let mut others: Vec<&str> =
            distinct.iter().filter(|p| **p != item.prompt).cloned().collect();
        others.shuffle(&mut rng);
        let true_sim = cosine(&item.motion_feature, &embedder.embed_text(&item.prompt));
        let top = others[..pool_size - 1]
            .iter()
            .map(|p| cosine(&item.motion_feature, &embedder.embed_text(p)))
            .fold(f64::NEG_INFINITY, f64::max);
        if true_sim > top {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fid_identical_corpora_is_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a: Vec<Vec<f64>> =
            (0..20).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let f = fid_from_features(&a, &a).unwrap();
        assert!(f < 1e-6, "fid(A, A) = {f}");
    }

    #[test]
    fn fid_symmetry() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<Vec<f64>> =
            (0..30).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> =
            (0..25).map(|_| (0..4).map(|_| rng.gen_range(0.0..2.0)).collect()).collect();
        let ab = fid_from_features(&a, &b).unwrap();
        let ba = fid_from_features(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6);
    }

    #[test]
    fn fid_closed_form_two_gaussians() {
        // Two 1-D unit-variance populations with means 0 and 3: FID = 9.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let draw = |mean: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..60_000)
                .map(|_| vec![mean + rng.sample::<f64, _>(rand_distr::StandardNormal)])
                .collect()
        };
        let a = draw(0.0, &mut rng);
        let b = draw(3.0, &mut rng);
        let f = fid_from_features(&a, &b).unwrap();
        assert!((f - 9.0).abs() < 0.15, "fid = {f}");
    }

    #[test]
    fn fid_monotone_under_noise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let base: Vec<Vec<f64>> =
            (0..200).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut last = -1.0;
        for level in [0.0, 0.5, 1.5] {
            let noisy: Vec<Vec<f64>> = base
                .iter()
                .map(|f| {
                    f.iter()
                        .map(|v| v + level * rng.sample::<f64, _>(rand_distr::StandardNormal))
                        .collect()
                })
                .collect();
            let fid = fid_from_features(&noisy, &base).unwrap();
            assert!(fid >= last, "fid not nondecreasing: {fid} after {last}");
            last = fid;
        }
    }

    struct OracleEmbedder {
        prompts: Vec<String>,
    }

    impl SequenceEmbedder for OracleEmbedder {
        fn id(&self) -> &str {
            "oracle"
        }
        fn embed_motion(&self, _seq: &crate::sequence::HoiSequence) -> Vec<f64> {
            unreachable!("retrieval uses precomputed features")
        }
        fn embed_text(&self, prompt: &str) -> Vec<f64> {
            let idx = self.prompts.iter().position(|p| p == prompt).unwrap();
            let mut v = vec![0.0; self.prompts.len()];
            v[idx] = 1.0;
            v
        }
    }

    #[test]
    fn r_precision_oracle_is_perfect() {
        let prompts: Vec<String> = (0..10).map(|i| format!("prompt {i}")).collect();
        let embedder = OracleEmbedder { prompts: prompts.clone() };
        let items: Vec<RetrievalItem> = prompts
            .iter()
            .map(|p| RetrievalItem { motion_feature: embedder.embed_text(p), prompt: p.clone() })
            .collect();
        let r = r_precision(&items, &embedder, 8, 1).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn r_precision_random_features_near_chance() {
        // 1000 trials with random motion features: top-1 rate ~ 1/pool.
        let prompts: Vec<String> = (0..32).map(|i| format!("prompt {i}")).collect();
        let embedder = OracleEmbedder { prompts: prompts.clone() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let items: Vec<RetrievalItem> = (0..1000)
            .map(|i| RetrievalItem {
                motion_feature: (0..32)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect(),
                prompt: prompts[i % prompts.len()].clone(),
            })
            .collect();
        let pool = 8;
        let r = r_precision(&items, &embedder, pool, 2).unwrap();
        let p = 1.0 / pool as f64;
        // Binomial 99.9% interval around p for n = 1000.
        let sigma = (p * (1.0 - p) / 1000.0).sqrt();
        assert!((r - p).abs() < 3.3 * sigma + 1e-9, "rate {r} vs chance {p}");
    }

    #[test]
    fn r_precision_pool_too_large() {
        let prompts: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
        let embedder = OracleEmbedder { prompts: prompts.clone() };
        let items: Vec<RetrievalItem> = prompts
            .iter()
            .map(|p| RetrievalItem { motion_feature: vec![0.0; 4], prompt: p.clone() })
            .collect();
        assert!(matches!(
            r_precision(&items, &embedder, 8, 1),
            Err(MetricError::PoolTooLarge { .. })
        ));
    }
}
