//! In-repo feature extractor: a small temporal autoencoder over motion
//! frames plus a text head trained contrastively against the frozen motion
//! features. Scores built on it are comparable only within an extractor id.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contactdm::{sequence_to_matrix, Normalizer};
use crate::nn::{derive_seed, Adam, AdamConfig, ParamStore, Tape, Var};
use crate::sequence::HoiSequence;

use super::fid::SequenceEmbedder;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub time_steps: usize,
    pub frame_hidden: usize,
    pub feature_dim: usize,
    pub ae_steps: u64,
    pub text_steps: u64,
    pub batch: usize,
    pub learning_rate: f64,
    /// Softmax temperature inverse for the contrastive logits.
    pub logit_scale: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            time_steps: 16,
            frame_hidden: 64,
            feature_dim: 32,
            ae_steps: 600,
            text_steps: 400,
            batch: 16,
            learning_rate: 1e-3,
            logit_scale: 10.0,
        }
    }
}

/// A trained extractor: motion encoder, decoder (training only), text head,
/// per-channel frame normalizer, and a versioned id.
pub struct TrainedExtractor {
    pub store: ParamStore,
    pub config: ExtractorConfig,
    pub vocab: Vec<String>,
    pub normalizer: Normalizer,
    pub joint_count: usize,
    id: String,
}

fn subsample_rows(m: &Array2<f64>, steps: usize) -> Array2<f64> {
    let n = m.nrows();
    let mut out = Array2::zeros((steps, m.ncols()));
    for i in 0..steps {
        let r = (i * n / steps).min(n - 1);
        out.row_mut(i).assign(&m.row(r));
    }
    out
}

fn encode_graph(
    tape: &mut Tape,
    store: &ParamStore,
    frames: Var,
    time_steps: usize,
) -> Var {
    let h = tape.linear(store, "fx.enc.l1", frames);
    let h = tape.relu(h);
    let mean = tape.mean_rows(h);
    let zeros = vec![0usize; time_steps];
    let max = tape.segment_max(h, &zeros, 1);
    let pooled = tape.concat_cols(&[mean, max]);
    tape.linear(store, "fx.enc.out", pooled)
}

fn text_graph(tape: &mut Tape, store: &ParamStore, tokens: &[usize], feature_dim: usize) -> Var {
    if tokens.is_empty() {
        return tape.constant(Array2::zeros((1, feature_dim)));
    }
    let table = tape.param(store, "fx.text");
    let rows = tape.gather_rows(table, tokens);
    let mean = tape.mean_rows(rows);
    tape.linear(store, "fx.text.out", mean)
}

impl TrainedExtractor {
    fn feature_of_matrix(&self, m: &Array2<f64>) -> Vec<f64> {
        let sub = subsample_rows(&self.normalizer.normalize(m), self.config.time_steps);
        let mut tape = Tape::new();
        let f = tape.constant(sub);
        let out = encode_graph(&mut tape, &self.store, f, self.config.time_steps);
        tape.value(out).iter().cloned().collect()
    }
}

impl SequenceEmbedder for TrainedExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_motion(&self, seq: &HoiSequence) -> Vec<f64> {
        self.feature_of_matrix(&sequence_to_matrix(seq))
    }

    fn embed_text(&self, prompt: &str) -> Vec<f64> {
        let tokens = crate::datagen::tokenize(prompt, &self.vocab);
        let mut tape = Tape::new();
        let out = text_graph(&mut tape, &self.store, &tokens, self.config.feature_dim);
        tape.value(out).iter().cloned().collect()
    }
}

/// Trains the extractor on a reference corpus: reconstruction first, then
/// the contrastive text head against frozen motion features.
pub fn train_extractor(
    corpus: &[&HoiSequence],
    vocab: &[String],
    cfg: ExtractorConfig,
    seed: u64,
) -> TrainedExtractor {
    assert!(corpus.len() >= 2, "extractor needs at least 2 sequences");
    let joint_count = corpus[0].joint_count();
    let d = HoiSequence::feature_width(joint_count);
    let matrices: Vec<Array2<f64>> = corpus.iter().map(|s| sequence_to_matrix(s)).collect();
    let normalizer = Normalizer::fit(&matrices);
    let subs: Vec<Array2<f64>> = matrices
        .iter()
        .map(|m| subsample_rows(&normalizer.normalize(m), cfg.time_steps))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.init_linear("fx.enc.l1", d, cfg.frame_hidden, &mut rng);
    store.init_linear("fx.enc.out", 2 * cfg.frame_hidden, cfg.feature_dim, &mut rng);
    store.init_linear("fx.dec.l1", cfg.feature_dim, 2 * cfg.frame_hidden, &mut rng);
    store.init_linear("fx.dec.l2", 2 * cfg.frame_hidden, cfg.time_steps * d, &mut rng);
    store.init_normal("fx.text", vocab.len().max(1), cfg.feature_dim, 0.02, &mut rng);
    store.init_linear("fx.text.out", cfg.feature_dim, cfg.feature_dim, &mut rng);

    // Autoencoder phase.
    let mut adam = Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() });
    for step in 0..cfg.ae_steps {
        let mut srng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "fx-ae", step));
        let mut grads: std::collections::BTreeMap<String, Array2<f64>> = Default::default();
        for _ in 0..cfg.batch {
            let i = srng.gen_range(0..subs.len());
            let mut tape = Tape::new();
            let frames = tape.constant(subs[i].clone());
            let feat = encode_graph(&mut tape, &store, frames, cfg.time_steps);
            let h = tape.linear(&store, "fx.dec.l1", feat);
            let h = tape.relu(h);
            let recon = tape.linear(&store, "fx.dec.l2", h);
            let target =
                Array2::from_shape_vec((1, cfg.time_steps * d), subs[i].iter().cloned().collect())
                    .expect("flattened target");
            let loss = tape.mse(recon, &target);
            for (name, g) in tape.backward(loss) {
                grads.entry(name).and_modify(|a| *a += &g).or_insert(g);
            }
        }
        for g in grads.values_mut() {
            *g /= cfg.batch as f64;
        }
        adam.step(&mut store, &grads);
    }

    // Contrastive text phase: motion features are frozen constants.
    let feats: Vec<Vec<f64>> = subs
        .iter()
        .map(|m| {
            let mut tape = Tape::new();
            let f = tape.constant(m.clone());
            let out = encode_graph(&mut tape, &store, f, cfg.time_steps);
            tape.value(out).iter().cloned().collect()
        })
        .collect();
    let tokens: Vec<Vec<usize>> =
        corpus.iter().map(|s| crate::datagen::tokenize(&s.text_prompt, vocab)).collect();
    let mut adam2 = Adam::new(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() });
    for step in 0..cfg.text_steps {
        let mut srng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "fx-txt", step));
        let batch: Vec<usize> = (0..cfg.batch).map(|_| srng.gen_range(0..subs.len())).collect();
        let mut tape = Tape::new();
        let text_rows: Vec<Var> = batch
            .iter()
            .map(|&i| text_graph(&mut tape, &store, &tokens[i], cfg.feature_dim))
            .collect();
        let text = tape.concat_rows(&text_rows);
        let motion = {
            let mut m = Array2::zeros((batch.len(), cfg.feature_dim));
            for (r, &i) in batch.iter().enumerate() {
                for (c, v) in feats[i].iter().enumerate() {
                    m[[r, c]] = *v;
                }
            }
            tape.constant(m)
        };
        let motion_t = tape.transpose(motion);
        let logits = tape.matmul(text, motion_t);
        let logits = tape.scale(logits, cfg.logit_scale);
        let probs = tape.softmax_rows(logits);
        let eye = tape.constant(Array2::from_shape_fn((batch.len(), batch.len()), |(i, j)| {
            if i == j {
                1.0
            } else {
                0.0
            }
        }));
        let diag = tape.mul(probs, eye);
        let ones = tape.constant(Array2::ones((batch.len(), 1)));
        let picked = tape.matmul(diag, ones);
        let logp = tape.ln(picked);
        let mean = tape.mean_rows(logp);
        let loss = tape.scale(mean, -1.0);
        let grads = tape.backward(loss);
        adam2.step(&mut store, &grads);
    }

    TrainedExtractor {
        store,
        config: cfg,
        vocab: vocab.to_vec(),
        normalizer,
        joint_count,
        id: format!("fx-v1-s{seed}-n{}", corpus.len()),
    }
}
