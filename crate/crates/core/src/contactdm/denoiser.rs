//! The denoiser: a transformer over per-frame motion tokens with condition
//! token fusion (self-attention with text and object-geometry tokens) and
//! keyframe cross-attention, predicting the clean signal directly.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{
    encode_keyframe_graph, ContactEncoderConfig, ContactSampleConfig, ContactStructure,
};
use crate::nn::{ParamStore, Tape, Var};
use crate::sequence::HoiSequence;

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("non-finite activations in {block}")]
    NonFinite { block: String },
    #[error("parameter '{name}' has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, found: (usize, usize), expected: (usize, usize) },
    #[error("missing parameter '{0}'")]
    MissingParameter(String),
    #[error("latent {latent} not divisible by {heads} heads")]
    BadHeads { latent: usize, heads: usize },
}

/// How keyframe features reach the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Cross-attention from frame tokens to keyframe features.
    CrossAttention,
    /// Mean feature projected and added to the timestep embedding (ablation).
    AdditiveFusion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub joint_count: usize,
    pub latent: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of the latent dimension.
    pub ff_mult: usize,
    pub t_max: usize,
    pub vocab_size: usize,
    pub bps_dim: usize,
    pub bps_hidden: usize,
    pub conditioning: ConditioningMode,
    pub contact: ContactEncoderConfig,
    pub sample: ContactSampleConfig,
}

impl DenoiserConfig {
    /// CPU-sized default.
    pub fn desk(joint_count: usize, vocab_size: usize) -> Self {
        Self {
            joint_count,
            latent: 64,
            blocks: 4,
            heads: 4,
            ff_mult: 2,
            t_max: 100,
            vocab_size,
            bps_dim: crate::geom::BPS_BASIS_COUNT,
            bps_hidden: 128,
            conditioning: ConditioningMode::CrossAttention,
            contact: ContactEncoderConfig::desk(),
            sample: ContactSampleConfig::default(),
        }
    }

    /// Full-scale profile: latent 1024, 4 heads of width 256, T = 1000.
    pub fn paper(joint_count: usize, vocab_size: usize) -> Self {
        Self {
            latent: 1024,
            ff_mult: 4,
            t_max: 1000,
            bps_hidden: 256,
            contact: ContactEncoderConfig::default(),
            ..Self::desk(joint_count, vocab_size)
        }
    }

    /// Flat per-frame feature width.
    pub fn feature_width(&self) -> usize {
        HoiSequence::feature_width(self.joint_count)
    }

    pub fn head_width(&self) -> usize {
        self.latent / self.heads
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        if self.latent % self.heads != 0 || self.heads == 0 {
            return Err(DenoiserError::BadHeads { latent: self.latent, heads: self.heads });
        }
        Ok(())
    }
}

/// Initializes all denoiser parameters (including the embedded contact
/// encoder) into a store.
pub fn init_denoiser(config: &DenoiserConfig, seed: u64) -> ParamStore {
    config.validate().expect("valid denoiser config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let c = config;
    let d_in = c.feature_width();
    s.init_linear("dm.in", d_in, c.latent, &mut rng);
    s.init_normal("dm.time", c.t_max + 1, c.latent, 0.02, &mut rng);
    s.init_normal("dm.text", c.vocab_size.max(1), c.latent, 0.02, &mut rng);
    s.init_linear("dm.obj.l1", c.bps_dim, c.bps_hidden, &mut rng);
    s.init_linear("dm.obj.l2", c.bps_hidden, c.latent, &mut rng);
    for b in 0..c.blocks {
        let p = format!("dm.b{b}");
        s.init_layer_norm(&format!("{p}.ln1"), c.latent);
        for proj in ["q", "k", "v", "o"] {
            s.init_linear(&format!("{p}.attn.{proj}"), c.latent, c.latent, &mut rng);
        }
        s.init_layer_norm(&format!("{p}.ln2"), c.latent);
        s.init_linear(&format!("{p}.cross.q"), c.latent, c.latent, &mut rng);
        s.init_linear(&format!("{p}.cross.k"), c.contact.d, c.latent, &mut rng);
        s.init_linear(&format!("{p}.cross.v"), c.contact.d, c.latent, &mut rng);
        s.init_linear(&format!("{p}.cross.o"), c.latent, c.latent, &mut rng);
        s.init_layer_norm(&format!("{p}.ln3"), c.latent);
        s.init_linear(&format!("{p}.ff.l1"), c.latent, c.latent * c.ff_mult, &mut rng);
        s.init_linear(&format!("{p}.ff.l2"), c.latent * c.ff_mult, c.latent, &mut rng);
    }
    s.init_layer_norm("dm.lnf", c.latent);
    s.init_linear("dm.out", c.latent, d_in, &mut rng);
    s.init_linear("dm.fuse", c.contact.d, c.latent, &mut rng);
    c.contact.init_params(&mut s, &mut rng);
    s
}

/// Checks parameter presence and shapes against a config.
pub fn validate_denoiser_shapes(store: &ParamStore, c: &DenoiserConfig) -> Result<(), DenoiserError> {
    c.validate()?;
    let mut expect: Vec<(String, (usize, usize))> = vec![
        ("dm.in.w".into(), (c.feature_width(), c.latent)),
        ("dm.time".into(), (c.t_max + 1, c.latent)),
        ("dm.text".into(), (c.vocab_size.max(1), c.latent)),
        ("dm.obj.l1.w".into(), (c.bps_dim, c.bps_hidden)),
        ("dm.obj.l2.w".into(), (c.bps_hidden, c.latent)),
        ("dm.out.w".into(), (c.latent, c.feature_width())),
        ("dm.fuse.w".into(), (c.contact.d, c.latent)),
    ];
    for b in 0..c.blocks {
        let p = format!("dm.b{b}");
        expect.push((format!("{p}.attn.q.w"), (c.latent, c.latent)));
        expect.push((format!("{p}.cross.k.w"), (c.contact.d, c.latent)));
        expect.push((format!("{p}.cross.v.w"), (c.contact.d, c.latent)));
        expect.push((format!("{p}.ff.l1.w"), (c.latent, c.latent * c.ff_mult)));
    }
    for (name, shape) in expect {
        if !store.contains(&name) {
            return Err(DenoiserError::MissingParameter(name));
        }
        let found = store.get(&name).dim();
        if found != shape {
            return Err(DenoiserError::ShapeMismatch { name, found, expected: shape });
        }
    }
    Ok(())
}

/// Sinusoidal positional encoding over `n` positions.
pub fn positional_encoding(n: usize, dim: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((n, dim));
    for pos in 0..n {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            pe[[pos, 2 * i]] = (pos as f64 * freq).sin();
            pe[[pos, 2 * i + 1]] = (pos as f64 * freq).cos();
        }
    }
    pe
}

/// Sinusoidal encoding of continuous phases in [0, 1], scaled by the frame
/// count so keyframe encodings land on the same positional scale as the
/// frame tokens (cross-attention can align by position natively).
pub fn phase_encoding(phases: &[f64], dim: usize, n_frames: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((phases.len(), dim));
    for (row, &phase) in phases.iter().enumerate() {
        let pos = phase * n_frames as f64;
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            pe[[row, 2 * i]] = (pos * freq).sin();
            pe[[row, 2 * i + 1]] = (pos * freq).cos();
        }
    }
    pe
}

/// Multi-head scaled dot-product attention; returns the pre-residual output
/// projection. Parameter prefix supplies `.q/.k/.v/.o` linear layers.
pub fn multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    queries_in: Var,
    keys_in: Var,
    heads: usize,
) -> Var {
    let q = tape.linear(store, &format!("{prefix}.q"), queries_in);
    let k = tape.linear(store, &format!("{prefix}.k"), keys_in);
    let v = tape.linear(store, &format!("{prefix}.v"), keys_in);
    let latent = tape.value(q).ncols();
    let w = latent / heads;
    let scale = 1.0 / (w as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qs = tape.slice_cols(q, h * w, (h + 1) * w);
        let ks = tape.slice_cols(k, h * w, (h + 1) * w);
        let vs = tape.slice_cols(v, h * w, (h + 1) * w);
        let kt = tape.transpose(ks);
        let logits = tape.matmul(qs, kt);
        let logits = tape.scale(logits, scale);
        let attn = tape.softmax_rows(logits);
        outs.push(tape.matmul(attn, vs));
    }
    let concat = tape.concat_cols(&outs);
    tape.linear(store, &format!("{prefix}.o"), concat)
}

/// Token fusion: self-attention over `[text, object, frame_0..N)`; returns
/// updated frame tokens (condition rows dropped, pre-residual).
///
/// With `mask_conditions` the keys and values come from the frame rows only,
/// which reduces exactly to self-attention over frames.
pub fn token_fuse(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    frames: Var,
    text_token: Var,
    object_token: Var,
    heads: usize,
    mask_conditions: bool,
) -> Var {
    let n = tape.value(frames).nrows();
    let tokens = tape.concat_rows(&[text_token, object_token, frames]);
    let keys = if mask_conditions { frames } else { tokens };
    let queries = tokens;
    let out = multi_head_attention(tape, store, prefix, queries, keys, heads);
    tape.slice_rows(out, 2, 2 + n)
}

/// Cross-attention from frame tokens to keyframe features (pre-residual).
pub fn contact_cross_attention_graph(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    frames: Var,
    features: Var,
    heads: usize,
) -> Var {
    multi_head_attention(tape, store, prefix, frames, features, heads)
}

/// Everything the denoiser attends to for one sequence.
#[derive(Debug, Clone)]
pub struct ConditioningBundle {
    /// Per-keyframe contact structures, in keyframe order.
    pub keyframes: Vec<KeyframeCondition>,
    /// BPS encoding of the canonical object geometry.
    pub object_bps: Vec<f64>,
    pub text_tokens: Vec<usize>,
    pub prompt: String,
    pub object_id: String,
    pub n_frames: usize,
    pub fps: f64,
    /// Ground-truth keyframe centroids, for adherence diagnostics only.
    pub gt_keyframe_positions: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone)]
pub struct KeyframeCondition {
    pub structure: ContactStructure,
    pub keyframe_index: usize,
    pub phase: f64,
}

impl ConditioningBundle {
    pub fn k(&self) -> usize {
        self.keyframes.len()
    }
}

/// Builds the K x d keyframe feature matrix in-graph (so training reaches
/// the contact encoder), with phase encodings added.
pub fn keyframe_features_graph(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &DenoiserConfig,
    cond: &ConditioningBundle,
) -> Var {
    let rows: Vec<Var> = cond
        .keyframes
        .iter()
        .map(|kc| encode_keyframe_graph(tape, store, &kc.structure))
        .collect();
    let f = tape.concat_rows(&rows);
    let phases: Vec<f64> = cond.keyframes.iter().map(|kc| kc.phase).collect();
    let pe = tape.constant(phase_encoding(&phases, cfg.contact.d, cond.n_frames));
    tape.add(f, pe)
}

/// Mean keyframe feature projected to the latent width (the additive-fusion
/// conditioning path).
pub fn additive_fusion_condition(
    tape: &mut Tape,
    store: &ParamStore,
    features: Var,
) -> Var {
    let mean = tape.mean_rows(features);
    tape.linear(store, "dm.fuse", mean)
}

/// Full denoiser graph. Returns the predicted clean signal (N x D) plus
/// per-block output probes for finiteness diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn predict_x0_graph(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &DenoiserConfig,
    x_t: Var,
    t: usize,
    cond: &ConditioningBundle,
    mask_conditions: bool,
) -> (Var, Vec<(String, Var)>) {
    let n = tape.value(x_t).nrows();
    let mut probes = Vec::new();

    // Condition tokens.
    let text_token = if cond.text_tokens.is_empty() {
        tape.constant(Array2::zeros((1, cfg.latent)))
    } else {
        let table = tape.param(store, "dm.text");
        let rows = tape.gather_rows(table, &cond.text_tokens);
        tape.mean_rows(rows)
    };
    let bps = Array2::from_shape_vec((1, cond.object_bps.len()), cond.object_bps.clone())
        .expect("bps row");
    let bps = tape.constant(bps);
    let obj = tape.linear(store, "dm.obj.l1", bps);
    let obj = tape.relu(obj);
    let object_token = tape.linear(store, "dm.obj.l2", obj);

    // Keyframe features (contact encoder runs in-graph).
    let features = keyframe_features_graph(tape, store, cfg, cond);

    // Frame tokens: input projection + positional + timestep embeddings.
    let mut h = tape.linear(store, "dm.in", x_t);
    let pe = tape.constant(positional_encoding(n, cfg.latent));
    h = tape.add(h, pe);
    let time_table = tape.param(store, "dm.time");
    let time_row = tape.gather_rows(time_table, &[t]);
    let time_row = match cfg.conditioning {
        ConditioningMode::CrossAttention => time_row,
        ConditioningMode::AdditiveFusion => {
            let fused = additive_fusion_condition(tape, store, features);
            tape.add(time_row, fused)
        }
    };
    h = tape.add_row(h, time_row);

    for b in 0..cfg.blocks {
        let p = format!("dm.b{b}");
        let g1 = tape.param(store, &format!("{p}.ln1.g"));
        let o1 = tape.param(store, &format!("{p}.ln1.o"));
        let normed = tape.layer_norm(h, g1, o1);
        let fused = token_fuse(
            tape,
            store,
            &format!("{p}.attn"),
            normed,
            text_token,
            object_token,
            cfg.heads,
            mask_conditions,
        );
        h = tape.add(h, fused);

        if cfg.conditioning == ConditioningMode::CrossAttention {
            let g2 = tape.param(store, &format!("{p}.ln2.g"));
            let o2 = tape.param(store, &format!("{p}.ln2.o"));
            let normed = tape.layer_norm(h, g2, o2);
            let cross = contact_cross_attention_graph(
                tape,
                store,
                &format!("{p}.cross"),
                normed,
                features,
                cfg.heads,
            );
            h = tape.add(h, cross);
        }

        let g3 = tape.param(store, &format!("{p}.ln3.g"));
        let o3 = tape.param(store, &format!("{p}.ln3.o"));
        let normed = tape.layer_norm(h, g3, o3);
        let ff = tape.linear(store, &format!("{p}.ff.l1"), normed);
        let ff = tape.gelu(ff);
        let ff = tape.linear(store, &format!("{p}.ff.l2"), ff);
        h = tape.add(h, ff);
        probes.push((format!("block {b}"), h));
    }

    let gf = tape.param(store, "dm.lnf.g");
    let of = tape.param(store, "dm.lnf.o");
    let h = tape.layer_norm(h, gf, of);
    let out = tape.linear(store, "dm.out", h);
    probes.push(("output projection".into(), out));
    (out, probes)
}

/// Evaluates the denoiser, checking per-block finiteness.
pub fn predict_x0(
    store: &ParamStore,
    cfg: &DenoiserConfig,
    x_t: &Array2<f64>,
    t: usize,
    cond: &ConditioningBundle,
) -> Result<Array2<f64>, DenoiserError> {
    let mut tape = Tape::new();
    let x = tape.constant(x_t.clone());
    let (out, probes) = predict_x0_graph(&mut tape, store, cfg, x, t, cond, false);
    for (name, var) in &probes {
        if !tape.value(*var).iter().all(|v| v.is_finite()) {
            return Err(DenoiserError::NonFinite { block: name.clone() });
        }
    }
    Ok(tape.value(out).clone())
}
