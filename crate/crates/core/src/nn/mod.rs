//! Minimal reverse-mode autodiff over `ndarray`, plus parameter storage,
//! the Adam optimizer, and the shared checkpoint container.
//!
//! All forward/backward arithmetic runs in f64 with a fixed evaluation
//! order, so results are bit-deterministic. Learnable state is quantized to
//! f32 after every optimizer update, which makes the f32 checkpoint format
//! lossless and lets interrupted runs resume bit-identically.

mod checkpoint;
mod params;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use params::{Adam, AdamConfig, ParamStore};
pub use tape::{Tape, Var};

/// Derives a child seed from a base seed, a purpose tag, and an index.
///
/// Keeps every random stream independent and reproducible without threading
/// RNG state through checkpoints: a resumed run re-derives the same stream
/// from (seed, tag, step).
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for &b in tag.as_bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    h ^= index;
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Central finite difference of `f` with respect to one parameter entry.
pub fn finite_diff(
    store: &mut ParamStore,
    name: &str,
    row: usize,
    col: usize,
    h: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let orig = store.get(name)[[row, col]];
    store.get_mut(name)[[row, col]] = orig + h;
    let fp = f(store);
    store.get_mut(name)[[row, col]] = orig - h;
    let fm = f(store);
    store.get_mut(name)[[row, col]] = orig;
    (fp - fm) / (2.0 * h)
}

/// Relative error between an analytic and a reference derivative, with an
/// absolute floor so near-zero derivatives do not blow up the ratio.
pub fn relative_error(analytic: f64, reference: f64) -> f64 {
    let denom = analytic.abs().max(reference.abs()).max(1e-8);
    (analytic - reference).abs() / denom
}
