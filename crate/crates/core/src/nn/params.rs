//! Named parameter storage and the Adam optimizer.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Quantizes a value to the nearest f32, keeping storage exactly
/// representable in the 32-bit checkpoint payload.
#[inline]
pub(crate) fn to_f32_precision(x: f64) -> f64 {
    x as f32 as f64
}

/// Named f64 arrays holding all learnable state of a model.
///
/// Values are kept f32-representable (see [`Adam::step`]), so saving and
/// loading through the f32 checkpoint format is lossless.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    arrays: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        self.arrays.insert(name.to_string(), value.mapv(to_f32_precision));
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.arrays
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.arrays
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.arrays.iter()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    /// Gaussian init with the given standard deviation.
    pub fn init_normal(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) {
        let a = Array2::from_shape_fn((rows, cols), |_| {
            std * rng.sample::<f64, _>(StandardNormal)
        });
        self.insert(name, a);
    }

    /// Kaiming-style init for a linear layer `{prefix}.w` / `{prefix}.b`.
    pub fn init_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let std = (2.0 / fan_in as f64).sqrt();
        self.init_normal(&format!("{prefix}.w"), fan_in, fan_out, std, rng);
        self.insert(&format!("{prefix}.b"), Array2::zeros((1, fan_out)));
    }

    /// Linear layer whose output starts at exactly zero.
    pub fn init_linear_zero(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.insert(&format!("{prefix}.w"), Array2::zeros((fan_in, fan_out)));
        self.insert(&format!("{prefix}.b"), Array2::zeros((1, fan_out)));
    }

    /// Layer-norm gain (ones) and bias (zeros): `{prefix}.g` / `{prefix}.o`.
    pub fn init_layer_norm(&mut self, prefix: &str, width: usize) {
        self.insert(&format!("{prefix}.g"), Array2::ones((1, width)));
        self.insert(&format!("{prefix}.o"), Array2::zeros((1, width)));
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Parameters and moments are quantized to f32
/// precision after every update so a checkpointed run resumes bit-identically.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step_count: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step_count: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Array2<f64>>) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for (name, g) in grads {
            let p = store.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = to_f32_precision(c.beta1 * *m + (1.0 - c.beta1) * g);
                    *v = to_f32_precision(c.beta2 * *v + (1.0 - c.beta2) * g * g);
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p = to_f32_precision(*p - c.learning_rate * mh / (vh.sqrt() + c.eps));
                });
        }
    }

    /// Serializes moments as named arrays for the checkpoint container.
    pub fn state_arrays(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        for (name, m) in &self.m {
            out.push((format!("adam.m.{name}"), m.clone()));
        }
        for (name, v) in &self.v {
            out.push((format!("adam.v.{name}"), v.clone()));
        }
        out
    }

    /// Restores moments from checkpoint arrays (prefix `adam.m.` / `adam.v.`).
    pub fn restore(
        config: AdamConfig,
        step_count: u64,
        arrays: &BTreeMap<String, Array2<f64>>,
    ) -> Self {
        let mut adam = Self::new(config);
        adam.step_count = step_count;
        for (name, a) in arrays {
            if let Some(base) = name.strip_prefix("adam.m.") {
                adam.m.insert(base.to_string(), a.clone());
            } else if let Some(base) = name.strip_prefix("adam.v.") {
                adam.v.insert(base.to_string(), a.clone());
            }
        }
        adam
    }
}
