use indexmap::IndexMap;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;

/// Named parameter matrices in a fixed, deterministic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: IndexMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), Array2::zeros(v.dim())))
                .collect(),
        }
    }

    /// `self += k * other`, by name.
    pub fn add_scaled(&mut self, other: &ParamStore, k: f64) {
        for (name, v) in self.map.iter_mut() {
            if let Some(o) = other.get(name) {
                v.scaled_add(k, o);
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.map.values().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum()
    }
}

const INIT_STD: f64 = 0.02;

/// Normal(0, σ) resampled until within two standard deviations.
fn truncated_normal(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    let normal = Normal::new(0.0, INIT_STD).unwrap();
    Array2::from_shape_simple_fn(shape, || loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            break v;
        }
    })
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) {
        let w = truncated_normal(&mut self.rng, (rows, cols));
        self.store.insert(name, w);
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) {
        self.store.insert(name, Array2::zeros((rows, cols)));
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.weight(format!("{prefix}.w"), fan_in, fan_out);
        self.zeros(format!("{prefix}.b"), 1, fan_out);
    }

    fn layer_norm(&mut self, prefix: &str, dim: usize) {
        self.store
            .insert(format!("{prefix}.g"), Array2::ones((1, dim)));
        self.zeros(format!("{prefix}.b"), 1, dim);
    }

    fn attention(&mut self, prefix: &str, e: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), e, e);
        }
    }

    fn block(&mut self, prefix: &str, e: usize, ffn: usize) {
        self.layer_norm(&format!("{prefix}.ln1"), e);
        self.attention(&format!("{prefix}.attn"), e);
        self.layer_norm(&format!("{prefix}.ln2"), e);
        self.linear(&format!("{prefix}.ffn1"), e, ffn);
        self.linear(&format!("{prefix}.ffn2"), ffn, e);
    }
}

/// Freshly initialised parameters for `cfg`: truncated normal (σ = 0.02)
/// weights and positional tables, zero biases, unit layer-norm gains.
pub fn init_params(cfg: &ModelConfig) -> ParamStore {
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let e = cfg.embed;
    let ffn = e * cfg.ffn_multiplier;
    for branch in ["rgb", "delta"] {
        init.linear(&format!("{branch}.patch"), cfg.patch_dim(), e);
        init.weight(format!("{branch}.pos"), cfg.tokens_per_frame(), e);
        for k in 0..cfg.spatial_layers {
            init.block(&format!("{branch}.spatial.{k}"), e, ffn);
        }
        init.weight(format!("{branch}.tpos"), cfg.max_frames, e);
        for k in 0..cfg.temporal_layers {
            init.block(&format!("{branch}.temporal.{k}"), e, ffn);
        }
    }
    init.attention("cross.rgb", e);
    init.attention("cross.delta", e);
    init.attention("fuse", e);
    init.linear("head.fc1", e, cfg.hidden());
    init.linear("head.fc2", cfg.hidden(), 1);
    store
}
