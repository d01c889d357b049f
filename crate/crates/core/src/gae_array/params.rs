use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::sub_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of fluctuation branches.
    pub k: usize,
    pub series_len: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub n_heads: usize,
    pub leaky_slope: f64,
    /// Samples per fluctuation period, one per fluctuation branch.
    pub window_sizes: Vec<usize>,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(series_len: usize, window_sizes: Vec<usize>) -> Self {
        Self {
            k: window_sizes.len(),
            series_len,
            hidden_dim: 64,
            latent_dim: 32,
            n_heads: 4,
            leaky_slope: 0.2,
            window_sizes,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.window_sizes.len() != self.k {
            return Err(Error::Config(format!(
                "expected {} window sizes, got {}",
                self.k,
                self.window_sizes.len()
            )));
        }
        if self.n_heads == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("hidden_dim, latent_dim and n_heads must be positive".into()));
        }
        if self.hidden_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if let Some(w) = self.window_sizes.iter().find(|&&w| w < 2 || w > self.series_len) {
            return Err(Error::Config(format!(
                "window size {w} outside [2, {}]",
                self.series_len
            )));
        }
        if !(self.leaky_slope.is_finite()) {
            return Err(Error::Config("leaky_slope must be finite".into()));
        }
        Ok(())
    }

    pub fn n_branches(&self) -> usize {
        self.k + 1
    }

    /// Per-head attention size of the transformer layers.
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}

/// Weights of one graph transformer layer. All four matrices are `out x in`;
/// rows of `w3`/`w4` are split into `n_heads` consecutive blocks, one per head.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayerParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub w3: Array2<f64>,
    pub w4: Array2<f64>,
}

/// Weights of one graph attention layer; `a` is stored as a `1 x 2*out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayerParams {
    pub w: Array2<f64>,
    pub a: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub enc_transformer: TransformerLayerParams,
    pub enc_attention: AttentionLayerParams,
    pub dec_transformer: TransformerLayerParams,
    pub dec_attention: AttentionLayerParams,
}

impl TransformerLayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        let z = || Array2::zeros((out_dim, in_dim));
        Self { w1: z(), w2: z(), w3: z(), w4: z() }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w1.nrows()
    }
}

impl AttentionLayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: Array2::zeros((out_dim, in_dim)),
            a: Array2::zeros((1, 2 * out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }
}

pub const TENSOR_NAMES: [&str; 12] = [
    "enc_transformer.w1",
    "enc_transformer.w2",
    "enc_transformer.w3",
    "enc_transformer.w4",
    "enc_attention.w",
    "enc_attention.a",
    "dec_transformer.w1",
    "dec_transformer.w2",
    "dec_transformer.w3",
    "dec_transformer.w4",
    "dec_attention.w",
    "dec_attention.a",
];

impl BranchParams {
    pub fn zeros(series_len: usize, hidden: usize, latent: usize) -> Self {
        Self {
            enc_transformer: TransformerLayerParams::zeros(series_len, hidden),
            enc_attention: AttentionLayerParams::zeros(hidden, latent),
            dec_transformer: TransformerLayerParams::zeros(latent, hidden),
            dec_attention: AttentionLayerParams::zeros(hidden, series_len),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Input (and output) series length this branch was built for.
    pub fn series_len(&self) -> usize {
        self.enc_transformer.in_dim()
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&Array2<f64>; 12] {
        [
            &self.enc_transformer.w1,
            &self.enc_transformer.w2,
            &self.enc_transformer.w3,
            &self.enc_transformer.w4,
            &self.enc_attention.w,
            &self.enc_attention.a,
            &self.dec_transformer.w1,
            &self.dec_transformer.w2,
            &self.dec_transformer.w3,
            &self.dec_transformer.w4,
            &self.dec_attention.w,
            &self.dec_attention.a,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 12] {
        [
            &mut self.enc_transformer.w1,
            &mut self.enc_transformer.w2,
            &mut self.enc_transformer.w3,
            &mut self.enc_transformer.w4,
            &mut self.enc_attention.w,
            &mut self.enc_attention.a,
            &mut self.dec_transformer.w1,
            &mut self.dec_transformer.w2,
            &mut self.dec_transformer.w3,
            &mut self.dec_transformer.w4,
            &mut self.dec_attention.w,
            &mut self.dec_attention.a,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn same_shape(&self, other: &BranchParams) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.dim() == b.dim())
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Glorot-uniform parameters for a branch with input/output length `series_len`.
pub fn init_branch(series_len: usize, config: &ModelConfig, seed: u64) -> BranchParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, z) = (config.hidden_dim, config.latent_dim);
    let transformer = |rng: &mut ChaCha8Rng, i: usize, o: usize| TransformerLayerParams {
        w1: glorot(rng, o, i, i, o),
        w2: glorot(rng, o, i, i, o),
        w3: glorot(rng, o, i, i, o),
        w4: glorot(rng, o, i, i, o),
    };
    let attention = |rng: &mut ChaCha8Rng, i: usize, o: usize| AttentionLayerParams {
        w: glorot(rng, o, i, i, o),
        a: glorot(rng, 1, 2 * o, 2 * o, 1),
    };
    BranchParams {
        enc_transformer: transformer(&mut rng, series_len, h),
        enc_attention: attention(&mut rng, h, z),
        dec_transformer: transformer(&mut rng, z, h),
        dec_attention: attention(&mut rng, h, series_len),
    }
}

/// `k + 1` branches at full series length, branch `b` seeded from `sub_seed(seed, b)`.
pub fn init_params(config: &ModelConfig) -> Result<Vec<BranchParams>> {
    config.validate()?;
    Ok((0..config.n_branches())
        .map(|b| init_branch(config.series_len, config, sub_seed(config.seed, b as u64)))
        .collect())
}
