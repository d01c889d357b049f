use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};

use super::ops::{
    attention_backward, attention_forward, transformer_backward, transformer_forward, Activation,
    AttentionCache, TransformerCache,
};
use super::params::{BranchParams, ModelConfig};
use crate::error::{Error, Result};
use crate::fleet_graph::FleetGraph;

/// The four layers of a branch, in forward order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    EncTransformer,
    EncAttention,
    DecTransformer,
    DecAttention,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::EncTransformer,
        Stage::EncAttention,
        Stage::DecTransformer,
        Stage::DecAttention,
    ];
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Transformer(TransformerCache),
    Attention(AttentionCache),
}

/// Hyperparameters the layers need at run time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSettings {
    pub n_heads: usize,
    pub leaky_slope: f64,
}

impl From<&ModelConfig> for LayerSettings {
    fn from(c: &ModelConfig) -> Self {
        Self {
            n_heads: c.n_heads,
            leaky_slope: c.leaky_slope,
        }
    }
}

pub fn stage_forward(
    stage: Stage,
    input: ArrayView2<f64>,
    nbrs: &[Vec<usize>],
    params: &BranchParams,
    settings: LayerSettings,
) -> Result<(Array2<f64>, LayerCache)> {
    Ok(match stage {
        Stage::EncTransformer => {
            let (o, c) = transformer_forward(input, nbrs, &params.enc_transformer, settings.n_heads)?;
            (o, LayerCache::Transformer(c))
        }
        Stage::EncAttention => {
            let (o, c) = attention_forward(
                input,
                nbrs,
                &params.enc_attention,
                settings.leaky_slope,
                Activation::Elu,
            )?;
            (o, LayerCache::Attention(c))
        }
        Stage::DecTransformer => {
            let (o, c) = transformer_forward(input, nbrs, &params.dec_transformer, settings.n_heads)?;
            (o, LayerCache::Transformer(c))
        }
        Stage::DecAttention => {
            let (o, c) = attention_forward(
                input,
                nbrs,
                &params.dec_attention,
                settings.leaky_slope,
                Activation::Identity,
            )?;
            (o, LayerCache::Attention(c))
        }
    })
}

#[derive(Debug, Clone)]
pub struct BranchCache {
    pub layers: Vec<LayerCache>,
}

pub fn branch_forward_cached(
    x: ArrayView2<f64>,
    nbrs: &[Vec<usize>],
    params: &BranchParams,
    settings: LayerSettings,
) -> Result<(Array2<f64>, BranchCache)> {
    let mut layers = Vec::with_capacity(4);
    let mut h = x.to_owned();
    for stage in Stage::ALL {
        let (out, cache) = stage_forward(stage, h.view(), nbrs, params, settings)?;
        layers.push(cache);
        h = out;
    }
    Ok((h, BranchCache { layers }))
}

/// Backward through one layer: writes that layer's parameter gradients into
/// `grads` and returns the gradient with respect to the layer input.
pub fn stage_backward(
    stage: Stage,
    grad_out: ArrayView2<f64>,
    nbrs: &[Vec<usize>],
    params: &BranchParams,
    cache: &LayerCache,
    grads: &mut BranchParams,
) -> Array2<f64> {
    match (stage, cache) {
        (Stage::DecAttention, LayerCache::Attention(c)) => {
            let (dx, gp) = attention_backward(grad_out, nbrs, &params.dec_attention, c);
            grads.dec_attention = gp;
            dx
        }
        (Stage::DecTransformer, LayerCache::Transformer(c)) => {
            let (dx, gp) = transformer_backward(grad_out, nbrs, &params.dec_transformer, c);
            grads.dec_transformer = gp;
            dx
        }
        (Stage::EncAttention, LayerCache::Attention(c)) => {
            let (dx, gp) = attention_backward(grad_out, nbrs, &params.enc_attention, c);
            grads.enc_attention = gp;
            dx
        }
        (Stage::EncTransformer, LayerCache::Transformer(c)) => {
            let (dx, gp) = transformer_backward(grad_out, nbrs, &params.enc_transformer, c);
            grads.enc_transformer = gp;
            dx
        }
        _ => panic!("layer cache does not match stage {stage:?}"),
    }
}

/// Gradient of the loss with respect to every branch parameter, given `dL/d output`.
pub fn branch_backward(
    grad_out: ArrayView2<f64>,
    nbrs: &[Vec<usize>],
    params: &BranchParams,
    cache: &BranchCache,
) -> BranchParams {
    let mut grads = params.zeros_like();
    let mut g = grad_out.to_owned();
    for (stage, layer) in Stage::ALL.iter().zip(&cache.layers).rev() {
        g = stage_backward(*stage, g.view(), nbrs, params, layer, &mut grads);
    }
    grads
}

/// Runs one branch over a full-length input: encoder (transformer, attention)
/// then decoder (transformer, attention), all on the same graph.
pub fn branch_forward(
    x: ArrayView2<f64>,
    graph: &FleetGraph,
    params: &BranchParams,
    config: &ModelConfig,
) -> Result<Array2<f64>> {
    if x.ncols() != params.series_len() {
        return Err(Error::shape("branch_forward input", (x.nrows(), params.series_len()), x.dim()));
    }
    branch_forward_cached(x, &graph.neighborhoods(), params, config.into()).map(|(o, _)| o)
}

/// Contiguous non-overlapping windows of length `len` covering `0..total`; the
/// last one may be shorter.
pub fn slice_ranges(total: usize, len: usize) -> Vec<Range<usize>> {
    assert!(len > 0, "slice length must be positive");
    (0..total.div_ceil(len))
        .map(|j| j * len..((j + 1) * len).min(total))
        .collect()
}

/// Columns `range` of `x`, right-padded to `len` by repeating the last column.
pub fn padded_slice(x: ArrayView2<f64>, range: Range<usize>, len: usize) -> Array2<f64> {
    let width = range.len();
    let mut out = Array2::zeros((x.nrows(), len));
    out.slice_mut(s![.., ..width]).assign(&x.slice(s![.., range.clone()]));
    for c in width..len {
        out.column_mut(c).assign(&x.column(range.end - 1));
    }
    out
}

/// Applies a branch whose series length may be shorter than the input by
/// running it on consecutive windows and concatenating the outputs.
pub fn branch_forward_windowed(
    x: ArrayView2<f64>,
    nbrs: &[Vec<usize>],
    params: &BranchParams,
    settings: LayerSettings,
) -> Result<Array2<f64>> {
    let len = params.series_len();
    let total = x.ncols();
    if len == total {
        return branch_forward_cached(x, nbrs, params, settings).map(|(o, _)| o);
    }
    let mut out = Array2::zeros(x.dim());
    for range in slice_ranges(total, len) {
        let input = padded_slice(x, range.clone(), len);
        let (y, _) = branch_forward_cached(input.view(), nbrs, params, settings)?;
        out.slice_mut(s![.., range.clone()])
            .assign(&y.slice(s![.., ..range.len()]));
    }
    Ok(out)
}

/// One aging term and `k` fluctuation terms, all `N x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub h_a: Array2<f64>,
    pub h_f: Vec<Array2<f64>>,
}

impl Decomposition {
    pub fn new(h_a: Array2<f64>, h_f: Vec<Array2<f64>>) -> Result<Self> {
        if let Some(bad) = h_f.iter().find(|f| f.dim() != h_a.dim()) {
            return Err(Error::shape("Decomposition fluctuation term", h_a.dim(), bad.dim()));
        }
        Ok(Self { h_a, h_f })
    }

    pub fn zeros(n: usize, t: usize, k: usize) -> Self {
        Self {
            h_a: Array2::zeros((n, t)),
            h_f: vec![Array2::zeros((n, t)); k],
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.h_a.dim()
    }

    pub fn k(&self) -> usize {
        self.h_f.len()
    }

    /// `h_a + sum_q h_f[q]`.
    pub fn reconstruction(&self) -> Array2<f64> {
        let mut r = self.h_a.clone();
        for f in &self.h_f {
            r += f;
        }
        r
    }

    /// Branch outputs in branch order: aging first, then fluctuations.
    pub fn terms(&self) -> impl Iterator<Item = &Array2<f64>> {
        std::iter::once(&self.h_a).chain(self.h_f.iter())
    }

    pub(crate) fn from_terms(mut terms: Vec<Array2<f64>>) -> Self {
        let h_a = terms.remove(0);
        Self { h_a, h_f: terms }
    }
}

/// Runs the `k + 1` independent branches on `x`. Branch 0 yields the aging term.
pub fn model_forward(
    x: ArrayView2<f64>,
    graph: &FleetGraph,
    model: &[BranchParams],
    config: &ModelConfig,
) -> Result<Decomposition> {
    if model.len() != config.n_branches() {
        return Err(Error::Config(format!(
            "model has {} branches, config expects k + 1 = {}",
            model.len(),
            config.n_branches()
        )));
    }
    if x.nrows() != graph.n_nodes() {
        return Err(Error::shape("model_forward input rows", graph.n_nodes(), x.nrows()));
    }
    let nbrs = graph.neighborhoods();
    let settings = LayerSettings::from(config);
    let terms = model
        .iter()
        .map(|p| branch_forward_windowed(x, &nbrs, p, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(Decomposition::from_terms(terms))
}
