//! Graph transformer and graph attention operators with their backward passes.
//!
//! Node features are rows: an `N x F` input maps to `N x F_out`. Neighbourhoods
//! always contain the node itself, so a node without edges still sees its own
//! features.

use ndarray::{s, Array2, ArrayView2};

use super::params::{AttentionLayerParams, TransformerLayerParams};
use crate::error::{Error, Result};
use crate::fleet_graph::FleetGraph;

/// Activation applied after the attention aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu if x <= 0.0 => x.exp_m1(),
            _ => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu if x <= 0.0 => x.exp(),
            _ => 1.0,
        }
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// In-place softmax over a slice.
fn softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `x W^T` for a row-major feature matrix and an `out x in` weight.
fn project(x: &ArrayView2<f64>, w: &Array2<f64>) -> Array2<f64> {
    x.dot(&w.t())
}

fn check_input(context: &'static str, x: &ArrayView2<f64>, nbrs: &[Vec<usize>], in_dim: usize) -> Result<()> {
    if nbrs.is_empty() {
        return Err(Error::InvalidInput(format!("{context}: empty graph")));
    }
    if x.nrows() != nbrs.len() {
        return Err(Error::shape(context, (nbrs.len(), in_dim), x.dim()));
    }
    if x.ncols() != in_dim {
        return Err(Error::shape(context, (x.nrows(), in_dim), x.dim()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TransformerCache {
    x: Array2<f64>,
    b: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    /// Per node, head-major attention weights (`heads * |N(i)|`).
    alpha: Vec<Vec<f64>>,
    /// Per node, head-averaged attention weights.
    mean_alpha: Vec<Vec<f64>>,
    n_heads: usize,
}

impl TransformerCache {
    pub fn head_averaged_attention(&self) -> &[Vec<f64>] {
        &self.mean_alpha
    }

    pub fn attention(&self) -> &[Vec<f64>] {
        &self.alpha
    }
}

/// Multi-head graph transformer layer:
/// `x'_i = W1 x_i + sum_j mean_h(alpha^h_ij) W2 x_j`, with
/// `alpha^h_ij = softmax_j((W3 x_i)_h . (W4 x_j)_h / sqrt(D))` over `j in N(i)`.
pub fn transformer_forward(
    x: ArrayView2<f64>,
    nbrs: &[Vec<usize>],
    params: &TransformerLayerParams,
    n_heads: usize,
) -> Result<(Array2<f64>, TransformerCache)> {
    check_input("transformer_conv", &x, nbrs, params.in_dim())?;
    let out_dim = params.out_dim();
    if n_heads == 0 || out_dim % n_heads != 0 {
        return Err(Error::Config(format!("out dim {out_dim} not divisible by {n_heads} heads")));
    }
    let d = out_dim / n_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = project(&x, &params.w1);
    let b = project(&x, &params.w2);
    let q = project(&x, &params.w3);
    let k = project(&x, &params.w4);

    let mut alpha = Vec::with_capacity(nbrs.len());
    let mut mean_alpha = Vec::with_capacity(nbrs.len());
    for (i, nb) in nbrs.iter().enumerate() {
        let m = nb.len();
        let mut a = vec![0.0; n_heads * m];
        for h in 0..n_heads {
            let qi = q.slice(s![i, h * d..(h + 1) * d]);
            let row = &mut a[h * m..(h + 1) * m];
            for (slot, &j) in row.iter_mut().zip(nb) {
                *slot = qi.dot(&k.slice(s![j, h * d..(h + 1) * d])) * scale;
            }
            softmax(row);
        }
        let mut mean = vec![0.0; m];
        for h in 0..n_heads {
            for (mj, aj) in mean.iter_mut().zip(&a[h * m..(h + 1) * m]) {
                *mj += aj;
            }
        }
        for mj in mean.iter_mut() {
            *mj /= n_heads as f64;
        }
        let mut oi = out.row_mut(i);
        for (&j, &w) in nb.iter().zip(&mean) {
            oi.scaled_add(w, &b.row(j));
        }
        alpha.push(a);
        mean_alpha.push(mean);
    }
    let cache = TransformerCache {
        x: x.to_owned(),
        b,
        q,
        k,
        alpha,
        mean_alpha,
        n_heads,
    };
    Ok((out, cache))
}

/// Returns `(dL/dx, dL/dparams)` given `dL/dout`.
pub fn transformer_backward(
    grad_out: ArrayView2<f64>,
    nbrs: &[Vec<usize>],
    params: &TransformerLayerParams,
    cache: &TransformerCache,
) -> (Array2<f64>, TransformerLayerParams) {
    let n_heads = cache.n_heads;
    let out_dim = params.out_dim();
    let d = out_dim / n_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let n = nbrs.len();
    let mut db = Array2::<f64>::zeros((n, out_dim));
    let mut dq = Array2::<f64>::zeros((n, out_dim));
    let mut dk = Array2::<f64>::zeros((n, out_dim));

    for (i, nb) in nbrs.iter().enumerate() {
        let m = nb.len();
        let gi = grad_out.row(i);
        let mut dmean = vec![0.0; m];
        for (slot, (&j, &w)) in dmean.iter_mut().zip(nb.iter().zip(&cache.mean_alpha[i])) {
            db.row_mut(j).scaled_add(w, &gi);
            *slot = gi.dot(&cache.b.row(j));
        }
        let a = &cache.alpha[i];
        for h in 0..n_heads {
            let ah = &a[h * m..(h + 1) * m];
            let dot: f64 = ah.iter().zip(&dmean).map(|(p, g)| p * g).sum::<f64>() / n_heads as f64;
            for (idx, &j) in nb.iter().enumerate() {
                let ds = ah[idx] * (dmean[idx] / n_heads as f64 - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                dq.slice_mut(s![i, h * d..(h + 1) * d])
                    .scaled_add(ds, &cache.k.slice(s![j, h * d..(h + 1) * d]));
                dk.slice_mut(s![j, h * d..(h + 1) * d])
                    .scaled_add(ds, &cache.q.slice(s![i, h * d..(h + 1) * d]));
            }
        }
    }

    let x = &cache.x;
    let grads = TransformerLayerParams {
        w1: grad_out.t().dot(x),
        w2: db.t().dot(x),
        w3: dq.t().dot(x),
        w4: dk.t().dot(x),
    };
    let mut dx = grad_out.dot(&params.w1);
    dx += &db.dot(&params.w2);
    dx += &dq.dot(&params.w3);
    dx += &dk.dot(&params.w4);
    (dx, grads)
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    h: Array2<f64>,
    z: Array2<f64>,
    /// Per node, LeakyReLU inputs `a_l . z_i + a_r . z_j`.
    raw: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    pre: Array2<f64>,
    activation: Activation,
    leaky_slope: f64,
}

impl AttentionCache {
    pub fn attention(&self) -> &[Vec<f64>] {
        &self.alpha
    }
}

/// Graph attention layer:
/// `x'_i = act(sum_j alpha_ij W h_j)`, with
/// `alpha_ij = softmax_j(LeakyReLU(a . [W h_i || W h_j]))` over `j in N(i)`.
pub fn attention_forward(
    h: ArrayView2<f64>,
    nbrs: &[Vec<usize>],
    params: &AttentionLayerParams,
    leaky_slope: f64,
    activation: Activation,
) -> Result<(Array2<f64>, AttentionCache)> {
    check_input("gat_conv", &h, nbrs, params.in_dim())?;
    let out_dim = params.out_dim();
    if params.a.dim() != (1, 2 * out_dim) {
        return Err(Error::shape("gat_conv attention vector", (1, 2 * out_dim), params.a.dim()));
    }
    let z = project(&h, &params.w);
    let a = params.a.row(0);
    let (a_l, a_r) = (a.slice(s![..out_dim]), a.slice(s![out_dim..]));
    let src: Vec<f64> = z.rows().into_iter().map(|r| a_l.dot(&r)).collect();
    let dst: Vec<f64> = z.rows().into_iter().map(|r| a_r.dot(&r)).collect();

    let mut pre = Array2::<f64>::zeros((nbrs.len(), out_dim));
    let mut raw = Vec::with_capacity(nbrs.len());
    let mut alpha = Vec::with_capacity(nbrs.len());
    for (i, nb) in nbrs.iter().enumerate() {
        let r: Vec<f64> = nb.iter().map(|&j| src[i] + dst[j]).collect();
        let mut w: Vec<f64> = r.iter().map(|&u| leaky(u, leaky_slope)).collect();
        softmax(&mut w);
        let mut pi = pre.row_mut(i);
        for (&j, &wj) in nb.iter().zip(&w) {
            pi.scaled_add(wj, &z.row(j));
        }
        raw.push(r);
        alpha.push(w);
    }
    let out = pre.mapv(|v| activation.apply(v));
    let cache = AttentionCache {
        h: h.to_owned(),
        z,
        raw,
        alpha,
        pre,
        activation,
        leaky_slope,
    };
    Ok((out, cache))
}

pub fn attention_backward(
    grad_out: ArrayView2<f64>,
    nbrs: &[Vec<usize>],
    params: &AttentionLayerParams,
    cache: &AttentionCache,
) -> (Array2<f64>, AttentionLayerParams) {
    let out_dim = params.out_dim();
    let n = nbrs.len();
    let act = cache.activation;
    let mut dpre = grad_out.to_owned();
    ndarray::Zip::from(&mut dpre)
        .and(&cache.pre)
        .for_each(|g, &p| *g *= act.derivative(p));

    let a = params.a.row(0);
    let (a_l, a_r) = (a.slice(s![..out_dim]), a.slice(s![out_dim..]));
    let mut dz = Array2::<f64>::zeros((n, out_dim));
    let mut dsrc = vec![0.0; n];
    let mut ddst = vec![0.0; n];
    for (i, nb) in nbrs.iter().enumerate() {
        let gi = dpre.row(i);
        let alpha = &cache.alpha[i];
        let dalpha: Vec<f64> = nb.iter().map(|&j| gi.dot(&cache.z.row(j))).collect();
        for (&j, &w) in nb.iter().zip(alpha) {
            dz.row_mut(j).scaled_add(w, &gi);
        }
        let dot: f64 = alpha.iter().zip(&dalpha).map(|(p, g)| p * g).sum();
        for (idx, &j) in nb.iter().enumerate() {
            let de = alpha[idx] * (dalpha[idx] - dot);
            let du = de * leaky_grad(cache.raw[i][idx], cache.leaky_slope);
            dsrc[i] += du;
            ddst[j] += du;
        }
    }
    let mut da = Array2::<f64>::zeros((1, 2 * out_dim));
    for i in 0..n {
        let zi = cache.z.row(i);
        da.slice_mut(s![0, ..out_dim]).scaled_add(dsrc[i], &zi);
        da.slice_mut(s![0, out_dim..]).scaled_add(ddst[i], &zi);
        let mut dzi = dz.row_mut(i);
        dzi.scaled_add(dsrc[i], &a_l);
        dzi.scaled_add(ddst[i], &a_r);
    }
    let grads = AttentionLayerParams {
        w: dz.t().dot(&cache.h),
        a: da,
    };
    let dh = dz.dot(&params.w);
    (dh, grads)
}

/// Graph transformer convolution over a fleet graph (self-loops added).
pub fn transformer_conv(
    x: ArrayView2<f64>,
    graph: &FleetGraph,
    params: &TransformerLayerParams,
    n_heads: usize,
) -> Result<Array2<f64>> {
    if graph.n_nodes() == 0 {
        return Err(Error::InvalidInput("transformer_conv: empty graph".into()));
    }
    transformer_forward(x, &graph.neighborhoods(), params, n_heads).map(|(o, _)| o)
}

/// Graph attention convolution over a fleet graph (self-loops added).
pub fn gat_conv(
    h: ArrayView2<f64>,
    graph: &FleetGraph,
    params: &AttentionLayerParams,
    leaky_slope: f64,
    activation: Activation,
) -> Result<Array2<f64>> {
    attention_forward(h, &graph.neighborhoods(), params, leaky_slope, activation).map(|(o, _)| o)
}

/// Sum of each node's attention weights; 1 for every node and head by construction.
pub fn attention_row_sums(alpha: &[Vec<f64>], n_heads: usize) -> Vec<f64> {
    alpha
        .iter()
        .flat_map(|a| {
            let m = a.len() / n_heads;
            (0..n_heads).map(move |h| a[h * m..(h + 1) * m].iter().sum())
        })
        .collect()
}
