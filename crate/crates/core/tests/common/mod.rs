//! Helpers shared by the integration tests: brute-force operator oracles,
//! finite differences, and small random instances.
#![allow(dead_code)]

use gtrend_core::fleet_graph::FleetGraph;
use gtrend_core::gae_array::{AttentionLayerParams, TransformerLayerParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

pub fn random_transformer(rng: &mut ChaCha8Rng, i: usize, o: usize) -> TransformerLayerParams {
    TransformerLayerParams {
        w1: random_matrix(rng, o, i, 1.0),
        w2: random_matrix(rng, o, i, 1.0),
        w3: random_matrix(rng, o, i, 1.0),
        w4: random_matrix(rng, o, i, 1.0),
    }
}

pub fn random_attention(rng: &mut ChaCha8Rng, i: usize, o: usize) -> AttentionLayerParams {
    AttentionLayerParams {
        w: random_matrix(rng, o, i, 1.0),
        a: random_matrix(rng, 1, 2 * o, 1.0),
    }
}

/// Every undirected simple graph on `n` labelled nodes.
pub fn all_graphs(n: usize) -> Vec<FleetGraph> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    (0..1u32 << pairs.len())
        .map(|mask| {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, &e)| e)
                .collect();
            FleetGraph::from_edges(n, &edges).unwrap()
        })
        .collect()
}

fn neighbours(graph: &FleetGraph, i: usize) -> Vec<usize> {
    (0..graph.n_nodes()).filter(|&j| j == i || graph.has_edge(i, j)).collect()
}

fn matvec(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.nrows())
        .map(|r| (0..w.ncols()).map(|c| w[[r, c]] * x[c]).sum())
        .collect()
}

/// Graph transformer by direct summation: per head `h`,
/// `a_ij = exp(q_i . k_j / sqrt(d)) / sum_l exp(q_i . k_l / sqrt(d))`,
/// output `W1 x_i + sum_j mean_h(a_ij) W2 x_j`.
pub fn transformer_by_sum(x: &Array2<f64>, graph: &FleetGraph, p: &TransformerLayerParams, heads: usize) -> Array2<f64> {
    let n = x.nrows();
    let out = p.w1.nrows();
    let d = out / heads;
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut y = Array2::zeros((n, out));
    for i in 0..n {
        let nb = neighbours(graph, i);
        let self_part = matvec(&p.w1, &rows[i]);
        let q = matvec(&p.w3, &rows[i]);
        let mut weight = vec![0.0; nb.len()];
        for h in 0..heads {
            let scores: Vec<f64> = nb
                .iter()
                .map(|&j| {
                    let k = matvec(&p.w4, &rows[j]);
                    let dot: f64 = (h * d..(h + 1) * d).map(|c| q[c] * k[c]).sum();
                    (dot / (d as f64).sqrt()).exp()
                })
                .collect();
            let total: f64 = scores.iter().sum();
            for (w, s) in weight.iter_mut().zip(&scores) {
                *w += s / total / heads as f64;
            }
        }
        for c in 0..out {
            let mut v = self_part[c];
            for (&j, w) in nb.iter().zip(&weight) {
                v += w * matvec(&p.w2, &rows[j])[c];
            }
            y[[i, c]] = v;
        }
    }
    y
}

/// Graph attention by direct summation with an optional ELU.
pub fn attention_by_sum(h: &Array2<f64>, graph: &FleetGraph, p: &AttentionLayerParams, slope: f64, elu: bool) -> Array2<f64> {
    let n = h.nrows();
    let out = p.w.nrows();
    let z: Vec<Vec<f64>> = h.rows().into_iter().map(|r| matvec(&p.w, &r.to_vec())).collect();
    let mut y = Array2::zeros((n, out));
    for i in 0..n {
        let nb = neighbours(graph, i);
        let e: Vec<f64> = nb
            .iter()
            .map(|&j| {
                let s: f64 = (0..out).map(|c| p.a[[0, c]] * z[i][c] + p.a[[0, out + c]] * z[j][c]).sum();
                let s = if s > 0.0 { s } else { slope * s };
                s.exp()
            })
            .collect();
        let total: f64 = e.iter().sum();
        for c in 0..out {
            let v: f64 = nb.iter().zip(&e).map(|(&j, ej)| ej / total * z[j][c]).sum();
            y[[i, c]] = if elu && v <= 0.0 { v.exp() - 1.0 } else { v };
        }
    }
    y
}

/// Central difference of `f` with respect to every entry of `at`.
pub fn numeric_gradient(at: &Array2<f64>, step: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut probe = at.clone();
    let mut g = Array2::zeros(at.dim());
    for idx in 0..at.len() {
        let (r, c) = (idx / at.ncols(), idx % at.ncols());
        let v = at[[r, c]];
        probe[[r, c]] = v + step;
        let up = f(&probe);
        probe[[r, c]] = v - step;
        let down = f(&probe);
        probe[[r, c]] = v;
        g[[r, c]] = (up - down) / (2.0 * step);
    }
    g
}

/// `|a - b| / max(|a|, |b|)`, with differences below `floor` treated as exact.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= floor {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

/// Fraction of coordinate pairs whose relative error is within `tol`.
pub fn fraction_within(analytic: &[f64], numeric: &[f64], tol: f64, floor: f64) -> f64 {
    let ok = analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| relative_error(**a, **n, floor) <= tol)
        .count();
    ok as f64 / analytic.len() as f64
}
