//! Training objective: reconstruction error plus flatness (mean and slope
//! constraints) on the fluctuation terms and smoothness on the aging term.
//!
//! `total = RE + lambda1 * MC + lambda2 * SC + lambda3 * SR`
//!
//! With [`Normalization::Mean`] (the default) every component is averaged over
//! its natural index set: entries for RE, node x term for MC and SC, nodes for
//! SR. [`Normalization::Sum`] keeps raw sums.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gae_array::Decomposition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Segment length per fluctuation term.
    pub segment_window: Vec<usize>,
    #[serde(default)]
    pub normalization: Normalization,
}

impl LossWeights {
    /// `lambda = (5, 100, 10)`.
    pub fn reference(segment_window: Vec<usize>) -> Self {
        Self {
            lambda1: 5.0,
            lambda2: 100.0,
            lambda3: 10.0,
            segment_window,
            normalization: Normalization::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        if self.segment_window.iter().any(|&w| w < 2) {
            return Err(Error::Config("segment windows must be >= 2".into()));
        }
        Ok(())
    }

    /// Divisor applied to per-term MC/SC sums when combining `k` terms.
    pub(crate) fn term_divisor(&self, k: usize) -> f64 {
        match self.normalization {
            Normalization::Mean => k as f64,
            Normalization::Sum => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub re: f64,
    pub mc: f64,
    pub sc: f64,
    pub sr: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossBreakdown {
    pub fn new(re: f64, mc: f64, sc: f64, sr: f64, weights: &LossWeights) -> Self {
        Self {
            re,
            mc,
            sc,
            sr,
            total: re + weights.lambda1 * mc + weights.lambda2 * sc + weights.lambda3 * sr,
            lambda1: weights.lambda1,
            lambda2: weights.lambda2,
            lambda3: weights.lambda3,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Which node rows a loss is computed over. `None` means all nodes.
pub type NodeMask<'a> = Option<&'a [bool]>;

fn active(mask: NodeMask, l: usize) -> bool {
    mask.is_none_or(|m| m[l])
}

fn active_count(mask: NodeMask, n: usize) -> Result<usize> {
    let count = match mask {
        None => n,
        Some(m) => {
            if m.len() != n {
                return Err(Error::shape("node mask", n, m.len()));
            }
            m.iter().filter(|&&b| b).count()
        }
    };
    if count == 0 {
        return Err(Error::InvalidInput("node mask selects no nodes".into()));
    }
    Ok(count)
}

fn node_divisor(norm: Normalization, count: usize) -> f64 {
    match norm {
        Normalization::Mean => count as f64,
        Normalization::Sum => 1.0,
    }
}

fn check_shapes(x: &ArrayView2<f64>, d: &Decomposition) -> Result<()> {
    if x.dim() != d.dim() {
        return Err(Error::shape("decomposition vs input", x.dim(), d.dim()));
    }
    if let Some(bad) = d.h_f.iter().find(|f| f.dim() != x.dim()) {
        return Err(Error::shape("fluctuation term", x.dim(), bad.dim()));
    }
    Ok(())
}

/// Squared reconstruction residual and the residual `x - recon` itself.
pub fn re_term(
    x: ArrayView2<f64>,
    recon: ArrayView2<f64>,
    mask: NodeMask,
    norm: Normalization,
) -> Result<(f64, Array2<f64>)> {
    if x.dim() != recon.dim() {
        return Err(Error::shape("reconstruction", x.dim(), recon.dim()));
    }
    let count = active_count(mask, x.nrows())?;
    let mut residual = &x - &recon;
    let mut sum = 0.0;
    for (l, mut row) in residual.rows_mut().into_iter().enumerate() {
        if active(mask, l) {
            sum += row.dot(&row);
        } else {
            row.fill(0.0);
        }
    }
    let divisor = match norm {
        Normalization::Mean => (count * x.ncols()) as f64,
        Normalization::Sum => 1.0,
    };
    Ok((sum / divisor, residual))
}

/// Mean squared residual `||X - h_a - sum_q h_f[q]||^2 / (N T)`.
pub fn reconstruction_error(x: ArrayView2<f64>, d: &Decomposition) -> Result<f64> {
    check_shapes(&x, d)?;
    re_term(x, d.reconstruction().view(), None, Normalization::Mean).map(|(v, _)| v)
}

/// Means of the `floor(T / w)` consecutive length-`w` segments; a shorter tail is dropped.
pub fn segment_means(series: ArrayView1<f64>, w: usize) -> Result<Vec<f64>> {
    if w < 2 {
        return Err(Error::InvalidInput(format!("segment window {w} < 2")));
    }
    if series.len() < 2 * w {
        return Err(Error::TooShort(format!(
            "series of length {} holds fewer than two segments of {w}",
            series.len()
        )));
    }
    let p = series.len() / w;
    Ok((0..p)
        .map(|i| series.slice(ndarray::s![i * w..(i + 1) * w]).sum() / w as f64)
        .collect())
}

/// `sum_{i,j} |i - j|` over ordered pairs of `p` segments.
fn distance_weight_total(p: usize) -> f64 {
    (p * (p * p - 1)) as f64 / 3.0
}

/// Weighted pairwise segment-mean dispersion of one node's series; adds its
/// gradient (scaled by `scale`) into `grad` when given.
fn mc_node(series: ArrayView1<f64>, w: usize, scale: f64, grad: Option<ArrayViewMut1<f64>>) -> Result<f64> {
    let m = segment_means(series, w)?;
    let p = m.len();
    let total = distance_weight_total(p);
    let mut value = 0.0;
    let mut dm = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            let wij = i.abs_diff(j) as f64 / total;
            let diff = m[i] - m[j];
            value += diff * diff * wij;
            dm[i] += 4.0 * diff * wij;
        }
    }
    if let Some(mut g) = grad {
        for (i, d) in dm.iter().enumerate() {
            let v = scale * d / w as f64;
            g.slice_mut(ndarray::s![i * w..(i + 1) * w]).mapv_inplace(|x| x + v);
        }
    }
    Ok(value)
}

/// Mean constraint of a single fluctuation term, normalized over nodes.
pub fn mc_term(h: ArrayView2<f64>, w: usize, mask: NodeMask, norm: Normalization, grad: Option<&mut Array2<f64>>) -> Result<f64> {
    let count = active_count(mask, h.nrows())?;
    let div = node_divisor(norm, count);
    let mut sum = 0.0;
    match grad {
        Some(g) => {
            for (l, (row, grow)) in h.rows().into_iter().zip(g.rows_mut()).enumerate() {
                if active(mask, l) {
                    sum += mc_node(row, w, 1.0 / div, Some(grow))?;
                }
            }
        }
        None => {
            for (l, row) in h.rows().into_iter().enumerate() {
                if active(mask, l) {
                    sum += mc_node(row, w, 1.0, None)?;
                }
            }
        }
    }
    Ok(sum / div)
}

pub fn mean_constraint(d: &Decomposition, weights: &LossWeights) -> Result<f64> {
    if weights.segment_window.len() != d.k() {
        return Err(Error::Config(format!(
            "{} segment windows for {} fluctuation terms",
            weights.segment_window.len(),
            d.k()
        )));
    }
    let mut sum = 0.0;
    for (f, &w) in d.h_f.iter().zip(&weights.segment_window) {
        sum += mc_term(f.view(), w, None, weights.normalization, None)?;
    }
    Ok(sum / weights.term_divisor(d.k()))
}

/// Ordinary least-squares slope against abscissa `0..T`.
pub fn least_squares_slope(series: ArrayView1<f64>) -> Result<f64> {
    let t = series.len();
    if t < 2 {
        return Err(Error::TooShort(format!("slope needs at least 2 points, got {t}")));
    }
    let mean_t = (t - 1) as f64 / 2.0;
    let mean_x = series.sum() / t as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &x) in series.iter().enumerate() {
        let dt = i as f64 - mean_t;
        num += dt * (x - mean_x);
        den += dt * dt;
    }
    Ok(num / den)
}

/// Sum of absolute OLS slopes of one fluctuation term, normalized over nodes.
pub fn sc_term(h: ArrayView2<f64>, mask: NodeMask, norm: Normalization, mut grad: Option<&mut Array2<f64>>) -> Result<f64> {
    let t = h.ncols();
    let count = active_count(mask, h.nrows())?;
    let div = node_divisor(norm, count);
    let mean_t = (t.max(1) - 1) as f64 / 2.0;
    let stt: f64 = (0..t).map(|i| (i as f64 - mean_t).powi(2)).sum();
    let mut sum = 0.0;
    for (l, row) in h.rows().into_iter().enumerate() {
        if !active(mask, l) {
            continue;
        }
        let slope = least_squares_slope(row)?;
        sum += slope.abs();
        if let Some(g) = grad.as_deref_mut() {
            let sign = if slope > 0.0 {
                1.0
            } else if slope < 0.0 {
                -1.0
            } else {
                0.0
            };
            let mut grow = g.row_mut(l);
            for (i, gv) in grow.iter_mut().enumerate() {
                *gv += sign * (i as f64 - mean_t) / stt / div;
            }
        }
    }
    Ok(sum / div)
}

pub fn slope_constraint(d: &Decomposition) -> Result<f64> {
    slope_constraint_with(d, Normalization::Mean)
}

pub fn slope_constraint_with(d: &Decomposition, norm: Normalization) -> Result<f64> {
    if d.k() == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for f in &d.h_f {
        sum += sc_term(f.view(), None, norm, None)?;
    }
    Ok(match norm {
        Normalization::Mean => sum / d.k() as f64,
        Normalization::Sum => sum,
    })
}

/// Population standard deviation of first differences of the aging term,
/// normalized over nodes.
pub fn sr_term(h: ArrayView2<f64>, mask: NodeMask, norm: Normalization, mut grad: Option<&mut Array2<f64>>) -> Result<f64> {
    let t = h.ncols();
    if t < 3 {
        return Err(Error::TooShort(format!("smoothness needs at least 3 points, got {t}")));
    }
    let count = active_count(mask, h.nrows())?;
    let div = node_divisor(norm, count);
    let n = (t - 1) as f64;
    let mut sum = 0.0;
    let mut diffs = vec![0.0; t - 1];
    for (l, row) in h.rows().into_iter().enumerate() {
        if !active(mask, l) {
            continue;
        }
        for (i, d) in diffs.iter_mut().enumerate() {
            *d = row[i + 1] - row[i];
        }
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        sum += sd;
        if let (Some(g), true) = (grad.as_deref_mut(), sd > 0.0) {
            let mut grow = g.row_mut(l);
            for (i, d) in diffs.iter().enumerate() {
                let gd = (d - mean) / (n * sd) / div;
                grow[i + 1] += gd;
                grow[i] -= gd;
            }
        }
    }
    Ok(sum / div)
}

pub fn smoothness_reg(d: &Decomposition) -> Result<f64> {
    sr_term(d.h_a.view(), None, Normalization::Mean, None)
}

pub fn total_loss(x: ArrayView2<f64>, d: &Decomposition, weights: &LossWeights) -> Result<LossBreakdown> {
    evaluate(x, d, weights, None, false).map(|(b, _)| b)
}

/// Loss over the masked nodes together with its gradient with respect to every
/// term of the decomposition.
pub fn total_loss_with_grad(
    x: ArrayView2<f64>,
    d: &Decomposition,
    weights: &LossWeights,
    mask: NodeMask,
) -> Result<(LossBreakdown, Decomposition)> {
    evaluate(x, d, weights, mask, true).map(|(b, g)| (b, g.expect("gradient requested")))
}

pub fn total_loss_masked(x: ArrayView2<f64>, d: &Decomposition, weights: &LossWeights, mask: NodeMask) -> Result<LossBreakdown> {
    evaluate(x, d, weights, mask, false).map(|(b, _)| b)
}

fn evaluate(
    x: ArrayView2<f64>,
    d: &Decomposition,
    weights: &LossWeights,
    mask: NodeMask,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Decomposition>)> {
    check_shapes(&x, d)?;
    weights.validate()?;
    if weights.segment_window.len() != d.k() {
        return Err(Error::Config(format!(
            "{} segment windows for {} fluctuation terms",
            weights.segment_window.len(),
            d.k()
        )));
    }
    let norm = weights.normalization;
    let (n, t) = d.dim();
    let (re, residual) = re_term(x, d.reconstruction().view(), mask, norm)?;
    let re_scale = match norm {
        Normalization::Mean => -2.0 / (active_count(mask, n)? * t) as f64,
        Normalization::Sum => -2.0,
    };
    let term_div = weights.term_divisor(d.k());

    let mut grads = want_grad.then(|| Decomposition::zeros(n, t, d.k()));
    let mut mc = 0.0;
    let mut sc = 0.0;
    for (q, (f, &w)) in d.h_f.iter().zip(&weights.segment_window).enumerate() {
        let mut gmc = want_grad.then(|| Array2::zeros((n, t)));
        let mut gsc = want_grad.then(|| Array2::zeros((n, t)));
        mc += mc_term(f.view(), w, mask, norm, gmc.as_mut())?;
        sc += sc_term(f.view(), mask, norm, gsc.as_mut())?;
        if let Some(g) = grads.as_mut() {
            let gq = &mut g.h_f[q];
            gq.assign(&residual);
            *gq *= re_scale;
            gq.scaled_add(weights.lambda1 / term_div, gmc.as_ref().unwrap());
            gq.scaled_add(weights.lambda2 / term_div, gsc.as_ref().unwrap());
        }
    }
    mc /= term_div;
    sc /= term_div;
    let mut gsr = want_grad.then(|| Array2::zeros((n, t)));
    let sr = sr_term(d.h_a.view(), mask, norm, gsr.as_mut())?;
    if let Some(g) = grads.as_mut() {
        g.h_a.assign(&residual);
        g.h_a *= re_scale;
        g.h_a.scaled_add(weights.lambda3, gsr.as_ref().unwrap());
    }
    Ok((LossBreakdown::new(re, mc, sc, sr, weights), grads))
}
