//! End-to-end helpers: scale the fleet, train, and decompose back into
//! original units.
//!
//! The loss pins down the shape of the aging term but not its level: a
//! constant can move freely between the aging and fluctuation terms. Series
//! are therefore centered per node and divided by one fleet-wide scale before
//! training. When mapping back, the node mean returns to the aging term and
//! any residual constant offset of a fluctuation term is moved to it as well,
//! so fluctuation terms come out zero-mean.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet_graph::FleetGraph;
use crate::gae_array::{model_forward, Decomposition, TrainedModel};
use crate::para_trainer::{train_parallel, train_serial, TrainConfig, TrainOutcome};
use crate::gae_array::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub node_means: Vec<f64>,
    /// Population standard deviation of all centered values.
    pub scale: f64,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidInput("empty input".into()));
        }
        let means = x.mean_axis(Axis(1)).expect("nonempty rows");
        let centered = &x - &means.view().insert_axis(Axis(1));
        let scale = (centered.mapv(|v| v * v).sum() / x.len() as f64).sqrt();
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "every node series is constant or non-finite (scale {scale})"
            )));
        }
        Ok(Self { node_means: means.to_vec(), scale })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.node_means.len() {
            return Err(Error::shape("standardizer rows", self.node_means.len(), x.nrows()));
        }
        let mut out = x.to_owned();
        for (mut row, m) in out.rows_mut().into_iter().zip(&self.node_means) {
            row.mapv_inplace(|v| (v - m) / self.scale);
        }
        Ok(out)
    }

    /// Maps a decomposition of scaled data back to original units.
    pub fn restore(&self, d: &Decomposition) -> Result<Decomposition> {
        let (n, _) = d.dim();
        if n != self.node_means.len() {
            return Err(Error::shape("standardizer rows", self.node_means.len(), n));
        }
        let mut h_a = d.h_a.mapv(|v| v * self.scale);
        let mut h_f = Vec::with_capacity(d.k());
        for f in &d.h_f {
            let mut f = f.mapv(|v| v * self.scale);
            let offsets = f.mean_axis(Axis(1)).expect("nonempty rows");
            for ((mut frow, mut arow), o) in f.rows_mut().into_iter().zip(h_a.rows_mut()).zip(&offsets) {
                frow -= *o;
                arow += *o;
            }
            h_f.push(f);
        }
        for (mut row, m) in h_a.rows_mut().into_iter().zip(&self.node_means) {
            row += *m;
        }
        Decomposition::new(h_a, h_f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Serial,
    #[default]
    Parallel,
}

/// Standardizes `x` and trains on it.
pub fn fit(
    x: ArrayView2<f64>,
    graph: &FleetGraph,
    model: &ModelConfig,
    config: &TrainConfig,
    trainer: TrainerKind,
) -> Result<(TrainOutcome, Standardizer)> {
    let scaler = Standardizer::fit(x)?;
    let xs = scaler.transform(x)?;
    let outcome = match trainer {
        TrainerKind::Serial => train_serial(xs.view(), graph, model, config)?,
        TrainerKind::Parallel => train_parallel(xs.view(), graph, model, config)?,
    };
    Ok((outcome, scaler))
}

/// Decomposition of `x` in original units. The scaling is refit on `x`.
pub fn decompose(x: ArrayView2<f64>, graph: &FleetGraph, model: &TrainedModel) -> Result<Decomposition> {
    let scaler = Standardizer::fit(x)?;
    let xs = scaler.transform(x)?;
    let d = model_forward(xs.view(), graph, &model.branches, &model.config)?;
    scaler.restore(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn transform_then_restore_recovers_input() {
        let x = array![[10.0, 12.0, 11.0, 9.0], [1.0, 1.5, 0.5, 1.0]];
        let s = Standardizer::fit(x.view()).unwrap();
        let xs = s.transform(x.view()).unwrap();
        assert!(xs.sum().abs() < 1e-12);
        let total_sd = (xs.mapv(|v| v * v).sum() / 8.0).sqrt();
        assert!((total_sd - 1.0).abs() < 1e-12);
        let split = Decomposition::new(&xs * 0.25, vec![&xs * 0.75]).unwrap();
        let back = s.restore(&split).unwrap();
        let recon = back.reconstruction();
        assert!(recon.iter().zip(x.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        for f in &back.h_f {
            assert!(f.mean_axis(Axis(1)).unwrap().iter().all(|m| m.abs() < 1e-12));
        }
    }

    #[test]
    fn fluctuation_offset_moves_to_aging() {
        let x = array![[1.0, 3.0, 1.0, 3.0]];
        let s = Standardizer { node_means: vec![2.0], scale: 1.0 };
        let d = Decomposition::new(array![[-0.5, -0.5, -0.5, -0.5]], vec![array![[-0.5, 1.5, -0.5, 1.5]]]).unwrap();
        let back = s.restore(&d).unwrap();
        assert_eq!(back.h_a, array![[2.0, 2.0, 2.0, 2.0]]);
        assert_eq!(back.h_f[0], array![[-1.0, 1.0, -1.0, 1.0]]);
        assert_eq!(back.reconstruction(), x);
    }

    #[test]
    fn constant_input_rejected() {
        assert!(Standardizer::fit(Array2::from_elem((2, 5), 3.0).view()).is_err());
    }
}
