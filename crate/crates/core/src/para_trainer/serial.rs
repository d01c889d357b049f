use std::time::Instant;

use ndarray::ArrayView2;

use super::adam::Adam;
use super::split::split_nodes;
use super::{EpochRecord, StepRecord, TrainConfig, TrainLog, TrainOutcome};
use crate::error::{Error, Result};
use crate::fleet_graph::FleetGraph;
use crate::gae_array::{
    branch_backward, branch_forward_cached, init_params, Decomposition, LayerSettings, ModelConfig,
    TrainedModel,
};
use crate::objective::{total_loss_masked, total_loss_with_grad};

/// Joint full-batch optimization of all `k + 1` full-length branches against
/// the total loss over training nodes.
pub fn train_serial(
    x: ArrayView2<f64>,
    graph: &FleetGraph,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.check_model(model, x.ncols())?;
    if x.nrows() != graph.n_nodes() {
        return Err(Error::shape("input rows vs graph nodes", graph.n_nodes(), x.nrows()));
    }
    let split = split_nodes(x.nrows(), config.split, config.seed)?;
    let has_val = split.val.iter().any(|&b| b);
    let nbrs = graph.neighborhoods();
    let settings = LayerSettings::from(model);
    let mut branches = init_params(model)?;
    let mut opts: Vec<Adam> = branches
        .iter()
        .map(|p| Adam::new(p, config.learning_rate))
        .collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut outputs = Vec::with_capacity(branches.len());
        let mut caches = Vec::with_capacity(branches.len());
        for p in &branches {
            let (out, cache) = branch_forward_cached(x, &nbrs, p, settings)?;
            outputs.push(out);
            caches.push(cache);
        }
        let d = Decomposition::from_terms(outputs);
        let (loss, grads) = total_loss_with_grad(x, &d, &config.weights, Some(&split.train))?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, log: Box::new(log) });
        }
        let validation = if has_val {
            Some(total_loss_masked(x, &d, &config.weights, Some(&split.val))?.total)
        } else {
            None
        };
        let term_grads = std::iter::once(&grads.h_a).chain(grads.h_f.iter());
        for (((p, opt), cache), g) in branches.iter_mut().zip(&mut opts).zip(&caches).zip(term_grads) {
            let pg = branch_backward(g.view(), &nbrs, p, cache);
            opt.step(p, &pg);
        }
        log.steps.push(StepRecord::whole(epoch, &loss));
        log.epochs.push(EpochRecord {
            epoch,
            loss,
            validation,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutcome {
        model: TrainedModel { config: model.clone(), branches },
        log,
        split,
        timing: None,
        replicas: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::para_trainer::SplitFractions;
    use ndarray::Array2;

    fn instance() -> (Array2<f64>, FleetGraph, ModelConfig, TrainConfig) {
        let x = Array2::from_shape_fn((6, 64), |(l, t)| {
            1.0 - 0.01 * t as f64 + 0.3 * (t as f64 * std::f64::consts::PI / 8.0).sin() + 0.05 * l as f64
        });
        let model = ModelConfig { hidden_dim: 8, latent_dim: 4, n_heads: 2, seed: 5, ..ModelConfig::new(64, vec![16]) };
        let mut config = TrainConfig::reference(vec![16]);
        config.epochs = 51;
        config.learning_rate = 0.01;
        config.split = SplitFractions::all_train();
        (x, FleetGraph::path(6), model, config)
    }

    #[test]
    fn loss_decreases() {
        let (x, g, m, c) = instance();
        let out = train_serial(x.view(), &g, &m, &c).unwrap();
        let first = out.log.epochs[0].loss.total;
        let at50 = out.log.epochs[50].loss.total;
        assert!(at50 < first, "{at50} !< {first}");
        assert_eq!(out.log.steps.len(), 51);
    }

    #[test]
    fn deterministic() {
        let (x, g, m, mut c) = instance();
        c.epochs = 3;
        let a = train_serial(x.view(), &g, &m, &c).unwrap();
        let b = train_serial(x.view(), &g, &m, &c).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log.steps, b.log.steps);
    }

    #[test]
    fn zero_step_keeps_init() {
        let (x, g, m, mut c) = instance();
        c.epochs = 4;
        c.learning_rate = 1e-300;
        let out = train_serial(x.view(), &g, &m, &c).unwrap();
        assert_eq!(out.model.branches, init_params(&m).unwrap());
    }

    #[test]
    fn divergence_reports_epoch() {
        let (mut x, g, m, mut c) = instance();
        x[[0, 0]] = f64::NAN;
        c.epochs = 3;
        match train_serial(x.view(), &g, &m, &c) {
            Err(Error::Diverged { epoch, log }) => {
                assert_eq!(epoch, 0);
                assert!(log.steps.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
