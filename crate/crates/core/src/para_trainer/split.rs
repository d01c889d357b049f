use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.5, val: 0.25, test: 0.25 }
    }
}

impl SplitFractions {
    /// Every node in the training set.
    pub fn all_train() -> Self {
        Self { train: 1.0, val: 0.0, test: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [("train", self.train), ("val", self.val), ("test", self.test)];
        if let Some((name, v)) = parts.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("split fraction {name} = {v} is not a nonnegative number")));
        }
        if self.train <= 0.0 {
            return Err(Error::Config("train fraction must be positive".into()));
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Disjoint node masks. The forward pass always sees every node; losses are
/// restricted by mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl NodeSplit {
    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |m: &[bool]| m.iter().filter(|&&b| b).count();
        (c(&self.train), c(&self.val), c(&self.test))
    }
}

/// Seeded shuffle of node indices, cut by rounded fractions. Fractions that
/// are positive but round to zero nodes are an error.
pub fn split_nodes(n_nodes: usize, fractions: SplitFractions, seed: u64) -> Result<NodeSplit> {
    fractions.validate()?;
    let n_train = (fractions.train * n_nodes as f64).round() as usize;
    let n_val = (fractions.val * n_nodes as f64).round() as usize;
    let n_val = n_val.min(n_nodes.saturating_sub(n_train));
    let n_test = n_nodes.saturating_sub(n_train + n_val);
    for (name, frac, count) in [
        ("train", fractions.train, n_train),
        ("val", fractions.val, n_val),
        ("test", fractions.test, n_test),
    ] {
        if frac > 0.0 && count == 0 {
            return Err(Error::InvalidInput(format!(
                "{name} fraction {frac} of {n_nodes} nodes rounds to zero nodes"
            )));
        }
    }
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = NodeSplit {
        train: vec![false; n_nodes],
        val: vec![false; n_nodes],
        test: vec![false; n_nodes],
    };
    for (rank, &node) in order.iter().enumerate() {
        let mask = if rank < n_train {
            &mut split.train
        } else if rank < n_train + n_val {
            &mut split.val
        } else {
            &mut split.test
        };
        mask[node] = true;
    }
    Ok(split)
}
