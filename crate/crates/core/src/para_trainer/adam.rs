use ndarray::Zip;

use crate::gae_array::BranchParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam state for one set of branch parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    t: i32,
    m: BranchParams,
    v: BranchParams,
}

impl Adam {
    pub fn new(params: &BranchParams, lr: f64) -> Self {
        Self {
            lr,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut BranchParams, grads: &BranchParams) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let lr = self.lr;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gae_array::{init_branch, ModelConfig};

    fn params() -> BranchParams {
        let cfg = ModelConfig { hidden_dim: 4, latent_dim: 2, n_heads: 2, ..ModelConfig::new(8, vec![2]) };
        init_branch(8, &cfg, 3)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.enc_attention.w.fill(0.3);
        g.dec_attention.a.fill(-2.0);
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &g);
        let dw = &before.enc_attention.w - &p.enc_attention.w;
        assert!(dw.iter().all(|d| (d - 0.01).abs() < 1e-9));
        let da = &before.dec_attention.a - &p.dec_attention.a;
        assert!(da.iter().all(|d| (d + 0.01).abs() < 1e-9));
        assert_eq!(p.enc_transformer, before.enc_transformer);
    }

    #[test]
    fn zero_rate_leaves_params() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        for t in g.tensors_mut() {
            t.fill(1.5);
        }
        let mut adam = Adam::new(&p, 0.0);
        for _ in 0..5 {
            adam.step(&mut p, &g);
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 5);
    }
}
