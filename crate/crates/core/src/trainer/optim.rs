use super::config::AdamConfig;
use crate::nn::{Network, NnError};
use crate::tensor::Tensor;

pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction; one moment pair per network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: usize) -> Self {
        Adam {
            config,
            t: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    /// Applies one update; `grads` lines up with `net.params()`.
    pub fn step(&mut self, net: &mut Network, grads: &[Tensor]) -> Result<(), NnError> {
        assert_eq!(grads.len(), net.params().len(), "one gradient per parameter");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2 } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let mut offset = 0;
        for (id, g) in grads.iter().enumerate() {
            let p = &net.params()[id].value;
            let n = p.numel();
            let mut next = p.to_vec();
            let m = &mut self.m[offset..offset + n];
            let v = &mut self.v[offset..offset + n];
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                next[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
            net.set_param(id, Tensor::new(p.shape().clone(), next)?)?;
            offset += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr·g/(|g| + eps).
        let mut net = Network::builder(2)
            .dense_fixed(Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap())
            .build()
            .unwrap();
        let mut opt = Adam::new(AdamConfig::default(), 2);
        let g = Tensor::matrix(2, 1, vec![3.0, -0.5]).unwrap();
        opt.step(&mut net, &[g]).unwrap();
        let w = net.params()[0].value.data().to_vec();
        assert!((w[0] - (1.0 - 2e-4)).abs() < 1e-10);
        assert!((w[1] - (-1.0 + 2e-4)).abs() < 1e-10);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut net = Network::builder(1)
            .dense_fixed(Tensor::matrix(1, 1, vec![5.0]).unwrap())
            .build()
            .unwrap();
        let cfg = AdamConfig {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
        };
        let mut opt = Adam::new(cfg, 1);
        for _ in 0..2000 {
            let tape = Tape::new();
            let p = net.bind(&tape);
            let loss = tape.sq_l2_norm(&tape.add_scalar(&p[0], -2.0));
            let g = tape.backward(&loss).unwrap();
            opt.step(&mut net, &[g.wrt_or_zero(&p[0])]).unwrap();
        }
        assert!((net.params()[0].value.item() - 2.0).abs() < 1e-3);
    }
}
