use serde::{Deserialize, Serialize};

use super::{ObjectiveError, Result};
use crate::tensor::{Tape, Tensor};

pub const DEFAULT_HA_LAMBDA: f64 = 1e-3;

/// Running mean of a player's flattened parameters and the penalty
/// `λ‖θ − θ̄‖²` that pulls toward it.
///
/// The penalty at step `t` uses the mean of `θ[1..t-1]`, i.e. the mean before
/// the current parameters are folded in, so the first step costs nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalAverage {
    mean: Vec<f64>,
    count: u64,
    lambda: f64,
}

impl HistoricalAverage {
    pub fn new(lambda: f64) -> Self {
        HistoricalAverage {
            mean: Vec::new(),
            count: 0,
            lambda,
        }
    }

    pub fn from_parts(mean: Vec<f64>, count: u64, lambda: f64) -> Self {
        HistoricalAverage { mean, count, lambda }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn check(&self, len: usize) -> Result<()> {
        if self.count > 0 && self.mean.len() != len {
            return Err(ObjectiveError::Length {
                expected: self.mean.len(),
                got: len,
            });
        }
        Ok(())
    }

    /// Penalty for `theta` against the current mean (0 before any update).
    pub fn penalty(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta.len())?;
        if self.count == 0 {
            return Ok(0.0);
        }
        let sq: f64 = theta.iter().zip(&self.mean).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.lambda * sq)
    }

    /// `∂ penalty / ∂θ = 2λ(θ − θ̄)`.
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta.len())?;
        if self.count == 0 {
            return Ok(vec![0.0; theta.len()]);
        }
        Ok(theta
            .iter()
            .zip(&self.mean)
            .map(|(a, b)| 2.0 * self.lambda * (a - b))
            .collect())
    }

    /// Folds `theta` into the mean: `θ̄ ← θ̄·t/(t+1) + θ/(t+1)`.
    pub fn update(&mut self, theta: &[f64]) -> Result<()> {
        self.check(theta.len())?;
        if self.count == 0 {
            self.mean = theta.to_vec();
        } else {
            // θ̄·t/(t+1) + θ/(t+1), written so that a constant history stays exact.
            let next = (self.count + 1) as f64;
            for (m, v) in self.mean.iter_mut().zip(theta) {
                *m += (v - *m) / next;
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Penalty against the pre-update mean, then update. Returns the penalty.
    pub fn step(&mut self, theta: &[f64]) -> Result<f64> {
        let p = self.penalty(theta)?;
        self.update(theta)?;
        Ok(p)
    }

    /// The penalty as a differentiable function of parameter tensors whose
    /// concatenated data lines up with the running mean.
    pub fn penalty_term(&self, tape: &Tape, params: &[Tensor]) -> Result<Tensor> {
        let len: usize = params.iter().map(Tensor::numel).sum();
        self.check(len)?;
        if self.count == 0 {
            return Ok(Tensor::scalar(0.0));
        }
        let mut offset = 0;
        let mut total: Option<Tensor> = None;
        for p in params {
            let n = p.numel();
            let anchor = Tensor::new(p.shape().clone(), self.mean[offset..offset + n].to_vec())?;
            offset += n;
            let sq = tape.sq_l2_norm(&tape.sub(p, &anchor)?);
            total = Some(match total {
                Some(t) => tape.add(&t, &sq)?,
                None => sq,
            });
        }
        let total = total.unwrap_or_else(|| Tensor::scalar(0.0));
        Ok(tape.mul_scalar(&total, self.lambda))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check_many;
    use proptest::prelude::*;

    #[test]
    fn first_step_is_free() {
        let mut ha = HistoricalAverage::new(1.0);
        assert_eq!(ha.step(&[5.0, -3.0]).unwrap(), 0.0);
    }

    #[test]
    fn constant_history_costs_nothing() {
        let mut ha = HistoricalAverage::new(0.7);
        for _ in 0..10 {
            assert_eq!(ha.step(&[1.5, 2.5]).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_history_example() {
        let mut ha = HistoricalAverage::new(1.0);
        ha.step(&[0.0]).unwrap();
        assert_eq!(ha.step(&[2.0]).unwrap(), 4.0);
        assert_eq!(ha.mean(), &[1.0]);
    }

    #[test]
    fn online_mean_of_three() {
        let mut ha = HistoricalAverage::new(1.0);
        for v in [0.0, 1.0, 2.0] {
            ha.step(&[v]).unwrap();
        }
        assert_eq!(ha.mean(), &[1.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut ha = HistoricalAverage::new(1.0);
        ha.step(&[0.0, 1.0]).unwrap();
        assert!(matches!(
            ha.step(&[0.0]),
            Err(ObjectiveError::Length { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn penalty_term_matches_scalar_penalty_and_gradient() {
        let mut ha = HistoricalAverage::new(0.3);
        ha.update(&[1.0, -1.0, 0.5, 2.0, 0.0]).unwrap();
        ha.update(&[0.0, 1.0, 0.5, -2.0, 1.0]).unwrap();
        let a = Tensor::matrix(1, 2, vec![0.2, 0.4]).unwrap();
        let b = Tensor::matrix(3, 1, vec![1.0, -0.5, 0.3]).unwrap();
        let flat = [0.2, 0.4, 1.0, -0.5, 0.3];
        let tape = Tape::new();
        let pa = tape.leaf(&a);
        let pb = tape.leaf(&b);
        let term = ha.penalty_term(&tape, &[pa.clone(), pb.clone()]).unwrap();
        assert!((term.item() - ha.penalty(&flat).unwrap()).abs() < 1e-14);
        let g = tape.backward(&term).unwrap();
        let mut got = g.wrt(&pa).unwrap().to_vec();
        got.extend(g.wrt(&pb).unwrap().to_vec());
        for (x, y) in got.iter().zip(ha.gradient(&flat).unwrap()) {
            assert!((x - y).abs() < 1e-14);
        }
        let err = grad_check_many(
            |t, xs| Ok(ha.penalty_term(t, xs).expect("lengths match")),
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn online_mean_equals_batch_mean(history in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..200)) {
            let mut ha = HistoricalAverage::new(1.0);
            for h in &history {
                ha.update(h).unwrap();
            }
            for j in 0..3 {
                let batch = history.iter().map(|h| h[j]).sum::<f64>() / history.len() as f64;
                prop_assert!((ha.mean()[j] - batch).abs() < 1e-10);
            }
        }
    }
}
