//! The K+1-class semi-supervised objective with the generated-class logit
//! pinned to zero.
//!
//! With `l_{K+1} = 0` and `Z(x) = Σ_k exp l_k(x)`, the probability of "real"
//! is `D(x) = Z/(Z+1)`, so `log D = lse(l) − softplus(lse(l))` and
//! `log(1 − D) = −softplus(lse(l))`.

use super::{ObjectiveError, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Generated,
}

/// Classifier logits for a mixed batch with optional labels (`0..K`).
#[derive(Debug, Clone)]
pub struct SemiSupBatch {
    pub logits: Tensor,
    pub labels: Vec<Option<usize>>,
    pub source: Vec<Source>,
}

impl SemiSupBatch {
    pub fn classes(&self) -> usize {
        self.logits.cols()
    }

    fn validate(&self) -> Result<()> {
        let n = self.logits.rows();
        if self.logits.shape().rank() != 2 || n == 0 {
            return Err(ObjectiveError::Batch(format!(
                "logits must be a non-empty n×K matrix, got {}",
                self.logits.shape()
            )));
        }
        if self.labels.len() != n || self.source.len() != n {
            return Err(ObjectiveError::Batch(format!(
                "{n} logit rows but {} labels and {} source flags",
                self.labels.len(),
                self.source.len()
            )));
        }
        let k = self.classes();
        for (i, (label, src)) in self.labels.iter().zip(&self.source).enumerate() {
            if let Some(y) = label {
                if *y >= k {
                    return Err(ObjectiveError::Batch(format!("label {y} at row {i} outside 0..{k}")));
                }
                if *src != Source::Real {
                    return Err(ObjectiveError::Batch(format!(
                        "row {i} is labeled but marked generated"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SemiSupLosses {
    pub supervised: Tensor,
    pub unsupervised: Tensor,
    pub labeled: usize,
    pub real: usize,
    pub generated: usize,
}

impl SemiSupLosses {
    pub fn total(&self, tape: &Tape) -> Result<Tensor> {
        Ok(tape.add(&self.supervised, &self.unsupervised)?)
    }
}

/// `(log D(x), log(1 − D(x)))` per row, each `n×1`.
pub fn log_d_terms(tape: &Tape, logits: &Tensor) -> (Tensor, Tensor) {
    let lse = tape.logsumexp_rows(logits);
    let sp = tape.softplus(&lse);
    let log_d = tape.sub(&lse, &sp).expect("same shape");
    (log_d, tape.neg(&sp))
}

/// `L_supervised` and `L_unsupervised` with hard targets.
pub fn semisup_losses(tape: &Tape, batch: &SemiSupBatch) -> Result<SemiSupLosses> {
    if batch.classes() < 2 {
        return Err(ObjectiveError::Batch(format!(
            "need at least 2 classes, got {}",
            batch.classes()
        )));
    }
    semisup_losses_smoothed(tape, batch, 1.0)
}

/// As [`semisup_losses`], with the real-data target for `D` smoothed to
/// `alpha` (generated target stays 0). Accepts the degenerate `K = 1` case,
/// where `D = sigmoid(l)` and the unsupervised term is the plain GAN loss.
pub fn semisup_losses_smoothed(tape: &Tape, batch: &SemiSupBatch, alpha: f64) -> Result<SemiSupLosses> {
    batch.validate()?;
    let n = batch.logits.rows();
    let k = batch.classes();

    let labeled = batch.labels.iter().filter(|l| l.is_some()).count();
    let real = batch.source.iter().filter(|s| **s == Source::Real).count();
    let generated = n - real;

    let supervised = if labeled == 0 {
        log::warn!("semi-supervised batch has no labeled examples; supervised loss is 0");
        Tensor::scalar(0.0)
    } else {
        let mut pick = vec![0.0; n * k];
        for (i, y) in batch.labels.iter().enumerate() {
            if let Some(y) = y {
                pick[i * k + y] = -1.0 / labeled as f64;
            }
        }
        let pick = Tensor::matrix(n, k, pick)?;
        let logp = tape.log_softmax_rows(&batch.logits);
        tape.reduce_sum(&tape.mul(&logp, &pick)?)
    };

    let (log_d, log_not_d) = log_d_terms(tape, &batch.logits);
    let weights = |want: Source, count: usize, scale: f64| -> Result<Tensor> {
        let w = batch
            .source
            .iter()
            .map(|s| if *s == want { -scale / count as f64 } else { 0.0 })
            .collect();
        Ok(Tensor::matrix(n, 1, w)?)
    };

    let mut terms: Vec<Tensor> = Vec::new();
    if real > 0 {
        terms.push(tape.reduce_sum(&tape.mul(&log_d, &weights(Source::Real, real, alpha)?)?));
        if alpha < 1.0 {
            let w = weights(Source::Real, real, 1.0 - alpha)?;
            terms.push(tape.reduce_sum(&tape.mul(&log_not_d, &w)?));
        }
    }
    if generated > 0 {
        let w = weights(Source::Generated, generated, 1.0)?;
        terms.push(tape.reduce_sum(&tape.mul(&log_not_d, &w)?));
    } else {
        log::warn!("semi-supervised batch has no generated examples; that term is omitted");
    }
    let mut unsupervised = Tensor::scalar(0.0);
    for t in terms {
        unsupervised = tape.add(&unsupervised, &t)?;
    }

    Ok(SemiSupLosses {
        supervised,
        unsupervised,
        labeled,
        real,
        generated,
    })
}

/// Largest change in the explicit (K+1)-way softmax when every logit of row
/// `i`, including the pinned zero, is shifted by `shift[i]`.
pub fn logit_shift_deviation(logits: &Tensor, shift: &[f64]) -> f64 {
    use crate::tensor::softmax;
    let (n, k) = logits.shape().as_matrix();
    assert_eq!(shift.len(), n, "one shift per row");
    let mut worst: f64 = 0.0;
    for (i, s) in shift.iter().enumerate() {
        let mut base: Vec<f64> = logits.row(i).to_vec();
        base.push(0.0);
        let moved: Vec<f64> = base.iter().map(|v| v - s).collect();
        let (p, q) = (softmax(&base), softmax(&moved));
        for j in 0..=k {
            worst = worst.max((p[j] - q[j]).abs());
        }
    }
    worst
}
