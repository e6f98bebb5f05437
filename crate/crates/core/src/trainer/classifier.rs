//! Small classifiers that turn samples into `p(y|x)` rows for scoring.
//!
//! Mixture classifiers get one extra "background" class trained on uniform
//! points over the data's bounding box, so samples that land between modes
//! produce spread-out rows instead of confident wrong ones.

use rand::Rng as _;

use super::config::{AdamConfig, ExperimentConfig};
use super::models::build_classifier;
use super::optim::Adam;
use super::{Result, TrainerError};
use crate::data::{LabeledDataset, MixtureSpec};
use crate::nn::{ForwardCtx, Network};
use crate::seed::stream;
use crate::tensor::{Tape, Tensor};

pub const MIXTURE_HIDDEN: [usize; 2] = [64, 64];
pub const DIGITS_HIDDEN: [usize; 1] = [256];
pub const CLASSIFIER_STEPS: u64 = 3000;
pub const CLASSIFIER_BATCH: usize = 128;

/// Mean cross-entropy of `logits` against hard `labels`.
pub fn cross_entropy(tape: &Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = (logits.rows(), logits.cols());
    let mut pick = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        pick[i * k + y] = -1.0 / n as f64;
    }
    let logp = tape.log_softmax_rows(logits);
    Ok(tape.reduce_sum(&tape.mul(&logp, &Tensor::matrix(n, k, pick)?)?))
}

/// Row-wise argmax.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScoreClassifier {
    pub net: Network,
    pub id: String,
}

impl ScoreClassifier {
    /// Trains on `sample(step) -> (x, y)` batches with plain Adam.
    pub fn train(
        mut net: Network,
        id: String,
        steps: u64,
        lr: f64,
        mut sample: impl FnMut(u64) -> (Tensor, Vec<usize>),
    ) -> Result<Self> {
        let mut opt = Adam::new(
            AdamConfig {
                lr,
                beta1: 0.9,
                beta2: 0.999,
            },
            net.param_count(),
        );
        for step in 0..steps {
            let (x, y) = sample(step);
            let tape = Tape::new();
            let p = net.bind(&tape);
            let out = net.forward(&tape, &p, &x, &mut ForwardCtx::eval())?;
            let loss = cross_entropy(&tape, &out.output, &y)?;
            if !loss.item().is_finite() {
                return Err(TrainerError::Diverged { step });
            }
            let g = tape.backward(&loss)?;
            let grads: Vec<Tensor> = p.iter().map(|t| g.wrt_or_zero(t)).collect();
            opt.step(&mut net, &grads)?;
        }
        Ok(ScoreClassifier { net, id })
    }

    /// Component classifier with a background class for a 2-D mixture.
    pub fn for_mixture(m: &MixtureSpec, seed: u64) -> Result<Self> {
        let k = m.components();
        let dim = m.dim();
        let (lo, hi) = bounding_box(m);
        let net = build_classifier(dim, &MIXTURE_HIDDEN, k + 1, seed)?;
        let id = format!("mixture-mlp{}-k{}+bg-s{seed}", join(&MIXTURE_HIDDEN), k);
        let half = CLASSIFIER_BATCH / 2;
        Self::train(net, id, CLASSIFIER_STEPS, 3e-3, |step| {
            let mut rng = stream(seed, "classifier", step);
            let (x, mut y) = m.sample(half, &mut rng);
            let mut data = x.to_vec();
            for _ in 0..half {
                for d in 0..dim {
                    data.push(rng.random_range(lo[d]..hi[d]));
                }
                y.push(k);
            }
            (Tensor::matrix(2 * half, dim, data).expect("batch"), y)
        })
    }

    /// Digit classifier trained on every training label.
    pub fn for_digits(train: &LabeledDataset, seed: u64) -> Result<Self> {
        let net = build_classifier(train.dim(), &DIGITS_HIDDEN, train.classes, seed)?;
        let id = format!("digits-mlp{}-n{}-s{seed}", join(&DIGITS_HIDDEN), train.len());
        let n = train.len();
        Self::train(net, id, CLASSIFIER_STEPS, 1e-3, |step| {
            let mut rng = stream(seed, "classifier", step);
            let idx: Vec<usize> = (0..CLASSIFIER_BATCH).map(|_| rng.random_range(0..n)).collect();
            let y = idx.iter().map(|&i| train.labels[i]).collect();
            (train.features.select_rows(&idx), y)
        })
    }

    /// The classifier matching a run's dataset.
    pub fn for_config(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.dataset.mixture() {
            Some(m) => Self::for_mixture(&m, cfg.seed),
            None => {
                let (train, _) = super::gan::load_digits(&cfg.dataset)?;
                Self::for_digits(&train, cfg.seed)
            }
        }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self
            .net
            .forward(&tape, &self.net.constants(), x, &mut ForwardCtx::eval())?
            .output)
    }

    /// `p(y|x)` rows.
    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(tape.softmax_rows(&self.logits(x)?))
    }

    pub fn classes(&self) -> usize {
        self.net.output_width()
    }

    pub fn error_rate(&self, ds: &LabeledDataset) -> Result<f64> {
        let pred = argmax_rows(&self.logits(&ds.features)?);
        let wrong = pred.iter().zip(&ds.labels).filter(|(p, y)| p != y).count();
        Ok(wrong as f64 / ds.len() as f64)
    }
}

/// Centers' bounding box padded by 0.5 + 4σ on every side.
fn bounding_box(m: &MixtureSpec) -> (Vec<f64>, Vec<f64>) {
    let pad = 0.5 + 4.0 * m.sigma;
    let dim = m.dim();
    let lo = (0..dim)
        .map(|d| m.centers.iter().map(|c| c[d]).fold(f64::INFINITY, f64::min) - pad)
        .collect();
    let hi = (0..dim)
        .map(|d| m.centers.iter().map(|c| c[d]).fold(f64::NEG_INFINITY, f64::max) + pad)
        .collect();
    (lo, hi)
}

fn join(widths: &[usize]) -> String {
    widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_classifier_separates_modes_and_background() {
        let m = MixtureSpec::ring(8, 2.0, 0.05).unwrap();
        let c = ScoreClassifier::for_mixture(&m, 0).unwrap();
        let (x, y) = m.sample(400, &mut stream(9, "held-out", 0));
        let pred = argmax_rows(&c.probs(&x).unwrap());
        let acc = pred.iter().zip(&y).filter(|(p, y)| p == y).count() as f64 / 400.0;
        assert!(acc > 0.97, "accuracy {acc}");
        let far = Tensor::matrix(2, 2, vec![0.0, 0.0, 2.6, 2.6]).unwrap();
        assert_eq!(argmax_rows(&c.probs(&far).unwrap()), vec![8, 8]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let tape = Tape::new();
        let l = Tensor::zeros([3, 4]);
        let ce = cross_entropy(&tape, &l, &[0, 1, 3]).unwrap();
        assert!((ce.item() - 4f64.ln()).abs() < 1e-12);
    }
}
