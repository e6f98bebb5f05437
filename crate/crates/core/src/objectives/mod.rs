//! Losses and regularizers for both players.

mod historical;
mod semisup;

use crate::tensor::{Tape, Tensor, TensorError};

pub use historical::{HistoricalAverage, DEFAULT_HA_LAMBDA};
pub use semisup::{
    log_d_terms, logit_shift_deviation, semisup_losses, semisup_losses_smoothed, SemiSupBatch, SemiSupLosses, Source,
};

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid smoothing targets: {0}")]
    Smoothing(String),
    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),
    #[error("{op}: feature widths differ ({real} vs {fake})")]
    Width { op: &'static str, real: usize, fake: usize },
    #[error("densities must not both be zero")]
    ZeroDensity,
    #[error("historical average holds {expected} parameters, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid semi-supervised batch: {0}")]
    Batch(String),
}

pub type Result<T, E = ObjectiveError> = std::result::Result<T, E>;

/// Lower clamp for probabilities fed to a log.
pub const PROB_EPS: f64 = 1e-7;

pub const DEFAULT_ALPHA: f64 = 0.9;

/// Discriminator targets: `alpha` for real data, `beta` for generated data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    alpha: f64,
    beta: f64,
}

impl SmoothingConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(ObjectiveError::Smoothing(format!("alpha {alpha} outside (0, 1]")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(ObjectiveError::Smoothing(format!("beta {beta} outside [0, 1)")));
        }
        if beta >= alpha {
            return Err(ObjectiveError::Smoothing(format!(
                "beta {beta} must be below alpha {alpha}"
            )));
        }
        Ok(SmoothingConfig { alpha, beta })
    }

    /// Only the positive target is smoothed.
    pub fn one_sided(alpha: f64) -> Result<Self> {
        Self::new(alpha, 0.0)
    }

    /// Hard targets 1 and 0.
    pub fn none() -> Self {
        SmoothingConfig { alpha: 1.0, beta: 0.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_one_sided(&self) -> bool {
        self.beta == 0.0
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            alpha: DEFAULT_ALPHA,
            beta: 0.0,
        }
    }
}

fn clamp_probs(tape: &Tape, p: &Tensor, what: &str) -> Tensor {
    let clamped = p
        .data()
        .iter()
        .filter(|&&v| !(PROB_EPS..=1.0 - PROB_EPS).contains(&v))
        .count();
    if clamped > 0 {
        log::warn!("{what}: clamped {clamped} probabilities into [{PROB_EPS}, 1-{PROB_EPS}]");
    }
    tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
}

/// Mean cross-entropy of probabilities `p` against a constant target `t`.
fn bce_mean(tape: &Tape, p: &Tensor, target: f64) -> Result<Tensor> {
    let log_p = tape.log(p)?;
    let log_q = tape.log(&tape.rsub_scalar(1.0, p))?;
    let per = tape.add(
        &tape.mul_scalar(&log_p, -target),
        &tape.mul_scalar(&log_q, -(1.0 - target)),
    )?;
    Ok(tape.reduce_mean(&per))
}

/// Discriminator loss on probabilities: mean cross-entropy with target α on
/// real data plus mean cross-entropy with target β on generated data.
pub fn d_loss_gan(tape: &Tape, d_real: &Tensor, d_fake: &Tensor, s: SmoothingConfig) -> Result<Tensor> {
    if d_real.numel() == 0 || d_fake.numel() == 0 {
        return Err(ObjectiveError::EmptyBatch("d_loss_gan"));
    }
    let real = bce_mean(tape, &clamp_probs(tape, d_real, "d_loss_gan"), s.alpha)?;
    let fake = bce_mean(tape, &clamp_probs(tape, d_fake, "d_loss_gan"), s.beta)?;
    Ok(tape.add(&real, &fake)?)
}

/// Mean cross-entropy of `sigmoid(logits)` against `target`, computed as
/// `softplus(l) − t·l`.
pub fn bce_with_logits(tape: &Tape, logits: &Tensor, target: f64) -> Result<Tensor> {
    let per = tape.sub(&tape.softplus(logits), &tape.mul_scalar(logits, target))?;
    Ok(tape.reduce_mean(&per))
}

/// [`d_loss_gan`] evaluated on logits, without clamping.
pub fn d_loss_gan_logits(
    tape: &Tape,
    real_logits: &Tensor,
    fake_logits: &Tensor,
    s: SmoothingConfig,
) -> Result<Tensor> {
    if real_logits.numel() == 0 || fake_logits.numel() == 0 {
        return Err(ObjectiveError::EmptyBatch("d_loss_gan_logits"));
    }
    let real = bce_with_logits(tape, real_logits, s.alpha)?;
    let fake = bce_with_logits(tape, fake_logits, s.beta)?;
    Ok(tape.add(&real, &fake)?)
}

/// `(α·p_data + β·p_model) / (p_data + p_model)`.
pub fn optimal_discriminator(p_data: f64, p_model: f64, s: SmoothingConfig) -> Result<f64> {
    let total = p_data + p_model;
    if total <= 0.0 {
        return Err(ObjectiveError::ZeroDensity);
    }
    Ok((s.alpha * p_data + s.beta * p_model) / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeneratorLoss {
    /// `−log D(G(z))`.
    #[default]
    NonSaturating,
    /// `log(1 − D(G(z)))`, the direct minimax form.
    Minimax,
}

/// Generator loss on discriminator probabilities for generated samples.
pub fn g_loss(tape: &Tape, d_fake: &Tensor, form: GeneratorLoss) -> Result<Tensor> {
    if d_fake.numel() == 0 {
        return Err(ObjectiveError::EmptyBatch("g_loss"));
    }
    let p = clamp_probs(tape, d_fake, "g_loss");
    Ok(match form {
        GeneratorLoss::NonSaturating => tape.neg(&tape.reduce_mean(&tape.log(&p)?)),
        GeneratorLoss::Minimax => tape.reduce_mean(&tape.log(&tape.rsub_scalar(1.0, &p))?),
    })
}

/// `‖mean(f_real) − mean(f_fake)‖²`.
///
/// The real-side mean is treated as a constant: gradients reach only the
/// generated branch.
pub fn feature_matching_loss(tape: &Tape, f_real: &Tensor, f_fake: &Tensor) -> Result<Tensor> {
    if f_real.rows() == 0 || f_fake.rows() == 0 || f_real.numel() == 0 || f_fake.numel() == 0 {
        return Err(ObjectiveError::EmptyBatch("feature_matching_loss"));
    }
    if f_real.cols() != f_fake.cols() {
        return Err(ObjectiveError::Width {
            op: "feature_matching_loss",
            real: f_real.cols(),
            fake: f_fake.cols(),
        });
    }
    let real_mean = tape.mean_rows(&f_real.detach());
    let fake_mean = tape.mean_rows(f_fake);
    let diff = tape.sub(&fake_mean, &real_mean)?;
    Ok(tape.sq_l2_norm(&diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_bce(p: f64, t: f64) -> f64 {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    }

    #[test]
    fn smoothing_validation() {
        assert!(SmoothingConfig::new(0.9, 0.1).is_ok());
        assert!(SmoothingConfig::new(0.5, 0.5).is_err());
        assert!(SmoothingConfig::new(0.0, 0.0).is_err());
        assert!(SmoothingConfig::new(1.1, 0.0).is_err());
        assert!(SmoothingConfig::new(0.9, 1.0).is_err());
        assert!(SmoothingConfig::default().is_one_sided());
        assert_eq!(SmoothingConfig::default().alpha(), 0.9);
    }

    #[test]
    fn symmetric_half_case() {
        let tape = Tape::new();
        let half = Tensor::vector(vec![0.5; 4]);
        let l = d_loss_gan(&tape, &half, &half, SmoothingConfig::none()).unwrap();
        assert!((l.item() - 2.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn loss_minimized_at_targets() {
        let s = SmoothingConfig::new(0.9, 0.1).unwrap();
        let eval = |r: f64, f: f64| {
            let tape = Tape::new();
            d_loss_gan(&tape, &Tensor::vector(vec![r]), &Tensor::vector(vec![f]), s)
                .unwrap()
                .item()
        };
        let best = eval(0.9, 0.1);
        for (r, f) in [(0.89, 0.1), (0.91, 0.1), (0.9, 0.09), (0.9, 0.11), (0.99, 0.01)] {
            assert!(eval(r, f) > best);
        }
    }

    #[test]
    fn d_loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = SmoothingConfig::one_sided(0.9).unwrap();
        let real: Vec<f64> = (0..7).map(|_| rng.random_range(0.01..0.99)).collect();
        let fake: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..0.99)).collect();
        let want = real.iter().map(|&p| scalar_bce(p, 0.9)).sum::<f64>() / 7.0
            + fake.iter().map(|&p| scalar_bce(p, 0.0)).sum::<f64>() / 5.0;
        let tape = Tape::new();
        let got = d_loss_gan(&tape, &Tensor::vector(real), &Tensor::vector(fake), s).unwrap();
        assert!((got.item() - want).abs() < 1e-12);
    }

    #[test]
    fn logits_form_agrees_with_probability_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = SmoothingConfig::one_sided(0.9).unwrap();
        let lr: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lf: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let tape = Tape::new();
        let (lr, lf) = (Tensor::vector(lr), Tensor::vector(lf));
        let a = d_loss_gan_logits(&tape, &lr, &lf, s).unwrap().item();
        let b = d_loss_gan(&tape, &tape.sigmoid(&lr), &tape.sigmoid(&lf), s)
            .unwrap()
            .item();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn optimal_discriminator_values() {
        let none = SmoothingConfig::none();
        assert_eq!(optimal_discriminator(2.0, 2.0, none).unwrap(), 0.5);
        let one = SmoothingConfig::one_sided(0.9).unwrap();
        assert!((optimal_discriminator(1.0, 1.0, one).unwrap() - 0.45).abs() < 1e-15);
        let two = SmoothingConfig::new(0.9, 0.1).unwrap();
        assert!((optimal_discriminator(0.0, 3.0, two).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(
            optimal_discriminator(0.0, 0.0, none),
            Err(ObjectiveError::ZeroDensity)
        ));
    }

    #[test]
    fn generator_loss_values() {
        let tape = Tape::new();
        let near_one = Tensor::vector(vec![1.0 - 1e-7; 3]);
        assert!(g_loss(&tape, &near_one, GeneratorLoss::NonSaturating).unwrap().item() < 1e-6);
        let half = Tensor::vector(vec![0.5; 3]);
        let l = g_loss(&tape, &half, GeneratorLoss::NonSaturating).unwrap().item();
        assert!((l - 2f64.ln()).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d: Vec<f64> = (0..9).map(|_| rng.random_range(0.01..0.99)).collect();
        let want = d.iter().map(|p| -p.ln()).sum::<f64>() / 9.0;
        let got = g_loss(&tape, &Tensor::vector(d.clone()), GeneratorLoss::NonSaturating).unwrap();
        assert!((got.item() - want).abs() < 1e-12);
        let want = d.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / 9.0;
        let got = g_loss(&tape, &Tensor::vector(d), GeneratorLoss::Minimax).unwrap();
        assert!((got.item() - want).abs() < 1e-12);
    }

    #[test]
    fn feature_matching_values() {
        let tape = Tape::new();
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(feature_matching_loss(&tape, &a, &a).unwrap().item(), 0.0);
        let b = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let c = Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap();
        assert_eq!(feature_matching_loss(&tape, &b, &c).unwrap().item(), 5.0);
        assert_eq!(feature_matching_loss(&tape, &c, &b).unwrap().item(), 5.0);
        assert!(matches!(
            feature_matching_loss(&tape, &b, &Tensor::zeros([0, 2])),
            Err(ObjectiveError::EmptyBatch(_))
        ));
        assert!(matches!(
            feature_matching_loss(&tape, &b, &Tensor::zeros([1, 3])),
            Err(ObjectiveError::Width { .. })
        ));
    }

    #[test]
    fn feature_matching_gradient_only_reaches_fake_side() {
        let tape = Tape::new();
        let real = tape.leaf(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.5, 2.0]).unwrap());
        let fake = tape.leaf(&Tensor::matrix(3, 2, vec![0.0, 1.0, 1.0, 1.0, 2.0, 0.0]).unwrap());
        let l = feature_matching_loss(&tape, &real, &fake).unwrap();
        let g = tape.backward(&l).unwrap();
        assert!(g.wrt(&real).is_none());
        assert!(g.wrt(&fake).is_some());
    }

    #[test]
    fn feature_matching_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let real = Tensor::matrix(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let fake = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let err = grad_check(
            |t, x| {
                feature_matching_loss(t, &real, x).map_err(|e| match e {
                    ObjectiveError::Tensor(t) => t,
                    other => panic!("{other}"),
                })
            },
            &fake,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
