//! Network construction from an [`ExperimentConfig`].

use super::config::{ExperimentConfig, NormKind};
use crate::nn::{Activation, Network, NetworkBuilder, Result};
use crate::seed::stream;

/// Output activation of the generator: identity for mixtures, `[0, 1]` for
/// images.
pub fn generator_output(cfg: &ExperimentConfig) -> Activation {
    if cfg.dataset.is_digits() {
        Activation::UnitTanh
    } else {
        Activation::Identity
    }
}

/// `z → [dense → norm → act]* → dense → output activation`.
pub fn build_generator(cfg: &ExperimentConfig, data_dim: usize) -> Result<Network> {
    let mut rng = stream(cfg.seed, "init-g", 0);
    let mut b = NetworkBuilder::new(cfg.noise_dim);
    for &h in &cfg.g_hidden {
        b = b.dense(h, false, &mut rng);
        b = match cfg.g_norm {
            NormKind::None => b,
            NormKind::Batch => b.batch_norm(),
            NormKind::Virtual => b.virtual_batch_norm(),
        };
        b = b.activation(cfg.g_activation);
    }
    b.dense(data_dim, false, &mut rng)
        .activation(generator_output(cfg))
        .build()
}

/// `x → [noise] → [dense → norm → act ⟨tap⟩ → noise → dropout]* → [minibatch] → dense`.
///
/// The feature tap sits on the last hidden activation. `outputs` is 1 for a
/// plain real/fake discriminator or K for a K+1-class one.
pub fn build_discriminator(cfg: &ExperimentConfig, data_dim: usize, outputs: usize) -> Result<Network> {
    let mut rng = stream(cfg.seed, "init-d", 0);
    let mut b = NetworkBuilder::new(data_dim).noise(cfg.d_input_noise);
    for &h in &cfg.d_hidden {
        b = b.dense(h, cfg.weight_norm, &mut rng);
        if cfg.d_norm == NormKind::Batch {
            b = b.batch_norm();
        }
        b = b
            .activation(cfg.d_activation)
            .tap()
            .noise(cfg.d_noise)
            .dropout(cfg.dropout);
    }
    if cfg.minibatch {
        let mb = cfg.minibatch_shape;
        b = b.minibatch(mb.kernels, mb.kernel_dim, mb.include_self, &mut rng);
    }
    b.dense(outputs, cfg.weight_norm, &mut rng).build()
}

/// Plain K-class network used for scoring samples and as a supervised baseline.
pub fn build_classifier(input: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Network> {
    let mut rng = stream(seed, "init-c", 0);
    let mut b = NetworkBuilder::new(input);
    for &h in hidden {
        b = b.dense(h, false, &mut rng).activation(Activation::Relu);
    }
    b.dense(classes, false, &mut rng).build()
}
