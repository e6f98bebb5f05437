//! Desk-scale generative adversarial training.
//!
//! The crate is layered bottom-up: [`tensor`] provides reverse-mode
//! differentiation, [`nn`] the layers (minibatch discrimination, virtual batch
//! normalization, weight normalization, Gaussian noise), [`objectives`] the
//! losses and regularizers, [`games`] the two-player toy dynamics, [`metrics`]
//! the classifier-based sample score and mode coverage, [`data`] datasets and
//! seeded sampling, and [`trainer`] the training loops, checkpoints and
//! ablation harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod tensor;

pub use tensor::{Shape, Tape, Tensor, TensorError};
pub mod data;
pub mod games;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod seed;
pub mod trainer;
