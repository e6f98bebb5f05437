//! Layers and feed-forward networks.
//!
//! A [`Network`] owns an ordered list of [`Layer`]s and a flat parameter list.
//! Forward passes take the parameters as tensors bound to a tape (or as
//! constants), so the same network serves both the player being updated and
//! the frozen opponent.

mod minibatch;
mod norm;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::seed::Rng;
use crate::tensor::{Tape, Tensor, TensorError};

pub use minibatch::{minibatch_features, minibatch_layer_forward, KernelShape};
pub use norm::{batch_norm_train, batch_stats, normalize_with, vbn_forward, vbn_reference, BatchStats};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Shape(String),
    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),
    #[error("reference batch of {0} examples is too small; at least 2 are required")]
    ReferenceTooSmall(usize),
    #[error("network contains virtual batch norm but no reference batch was supplied")]
    MissingReference,
    #[error("train-mode stochastic layer needs a random stream")]
    MissingRng,
    #[error("weight-normalized column {0} has zero norm")]
    ZeroColumn(usize),
    #[error("invalid network: {0}")]
    Invalid(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_WEIGHT_STD: f64 = 0.05;
pub const DEFAULT_KERNEL_STD: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Softplus,
    /// `(tanh(x) + 1) / 2`, mapping onto `[0, 1]`.
    UnitTanh,
}

impl Activation {
    pub fn apply(self, tape: &Tape, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
            Activation::UnitTanh => tape.mul_scalar(&tape.add_scalar(&tape.tanh(x), 1.0), 0.5),
        }
    }

    pub fn name(self) -> String {
        match self {
            Activation::Identity => "identity".into(),
            Activation::Relu => "relu".into(),
            Activation::LeakyRelu(s) => format!("leaky_relu({s})"),
            Activation::Tanh => "tanh".into(),
            Activation::Sigmoid => "sigmoid".into(),
            Activation::Softplus => "softplus".into(),
            Activation::UnitTanh => "unit_tanh".into(),
        }
    }
}

pub type ParamId = usize;

/// Fully connected layer `y = x·W + b`.
///
/// With weight normalization, `W[:, j] = g_j · V[:, j] / ‖V[:, j]‖₂`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weight: ParamId,
    pub scale: Option<ParamId>,
    pub bias: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub features: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VirtualBatchNorm {
    pub features: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct MinibatchDiscrimination {
    pub shape: KernelShape,
    pub kernel: ParamId,
    pub include_self: bool,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Activation(Activation),
    /// Adds `N(0, σ²)` in train mode; identity in eval mode.
    GaussianNoise {
        sigma: f64,
    },
    /// Inverted dropout in train mode.
    Dropout {
        p: f64,
    },
    BatchNorm(BatchNorm),
    VirtualBatchNorm(VirtualBatchNorm),
    Minibatch(MinibatchDiscrimination),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Activation(_) => "activation",
            Layer::GaussianNoise { .. } => "gaussian_noise",
            Layer::Dropout { .. } => "dropout",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::VirtualBatchNorm(_) => "virtual_batch_norm",
            Layer::Minibatch(_) => "minibatch_discrimination",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Per-pass options.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub rng: Option<&'a mut Rng>,
    /// Input-level reference batch for virtual batch normalization.
    pub reference: Option<&'a Tensor>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            rng: None,
            reference: None,
        }
    }

    pub fn train(rng: &'a mut Rng) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            rng: Some(rng),
            reference: None,
        }
    }

    pub fn with_reference(mut self, reference: &'a Tensor) -> Self {
        self.reference = Some(reference);
        self
    }
}

/// Batch statistics observed by a train-mode batch-norm layer.
#[derive(Debug, Clone)]
pub struct ObservedStats {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NetOutput {
    pub output: Tensor,
    /// Activations after the feature-tap layer, `f(x)`.
    pub features: Option<Tensor>,
    pub observed: Vec<ObservedStats>,
}

#[derive(Debug, Clone)]
pub struct Network {
    input: usize,
    output: usize,
    layers: Vec<Layer>,
    params: Vec<Param>,
    feature_tap: Option<usize>,
}

impl Network {
    pub fn builder(input: usize) -> NetworkBuilder {
        NetworkBuilder::new(input)
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn output_width(&self) -> usize {
        self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn feature_tap(&self) -> Option<usize> {
        self.feature_tap
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn has_vbn(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::VirtualBatchNorm(_)))
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    pub fn has_minibatch(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Minibatch(_)))
    }

    /// Replaces a parameter value; the shape must match.
    pub fn set_param(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(id)
            .ok_or_else(|| NnError::Invalid(format!("no parameter {id}")))?;
        if slot.value.shape() != value.shape() {
            return Err(NnError::Shape(format!(
                "parameter {} has shape {}, got {}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value.detach();
        Ok(())
    }

    /// Parameters as differentiable leaves of `tape`.
    pub fn bind(&self, tape: &Tape) -> Vec<Tensor> {
        self.params.iter().map(|p| tape.leaf(&p.value)).collect()
    }

    /// Parameters as constants (no gradient).
    pub fn constants(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// All parameters concatenated in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    /// Inverse of [`Network::flatten`].
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(NnError::Shape(format!(
                "expected {} parameter values, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.numel();
            p.value = Tensor::new(p.value.shape().clone(), flat[offset..offset + n].to_vec())?;
            offset += n;
        }
        Ok(())
    }

    /// Running statistics of all batch-norm layers, flattened in layer order.
    pub fn running_stats(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::BatchNorm(bn) = l {
                out.extend_from_slice(&bn.running_mean);
                out.extend_from_slice(&bn.running_var);
            }
        }
        out
    }

    pub fn load_running_stats(&mut self, flat: &[f64]) -> Result<()> {
        let need: usize = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::BatchNorm(bn) => 2 * bn.features,
                _ => 0,
            })
            .sum();
        if flat.len() != need {
            return Err(NnError::Shape(format!(
                "expected {need} running-stat values, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            if let Layer::BatchNorm(bn) = l {
                let d = bn.features;
                bn.running_mean.copy_from_slice(&flat[offset..offset + d]);
                bn.running_var.copy_from_slice(&flat[offset + d..offset + 2 * d]);
                offset += 2 * d;
            }
        }
        Ok(())
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn absorb_stats(&mut self, observed: &[ObservedStats]) {
        for obs in observed {
            if let Some(Layer::BatchNorm(bn)) = self.layers.get_mut(obs.layer) {
                let m = bn.momentum;
                for (r, v) in bn.running_mean.iter_mut().zip(&obs.mean) {
                    *r = (1.0 - m) * *r + m * v;
                }
                for (r, v) in bn.running_var.iter_mut().zip(&obs.var) {
                    *r = (1.0 - m) * *r + m * v;
                }
            }
        }
    }

    /// One forward pass returning the output and the tapped features.
    pub fn forward(&self, tape: &Tape, params: &[Tensor], x: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<NetOutput> {
        if params.len() != self.params.len() {
            return Err(NnError::Invalid(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        if x.shape().rank() != 2 || x.cols() != self.input {
            return Err(NnError::Shape(format!(
                "network expects input width {}, got shape {}",
                self.input,
                x.shape()
            )));
        }
        if x.rows() == 0 {
            return Err(NnError::EmptyBatch("network forward"));
        }
        let mut reference = if self.has_vbn() {
            let r = ctx.reference.ok_or(NnError::MissingReference)?;
            if r.cols() != self.input {
                return Err(NnError::Shape(format!(
                    "reference batch width {} does not match network input {}",
                    r.cols(),
                    self.input
                )));
            }
            Some(r.clone())
        } else {
            None
        };

        let mut h = x.clone();
        let mut features = None;
        let mut observed = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Dense(d) => {
                    let w = self.effective_weight(tape, params, d)?;
                    let apply = |inp: &Tensor| -> Result<Tensor> {
                        let y = tape.matmul(inp, &w)?;
                        match d.bias {
                            Some(b) => Ok(tape.add(&y, &params[b])?),
                            None => Ok(y),
                        }
                    };
                    if let Some(r) = reference.take() {
                        reference = Some(apply(&r)?);
                    }
                    apply(&h)?
                }
                Layer::Activation(a) => {
                    if let Some(r) = reference.take() {
                        reference = Some(a.apply(tape, &r));
                    }
                    a.apply(tape, &h)
                }
                Layer::GaussianNoise { sigma } => match ctx.mode {
                    Mode::Eval => h,
                    Mode::Train => {
                        let rng = ctx.rng.as_deref_mut().ok_or(NnError::MissingRng)?;
                        if let Some(r) = reference.take() {
                            reference = Some(add_noise(tape, &r, *sigma, rng)?);
                        }
                        add_noise(tape, &h, *sigma, rng)?
                    }
                },
                Layer::Dropout { p } => match ctx.mode {
                    Mode::Eval => h,
                    Mode::Train if *p <= 0.0 => h,
                    Mode::Train => {
                        let rng = ctx.rng.as_deref_mut().ok_or(NnError::MissingRng)?;
                        if let Some(r) = reference.take() {
                            reference = Some(dropout(tape, &r, *p, rng)?);
                        }
                        dropout(tape, &h, *p, rng)?
                    }
                },
                Layer::BatchNorm(bn) => {
                    let (g, b) = (&params[bn.gamma], &params[bn.beta]);
                    if let Some(r) = reference.take() {
                        reference = Some(batch_norm_train(tape, &r, g, b, bn.eps)?.0);
                    }
                    match ctx.mode {
                        Mode::Train => {
                            let (out, stats) = batch_norm_train(tape, &h, g, b, bn.eps)?;
                            observed.push(ObservedStats {
                                layer: idx,
                                mean: stats.mean.to_vec(),
                                var: stats.var.to_vec(),
                            });
                            out
                        }
                        Mode::Eval => {
                            let mean = Tensor::matrix(1, bn.features, bn.running_mean.clone())?;
                            let var = Tensor::matrix(1, bn.features, bn.running_var.clone())?;
                            normalize_with(tape, &h, &mean, &var, g, b, bn.eps)?
                        }
                    }
                }
                Layer::VirtualBatchNorm(v) => {
                    let (g, b) = (&params[v.gamma], &params[v.beta]);
                    let r = reference.take().ok_or(NnError::MissingReference)?;
                    let (r_out, stats) = vbn_reference(tape, &r, g, b, v.eps)?;
                    reference = Some(r_out);
                    vbn_forward(tape, &h, &stats, g, b, v.eps)?
                }
                Layer::Minibatch(mb) => {
                    let t = &params[mb.kernel];
                    let side = |inp: &Tensor| -> Result<Tensor> {
                        let o = minibatch_features(tape, inp, t, mb.shape, mb.include_self)?;
                        Ok(tape.concat_cols(inp, &o)?)
                    };
                    if let Some(r) = reference.take() {
                        reference = Some(side(&r)?);
                    }
                    side(&h)?
                }
            };
            if self.feature_tap == Some(idx) {
                features = Some(h.clone());
            }
        }
        Ok(NetOutput {
            output: h,
            features,
            observed,
        })
    }

    fn effective_weight(&self, tape: &Tape, params: &[Tensor], d: &Dense) -> Result<Tensor> {
        let v = &params[d.weight];
        let Some(g) = d.scale else {
            return Ok(v.clone());
        };
        let sq = tape.sum_rows(&tape.square(v));
        if let Some(j) = sq.data().iter().position(|&s| s == 0.0) {
            return Err(NnError::ZeroColumn(j));
        }
        let norms = tape.sqrt(&sq)?;
        let factor = tape.div(&params[g], &norms)?;
        Ok(tape.mul(v, &factor)?)
    }

    /// Effective weight matrix of the dense layer at `layer` (constants).
    pub fn dense_weight(&self, layer: usize) -> Result<Tensor> {
        let Some(Layer::Dense(d)) = self.layers.get(layer) else {
            return Err(NnError::Invalid(format!("layer {layer} is not dense")));
        };
        let tape = Tape::new();
        self.effective_weight(&tape, &self.constants(), d)
    }

    /// Layer manifest used by checkpoints: `(name, shape)` per parameter.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.dims().to_vec()))
            .collect()
    }
}

fn add_noise(tape: &Tape, h: &Tensor, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    let normal = Normal::new(0.0, sigma).map_err(|e| NnError::Invalid(e.to_string()))?;
    let noise: Vec<f64> = (0..h.numel()).map(|_| normal.sample(rng)).collect();
    Ok(tape.add(h, &Tensor::new(h.shape().clone(), noise)?)?)
}

fn dropout(tape: &Tape, h: &Tensor, p: f64, rng: &mut Rng) -> Result<Tensor> {
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..h.numel())
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Ok(tape.mul(h, &Tensor::new(h.shape().clone(), mask)?)?)
}

/// Incremental construction of a [`Network`].
pub struct NetworkBuilder {
    input: usize,
    width: usize,
    layers: Vec<Layer>,
    params: Vec<Param>,
    feature_tap: Option<usize>,
    weight_std: f64,
    kernel_std: f64,
}

impl NetworkBuilder {
    pub fn new(input: usize) -> Self {
        NetworkBuilder {
            input,
            width: input,
            layers: Vec::new(),
            params: Vec::new(),
            feature_tap: None,
            weight_std: DEFAULT_WEIGHT_STD,
            kernel_std: DEFAULT_KERNEL_STD,
        }
    }

    pub fn weight_std(mut self, std: f64) -> Self {
        self.weight_std = std;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn param(&mut self, name: String, value: Tensor) -> ParamId {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn gaussian(rng: &mut Rng, std: f64, rows: usize, cols: usize) -> Tensor {
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        Tensor::matrix(rows, cols, data).expect("consistent shape")
    }

    /// Dense layer with `N(0, weight_std²)` weights and zero bias.
    pub fn dense(mut self, output: usize, weight_norm: bool, rng: &mut Rng) -> Self {
        let idx = self.layers.len();
        let input = self.width;
        let weight = self.param(
            format!("l{idx}.dense.weight"),
            Self::gaussian(rng, self.weight_std, input, output),
        );
        let scale = weight_norm.then(|| self.param(format!("l{idx}.dense.scale"), Tensor::full([1, output], 1.0)));
        let bias = Some(self.param(format!("l{idx}.dense.bias"), Tensor::zeros([1, output])));
        self.layers.push(Layer::Dense(Dense {
            input,
            output,
            weight,
            scale,
            bias,
        }));
        self.width = output;
        self
    }

    /// Dense layer with a given weight matrix and no bias.
    pub fn dense_fixed(mut self, weight: Tensor) -> Self {
        let idx = self.layers.len();
        let (input, output) = (weight.rows(), weight.cols());
        let w = self.param(format!("l{idx}.dense.weight"), weight);
        self.layers.push(Layer::Dense(Dense {
            input,
            output,
            weight: w,
            scale: None,
            bias: None,
        }));
        self.width = output;
        self
    }

    pub fn activation(mut self, a: Activation) -> Self {
        self.layers.push(Layer::Activation(a));
        self
    }

    pub fn noise(mut self, sigma: f64) -> Self {
        if sigma > 0.0 {
            self.layers.push(Layer::GaussianNoise { sigma });
        }
        self
    }

    pub fn dropout(mut self, p: f64) -> Self {
        if p > 0.0 {
            self.layers.push(Layer::Dropout { p });
        }
        self
    }

    pub fn batch_norm(mut self) -> Self {
        let idx = self.layers.len();
        let d = self.width;
        let gamma = self.param(format!("l{idx}.bn.gamma"), Tensor::full([1, d], 1.0));
        let beta = self.param(format!("l{idx}.bn.beta"), Tensor::zeros([1, d]));
        self.layers.push(Layer::BatchNorm(BatchNorm {
            features: d,
            gamma,
            beta,
            eps: BN_EPS,
            momentum: 0.1,
            running_mean: vec![0.0; d],
            running_var: vec![1.0; d],
        }));
        self
    }

    pub fn virtual_batch_norm(mut self) -> Self {
        let idx = self.layers.len();
        let d = self.width;
        let gamma = self.param(format!("l{idx}.vbn.gamma"), Tensor::full([1, d], 1.0));
        let beta = self.param(format!("l{idx}.vbn.beta"), Tensor::zeros([1, d]));
        self.layers.push(Layer::VirtualBatchNorm(VirtualBatchNorm {
            features: d,
            gamma,
            beta,
            eps: BN_EPS,
        }));
        self
    }

    /// Minibatch discrimination with `kernels` (B) kernels of size `kernel_dim` (C).
    pub fn minibatch(mut self, kernels: usize, kernel_dim: usize, include_self: bool, rng: &mut Rng) -> Self {
        let idx = self.layers.len();
        let input = self.width;
        let kernel = self.param(
            format!("l{idx}.minibatch.kernel"),
            Self::gaussian(rng, self.kernel_std, input, kernels * kernel_dim),
        );
        self.layers.push(Layer::Minibatch(MinibatchDiscrimination {
            shape: KernelShape {
                input,
                kernels,
                kernel_dim,
            },
            kernel,
            include_self,
        }));
        self.width = input + kernels;
        self
    }

    /// Marks the most recent layer as the feature tap `f(x)`.
    pub fn tap(mut self) -> Self {
        self.feature_tap = self.layers.len().checked_sub(1);
        self
    }

    pub fn build(self) -> Result<Network> {
        if self.layers.is_empty() {
            return Err(NnError::Invalid("network has no layers".into()));
        }
        if let Some(tap) = self.feature_tap {
            if tap + 1 >= self.layers.len() {
                return Err(NnError::Invalid(format!(
                    "feature tap {tap} must precede the output layer {}",
                    self.layers.len() - 1
                )));
            }
        }
        Ok(Network {
            input: self.input,
            output: self.width,
            layers: self.layers,
            params: self.params,
            feature_tap: self.feature_tap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    #[test]
    fn identity_network_passes_input_through() {
        let net = Network::builder(3).dense_fixed(Tensor::eye(3)).build().unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 7.0]).unwrap();
        let tape = Tape::new();
        let out = net
            .forward(&tape, &net.constants(), &x, &mut ForwardCtx::eval())
            .unwrap();
        assert_eq!(out.output, x);
    }

    #[test]
    fn eval_mode_noise_is_deterministic() {
        let mut rng = stream(1, "init", 0);
        let net = Network::builder(4)
            .noise(0.3)
            .dense(5, true, &mut rng)
            .activation(Activation::LeakyRelu(0.2))
            .noise(0.5)
            .dense(1, true, &mut rng)
            .build()
            .unwrap();
        let x = Tensor::matrix(2, 4, vec![0.1, 0.2, 0.3, 0.4, -1.0, 0.0, 1.0, 2.0]).unwrap();
        let tape = Tape::new();
        let a = net
            .forward(&tape, &net.constants(), &x, &mut ForwardCtx::eval())
            .unwrap();
        let b = net
            .forward(&tape, &net.constants(), &x, &mut ForwardCtx::eval())
            .unwrap();
        assert_eq!(a.output, b.output);

        let mut r1 = stream(2, "noise", 0);
        let c = net
            .forward(&tape, &net.constants(), &x, &mut ForwardCtx::train(&mut r1))
            .unwrap();
        assert_ne!(a.output, c.output);
    }

    #[test]
    fn train_mode_noise_without_rng_is_rejected() {
        let net = Network::builder(2)
            .noise(0.1)
            .dense_fixed(Tensor::eye(2))
            .build()
            .unwrap();
        let tape = Tape::new();
        let mut ctx = ForwardCtx {
            mode: Mode::Train,
            rng: None,
            reference: None,
        };
        let r = net.forward(&tape, &net.constants(), &Tensor::zeros([1, 2]), &mut ctx);
        assert!(matches!(r, Err(NnError::MissingRng)));
    }

    #[test]
    fn weight_norm_columns_have_norm_g() {
        let mut rng = stream(3, "init", 0);
        let mut net = Network::builder(6).dense(4, true, &mut rng).build().unwrap();
        let g = Tensor::matrix(1, 4, vec![0.5, 2.0, 1.0, 3.25]).unwrap();
        net.set_param(1, g.clone()).unwrap();
        let w = net.dense_weight(0).unwrap();
        for j in 0..4 {
            let norm = (0..6).map(|i| w.get(i, j).powi(2)).sum::<f64>().sqrt();
            assert!((norm - g.get(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_tap_is_last_hidden_layer() {
        let mut rng = stream(4, "init", 0);
        let widths = [12, 10, 9, 8, 7];
        let mut b = Network::builder(5);
        for w in widths {
            b = b.dense(w, false, &mut rng).activation(Activation::Relu);
        }
        let net = b.tap().dense(3, false, &mut rng).build().unwrap();
        let tape = Tape::new();
        let out = net
            .forward(&tape, &net.constants(), &Tensor::zeros([2, 5]), &mut ForwardCtx::eval())
            .unwrap();
        assert_eq!(out.features.unwrap().cols(), 7);
        assert_eq!(out.output.cols(), 3);
    }

    #[test]
    fn tap_on_output_layer_rejected() {
        let r = Network::builder(2).dense_fixed(Tensor::eye(2)).tap().build();
        assert!(matches!(r, Err(NnError::Invalid(_))));
    }

    #[test]
    fn input_width_checked() {
        let net = Network::builder(3).dense_fixed(Tensor::eye(3)).build().unwrap();
        let tape = Tape::new();
        let r = net.forward(&tape, &net.constants(), &Tensor::zeros([2, 4]), &mut ForwardCtx::eval());
        assert!(matches!(r, Err(NnError::Shape(_))));
    }

    #[test]
    fn vbn_network_requires_reference() {
        let mut rng = stream(5, "init", 0);
        let net = Network::builder(2)
            .dense(3, false, &mut rng)
            .virtual_batch_norm()
            .build()
            .unwrap();
        let tape = Tape::new();
        let r = net.forward(&tape, &net.constants(), &Tensor::zeros([2, 2]), &mut ForwardCtx::eval());
        assert!(matches!(r, Err(NnError::MissingReference)));
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = stream(6, "init", 0);
        let mut net = Network::builder(3)
            .dense(4, true, &mut rng)
            .batch_norm()
            .minibatch(2, 3, true, &mut rng)
            .build()
            .unwrap();
        let flat = net.flatten();
        let mut other = flat.clone();
        other.iter_mut().for_each(|v| *v += 1.0);
        net.load_flat(&other).unwrap();
        assert_eq!(net.flatten(), other);
        assert!(net.load_flat(&flat[1..]).is_err());
    }
}
