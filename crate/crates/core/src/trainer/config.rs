//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown or repeated keys are errors. Keys and defaults:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `name` | `run` | label used in logs |
//! | `dataset` | `ring` | `ring`, `grid` or `digits` |
//! | `ring.k`, `ring.radius` | `8`, `2.0` | ring mixture |
//! | `grid.rows`, `grid.cols`, `grid.spacing` | `5`, `5`, `2.0` | grid mixture |
//! | `mixture.sigma` | `0.02` | component std |
//! | `digits.dir` | `data/mnist` | directory holding the IDX files |
//! | `digits.pool` | `true` | 2×2 average pooling (28×28 → 14×14) |
//! | `digits.unlabeled` | `8000` | training examples used (labeled ones included) |
//! | `noise.dim` | 8 for mixtures, 100 for digits | width of z |
//! | `noise.kind` | `uniform` | `uniform` on (−1, 1) or `normal` |
//! | `g.hidden`, `d.hidden` | `128,128` | comma-separated hidden widths |
//! | `g.activation`, `d.activation` | `relu`, `leaky_relu` | `relu`, `leaky_relu`, `softplus`, `tanh` |
//! | `g.norm` | `none` | `none`, `bn` or `vbn` |
//! | `d.norm` | `none` | `none` or `bn` |
//! | `d.noise` | `0.1` | Gaussian noise σ after each discriminator hidden layer |
//! | `d.input_noise` | `0.0` | Gaussian noise σ on discriminator inputs |
//! | `weight_norm` | `false` | weight-normalized dense layers in the discriminator |
//! | `dropout` | `0.0` | discriminator dropout probability |
//! | `feature_matching` | `false` | generator matches tapped discriminator features |
//! | `minibatch` | `false` | minibatch discrimination in the discriminator |
//! | `minibatch.kernels`, `minibatch.dim` | `5`, `3` | B and C |
//! | `minibatch.include_self` | `true` | count the self-term in o(x) |
//! | `historical_averaging` | `false` | penalty on both players |
//! | `ha.lambda` | `0.001` | its coefficient |
//! | `label_smoothing` | `0.9` | real target α; `1.0` disables smoothing |
//! | `use_labels` | `false` | K-class discriminator trained with labels |
//! | `labels` | `100` | labeled examples for semi-supervised runs |
//! | `optimizer` | `adam` | only `adam` |
//! | `lr`, `beta1`, `beta2` | `0.0002`, `0.5`, `0.999` | Adam settings |
//! | `batch_size` | `64` | examples per player update |
//! | `reference_size` | `64` | VBN reference batch |
//! | `steps` | `2000` | D and G updates each |
//! | `seed` | `0` | run seed (`GANLAB_SEED` overrides) |
//! | `seeds` | the run seed | sweep seeds for ablations and semi-supervised runs |
//! | `eval_every` | `500` | evaluation cadence in steps (0 disables) |
//! | `eval_samples` | `1000` | samples per evaluation |
//! | `checkpoint_every` | `0` | checkpoint cadence (0: final only) |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Result, TrainerError};
use crate::data::{MixtureSpec, NoiseKind, NOISE_DIM_2D, NOISE_DIM_DIGITS};
use crate::nn::{Activation, DEFAULT_LEAKY_SLOPE};

pub const SEED_ENV: &str = "GANLAB_SEED";

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Ring {
        k: usize,
        radius: f64,
        sigma: f64,
    },
    Grid {
        rows: usize,
        cols: usize,
        spacing: f64,
        sigma: f64,
    },
    Digits {
        dir: PathBuf,
        pool: bool,
        unlabeled: usize,
    },
}

impl DatasetSpec {
    pub fn mixture(&self) -> Option<MixtureSpec> {
        match *self {
            DatasetSpec::Ring { k, radius, sigma } => MixtureSpec::ring(k, radius, sigma).ok(),
            DatasetSpec::Grid {
                rows,
                cols,
                spacing,
                sigma,
            } => MixtureSpec::grid(rows, cols, spacing, sigma).ok(),
            DatasetSpec::Digits { .. } => None,
        }
    }

    pub fn is_digits(&self) -> bool {
        matches!(self, DatasetSpec::Digits { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    None,
    Batch,
    Virtual,
}

impl NormKind {
    fn name(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::Batch => "bn",
            NormKind::Virtual => "vbn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinibatchConfig {
    pub kernels: usize,
    pub kernel_dim: usize,
    pub include_self: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub noise_dim: usize,
    pub noise_kind: NoiseKind,
    pub g_hidden: Vec<usize>,
    pub d_hidden: Vec<usize>,
    pub g_activation: Activation,
    pub d_activation: Activation,
    pub g_norm: NormKind,
    pub d_norm: NormKind,
    pub d_noise: f64,
    pub d_input_noise: f64,
    pub weight_norm: bool,
    pub dropout: f64,
    pub feature_matching: bool,
    pub minibatch: bool,
    pub minibatch_shape: MinibatchConfig,
    pub historical_averaging: bool,
    pub ha_lambda: f64,
    /// Real-data target α; 1 means no smoothing.
    pub label_smoothing: f64,
    pub use_labels: bool,
    pub labels: usize,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub reference_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub eval_every: u64,
    pub eval_samples: usize,
    pub checkpoint_every: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mb = MinibatchConfig {
            kernels: 5,
            kernel_dim: 3,
            include_self: true,
        };
        ExperimentConfig {
            name: "run".into(),
            dataset: DatasetSpec::Ring {
                k: 8,
                radius: 2.0,
                sigma: 0.02,
            },
            noise_dim: NOISE_DIM_2D,
            noise_kind: NoiseKind::Uniform,
            g_hidden: vec![128, 128],
            d_hidden: vec![128, 128],
            g_activation: Activation::Relu,
            d_activation: Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE),
            g_norm: NormKind::None,
            d_norm: NormKind::None,
            d_noise: 0.1,
            d_input_noise: 0.0,
            weight_norm: false,
            dropout: 0.0,
            feature_matching: false,
            minibatch: false,
            minibatch_shape: mb,
            historical_averaging: false,
            ha_lambda: crate::objectives::DEFAULT_HA_LAMBDA,
            label_smoothing: crate::objectives::DEFAULT_ALPHA,
            use_labels: false,
            labels: 100,
            optimizer: AdamConfig::default(),
            batch_size: 64,
            reference_size: 64,
            steps: 2000,
            seed: 0,
            seeds: vec![0],
            eval_every: 500,
            eval_samples: 1000,
            checkpoint_every: 0,
        }
    }
}

fn config_err(msg: impl Into<String>) -> TrainerError {
    TrainerError::Config(msg.into())
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(config_err(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| config_err(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn parse_activation(key: &str, v: &str) -> Result<Activation> {
    match v {
        "relu" => Ok(Activation::Relu),
        "leaky_relu" => Ok(Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)),
        "softplus" => Ok(Activation::Softplus),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(config_err(format!("{key}: unknown activation {v:?}"))),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::LeakyRelu(_) => "leaky_relu",
        Activation::Softplus => "softplus",
        Activation::Tanh => "tanh",
        _ => "identity",
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Parses `key = value` lines into an ordered map, rejecting duplicates.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(config_err(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.clone(), v).is_some() {
            return Err(config_err(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let get = |k: &str| pairs.get(k).map(String::as_str);

        let kind = get("dataset").unwrap_or("ring");
        let sigma: f64 = get("mixture.sigma").map_or(Ok(0.02), |v| parse_num("mixture.sigma", v))?;
        c.dataset = match kind {
            "ring" => DatasetSpec::Ring {
                k: get("ring.k").map_or(Ok(8), |v| parse_num("ring.k", v))?,
                radius: get("ring.radius").map_or(Ok(2.0), |v| parse_num("ring.radius", v))?,
                sigma,
            },
            "grid" => DatasetSpec::Grid {
                rows: get("grid.rows").map_or(Ok(5), |v| parse_num("grid.rows", v))?,
                cols: get("grid.cols").map_or(Ok(5), |v| parse_num("grid.cols", v))?,
                spacing: get("grid.spacing").map_or(Ok(2.0), |v| parse_num("grid.spacing", v))?,
                sigma,
            },
            "digits" => DatasetSpec::Digits {
                dir: PathBuf::from(get("digits.dir").unwrap_or("data/mnist")),
                pool: get("digits.pool").map_or(Ok(true), |v| parse_bool("digits.pool", v))?,
                unlabeled: get("digits.unlabeled").map_or(Ok(8000), |v| parse_num("digits.unlabeled", v))?,
            },
            other => return Err(config_err(format!("dataset: unknown kind {other:?}"))),
        };
        if c.dataset.is_digits() {
            c.noise_dim = NOISE_DIM_DIGITS;
        }

        for (key, v) in pairs {
            let k = key.as_str();
            match k {
                "dataset" | "mixture.sigma" | "ring.k" | "ring.radius" | "grid.rows" | "grid.cols" | "grid.spacing"
                | "digits.dir" | "digits.pool" | "digits.unlabeled" => {
                    let family = k.split('.').next().unwrap_or(k);
                    let ok = match family {
                        "ring" => kind == "ring",
                        "grid" => kind == "grid",
                        "digits" => kind == "digits",
                        "mixture" => kind != "digits",
                        _ => true,
                    };
                    if !ok {
                        return Err(config_err(format!("{k} does not apply to dataset {kind}")));
                    }
                }
                "name" => c.name = v.clone(),
                "noise.dim" => c.noise_dim = parse_num(k, v)?,
                "noise.kind" => {
                    c.noise_kind = match v.as_str() {
                        "uniform" => NoiseKind::Uniform,
                        "normal" => NoiseKind::Normal,
                        _ => return Err(config_err(format!("{k}: unknown noise {v:?}"))),
                    }
                }
                "g.hidden" => c.g_hidden = parse_list(k, v)?,
                "d.hidden" => c.d_hidden = parse_list(k, v)?,
                "g.activation" => c.g_activation = parse_activation(k, v)?,
                "d.activation" => c.d_activation = parse_activation(k, v)?,
                "g.norm" | "d.norm" => {
                    let n = match v.as_str() {
                        "none" => NormKind::None,
                        "bn" => NormKind::Batch,
                        "vbn" => NormKind::Virtual,
                        _ => return Err(config_err(format!("{k}: unknown normalization {v:?}"))),
                    };
                    if k == "g.norm" {
                        c.g_norm = n;
                    } else {
                        c.d_norm = n;
                    }
                }
                "d.noise" => c.d_noise = parse_num(k, v)?,
                "d.input_noise" => c.d_input_noise = parse_num(k, v)?,
                "weight_norm" => c.weight_norm = parse_bool(k, v)?,
                "dropout" => c.dropout = parse_num(k, v)?,
                "feature_matching" => c.feature_matching = parse_bool(k, v)?,
                "minibatch" => c.minibatch = parse_bool(k, v)?,
                "minibatch.kernels" => c.minibatch_shape.kernels = parse_num(k, v)?,
                "minibatch.dim" => c.minibatch_shape.kernel_dim = parse_num(k, v)?,
                "minibatch.include_self" => c.minibatch_shape.include_self = parse_bool(k, v)?,
                "historical_averaging" => c.historical_averaging = parse_bool(k, v)?,
                "ha.lambda" => c.ha_lambda = parse_num(k, v)?,
                "label_smoothing" => c.label_smoothing = parse_num(k, v)?,
                "use_labels" => c.use_labels = parse_bool(k, v)?,
                "labels" => c.labels = parse_num(k, v)?,
                "optimizer" => {
                    if v != "adam" {
                        return Err(config_err(format!("{k}: only adam is supported, got {v:?}")));
                    }
                }
                "lr" => c.optimizer.lr = parse_num(k, v)?,
                "beta1" => c.optimizer.beta1 = parse_num(k, v)?,
                "beta2" => c.optimizer.beta2 = parse_num(k, v)?,
                "batch_size" => c.batch_size = parse_num(k, v)?,
                "reference_size" => c.reference_size = parse_num(k, v)?,
                "steps" => c.steps = parse_num(k, v)?,
                "seed" => c.seed = parse_num(k, v)?,
                "seeds" => c.seeds = parse_list(k, v)?,
                "eval_every" => c.eval_every = parse_num(k, v)?,
                "eval_samples" => c.eval_samples = parse_num(k, v)?,
                "checkpoint_every" => c.checkpoint_every = parse_num(k, v)?,
                _ => return Err(config_err(format!("unknown key {k:?}"))),
            }
        }
        if !pairs.contains_key("seeds") {
            c.seeds = vec![c.seed];
        }
        c.validate()?;
        Ok(c)
    }

    /// Applies `GANLAB_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse_num(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_norm == NormKind::Virtual {
            return Err(config_err(
                "d.norm = vbn: virtual batch normalization is only supported in the generator",
            ));
        }
        if self.feature_matching && self.minibatch {
            return Err(config_err(
                "feature_matching and minibatch are alternative generator objectives; enable one",
            ));
        }
        let a = self.label_smoothing;
        if !(a > 0.0 && a <= 1.0) {
            return Err(config_err(format!("label_smoothing must lie in (0, 1], got {a}")));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(config_err("optimizer: lr must be positive and betas in [0, 1)"));
        }
        if self.batch_size < 2 {
            return Err(config_err("batch_size must be at least 2"));
        }
        if self.g_norm == NormKind::Virtual && self.reference_size < 2 {
            return Err(config_err("reference_size must be at least 2 for vbn"));
        }
        if self.steps == 0 {
            return Err(config_err("steps must be at least 1"));
        }
        if self.noise_dim == 0 {
            return Err(config_err("noise.dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout must lie in [0, 1)"));
        }
        if self.d_noise < 0.0 || self.d_input_noise < 0.0 || self.ha_lambda < 0.0 {
            return Err(config_err("noise levels and ha.lambda must be non-negative"));
        }
        if self.minibatch && (self.minibatch_shape.kernels == 0 || self.minibatch_shape.kernel_dim == 0) {
            return Err(config_err("minibatch.kernels and minibatch.dim must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        if self.dataset.mixture().is_none() && !self.dataset.is_digits() {
            return Err(config_err("invalid mixture parameters"));
        }
        Ok(())
    }

    /// Canonical pairs: every key, in sorted order.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        match &self.dataset {
            DatasetSpec::Ring { k, radius, sigma } => {
                put("dataset", "ring".into());
                put("ring.k", k.to_string());
                put("ring.radius", radius.to_string());
                put("mixture.sigma", sigma.to_string());
            }
            DatasetSpec::Grid {
                rows,
                cols,
                spacing,
                sigma,
            } => {
                put("dataset", "grid".into());
                put("grid.rows", rows.to_string());
                put("grid.cols", cols.to_string());
                put("grid.spacing", spacing.to_string());
                put("mixture.sigma", sigma.to_string());
            }
            DatasetSpec::Digits { dir, pool, unlabeled } => {
                put("dataset", "digits".into());
                put("digits.dir", dir.display().to_string());
                put("digits.pool", pool.to_string());
                put("digits.unlabeled", unlabeled.to_string());
            }
        }
        put("name", self.name.clone());
        put("noise.dim", self.noise_dim.to_string());
        put(
            "noise.kind",
            match self.noise_kind {
                NoiseKind::Uniform => "uniform",
                NoiseKind::Normal => "normal",
            }
            .into(),
        );
        put("g.hidden", join(&self.g_hidden));
        put("d.hidden", join(&self.d_hidden));
        put("g.activation", activation_name(self.g_activation).into());
        put("d.activation", activation_name(self.d_activation).into());
        put("g.norm", self.g_norm.name().into());
        put("d.norm", self.d_norm.name().into());
        put("d.noise", self.d_noise.to_string());
        put("d.input_noise", self.d_input_noise.to_string());
        put("weight_norm", self.weight_norm.to_string());
        put("dropout", self.dropout.to_string());
        put("feature_matching", self.feature_matching.to_string());
        put("minibatch", self.minibatch.to_string());
        let mb = self.minibatch_shape;
        put("minibatch.kernels", mb.kernels.to_string());
        put("minibatch.dim", mb.kernel_dim.to_string());
        put("minibatch.include_self", mb.include_self.to_string());
        put("historical_averaging", self.historical_averaging.to_string());
        put("ha.lambda", self.ha_lambda.to_string());
        put("label_smoothing", self.label_smoothing.to_string());
        put("use_labels", self.use_labels.to_string());
        put("labels", self.labels.to_string());
        put("optimizer", "adam".into());
        put("lr", self.optimizer.lr.to_string());
        put("beta1", self.optimizer.beta1.to_string());
        put("beta2", self.optimizer.beta2.to_string());
        put("batch_size", self.batch_size.to_string());
        put("reference_size", self.reference_size.to_string());
        put("steps", self.steps.to_string());
        put("seed", self.seed.to_string());
        put("seeds", join(&self.seeds));
        put("eval_every", self.eval_every.to_string());
        put("eval_samples", self.eval_samples.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        m
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Hex SHA-256 of the canonical text, truncated to 16 characters.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn alpha(&self) -> f64 {
        self.label_smoothing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn parses_a_typical_file() {
        let text = "
            # ring with minibatch features
            dataset = ring
            ring.k = 8
            minibatch = true
            minibatch.kernels = 10
            g.norm = vbn
            steps = 300   # short
            seeds = 0,1,2
        ";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.minibatch_shape.kernels, 10);
        assert_eq!(c.g_norm, NormKind::Virtual);
        assert_eq!(c.steps, 300);
        assert_eq!(c.seeds, vec![0, 1, 2]);
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejections() {
        for bad in [
            "d.norm = vbn",
            "feature_matching = true\nminibatch = true",
            "unknown = 1",
            "steps = 1\nsteps = 2",
            "label_smoothing = 0",
            "dataset = ring\ngrid.rows = 3",
            "lr = fast",
            "just text",
        ] {
            assert!(
                matches!(ExperimentConfig::parse(bad), Err(TrainerError::Config(_))),
                "{bad:?} accepted"
            );
        }
    }

    #[test]
    fn digits_default_noise_width() {
        let c = ExperimentConfig::parse("dataset = digits").unwrap();
        assert_eq!(c.noise_dim, NOISE_DIM_DIGITS);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.steps += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
