//! Adversarial training: one discriminator update then one generator update
//! per step.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::{DatasetSpec, ExperimentConfig, NormKind};
use super::models::{build_discriminator, build_generator};
use super::optim::Adam;
use super::{Result, TrainerError};
use crate::data::{balanced_label_subset, load_idx, Batches, LabeledDataset, MixtureSpec, NoiseSource};
use crate::metrics::{mode_coverage, ModeReport};
use crate::nn::{ForwardCtx, NetOutput, Network};
use crate::objectives::{
    feature_matching_loss, log_d_terms, semisup_losses_smoothed, HistoricalAverage, SemiSupBatch, Source,
};
use crate::seed::{stream, Rng};
use crate::tensor::{Tape, Tensor};

/// Fraction of samples a mode needs within 3σ to count as covered.
pub const MODE_MIN_FRAC: f64 = 0.01;

/// Mixed into the run seed for the labeled-example batch order.
const LABELED_STREAM: u64 = 0x6c_6162_656c_6564;

/// Everything that evolves during training; what a checkpoint stores.
#[derive(Debug, Clone)]
pub struct GanState {
    pub config: ExperimentConfig,
    pub g: Network,
    pub d: Network,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub g_ha: Option<HistoricalAverage>,
    pub d_ha: Option<HistoricalAverage>,
    pub step: u64,
}

impl GanState {
    pub fn new(config: &ExperimentConfig, data_dim: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let outputs = if config.use_labels { classes } else { 1 };
        let g = build_generator(config, data_dim)?;
        let d = build_discriminator(config, data_dim, outputs)?;
        let ha = || {
            config
                .historical_averaging
                .then(|| HistoricalAverage::new(config.ha_lambda))
        };
        Ok(GanState {
            g_opt: Adam::new(config.optimizer, g.param_count()),
            d_opt: Adam::new(config.optimizer, d.param_count()),
            g_ha: ha(),
            d_ha: ha(),
            config: config.clone(),
            g,
            d,
            step: 0,
        })
    }
}

/// Where real examples come from.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum RealData {
    Mixture(MixtureSpec),
    /// `labeled` cycles through the labeled examples so every step sees some
    /// of them; `batches` covers the whole training set without labels.
    Digits {
        train: LabeledDataset,
        batches: Batches,
        labeled: Option<(Vec<usize>, Batches)>,
    },
}

/// Resolves `data/mnist`-style directories; tries gzipped files first.
pub fn idx_pair(dir: &Path, split: &str) -> (PathBuf, PathBuf) {
    let pick = |stem: String| {
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(stem)
        }
    };
    (
        pick(format!("{split}-images-idx3-ubyte")),
        pick(format!("{split}-labels-idx1-ubyte")),
    )
}

/// Training and test splits of the digit data, pooled when configured.
pub fn load_digits(spec: &DatasetSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let DatasetSpec::Digits { dir, pool, unlabeled } = spec else {
        return Err(TrainerError::Config("dataset is not digits".into()));
    };
    let (ti, tl) = idx_pair(dir, "train");
    let (vi, vl) = idx_pair(dir, "t10k");
    let mut train = load_idx(ti, tl)?;
    let mut test = load_idx(vi, vl)?;
    if *unlabeled < train.len() {
        train = train.subset(&(0..*unlabeled).collect::<Vec<_>>());
    }
    if *pool {
        train = train.pool2();
        test = test.pool2();
    }
    Ok((train, test))
}

impl RealData {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.dataset.mixture() {
            Some(m) => Ok(RealData::Mixture(m)),
            None => {
                let (mut train, _) = load_digits(&cfg.dataset)?;
                let labeled = if cfg.use_labels {
                    train.labeled_mask = balanced_label_subset(&train, cfg.labels, cfg.seed)?;
                    let idx = train.labeled_indices();
                    let b = Batches::new(idx.len(), cfg.batch_size.min(idx.len()), cfg.seed ^ LABELED_STREAM)?;
                    Some((idx, b))
                } else {
                    None
                };
                let batches = Batches::new(train.len(), cfg.batch_size, cfg.seed)?;
                Ok(RealData::Digits {
                    train,
                    batches,
                    labeled,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            RealData::Mixture(m) => m.dim(),
            RealData::Digits { train, .. } => train.dim(),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            RealData::Mixture(m) => m.components(),
            RealData::Digits { train, .. } => train.classes,
        }
    }

    /// Real batch for `step` with labels where the run may use them.
    fn batch(&mut self, seed: u64, step: u64, n: usize) -> (Tensor, Vec<Option<usize>>) {
        match self {
            RealData::Mixture(m) => {
                let (x, comps) = m.sample(n, &mut stream(seed, "real", step));
                (x, comps.into_iter().map(Some).collect())
            }
            RealData::Digits {
                train,
                batches,
                labeled,
            } => {
                let mut idx = batches.next_batch();
                let mut labels = vec![None; idx.len()];
                if let Some((pool, b)) = labeled {
                    for j in b.next_batch() {
                        idx.push(pool[j]);
                        labels.push(Some(train.labels[pool[j]]));
                    }
                }
                (train.features.select_rows(&idx), labels)
            }
        }
    }

    fn seek(&mut self, step: u64) {
        if let RealData::Digits { batches, labeled, .. } = self {
            batches.seek(step);
            if let Some((_, b)) = labeled {
                b.seek(step);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fm_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ha_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

/// A configured run: state plus the data and noise streams it draws from.
pub struct GanTrainer {
    pub state: GanState,
    pub data: RealData,
    pub noise: NoiseSource,
    /// Fixed noise rows whose generator activations supply VBN statistics.
    pub reference_z: Option<Tensor>,
}

impl GanTrainer {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let data = RealData::from_config(config)?;
        let state = GanState::new(config, data.dim(), data.classes())?;
        Ok(Self::from_parts(state, data))
    }

    /// Continues from a checkpointed state.
    pub fn resume(state: GanState) -> Result<Self> {
        let mut data = RealData::from_config(&state.config)?;
        data.seek(state.step);
        Ok(Self::from_parts(state, data))
    }

    fn from_parts(state: GanState, data: RealData) -> Self {
        let cfg = &state.config;
        let noise = NoiseSource::new(cfg.noise_dim, cfg.noise_kind, cfg.seed);
        let reference_z = (cfg.g_norm == NormKind::Virtual).then(|| noise.rows("reference", 0, cfg.reference_size));
        GanTrainer {
            state,
            data,
            noise,
            reference_z,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.state.config
    }

    fn g_forward(&self, tape: &Tape, params: &[Tensor], z: &Tensor, rng: Option<&mut Rng>) -> Result<NetOutput> {
        let mut ctx = match rng {
            Some(r) => ForwardCtx::train(r),
            None => ForwardCtx::eval(),
        };
        if let Some(r) = &self.reference_z {
            ctx = ctx.with_reference(r);
        }
        Ok(self.state.g.forward(tape, params, z, &mut ctx)?)
    }

    /// Generator samples in eval mode (no batch statistics, no noise).
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self.g_forward(&tape, &self.state.g.constants(), z, None)?.output)
    }

    /// Samples `start..start+len` of the fixed evaluation noise sequence.
    pub fn eval_samples(&self, start: usize, len: usize) -> Result<Tensor> {
        self.generate(&self.noise.rows("eval", start, len))
    }

    /// Mode coverage of `eval_samples` samples (mixtures only).
    pub fn modes(&self) -> Result<Option<ModeReport>> {
        let RealData::Mixture(m) = &self.data else {
            return Ok(None);
        };
        let x = self.eval_samples(0, self.config().eval_samples)?;
        Ok(Some(mode_coverage(&x, &m.centers, m.sigma, MODE_MIN_FRAC)?))
    }

    /// One D update followed by one G update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let cfg = self.state.config.clone();
        let t = self.state.step;
        let (x_real, labels) = self.data.batch(cfg.seed, t, cfg.batch_size);
        let n_real = x_real.rows();
        let n = cfg.batch_size;
        let labels: Vec<Option<usize>> = if cfg.use_labels { labels } else { vec![None; n_real] };

        // discriminator
        let tape = Tape::new();
        let dp = self.state.d.bind(&tape);
        let mut g_rng = stream(cfg.seed, "g-train", 2 * t);
        let fake = self
            .g_forward(
                &tape,
                &self.state.g.constants(),
                &self.noise.batch(2 * t, n),
                Some(&mut g_rng),
            )?
            .output;
        let mut d_rng = stream(cfg.seed, "d-train", 2 * t);
        let out_r = self
            .state
            .d
            .forward(&tape, &dp, &x_real, &mut ForwardCtx::train(&mut d_rng))?;
        let out_f = self
            .state
            .d
            .forward(&tape, &dp, &fake, &mut ForwardCtx::train(&mut d_rng))?;
        let batch = SemiSupBatch {
            logits: tape.concat_rows(&out_r.output, &out_f.output)?,
            labels: labels.iter().cloned().chain(std::iter::repeat_n(None, n)).collect(),
            source: std::iter::repeat_n(Source::Real, n_real)
                .chain(std::iter::repeat_n(Source::Generated, n))
                .collect(),
        };
        let parts = semisup_losses_smoothed(&tape, &batch, cfg.alpha())?;
        let mut d_loss = parts.total(&tape)?;
        let mut ha_total = 0.0;
        if let Some(ha) = &mut self.state.d_ha {
            let pen = ha.penalty_term(&tape, &dp)?;
            ha_total += pen.item();
            d_loss = tape.add(&d_loss, &pen)?;
            ha.update(&self.state.d.flatten())?;
        }
        let d_value = d_loss.item();
        let grads = tape.backward(&d_loss)?;
        let dg: Vec<Tensor> = dp.iter().map(|p| grads.wrt_or_zero(p)).collect();
        self.state.d_opt.step(&mut self.state.d, &dg)?;
        let mut d_stats = out_r.observed;
        d_stats.extend(out_f.observed);
        self.state.d.absorb_stats(&d_stats);

        // generator
        let tape = Tape::new();
        let gp = self.state.g.bind(&tape);
        let dc = self.state.d.constants();
        let mut g_rng = stream(cfg.seed, "g-train", 2 * t + 1);
        let gout = self.g_forward(&tape, &gp, &self.noise.batch(2 * t + 1, n), Some(&mut g_rng))?;
        let mut d_rng = stream(cfg.seed, "d-train", 2 * t + 1);
        let out_f = self
            .state
            .d
            .forward(&tape, &dc, &gout.output, &mut ForwardCtx::train(&mut d_rng))?;
        let mut fm_value = None;
        let mut g_loss = if cfg.feature_matching {
            let out_r = self
                .state
                .d
                .forward(&tape, &dc, &x_real, &mut ForwardCtx::train(&mut d_rng))?;
            let (fr, ff) = (tap(&out_r)?, tap(&out_f)?);
            let fm = feature_matching_loss(&tape, fr, ff)?;
            fm_value = Some(fm.item());
            fm
        } else {
            let (log_d, _) = log_d_terms(&tape, &out_f.output);
            tape.neg(&tape.reduce_mean(&log_d))
        };
        if let Some(ha) = &mut self.state.g_ha {
            let pen = ha.penalty_term(&tape, &gp)?;
            ha_total += pen.item();
            g_loss = tape.add(&g_loss, &pen)?;
            ha.update(&self.state.g.flatten())?;
        }
        let g_value = g_loss.item();
        let grads = tape.backward(&g_loss)?;
        let gg: Vec<Tensor> = gp.iter().map(|p| grads.wrt_or_zero(p)).collect();
        self.state.g_opt.step(&mut self.state.g, &gg)?;
        self.state.g.absorb_stats(&gout.observed);

        self.state.step += 1;
        Ok(StepRecord {
            step: self.state.step,
            d_loss: d_value,
            g_loss: g_value,
            fm_loss: fm_value,
            ha_penalty: cfg.historical_averaging.then_some(ha_total),
            score: None,
            modes: None,
        })
    }

    fn params_finite(&self) -> bool {
        self.state
            .g
            .flatten()
            .iter()
            .chain(self.state.d.flatten().iter())
            .all(|v| v.is_finite())
    }

    /// Trains until `config.steps`, writing `log.jsonl` and checkpoints into
    /// `out` when given. A non-finite loss stops the run with
    /// [`RunStatus::Diverged`] after a final checkpoint.
    pub fn run(&mut self, out: Option<&Path>) -> Result<RunSummary> {
        let cfg = self.state.config.clone();
        let mut log = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("log.jsonl"))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        let mut status = RunStatus::Completed;
        let mut last = None;
        while self.state.step < cfg.steps {
            let mut rec = self.step()?;
            let diverged = !rec.d_loss.is_finite() || !rec.g_loss.is_finite() || !self.params_finite();
            if !diverged && cfg.eval_every > 0 && (rec.step % cfg.eval_every == 0 || rec.step == cfg.steps) {
                rec.modes = self.modes()?.map(|m| m.modes_covered);
            }
            if let Some(w) = &mut log {
                serde_json::to_writer(&mut *w, &rec)?;
                w.write_all(b"\n")?;
            }
            if let Some(dir) = out {
                if cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0 && !diverged {
                    Checkpoint::from_state(&self.state).save(dir.join(format!("step-{:08}.ckpt", rec.step)))?;
                }
            }
            last = Some(rec);
            if diverged {
                log::warn!("run {} diverged at step {}", cfg.name, self.state.step);
                status = RunStatus::Diverged;
                break;
            }
        }
        if let Some(w) = &mut log {
            w.flush()?;
        }
        let ckpt = Checkpoint::from_state(&self.state);
        let hash = ckpt.hash();
        if let Some(dir) = out {
            ckpt.save(dir.join("final.ckpt"))?;
        }
        let modes = if status == RunStatus::Completed {
            self.modes()?
        } else {
            None
        };
        Ok(RunSummary {
            status,
            steps: self.state.step,
            checkpoint_hash: hash,
            last,
            modes,
        })
    }
}

fn tap(out: &NetOutput) -> Result<&Tensor> {
    out.features
        .as_ref()
        .ok_or_else(|| TrainerError::Config("feature matching needs a discriminator hidden layer".into()))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub steps: u64,
    pub checkpoint_hash: String,
    pub last: Option<StepRecord>,
    pub modes: Option<ModeReport>,
}

/// Trains one GAN run end to end.
pub fn train_gan(config: &ExperimentConfig, out: Option<&Path>) -> Result<(GanTrainer, RunSummary)> {
    let mut trainer = GanTrainer::new(config)?;
    let summary = trainer.run(out)?;
    if let Some(dir) = out {
        let f = File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(f, &summary)?;
    }
    Ok((trainer, summary))
}
