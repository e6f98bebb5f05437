//! Semi-supervised digit classification with a K-output discriminator, plus
//! the supervised-only baseline it is compared against.

use std::path::Path;

use serde::Serialize;

use super::classifier::{argmax_rows, cross_entropy};
use super::config::ExperimentConfig;
use super::gan::{load_digits, GanTrainer, RunStatus, RunSummary};
use super::models::build_discriminator;
use super::optim::Adam;
use super::{Result, TrainerError};
use crate::data::{balanced_label_subset, Batches, LabeledDataset};
use crate::nn::{ForwardCtx, Network};
use crate::seed::stream;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Serialize)]
pub struct SemiSupRun {
    pub seed: u64,
    pub status: RunStatus,
    pub test_error: f64,
    pub baseline_error: f64,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SemiSupSummary {
    pub labels: usize,
    pub runs: Vec<SemiSupRun>,
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_baseline: f64,
    pub std_baseline: f64,
    /// Error of the mean class-probability over all seeds' classifiers.
    pub ensemble_error: f64,
}

/// The configuration a semi-supervised run actually uses: labels on and the
/// generator trained by feature matching.
pub fn semisup_config(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    if !cfg.dataset.is_digits() {
        return Err(TrainerError::Config(
            "semi-supervised runs need dataset = digits".into(),
        ));
    }
    let mut c = cfg.clone();
    c.use_labels = true;
    c.feature_matching = true;
    c.minibatch = false;
    c.validate()?;
    Ok(c)
}

/// Class probabilities of a K-output discriminator in eval mode.
pub fn class_probs(d: &Network, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let out = d.forward(&tape, &d.constants(), x, &mut ForwardCtx::eval())?;
    Ok(tape.softmax_rows(&out.output))
}

pub fn error_rate(probs: &Tensor, labels: &[usize]) -> f64 {
    let pred = argmax_rows(probs);
    pred.iter().zip(labels).filter(|(p, y)| p != y).count() as f64 / labels.len() as f64
}

/// The discriminator architecture trained on the labeled examples alone.
pub fn train_supervised(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<Network> {
    let mut d = build_discriminator(cfg, train.dim(), train.classes)?;
    let mask = balanced_label_subset(train, cfg.labels, cfg.seed)?;
    let pool: Vec<usize> = (0..train.len()).filter(|&i| mask[i]).collect();
    let mut batches = Batches::new(pool.len(), cfg.batch_size.min(pool.len()), cfg.seed)?;
    let mut opt = Adam::new(cfg.optimizer, d.param_count());
    for step in 0..cfg.steps {
        let idx: Vec<usize> = batches.next_batch().into_iter().map(|j| pool[j]).collect();
        let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        let x = train.features.select_rows(&idx);
        let tape = Tape::new();
        let p = d.bind(&tape);
        let mut rng = stream(cfg.seed, "supervised", step);
        let out = d.forward(&tape, &p, &x, &mut ForwardCtx::train(&mut rng))?;
        let loss = cross_entropy(&tape, &out.output, &y)?;
        if !loss.item().is_finite() {
            return Err(TrainerError::Diverged { step });
        }
        let g = tape.backward(&loss)?;
        let grads: Vec<Tensor> = p.iter().map(|t| g.wrt_or_zero(t)).collect();
        opt.step(&mut d, &grads)?;
        d.absorb_stats(&out.observed);
    }
    Ok(d)
}

/// One seed: the semi-supervised GAN and its paired baseline, both scored on
/// the test split. Returns the run, its summary and both test-set
/// probability matrices.
pub fn train_semisup(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(SemiSupRun, RunSummary, [Tensor; 2])> {
    let cfg = semisup_config(cfg)?;
    let (train, test) = load_digits(&cfg.dataset)?;
    let mut trainer = GanTrainer::new(&cfg)?;
    let summary = trainer.run(out)?;
    let p_semi = class_probs(&trainer.state.d, &test.features)?;
    let baseline = train_supervised(&cfg, &train)?;
    let p_base = class_probs(&baseline, &test.features)?;
    let run = SemiSupRun {
        seed: cfg.seed,
        status: summary.status,
        test_error: error_rate(&p_semi, &test.labels),
        baseline_error: error_rate(&p_base, &test.labels),
        checkpoint_hash: summary.checkpoint_hash.clone(),
    };
    log::info!(
        "semisup seed {}: test error {:.4}, supervised baseline {:.4}",
        run.seed,
        run.test_error,
        run.baseline_error
    );
    Ok((run, summary, [p_semi, p_base]))
}

/// Runs every seed in `cfg.seeds` and aggregates.
pub fn semisup_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SemiSupSummary> {
    let (_, test) = load_digits(&cfg.dataset)?;
    let mut runs = Vec::new();
    let mut ensemble: Option<Vec<f64>> = None;
    for &seed in &cfg.seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        let dir = out.map(|o| o.join(format!("seed-{seed}")));
        let (run, _, [p, _]) = train_semisup(&c, dir.as_deref())?;
        match &mut ensemble {
            Some(acc) => acc.iter_mut().zip(p.data()).for_each(|(a, v)| *a += v),
            None => ensemble = Some(p.to_vec()),
        }
        runs.push(run);
    }
    let ens = Tensor::matrix(test.len(), test.classes, ensemble.unwrap_or_default())?;
    let (mean_error, std_error) = mean_std(runs.iter().map(|r| r.test_error));
    let (mean_baseline, std_baseline) = mean_std(runs.iter().map(|r| r.baseline_error));
    let summary = SemiSupSummary {
        labels: cfg.labels,
        runs,
        mean_error,
        std_error,
        mean_baseline,
        std_baseline,
        ensemble_error: error_rate(&ens, &test.labels),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        serde_json::to_writer_pretty(std::fs::File::create(dir.join("semisup.json"))?, &summary)?;
    }
    Ok(summary)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}
