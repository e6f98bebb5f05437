//! Ablation grid: each variant removes one technique from the `full` recipe
//! (minibatch features, VBN, one-sided smoothing, labels).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::classifier::ScoreClassifier;
use super::config::{ExperimentConfig, NormKind};
use super::gan::{GanTrainer, RunStatus};
use super::semisup::mean_std;
use super::{Result, TrainerError};
use crate::metrics::score_generator;
use crate::objectives::DEFAULT_ALPHA;

/// Samples scored per run.
pub const SCORE_SAMPLES: usize = 2000;
pub const SCORE_CHUNK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Variant {
    /// The base config untouched.
    Base,
    Full,
    NoVbnBn,
    NoLabelsHa,
    NoSmoothing,
    NoLabels,
    NoMinibatch,
}

impl Variant {
    pub const TABLE: [Variant; 6] = [
        Variant::Full,
        Variant::NoVbnBn,
        Variant::NoLabelsHa,
        Variant::NoSmoothing,
        Variant::NoLabels,
        Variant::NoMinibatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Full => "full",
            Variant::NoVbnBn => "-VBN+BN",
            Variant::NoLabelsHa => "-L+HA",
            Variant::NoSmoothing => "-LS",
            Variant::NoLabels => "-L",
            Variant::NoMinibatch => "-MBF",
        }
    }

    /// `base` with the full recipe switched on.
    pub fn full(base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.minibatch = true;
        c.g_norm = NormKind::Virtual;
        if c.label_smoothing >= 1.0 {
            c.label_smoothing = DEFAULT_ALPHA;
        }
        c.use_labels = true;
        c.feature_matching = false;
        c.historical_averaging = false;
        c
    }

    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = Self::full(base);
        match self {
            Variant::Base => return base.clone(),
            Variant::Full => {}
            Variant::NoVbnBn => c.g_norm = NormKind::Batch,
            Variant::NoLabelsHa => {
                c.use_labels = false;
                c.historical_averaging = true;
            }
            Variant::NoSmoothing => c.label_smoothing = 1.0,
            Variant::NoLabels => c.use_labels = false,
            Variant::NoMinibatch => c.minibatch = false,
        }
        c.name = format!("{}/{}", base.name, self.name());
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TrainerError;

    fn from_str(s: &str) -> Result<Self> {
        let all = [Variant::Base].into_iter().chain(Variant::TABLE);
        for v in all {
            if v.name().eq_ignore_ascii_case(s.trim()) {
                return Ok(v);
            }
        }
        Err(TrainerError::Config(format!(
            "unknown variant {s:?} (expected base, full, -VBN+BN, -L+HA, -LS, -L or -MBF)"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub variants: Vec<Variant>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            variants: Variant::TABLE.to_vec(),
        }
    }
}

impl AblationGrid {
    /// Comma-separated variant names.
    pub fn parse(list: &str) -> Result<Self> {
        let variants = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if variants.is_empty() {
            return Err(TrainerError::Config("empty variant list".into()));
        }
        Ok(AblationGrid { variants })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRun {
    pub variant: String,
    pub seed: u64,
    pub status: RunStatus,
    /// `None` when the run diverged.
    pub score: Option<f64>,
    pub modes: Option<usize>,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub mean: f64,
    pub std: f64,
    pub completed: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub classifier_id: String,
    pub runs: Vec<AblationRun>,
    /// Sorted by mean score, best first.
    pub ranked: Vec<AblationRow>,
}

impl AblationTable {
    pub fn score(&self, variant: Variant, seed: u64) -> Option<f64> {
        self.runs
            .iter()
            .find(|r| r.variant == variant.name() && r.seed == seed)
            .and_then(|r| r.score)
    }

    /// Seeds where `a` strictly outscores `b`, out of seeds where both ran.
    pub fn wins(&self, a: Variant, b: Variant) -> (usize, usize) {
        let mut seeds: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut wins = 0;
        let mut total = 0;
        for s in seeds {
            if let (Some(x), Some(y)) = (self.score(a, s), self.score(b, s)) {
                total += 1;
                wins += usize::from(x > y);
            }
        }
        (wins, total)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "classifier: {}\n{:<10} {:>8} {:>8} {:>5}\n",
            self.classifier_id, "variant", "mean", "std", "runs"
        );
        for r in &self.ranked {
            out.push_str(&format!(
                "{:<10} {:>8.4} {:>8.4} {:>5}{}\n",
                r.variant,
                r.mean,
                r.std,
                r.completed,
                if r.diverged > 0 {
                    format!(" ({} diverged)", r.diverged)
                } else {
                    String::new()
                }
            ));
        }
        out
    }
}

/// Trains every variant at every seed in `base.seeds` and scores each
/// generator with one classifier built from `base`. Diverged runs are
/// recorded without a score.
pub fn run_ablation(grid: &AblationGrid, base: &ExperimentConfig, out: Option<&Path>) -> Result<AblationTable> {
    let classifier = ScoreClassifier::for_config(base)?;
    let mut runs = Vec::new();
    for &v in &grid.variants {
        for &seed in &base.seeds {
            let mut cfg = v.apply(base);
            cfg.seed = seed;
            let dir = out.map(|o| o.join(v.name()).join(format!("seed-{seed}")));
            let mut trainer = GanTrainer::new(&cfg)?;
            let summary = trainer.run(dir.as_deref())?;
            let score = match summary.status {
                RunStatus::Completed => {
                    let (s, _) = score_generator(
                        |start, len| trainer.eval_samples(start, len).map_err(nn_err),
                        |x| classifier.probs(x).map_err(nn_err),
                        SCORE_SAMPLES,
                        SCORE_CHUNK,
                    )?;
                    Some(s)
                }
                RunStatus::Diverged => None,
            };
            log::info!("ablation {} seed {seed}: score {score:?}", v.name());
            runs.push(AblationRun {
                variant: v.name().into(),
                seed,
                status: summary.status,
                score,
                modes: summary.modes.map(|m| m.modes_covered),
                checkpoint_hash: summary.checkpoint_hash,
            });
        }
    }
    let mut ranked: Vec<AblationRow> = grid
        .variants
        .iter()
        .map(|v| {
            let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.variant == v.name()).collect();
            let scores: Vec<f64> = mine.iter().filter_map(|r| r.score).collect();
            let (mean, std) = if scores.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_std(scores.iter().copied())
            };
            AblationRow {
                variant: v.name().into(),
                mean,
                std,
                completed: scores.len(),
                diverged: mine.len() - scores.len(),
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    let table = AblationTable {
        classifier_id: classifier.id.clone(),
        runs,
        ranked,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        serde_json::to_writer_pretty(std::fs::File::create(dir.join("ablation.json"))?, &table)?;
        std::fs::write(dir.join("ablation.txt"), table.to_text())?;
    }
    Ok(table)
}

/// `score_generator` wants model errors; trainer errors from sampling are
/// only ever network errors in practice.
fn nn_err(e: TrainerError) -> crate::nn::NnError {
    match e {
        TrainerError::Nn(e) => e,
        other => crate::nn::NnError::Invalid(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_differ_from_full_only_in_their_toggles() {
        let base = ExperimentConfig::default();
        let full = Variant::Full.apply(&base);
        let diff = |v: Variant| -> Vec<String> {
            let a = full.to_pairs();
            let b = v.apply(&base).to_pairs();
            a.iter()
                .zip(&b)
                .filter(|((k, va), (_, vb))| va != vb && k.as_str() != "name")
                .map(|((k, _), _)| k.clone())
                .collect()
        };
        assert_eq!(diff(Variant::NoVbnBn), ["g.norm"]);
        assert_eq!(diff(Variant::NoLabelsHa), ["historical_averaging", "use_labels"]);
        assert_eq!(diff(Variant::NoSmoothing), ["label_smoothing"]);
        assert_eq!(diff(Variant::NoLabels), ["use_labels"]);
        assert_eq!(diff(Variant::NoMinibatch), ["minibatch"]);
        full.validate().unwrap();
        for v in Variant::TABLE {
            v.apply(&base).validate().unwrap();
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::TABLE.into_iter().chain([Variant::Base]) {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("-XYZ".parse::<Variant>().is_err());
        let g = AblationGrid::parse("full,-MBF").unwrap();
        assert_eq!(g.variants, [Variant::Full, Variant::NoMinibatch]);
    }
}
