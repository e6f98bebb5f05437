use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use ganlab::games::{self, DynamicsConfig, GameSpec, Verdict};
use ganlab::metrics::{score_generator, ScoreRecord};
use ganlab::nn::NnError;
use ganlab::trainer::{
    export_sample_grid, run_ablation, semisup_sweep, train_gan, AblationGrid, Checkpoint, ExperimentConfig, GanTrainer,
    RunStatus, ScoreClassifier, TrainerError,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "ganlab", version, about = "Train and evaluate small GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one GAN run.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Semi-supervised digit classification over the config's seeds.
    Semisup {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        labels: Option<usize>,
        #[arg(long, default_value = "runs/semisup")]
        out: PathBuf,
    },
    /// Classifier score of a checkpoint's generator.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        chunk: usize,
    },
    /// Simulate gradient dynamics on a toy game.
    Game {
        #[arg(long)]
        spec: GameSpec,
        /// 1 enables historical averaging.
        #[arg(long, default_value_t = 0)]
        ha: u8,
        #[arg(long, default_value_t = games::HA_ETA)]
        eta: f64,
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
        #[arg(long, default_value_t = games::HA_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        #[arg(long, default_value_t = 1.0)]
        y: f64,
        /// Write the trajectory as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the ablation grid over the config's seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "full,-VBN+BN,-L+HA,-LS,-L,-MBF", allow_hyphen_values = true)]
        variants: String,
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
    },
    /// Render generator samples from a checkpoint.
    Samples {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Rows x columns, e.g. 8x8.
        #[arg(long, default_value = "8x8")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_env()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_grid(s: &str) -> anyhow::Result<(usize, usize)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("grid {s:?} is not RxC"))?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => {
            let summary = match resume {
                Some(ckpt) => {
                    let state = Checkpoint::load(&ckpt)?.to_state()?;
                    let mut trainer = GanTrainer::resume(state)?;
                    trainer.run(Some(&out))?
                }
                None => {
                    let config = config.context("--config is required")?;
                    train_gan(&load_config(&config, seed)?, Some(&out))?.1
                }
            };
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if summary.status == RunStatus::Diverged {
                return Ok(EXIT_DIVERGED);
            }
        }
        Command::Semisup { config, labels, out } => {
            let mut cfg = load_config(&config, None)?;
            if let Some(m) = labels {
                cfg.labels = m;
            }
            let summary = semisup_sweep(&cfg, Some(&out))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if summary.runs.iter().any(|r| r.status == RunStatus::Diverged) {
                return Ok(EXIT_DIVERGED);
            }
        }
        Command::Score { checkpoint, n, chunk } => {
            let state = Checkpoint::load(&checkpoint)?.to_state()?;
            let classifier = ScoreClassifier::for_config(&state.config)?;
            let trainer = GanTrainer::resume(state)?;
            let to_nn = |e: TrainerError| match e {
                TrainerError::Nn(e) => e,
                other => NnError::Invalid(other.to_string()),
            };
            let (score, k) = score_generator(
                |start, len| trainer.eval_samples(start, len).map_err(to_nn),
                |x| classifier.probs(x).map_err(to_nn),
                n,
                chunk,
            )?;
            let record = ScoreRecord {
                score,
                n,
                k,
                classifier_id: classifier.id.clone(),
            };
            println!("{}", serde_json::to_string(&record)?);
        }
        Command::Game {
            spec,
            ha,
            eta,
            steps,
            lambda,
            x,
            y,
            out,
        } => {
            let mut cfg = DynamicsConfig::new(eta, steps);
            match ha {
                0 => {}
                1 => cfg = cfg.with_ha(lambda),
                other => bail!(TrainerError::Config(format!("--ha must be 0 or 1, got {other}"))),
            }
            let sim = games::simulate(spec, &cfg, (x, y)).map_err(|e| match e {
                games::GameError::Eta(_) | games::GameError::NoSteps | games::GameError::NonFinite(..) => {
                    anyhow::Error::new(TrainerError::Config(e.to_string()))
                }
                other => other.into(),
            })?;
            if let Some(path) = out {
                sim.write_csv(path)?;
            }
            let last = sim.last();
            let verdict = match sim.verdict {
                Verdict::Converged { x, y, steps } => format!("converged to ({x:.6}, {y:.6}) after {steps} steps"),
                Verdict::Orbiting => "still moving at the end of the budget".into(),
                Verdict::Diverged { step } => format!("diverged at step {step}"),
            };
            let eq = spec.equilibrium();
            println!(
                "{}: {verdict}; last ({:.6}, {:.6}), distance to ({}, {}) = {:.3e}",
                spec.id(),
                last.x,
                last.y,
                eq.0,
                eq.1,
                last.radius
            );
            if matches!(sim.verdict, Verdict::Diverged { .. }) {
                return Ok(EXIT_DIVERGED);
            }
        }
        Command::Ablate { config, variants, out } => {
            let cfg = load_config(&config, None)?;
            let grid = AblationGrid::parse(&variants)?;
            let table = run_ablation(&grid, &cfg, Some(&out))?;
            print!("{}", table.to_text());
        }
        Command::Samples { checkpoint, grid, out } => {
            let (rows, cols) = parse_grid(&grid).map_err(|e| TrainerError::Config(e.to_string()))?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            export_sample_grid(&ckpt, rows, cols, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<TrainerError>(), Some(TrainerError::Config(_))));
            ExitCode::from(if config_error { EXIT_CONFIG } else { 1 })
        }
    }
}
