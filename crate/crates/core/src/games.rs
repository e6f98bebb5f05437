//! Gradient dynamics on two-player scalar games.
//!
//! Each player runs gradient descent on its own cost. On the bilinear game
//! `V = xy` plain simultaneous descent spirals outward; adding a historical
//! averaging term to both costs pulls the pair onto the equilibrium.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::objectives::HistoricalAverage;

#[derive(Debug, thiserror::Error)]
pub enum GameError {
    #[error("learning rate must be positive, got {0}")]
    Eta(f64),
    #[error("step budget must be at least 1")]
    NoSteps,
    #[error("initial state ({0}, {1}) is not finite")]
    NonFinite(f64, f64),
    #[error("unknown game {0:?}; expected bilinear_xy or piecewise_saddle")]
    UnknownGame(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GameError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameSpec {
    /// `V = xy`; x minimizes V, y minimizes −V.
    BilinearXy,
    /// `V = (f(x) − 1)(y − 1)` with `f(x) = x` for `x < 0` and `x²` otherwise;
    /// x minimizes, y maximizes.
    PiecewiseSaddle,
}

impl std::str::FromStr for GameSpec {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear_xy" => Ok(GameSpec::BilinearXy),
            "piecewise_saddle" => Ok(GameSpec::PiecewiseSaddle),
            other => Err(GameError::UnknownGame(other.to_string())),
        }
    }
}

fn f(x: f64) -> f64 {
    if x < 0.0 {
        x
    } else {
        x * x
    }
}

fn f_prime(x: f64) -> f64 {
    if x < 0.0 {
        1.0
    } else {
        2.0 * x
    }
}

impl GameSpec {
    pub fn id(self) -> &'static str {
        match self {
            GameSpec::BilinearXy => "bilinear_xy",
            GameSpec::PiecewiseSaddle => "piecewise_saddle",
        }
    }

    pub fn value(self, x: f64, y: f64) -> f64 {
        match self {
            GameSpec::BilinearXy => x * y,
            GameSpec::PiecewiseSaddle => (f(x) - 1.0) * (y - 1.0),
        }
    }

    /// Each player's gradient of its own cost at `(x, y)`.
    pub fn gradients(self, x: f64, y: f64) -> (f64, f64) {
        match self {
            GameSpec::BilinearXy => (y, -x),
            GameSpec::PiecewiseSaddle => (f_prime(x) * (y - 1.0), -(f(x) - 1.0)),
        }
    }

    pub fn equilibrium(self) -> (f64, f64) {
        match self {
            GameSpec::BilinearXy => (0.0, 0.0),
            GameSpec::PiecewiseSaddle => (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameState {
    pub x: f64,
    pub y: f64,
    pub step: u64,
}

impl GameState {
    pub fn new(x: f64, y: f64) -> Self {
        GameState { x, y, step: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    pub eta: f64,
    pub steps: u64,
    /// Historical averaging coefficient for both players; `None` disables it.
    pub ha_lambda: Option<f64>,
    /// Update y from the already-updated x instead of the pre-step state.
    pub sequential: bool,
    /// Recorded with the run; the dynamics themselves draw no randomness.
    pub seed: u64,
}

impl DynamicsConfig {
    pub fn new(eta: f64, steps: u64) -> Self {
        DynamicsConfig {
            eta,
            steps,
            ha_lambda: None,
            sequential: false,
            seed: 0,
        }
    }

    pub fn with_ha(mut self, lambda: f64) -> Self {
        self.ha_lambda = Some(lambda);
        self
    }

    pub fn sequential(mut self, on: bool) -> Self {
        self.sequential = on;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(GameError::Eta(self.eta));
        }
        if self.steps == 0 {
            return Err(GameError::NoSteps);
        }
        Ok(())
    }
}

pub const CONVERGED_GRAD_NORM: f64 = 1e-4;
pub const CONVERGED_DISPLACEMENT: f64 = 1e-6;
pub const DISPLACEMENT_WINDOW: usize = 100;

/// Running means for both players when historical averaging is on.
#[derive(Debug, Clone)]
pub struct Dynamics {
    spec: GameSpec,
    cfg: DynamicsConfig,
    ha: Option<(HistoricalAverage, HistoricalAverage)>,
}

impl Dynamics {
    pub fn new(spec: GameSpec, cfg: DynamicsConfig) -> Result<Self> {
        cfg.validate()?;
        let ha = cfg
            .ha_lambda
            .map(|l| (HistoricalAverage::new(l), HistoricalAverage::new(l)));
        Ok(Dynamics { spec, cfg, ha })
    }

    /// One update of both players. With historical averaging each player's
    /// gradient gains `2λ(θ − θ̄)` against the mean of its earlier iterates.
    pub fn step(&mut self, s: GameState) -> GameState {
        let eta = self.cfg.eta;
        let (gx, gy) = self.spec.gradients(s.x, s.y);
        let x = s.x - eta * (gx + self.ha_pull_x(s.x));
        let y = if self.cfg.sequential {
            let (_, gy) = self.spec.gradients(x, s.y);
            s.y - eta * (gy + self.ha_pull_y(s.y))
        } else {
            s.y - eta * (gy + self.ha_pull_y(s.y))
        };
        GameState { x, y, step: s.step + 1 }
    }

    fn ha_pull_x(&mut self, x: f64) -> f64 {
        match &mut self.ha {
            Some((hx, _)) => pull(hx, x),
            None => 0.0,
        }
    }

    fn ha_pull_y(&mut self, y: f64) -> f64 {
        match &mut self.ha {
            Some((_, hy)) => pull(hy, y),
            None => 0.0,
        }
    }
}

fn pull(ha: &mut HistoricalAverage, v: f64) -> f64 {
    let g = ha.gradient(&[v]).expect("scalar history")[0];
    ha.update(&[v]).expect("scalar history");
    g
}

/// A single simultaneous step with fresh (empty) historical averages.
pub fn simultaneous_step(state: GameState, spec: GameSpec, cfg: &DynamicsConfig) -> Result<GameState> {
    Ok(Dynamics::new(spec, cfg.clone())?.step(state))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub x: f64,
    pub y: f64,
    /// Norm of the players' game gradients (historical term excluded).
    pub grad_norm: f64,
    /// Distance to the game's equilibrium.
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Converged { x: f64, y: f64, steps: u64 },
    Orbiting,
    Diverged { step: u64 },
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub spec: GameSpec,
    pub config: DynamicsConfig,
    pub trajectory: Vec<TrajectoryPoint>,
    pub verdict: Verdict,
}

impl Simulation {
    pub fn last(&self) -> &TrajectoryPoint {
        self.trajectory.last().expect("trajectory holds the initial point")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(file)
    }

    /// Header `step,x,y,grad_norm,radius`.
    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for p in &self.trajectory {
            out.serialize(p)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn point(spec: GameSpec, s: &GameState) -> TrajectoryPoint {
    let (gx, gy) = spec.gradients(s.x, s.y);
    let (ex, ey) = spec.equilibrium();
    TrajectoryPoint {
        step: s.step,
        x: s.x,
        y: s.y,
        grad_norm: gx.hypot(gy),
        radius: (s.x - ex).hypot(s.y - ey),
    }
}

/// Runs up to `cfg.steps` updates from `init`, stopping early once the
/// gradient norm is below [`CONVERGED_GRAD_NORM`] and the state moved less
/// than [`CONVERGED_DISPLACEMENT`] over the last [`DISPLACEMENT_WINDOW`] steps.
pub fn simulate(spec: GameSpec, cfg: &DynamicsConfig, init: (f64, f64)) -> Result<Simulation> {
    let mut dynamics = Dynamics::new(spec, cfg.clone())?;
    let mut state = GameState::new(init.0, init.1);
    if !state.is_finite() {
        return Err(GameError::NonFinite(init.0, init.1));
    }
    let mut trajectory = vec![point(spec, &state)];
    let mut window: VecDeque<(f64, f64)> = VecDeque::with_capacity(DISPLACEMENT_WINDOW + 1);
    window.push_back((state.x, state.y));
    let mut verdict = Verdict::Orbiting;

    for _ in 0..cfg.steps {
        state = dynamics.step(state);
        if !state.is_finite() {
            verdict = Verdict::Diverged { step: state.step };
            break;
        }
        let p = point(spec, &state);
        trajectory.push(p);
        window.push_back((state.x, state.y));
        if window.len() > DISPLACEMENT_WINDOW + 1 {
            window.pop_front();
        }
        if window.len() == DISPLACEMENT_WINDOW + 1 && p.grad_norm < CONVERGED_GRAD_NORM {
            let (ox, oy) = window[0];
            if (state.x - ox).hypot(state.y - oy) < CONVERGED_DISPLACEMENT {
                verdict = Verdict::Converged {
                    x: state.x,
                    y: state.y,
                    steps: state.step,
                };
                break;
            }
        }
    }
    Ok(Simulation {
        spec,
        config: cfg.clone(),
        trajectory,
        verdict,
    })
}

/// Step budgets and coefficients under which both games converge with
/// historical averaging. Found by sweeping; the slow `1/t` mean makes
/// a large λ or η overshoot and a small one crawl.
pub const HA_LAMBDA: f64 = 0.1;
pub const HA_ETA: f64 = 0.05;
pub const HA_STEP_BUDGET: u64 = 400_000;

pub fn ha_config() -> DynamicsConfig {
    DynamicsConfig::new(HA_ETA, HA_STEP_BUDGET).with_ha(HA_LAMBDA)
}
