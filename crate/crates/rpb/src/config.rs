//! Experiment configuration, stored as a single TOML file.
//!
//! Every table is optional; missing keys take the defaults below. A minimal
//! file that trains the corridor benchmark with sampled targets:
//!
//! ```toml
//! layout = "corridor"
//! seed = 1
//! output_dir = "out/corridor"
//!
//! [train]
//! epochs = 100
//! lr = 0.01
//! ```
//!
//! The top-level `seed` drives every random stream (training pool, initial
//! parameters, shuffling, test draws). `train.seed` is ignored on load and
//! overwritten with it, so one number reproduces a run.

use std::fs;
use std::path::{Path, PathBuf};

use rpb_core::boost::{BoostConfig, Gate};
use rpb_core::plant::{apply_mismatch, DisturbanceSpec, Layout, MismatchSpec, PlantModel, RobotParams};
use rpb_core::ren::RenDims;
use rpb_core::train::{LossSpec, Problem, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{read_err, write_err, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub layout: Layout,
    pub robot: RobotParams,
    pub loss: LossSpec,
    pub train: TrainConfig,
    pub mismatch: MismatchSpec,
    pub disturbance: DisturbanceSpec,
    pub boost: BoostSettings,
    pub eval: EvalConfig,
    pub simulate: SimulateConfig,
    pub robust: RobustConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            checkpoint_every: 0,
            layout: Layout::Corridor,
            robot: RobotParams::default(),
            loss: LossSpec::default(),
            train: TrainConfig::default(),
            mismatch: MismatchSpec::none(),
            disturbance: DisturbanceSpec::default(),
            boost: BoostSettings::default(),
            eval: EvalConfig::default(),
            simulate: SimulateConfig::default(),
            robust: RobustConfig::default(),
        }
    }
}

/// Architecture of the boosting operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostSettings {
    pub state_dim: usize,
    pub nonlinear_dim: usize,
    pub hidden: Vec<usize>,
    pub bound: f64,
    pub scale: f64,
    pub gate: Gate,
}

impl Default for BoostSettings {
    fn default() -> Self {
        Self {
            state_dim: 12,
            nonlinear_dim: 12,
            hidden: vec![15, 20, 14],
            bound: 1.0,
            scale: 1.0,
            gate: Gate::Hadamard,
        }
    }
}

impl BoostSettings {
    pub fn build(&self, model: &PlantModel) -> BoostConfig {
        BoostConfig {
            ren: RenDims::new(self.state_dim, self.nonlinear_dim, model.state_dim(), model.control_dim()),
            hidden: self.hidden.clone(),
            ref_dim: model.ref_dim(),
            bound: self.bound,
            scale: self.scale,
            gate: self.gate,
        }
    }
}

/// Held-out evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of test scenarios.
    pub scenarios: usize,
    /// Evaluate every scenario on this target pair instead of sampled ones.
    pub targets: Option<Vec<[f64; 2]>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scenarios: 50,
            targets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub rollouts: usize,
    /// Target pair; the layout's benchmark pair when absent.
    pub targets: Option<Vec<[f64; 2]>>,
    /// Sample targets from the layout band instead of using `targets`.
    pub sample_targets: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            rollouts: 1,
            targets: None,
            sample_targets: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    /// Validation rollouts.
    pub trials: usize,
    pub horizon: usize,
    /// Random input pairs for each empirical gain estimate.
    pub gain_trials: usize,
    pub gain_horizon: usize,
    /// Multiplier applied to the empirical estimate of the plant gain.
    pub safety_factor: f64,
    /// Margin the scaling `β` is chosen for.
    pub target_margin: f64,
    /// Multiples of the chosen `β` to sweep.
    pub sweep: Vec<f64>,
    /// Parameter std when no checkpoint is given.
    pub init_std: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            horizon: 1000,
            gain_trials: 120,
            gain_horizon: 200,
            safety_factor: 1.5,
            target_margin: 0.5,
            sweep: vec![0.25, 0.5, 1.0, 1.5, 2.0, 3.0],
            init_std: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(read_err(path))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always representable")
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_toml()).map_err(write_err(path))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.robot.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.mismatch.validate()?;
        self.boost.build(&self.model()).validate()?;
        let bad_pair = |t: &Option<Vec<[f64; 2]>>| t.as_ref().is_some_and(|t| t.len() != 2);
        if bad_pair(&self.train.fixed_targets) || bad_pair(&self.eval.targets) || bad_pair(&self.simulate.targets) {
            return Err(CliError::Config("target lists must name one target per robot (2)".into()));
        }
        if !(self.robust.safety_factor >= 1.0) || !(0.0..1.0).contains(&self.robust.target_margin) {
            return Err(CliError::Config("robust: safety_factor ≥ 1 and 0 ≤ target_margin < 1 required".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    /// The internal model (two planar robots).
    pub fn model(&self) -> PlantModel {
        PlantModel::new(2, 2, self.robot.clone())
    }

    /// Training problem on the nominal model. Mismatch only enters
    /// robustness checks.
    pub fn problem(&self) -> Problem {
        let model = self.model();
        let mut p = Problem::new(model.clone(), self.layout, self.loss.clone());
        p.boost = self.boost.build(&model);
        p
    }

    pub fn problem_with_mismatch(&self) -> Problem {
        let mut p = self.problem();
        p.plant = apply_mismatch(self.mismatch, &p.model);
        p
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t
    }
}
