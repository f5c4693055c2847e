//! The four subcommands. Each takes a validated configuration and an output
//! directory, writes its artifacts there and returns a summary.

use std::path::{Path, PathBuf};

use rand::Rng;
use rpb_core::boost::BoostConfig;
use rpb_core::closedloop::{self, RolloutResult};
use rpb_core::plant::{self, Layout, PlantModel};
use rpb_core::robust::{self, GainReport, MismatchOperator, RobustValidation};
use rpb_core::train::{self, stream_rng, Metrics, Problem, Stream};
use rpb_core::Signal;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::exec::Rayon;
use crate::io::{self, Checkpoint, CHECKPOINT_VERSION};
use crate::plot::{self, Scene};

fn operator_config(cfg: &ExperimentConfig, problem: &Problem, ck: Option<&Checkpoint>) -> CliResult<BoostConfig> {
    let boost = match ck {
        Some(ck) => ck.boost.clone(),
        None => cfg.boost.build(&problem.model),
    };
    let mut p = problem.clone();
    p.boost = boost.clone();
    p.validate()?;
    Ok(boost)
}

fn positions(model: &PlantModel, res: &RolloutResult) -> Vec<Vec<[f64; 2]>> {
    (0..model.robots)
        .map(|i| {
            res.eta
                .rows()
                .map(|eta| {
                    let p = model.position(eta, i);
                    [p[0], p[1]]
                })
                .collect()
        })
        .collect()
}

fn scene(title: String, layout: Layout, problem: &Problem, targets: Vec<[f64; 2]>) -> Scene {
    Scene {
        title,
        obstacles: problem.obstacles.clone(),
        starts: layout.starts(),
        targets,
        paths: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub targets: Vec<[f64; 2]>,
    pub loss: f64,
    /// Largest distance of a robot from its target at the last step.
    pub final_error: f64,
    pub min_robot_distance: f64,
    pub penetration_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub boosted: bool,
    pub rollouts: Vec<RolloutSummary>,
    pub svg: PathBuf,
}

fn summarize(problem: &Problem, res: &RolloutResult, targets: Vec<[f64; 2]>, loss: f64) -> RolloutSummary {
    let paths = positions(&problem.model, res);
    let last = |i: usize| *paths[i].last().expect("nonempty rollout");
    let final_error = targets
        .iter()
        .enumerate()
        .map(|(i, t)| (last(i)[0] - t[0]).hypot(last(i)[1] - t[1]))
        .fold(0.0, f64::max);
    let mut min_robot_distance = f64::INFINITY;
    let mut penetration_frames = 0;
    for t in 0..paths[0].len() {
        for i in 0..paths.len() {
            let p = paths[i][t];
            penetration_frames += problem
                .obstacles
                .iter()
                .filter(|o| (p[0] - o.center[0]).hypot(p[1] - o.center[1]) < o.radius)
                .count();
            for q in &paths[i + 1..] {
                min_robot_distance = min_robot_distance.min((p[0] - q[t][0]).hypot(p[1] - q[t][1]));
            }
        }
    }
    RolloutSummary {
        targets,
        loss,
        final_error,
        min_robot_distance,
        penetration_frames,
    }
}

/// Rolls out the true plant, boosted by the checkpoint or with `M ≡ 0`,
/// writes per-rollout CSVs, `summary.json` and `trajectories.svg`.
pub fn simulate(cfg: &ExperimentConfig, ck: Option<&Checkpoint>, out: &Path) -> CliResult<SimulateSummary> {
    let problem = cfg.problem_with_mismatch();
    let boost = operator_config(cfg, &problem, ck)?;
    // zero parameters give M2 ≡ 0, hence M ≡ 0 and the base loop
    let theta = ck.map_or_else(|| vec![0.0; boost.n_params()], |c| c.theta.clone());
    let m = boost.build(&theta)?;
    let model = &problem.model;
    let horizon = cfg.train.horizon;
    let mut rng = stream_rng(cfg.seed, Stream::Simulate);
    io::create_dir(out)?;
    let title = if ck.is_some() { "boosted" } else { "base controller" };
    let mut pic = scene(title.into(), cfg.layout, &problem, Vec::new());
    let mut rollouts = Vec::new();
    for k in 0..cfg.simulate.rollouts {
        let targets = if cfg.simulate.sample_targets {
            plant::sample_reference(cfg.layout, model.robots, &mut rng)?
        } else {
            cfg.simulate.targets.clone().unwrap_or_else(|| cfg.layout.benchmark_targets())
        };
        let w = plant::sample_disturbance(&cfg.disturbance, model, &cfg.layout.starts(), horizon, &mut rng)?;
        let x_ref = Signal::constant(&plant::reference_vector(model, &targets), horizon);
        let res = closedloop::rollout(&problem.plant, model, &m, &w, &x_ref)?;
        let trace = problem.loss_trace(&res, &x_ref);
        io::write_rollout(&out.join(format!("rollout_{k:03}")), model, &res, &trace)?;
        pic.paths.push(positions(model, &res));
        for t in &targets {
            if !pic.targets.contains(t) {
                pic.targets.push(*t);
            }
        }
        rollouts.push(summarize(&problem, &res, targets, trace.iter().sum()));
    }
    let svg = out.join("trajectories.svg");
    std::fs::write(&svg, plot::render(&pic)).map_err(crate::error::write_err(&svg))?;
    let summary = SimulateSummary {
        boosted: ck.is_some(),
        rollouts,
        svg,
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub checkpoint: PathBuf,
}

/// Trains on the nominal model and writes `checkpoint.json`,
/// `loss_history.csv` and the resolved `config.toml`. With
/// `checkpoint_every = k > 0`, also `checkpoint_epoch_<n>.json` every `k`
/// epochs.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> CliResult<TrainSummary> {
    let problem = cfg.problem();
    problem.validate()?;
    let tc = cfg.train_config();
    io::create_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    let make = |theta: &[f64], epoch: usize, history: Vec<f64>| Checkpoint {
        version: CHECKPOINT_VERSION,
        boost: problem.boost.clone(),
        theta: theta.to_vec(),
        layout: cfg.layout,
        epoch,
        history,
        fixed_targets: tc.fixed_targets.clone(),
    };
    // pool losses after epochs 1, 2, ... (epoch 0 is only known at the end)
    let mut history = Vec::new();
    let mut pending: Option<CliError> = None;
    let every = cfg.checkpoint_every;
    let (_, outcome) = train::run_training(&Rayon, &problem, cfg.layout, &cfg.disturbance, &tc, |epoch, theta, l| {
        history.push(l);
        if every > 0 && epoch % every == 0 && pending.is_none() {
            let ck = make(theta, epoch, history.clone());
            if let Err(e) = ck.save(&out.join(format!("checkpoint_epoch_{epoch:04}.json"))) {
                pending = Some(e);
            }
        }
    })?;
    if let Some(e) = pending {
        return Err(e);
    }
    let path = out.join("checkpoint.json");
    make(&outcome.theta, tc.epochs, outcome.history.clone()).save(&path)?;
    io::write_series_csv(&out.join("loss_history.csv"), "epoch", "loss", &outcome.history)?;
    Ok(TrainSummary {
        initial_loss: outcome.history[0],
        final_loss: *outcome.history.last().expect("history has epoch 0"),
        epochs: tc.epochs,
        checkpoint: path,
    })
}

/// Held-out scenarios for `cfg`, drawn from the test stream of its seed.
pub fn test_scenarios(cfg: &ExperimentConfig) -> CliResult<Vec<train::Scenario>> {
    Ok(train::sample_scenarios(
        &cfg.model(),
        cfg.layout,
        &cfg.disturbance,
        cfg.eval.targets.as_deref(),
        cfg.eval.scenarios,
        cfg.train.horizon,
        &mut stream_rng(cfg.seed, Stream::Test),
    )?)
}

/// Evaluates the checkpoint on `eval.scenarios` held-out draws and writes
/// `metrics.json`.
pub fn eval(cfg: &ExperimentConfig, ck: &Checkpoint, out: &Path) -> CliResult<Metrics> {
    let mut problem = cfg.problem_with_mismatch();
    problem.boost = operator_config(cfg, &problem, Some(ck))?;
    let scenarios = test_scenarios(cfg)?;
    let metrics = train::evaluate(&Rayon, &problem, &ck.theta, &scenarios)?;
    io::create_dir(out)?;
    io::write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub validation: RobustValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSummary {
    /// Whether `α_Δ` came from the mismatch's closed form.
    pub analytic_delta: bool,
    /// Gain of `M` at unit output scaling.
    pub unit_gain: f64,
    /// Scaling chosen for the target margin.
    pub beta: f64,
    pub validation: RobustValidation,
    pub sweep: Vec<SweepRow>,
}

impl RobustSummary {
    pub fn table(&self) -> String {
        let r = &self.validation.report;
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        let mut s = String::new();
        s.push_str(&format!(
            "alpha_delta {:.6}{}\n",
            r.alpha_delta,
            if self.analytic_delta { "" } else { " (empirical)" }
        ));
        s.push_str(&format!("alpha_fx    {:.6}\n", r.alpha_fx));
        s.push_str(&format!("alpha_m     {:.6}  (beta {:.6})\n", r.alpha_m, self.beta));
        s.push_str(&format!(
            "margin      {:.6}  {}\n",
            r.margin,
            if r.admissible { "admissible" } else { "NOT admissible (advisory)" }
        ));
        s.push_str(&format!("u gain      {}\n", opt(r.u_gain)));
        s.push_str(&format!("e gain      {}\n", opt(r.e_gain)));
        let v = &self.validation;
        s.push_str(&format!(
            "validation  {}/{} decaying, max |u|/|w| {:.6}, max |e|/|w| {:.6} -> {}\n",
            v.decaying,
            v.trials,
            v.max_u_ratio,
            v.max_e_ratio,
            if v.passed() { "ok" } else { "violated" }
        ));
        s
    }
}

/// Estimates the gains, picks `β` for the configured margin, validates the
/// scaled loop by simulation and sweeps multiples of `β`. Writes
/// `gain_report.json` and `beta_sweep.csv`. A non-positive margin is
/// reported, not treated as an error.
pub fn check_robustness(cfg: &ExperimentConfig, ck: Option<&Checkpoint>, out: &Path) -> CliResult<RobustSummary> {
    let problem = cfg.problem_with_mismatch();
    let mut boost = operator_config(cfg, &problem, ck)?;
    let rc = &cfg.robust;
    let mut rng = stream_rng(cfg.seed, Stream::Robust);
    let theta = match ck {
        Some(ck) => ck.theta.clone(),
        None => boost.init_params(rc.init_std, &mut rng),
    };
    boost.scale = 1.0;
    let unit_gain = boost.build(&theta)?.values().gain_bound();
    let (alpha_delta, analytic_delta) = match cfg.mismatch.analytic_gain() {
        Some(g) => (g, true),
        None => {
            let mut op = MismatchOperator { plant: &problem.plant };
            let g = robust::estimate_incremental_gain(&mut op, rc.gain_trials, rc.gain_horizon, 2.0, &mut rng)?;
            (rc.safety_factor * g, false)
        }
    };
    let alpha_fx =
        rc.safety_factor * robust::estimate_fx_gain(&problem.model, rc.gain_trials, rc.gain_horizon, 2.0, &mut rng)?;
    let beta = if alpha_delta == 0.0 {
        cfg.boost.scale
    } else {
        robust::scale_for_margin(alpha_delta, alpha_fx, unit_gain, rc.target_margin)
    };
    let validate = |beta: f64, rng: &mut rand_chacha::ChaCha8Rng| -> CliResult<RobustValidation> {
        let mut b = boost.clone();
        b.scale = beta;
        let m = b.build(&theta)?;
        let report = GainReport::new(alpha_delta, alpha_fx, beta * unit_gain);
        Ok(robust::validate_robust_tracking(
            &problem.plant,
            &problem.model,
            &m,
            report,
            rc.trials,
            rc.horizon,
            rng,
        )?)
    };
    let validation = validate(beta, &mut rng)?;
    let mut sweep = Vec::new();
    let sweep_seed: u64 = rng.random();
    for mult in &rc.sweep {
        // each sweep point sees the same disturbances
        let mut r = stream_rng(sweep_seed, Stream::Robust);
        let b = mult * beta;
        sweep.push(SweepRow {
            beta: b,
            validation: validate(b, &mut r)?,
        });
    }
    let summary = RobustSummary {
        analytic_delta,
        unit_gain,
        beta,
        validation,
        sweep,
    };
    io::create_dir(out)?;
    io::write_json(&out.join("gain_report.json"), &summary)?;
    write_sweep_csv(&out.join("beta_sweep.csv"), &summary.sweep)?;
    Ok(summary)
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "beta",
        "alpha_m",
        "margin",
        "admissible",
        "u_gain_bound",
        "e_gain_bound",
        "max_u_ratio",
        "max_e_ratio",
        "decaying",
        "trials",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        let v = &r.validation;
        w.write_record([
            r.beta.to_string(),
            v.report.alpha_m.to_string(),
            v.report.margin.to_string(),
            v.report.admissible.to_string(),
            opt(v.report.u_gain),
            opt(v.report.e_gain),
            v.max_u_ratio.to_string(),
            v.max_e_ratio.to_string(),
            v.decaying.to_string(),
            v.trials.to_string(),
        ])?;
    }
    w.flush().map_err(crate::error::write_err(path))
}
