//! Loss, gradients through closed-loop rollouts, and the training loop.
//!
//! Because every parameter vector yields a tracking-preserving controller,
//! training is plain unconstrained minimization of the empirical loss over a
//! fixed pool of sampled scenarios.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boost::{BoostConfig, BoostOperator};
use crate::closedloop::{self, RolloutResult};
use crate::error::{Error, Result};
use crate::plant::{self, DisturbanceSpec, Layout, Obstacle, Plant, PlantModel};
use crate::scalar::Scalar;
use crate::signals::Signal;
use crate::tape::Tape;

/// Weights of the stage cost
///
/// ```text
/// ℓ_t = Σ_i q ‖p_i − p̄_i‖² + r ‖u‖²
///     + ca Σ_{i<j} softplus(κ (d_min + m − ‖p_i − p_j‖))²
///     + co Σ_i Σ_obs w_obs softplus(κ (r_obs + m − ‖p_i − c_obs‖))²
/// ```
///
/// The safety margin `m` moves both barriers outward, so that the steep part
/// of the penalty is reached before contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub q: f64,
    pub r: f64,
    pub ca: f64,
    pub d_min: f64,
    pub co: f64,
    pub kappa: f64,
    pub margin: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            q: 1.0,
            r: 0.1,
            ca: 100.0,
            d_min: 0.5,
            co: 100.0,
            kappa: 10.0,
            margin: 0.0,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let w = [self.q, self.r, self.ca, self.d_min, self.co, self.kappa, self.margin];
        if w.iter().all(|v| v.is_finite() && *v >= 0.0) && self.q > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite, nonnegative, q > 0".into()))
        }
    }
}

/// Stage cost at one step. Planar positions are assumed for obstacles.
pub fn stage_loss<S: Scalar>(spec: &LossSpec, model: &PlantModel, obstacles: &[Obstacle], eta: &[S], u: &[S], x_ref: &[f64]) -> S {
    let d = model.spatial_dim;
    let mut terms: Vec<S> = Vec::new();
    for i in 0..model.robots {
        let p = model.position(eta, i);
        let j = model.pos_index(i);
        let e: Vec<S> = (0..d).map(|k| p[k] - x_ref[j + k]).collect();
        terms.push(S::dot(&e, &e) * spec.q);
        if spec.co > 0.0 && d == 2 {
            for o in obstacles {
                let dx = p[0] - o.center[0];
                let dy = p[1] - o.center[1];
                let dist = (dx * dx + dy * dy).sqrt();
                let b = ((-dist + (o.radius + spec.margin)) * spec.kappa).softplus();
                terms.push(b * b * (spec.co * o.weight));
            }
        }
    }
    if spec.ca > 0.0 {
        for i in 0..model.robots {
            for j in i + 1..model.robots {
                let (a, b) = (model.position(eta, i), model.position(eta, j));
                let diff: Vec<S> = (0..d).map(|k| a[k] - b[k]).collect();
                let dist = S::dot(&diff, &diff).sqrt();
                let s = ((-dist + (spec.d_min + spec.margin)) * spec.kappa).softplus();
                terms.push(s * s * spec.ca);
            }
        }
    }
    if spec.r > 0.0 {
        terms.push(S::dot(u, u) * spec.r);
    }
    S::sum(&terms)
}

/// Total loss over state and input traces against a reference signal.
pub fn loss<S: Scalar>(
    spec: &LossSpec,
    model: &PlantModel,
    obstacles: &[Obstacle],
    etas: &[Vec<S>],
    us: &[Vec<S>],
    x_ref: &Signal,
) -> S {
    let per_step: Vec<S> = etas
        .iter()
        .zip(us)
        .enumerate()
        .map(|(t, (e, u))| stage_loss(spec, model, obstacles, e, u, x_ref.at(t)))
        .collect();
    S::sum(&per_step)
}

/// Everything that defines the optimization problem except the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub model: PlantModel,
    pub plant: Plant,
    pub obstacles: Vec<Obstacle>,
    pub loss: LossSpec,
    pub boost: BoostConfig,
}

impl Problem {
    /// Perfect-model problem with the standard boosting architecture.
    pub fn new(model: PlantModel, layout: Layout, loss: LossSpec) -> Self {
        let boost = BoostConfig::standard(model.state_dim(), model.ref_dim(), model.control_dim());
        Self {
            plant: Plant::perfect(&model),
            model,
            obstacles: layout.obstacles(),
            loss,
            boost,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.boost.validate()?;
        if self.boost.disturbance_dim() != self.model.state_dim()
            || self.boost.ref_dim != self.model.ref_dim()
            || self.boost.control_dim() != self.model.control_dim()
        {
            return Err(Error::Config("boosting operator dimensions do not match the plant".into()));
        }
        Ok(())
    }

    /// Per-step loss trace of a finished rollout.
    pub fn loss_trace(&self, res: &RolloutResult, x_ref: &Signal) -> Vec<f64> {
        (0..res.eta.len())
            .map(|t| stage_loss(&self.loss, &self.model, &self.obstacles, res.eta.at(t), res.u.at(t), x_ref.at(t)))
            .collect()
    }
}

/// One training or test draw `(w, x_ref)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub w: Signal,
    pub x_ref: Signal,
}

/// Draws `n` scenarios for a planar layout. With `fixed_targets` every
/// scenario uses the same target pair; otherwise targets are sampled from the
/// layout's admissible band.
pub fn sample_scenarios<R: Rng + ?Sized>(
    model: &PlantModel,
    layout: Layout,
    disturbance: &DisturbanceSpec,
    fixed_targets: Option<&[[f64; 2]]>,
    n: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<Scenario>> {
    let starts = layout.starts();
    (0..n)
        .map(|_| {
            let w = plant::sample_disturbance(disturbance, model, &starts, horizon, rng)?;
            let targets = match fixed_targets {
                Some(t) => t.to_vec(),
                None => plant::sample_reference(layout, model.robots, rng)?,
            };
            let r = plant::reference_vector(model, &targets);
            Ok(Scenario {
                w,
                x_ref: Signal::constant(&r, horizon),
            })
        })
        .collect()
}

/// Loss of one scenario for parameters already lifted to `S`.
pub fn scenario_loss<S: Scalar>(problem: &Problem, m: &BoostOperator<S>, sc: &Scenario) -> Result<S> {
    let (etas, us) = closedloop::rollout_generic(&problem.plant, &problem.model, m, &sc.w, &sc.x_ref)?;
    Ok(loss(&problem.loss, &problem.model, &problem.obstacles, &etas, &us, &sc.x_ref))
}

/// Loss of one scenario in plain floating point.
pub fn scenario_value(problem: &Problem, theta: &[f64], sc: &Scenario) -> Result<f64> {
    let m = problem.boost.build(theta)?;
    scenario_loss(problem, &m, sc)
}

/// Loss and its gradient with respect to `θ` for one scenario, by reverse
/// mode through the realization, the rollout and the loss.
pub fn loss_and_gradient(problem: &Problem, theta: &[f64], sc: &Scenario) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::with_capacity(1 << 16, 1 << 20);
    let th = tape.vars(theta);
    let m = problem.boost.build(&th)?;
    let l = scenario_loss(problem, &m, sc)?;
    let value = l.value();
    let g = tape.backward(l)?;
    Ok((value, g.wrt_all(&th)))
}

/// Ordered parallel map. Implementations must return results in index
/// order so that reductions are deterministic.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Mean loss and mean gradient over `batch`, reduced in index order.
pub fn batch_gradient<E: Executor>(exec: &E, problem: &Problem, theta: &[f64], batch: &[&Scenario]) -> Result<(f64, Vec<f64>)> {
    let parts = exec.map(batch.len(), |i| loss_and_gradient(problem, theta, batch[i]));
    let mut total = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for p in parts {
        let (l, g) = p?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let n = batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Mean loss over `scenarios` in plain floating point.
pub fn mean_loss<E: Executor>(exec: &E, problem: &Problem, theta: &[f64], scenarios: &[Scenario]) -> Result<f64> {
    if scenarios.is_empty() {
        return Ok(0.0);
    }
    let m = problem.boost.build(theta)?;
    let parts = exec.map(scenarios.len(), |i| scenario_loss(problem, &m, &scenarios[i]));
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / scenarios.len() as f64)
}

/// Adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - libm::pow(self.beta1, self.t as f64);
        let b2t = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            theta[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
        }
    }
}

/// Rescales `g` to global norm at most `max_norm`; returns whether it did.
pub fn clip_gradient(g: &mut [f64], max_norm: f64) -> bool {
    let n = libm::sqrt(g.iter().map(|x| x * x).sum());
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        g.iter_mut().for_each(|x| *x *= s);
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Size of the scenario pool.
    pub samples: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub horizon: usize,
    pub seed: u64,
    pub init_std: f64,
    pub clip_norm: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine_decay: bool,
    /// When set, every training scenario uses this target pair.
    pub fixed_targets: Option<Vec<[f64; 2]>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            samples: 30,
            epochs: 100,
            lr: 1e-4,
            batch_size: 10,
            horizon: 200,
            seed: 0,
            init_std: 0.01,
            clip_norm: 10.0,
            cosine_decay: false,
            fixed_targets: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.batch_size == 0 || self.horizon == 0 {
            return Err(Error::Config("samples, batch size and horizon must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::Config("learning rate, clip norm and init std must be positive".into()));
        }
        Ok(())
    }
}

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    /// `history[k]`: mean pool loss after `k` epochs.
    pub history: Vec<f64>,
    /// Number of clipped updates per epoch.
    pub clipped: Vec<usize>,
}

/// Minibatch Adam over a fixed pool, reshuffled every epoch. `observe` is
/// called after every epoch with `(epoch, θ, pool loss)`.
pub fn train_observed<E, R, F>(
    exec: &E,
    problem: &Problem,
    cfg: &TrainConfig,
    pool: &[Scenario],
    theta0: Vec<f64>,
    rng: &mut R,
    mut observe: F,
) -> Result<TrainOutcome>
where
    E: Executor,
    R: Rng + ?Sized,
    F: FnMut(usize, &[f64], f64),
{
    cfg.validate()?;
    let mut theta = theta0;
    if theta.len() != problem.boost.n_params() {
        return Err(Error::DimensionMismatch {
            expected: problem.boost.n_params(),
            got: theta.len(),
        });
    }
    let mut opt = Adam::new(theta.len(), cfg.lr);
    let mut history = vec![mean_loss(exec, problem, &theta, pool)?];
    let mut clipped = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.cosine_decay {
            let progress = (epoch - 1) as f64 / cfg.epochs as f64;
            opt.lr = 0.5 * cfg.lr * (1.0 + libm::cos(core::f64::consts::PI * progress));
        }
        order.shuffle(rng);
        let mut n_clipped = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Scenario> = chunk.iter().map(|i| &pool[*i]).collect();
            let (l, mut g) = batch_gradient(exec, problem, &theta, &batch)?;
            if !(l <= DIVERGENCE_LOSS) {
                return Err(Error::Divergence { epoch, loss: l });
            }
            if clip_gradient(&mut g, cfg.clip_norm) {
                n_clipped += 1;
            }
            opt.step(&mut theta, &g);
        }
        let l = mean_loss(exec, problem, &theta, pool)?;
        if !(l <= DIVERGENCE_LOSS) {
            return Err(Error::Divergence { epoch, loss: l });
        }
        history.push(l);
        clipped.push(n_clipped);
        observe(epoch, &theta, l);
    }
    Ok(TrainOutcome { theta, history, clipped })
}

/// [`train_observed`] without an observer.
pub fn train<E: Executor, R: Rng + ?Sized>(
    exec: &E,
    problem: &Problem,
    cfg: &TrainConfig,
    pool: &[Scenario],
    theta0: Vec<f64>,
    rng: &mut R,
) -> Result<TrainOutcome> {
    train_observed(exec, problem, cfg, pool, theta0, rng, |_, _, _| {})
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Pool = 0,
    Init = 1,
    Shuffle = 2,
    Test = 3,
    Simulate = 4,
    Robust = 5,
}

/// Generator for one stream of `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Samples the pool, initializes `θ` and trains, all from `cfg.seed`.
/// Returns the pool together with the outcome.
pub fn run_training<E, F>(
    exec: &E,
    problem: &Problem,
    layout: Layout,
    disturbance: &DisturbanceSpec,
    cfg: &TrainConfig,
    observe: F,
) -> Result<(Vec<Scenario>, TrainOutcome)>
where
    E: Executor,
    F: FnMut(usize, &[f64], f64),
{
    cfg.validate()?;
    problem.validate()?;
    let pool = sample_scenarios(
        &problem.model,
        layout,
        disturbance,
        cfg.fixed_targets.as_deref(),
        cfg.samples,
        cfg.horizon,
        &mut stream_rng(cfg.seed, Stream::Pool),
    )?;
    let theta0 = problem.boost.init_params(cfg.init_std, &mut stream_rng(cfg.seed, Stream::Init));
    let out = train_observed(exec, problem, cfg, &pool, theta0, &mut stream_rng(cfg.seed, Stream::Shuffle), observe)?;
    Ok((pool, out))
}

/// Test-set statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenarios: usize,
    pub mean_loss: f64,
    /// Scenarios in which two robots came closer than `d_min`.
    pub collisions: usize,
    /// Robot-steps spent inside an obstacle, summed over scenarios.
    pub penetration_frames: usize,
    /// Scenarios with neither a collision nor a penetration.
    pub collision_free: usize,
    /// Mean over scenarios of the largest final position error.
    pub mean_final_error: f64,
}

impl Metrics {
    pub fn collision_free_fraction(&self) -> f64 {
        if self.scenarios == 0 {
            0.0
        } else {
            self.collision_free as f64 / self.scenarios as f64
        }
    }
}

struct ScenarioStats {
    loss: f64,
    collided: bool,
    penetrations: usize,
    final_error: f64,
}

fn scenario_stats(problem: &Problem, m: &BoostOperator<f64>, sc: &Scenario) -> Result<ScenarioStats> {
    let res = closedloop::rollout(&problem.plant, &problem.model, m, &sc.w, &sc.x_ref)?;
    let model = &problem.model;
    let loss: f64 = problem.loss_trace(&res, &sc.x_ref).iter().sum();
    let mut collided = false;
    let mut penetrations = 0;
    for t in 0..res.eta.len() {
        let eta = res.eta.at(t);
        for i in 0..model.robots {
            let p = model.position(eta, i);
            if model.spatial_dim == 2 {
                for o in &problem.obstacles {
                    if libm::hypot(p[0] - o.center[0], p[1] - o.center[1]) < o.radius {
                        penetrations += 1;
                    }
                }
            }
            for j in i + 1..model.robots {
                let q = model.position(eta, j);
                let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                if libm::sqrt(d2) < problem.loss.d_min {
                    collided = true;
                }
            }
        }
    }
    let last = res.e.at(res.e.horizon());
    let final_error = (0..model.robots)
        .map(|i| {
            let j = model.pos_index(i);
            libm::sqrt(last[j..j + model.spatial_dim].iter().map(|v| v * v).sum())
        })
        .fold(0.0f64, f64::max);
    Ok(ScenarioStats {
        loss,
        collided,
        penetrations,
        final_error,
    })
}

/// Monte Carlo evaluation of `θ` on held-out scenarios.
pub fn evaluate<E: Executor>(exec: &E, problem: &Problem, theta: &[f64], scenarios: &[Scenario]) -> Result<Metrics> {
    let n = scenarios.len();
    if n == 0 {
        return Ok(Metrics::default());
    }
    let m = problem.boost.build(theta)?;
    let parts = exec.map(n, |i| scenario_stats(problem, &m, &scenarios[i]));
    let mut out = Metrics {
        scenarios: n,
        ..Metrics::default()
    };
    for p in parts {
        let s = p?;
        out.mean_loss += s.loss / n as f64;
        out.mean_final_error += s.final_error / n as f64;
        out.collisions += s.collided as usize;
        out.penetration_frames += s.penetrations;
        if !s.collided && s.penetrations == 0 {
            out.collision_free += 1;
        }
    }
    Ok(out)
}
