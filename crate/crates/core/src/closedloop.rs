//! Closed-loop rollouts of the internal-model architecture.
//!
//! At every step the controller compares the measured state with the
//! prediction of its internal model to recover `ŵ_t`, feeds `(ŵ_t, x_ref,t)`
//! to the boosting operator, and applies the result as a target offset:
//!
//! ```text
//! ŵ_t    = η_t − f̂(η_{t−1}, u_{t−1}, x_ref,t−1)     (ŵ_0 = η_0)
//! u_t    = M_t(ŵ_{t:0}, x_ref,t:0)
//! η_{t+1} = f(η_t, u_t, x_ref,t) + w_{t+1}           (η_0 = w_0)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::boost::{BoostOperator, BoostRunner};
use crate::error::{Error, Result};
use crate::plant::{Plant, PlantModel};
use crate::scalar::Scalar;
use crate::signals::{lp_norm, tail_energy, CausalOperator, Signal};

/// Traces of one rollout over `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub eta: Signal,
    pub u: Signal,
    /// `e_t = x_t − x_ref,t`.
    pub e: Signal,
    pub w_hat: Signal,
}

impl RolloutResult {
    pub fn horizon(&self) -> usize {
        self.eta.horizon()
    }
}

fn check_inputs(model: &PlantModel, w: &Signal, x_ref: &Signal) -> Result<()> {
    if w.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.state_dim(),
            got: w.dim(),
        });
    }
    if x_ref.dim() != model.ref_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.ref_dim(),
            got: x_ref.dim(),
        });
    }
    if x_ref.len() < w.len() {
        return Err(Error::HistoryMismatch {
            needed: w.len(),
            available: x_ref.len(),
        });
    }
    if w.at(0)[model.x_dim()..].iter().any(|v| *v != 0.0) {
        return Err(Error::InvalidSignal("w_0 must not act on the integrators".into()));
    }
    Ok(())
}

/// Rollout with any causal operator on the stacked input `(ŵ_t, x_ref,t)`.
/// `plant` is the true system, `model` the internal model.
pub fn rollout_with<O: CausalOperator + ?Sized>(
    plant: &Plant,
    model: &PlantModel,
    op: &mut O,
    w: &Signal,
    x_ref: &Signal,
) -> Result<RolloutResult> {
    check_inputs(model, w, x_ref)?;
    let horizon = w.horizon();
    let (nq, nu, nx) = (model.state_dim(), model.control_dim(), model.x_dim());
    if op.input_dim() != nq + model.ref_dim() || op.output_dim() != nu {
        return Err(Error::DimensionMismatch {
            expected: nq + model.ref_dim(),
            got: op.input_dim(),
        });
    }
    op.reset();
    let mut eta = Signal::zeros(nq, horizon);
    let mut u = Signal::zeros(nu, horizon);
    let mut w_hat = Signal::zeros(nq, horizon);
    let mut e = Signal::zeros(nx, horizon);
    eta.at_mut(0).copy_from_slice(w.at(0));
    let mut input = vec![0.0; nq + model.ref_dim()];
    for t in 0..=horizon {
        if t == 0 {
            w_hat.at_mut(0).copy_from_slice(eta.at(0));
        } else {
            let pred = model.nominal(eta.at(t - 1), u.at(t - 1), x_ref.at(t - 1));
            for k in 0..nq {
                w_hat.at_mut(t)[k] = eta.at(t)[k] - pred[k];
            }
        }
        input[..nq].copy_from_slice(w_hat.at(t));
        input[nq..].copy_from_slice(x_ref.at(t));
        op.step(&input, u.at_mut(t));
        for k in 0..nx {
            e.at_mut(t)[k] = eta.at(t)[k] - x_ref.at(t)[k];
        }
        if t < horizon {
            let next = plant
                .step(eta.at(t), u.at(t), x_ref.at(t), w.at(t + 1))
                .map_err(|_| Error::IntegrationBlowup { step: t + 1 })?;
            eta.at_mut(t + 1).copy_from_slice(&next);
        }
    }
    if !u.is_finite() {
        return Err(Error::IntegrationBlowup { step: horizon });
    }
    Ok(RolloutResult { eta, u, e, w_hat })
}

/// Rollout with a boosting operator.
pub fn rollout(plant: &Plant, model: &PlantModel, m: &BoostOperator<f64>, w: &Signal, x_ref: &Signal) -> Result<RolloutResult> {
    rollout_with(plant, model, &mut BoostRunner::new(m), w, x_ref)
}

/// The same loop written against [`Scalar`], for differentiation. Returns the
/// state and input traces, one vector per step.
pub fn rollout_generic<S: Scalar>(
    plant: &Plant,
    model: &PlantModel,
    m: &BoostOperator<S>,
    w: &Signal,
    x_ref: &Signal,
) -> Result<(Vec<Vec<S>>, Vec<Vec<S>>)> {
    check_inputs(model, w, x_ref)?;
    let horizon = w.horizon();
    let nq = model.state_dim();
    let mut state = m.initial_state();
    let mut etas: Vec<Vec<S>> = Vec::with_capacity(horizon + 1);
    let mut us: Vec<Vec<S>> = Vec::with_capacity(horizon + 1);
    etas.push(w.at(0).iter().map(|v| S::cst(*v)).collect());
    for t in 0..=horizon {
        let r: Vec<S> = x_ref.at(t).iter().map(|v| S::cst(*v)).collect();
        let w_hat: Vec<S> = if t == 0 {
            etas[0].clone()
        } else {
            let r_prev: Vec<S> = x_ref.at(t - 1).iter().map(|v| S::cst(*v)).collect();
            let pred = model.nominal(&etas[t - 1], &us[t - 1], &r_prev);
            (0..nq).map(|k| etas[t][k] - pred[k]).collect()
        };
        let u = m.step(&mut state, &w_hat, &r)?;
        if t < horizon {
            let mut next = plant.f(&etas[t], &u, &r);
            for (n, wv) in next.iter_mut().zip(w.at(t + 1)) {
                *n = *n + *wv;
            }
            if !next.iter().all(|v| v.value().is_finite()) {
                return Err(Error::IntegrationBlowup { step: t + 1 });
            }
            etas.push(next);
        }
        us.push(u);
    }
    Ok((etas, us))
}

/// `tail_energy(s, t0) / ‖s‖`, zero for a zero signal.
pub fn tail_ratio(s: &Signal, t0: usize) -> Result<f64> {
    let total = lp_norm(s, 2.0)?;
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(tail_energy(s, t0, 2.0)? / total)
}

/// A causal state-feedback policy `u_t = C_t(η_{t:0}, x_ref,t:0)`.
pub trait Policy {
    fn reset(&mut self);
    fn act(&mut self, eta: &[f64], x_ref: &[f64]) -> Vec<f64>;
}

/// Closed loop of the true plant with a policy acting directly on the state.
pub fn rollout_policy<P: Policy + ?Sized>(
    plant: &Plant,
    model: &PlantModel,
    policy: &mut P,
    w: &Signal,
    x_ref: &Signal,
) -> Result<RolloutResult> {
    check_inputs(model, w, x_ref)?;
    let horizon = w.horizon();
    let (nq, nu, nx) = (model.state_dim(), model.control_dim(), model.x_dim());
    policy.reset();
    let mut eta = Signal::zeros(nq, horizon);
    let mut u = Signal::zeros(nu, horizon);
    let mut w_hat = Signal::zeros(nq, horizon);
    let mut e = Signal::zeros(nx, horizon);
    eta.at_mut(0).copy_from_slice(w.at(0));
    w_hat.at_mut(0).copy_from_slice(w.at(0));
    for t in 0..=horizon {
        if t > 0 {
            let pred = model.nominal(eta.at(t - 1), u.at(t - 1), x_ref.at(t - 1));
            for k in 0..nq {
                w_hat.at_mut(t)[k] = eta.at(t)[k] - pred[k];
            }
        }
        let a = policy.act(eta.at(t), x_ref.at(t));
        if a.len() != nu {
            return Err(Error::DimensionMismatch { expected: nu, got: a.len() });
        }
        u.at_mut(t).copy_from_slice(&a);
        for k in 0..nx {
            e.at_mut(t)[k] = eta.at(t)[k] - x_ref.at(t)[k];
        }
        if t < horizon {
            let next = plant
                .step(eta.at(t), u.at(t), x_ref.at(t), w.at(t + 1))
                .map_err(|_| Error::IntegrationBlowup { step: t + 1 })?;
            eta.at_mut(t + 1).copy_from_slice(&next);
        }
    }
    Ok(RolloutResult { eta, u, e, w_hat })
}

/// Table-driven operator that returns recorded outputs as long as its input
/// follows the recorded input stream, and zero once it departs from it.
pub struct ReplayOperator {
    inputs: Signal,
    outputs: Signal,
    t: usize,
    on_track: bool,
}

impl ReplayOperator {
    pub fn new(inputs: Signal, outputs: Signal) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::HistoryMismatch {
                needed: inputs.len(),
                available: outputs.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            t: 0,
            on_track: true,
        })
    }

    /// Whether every input seen so far matched the table.
    pub fn on_track(&self) -> bool {
        self.on_track
    }
}

impl CausalOperator for ReplayOperator {
    fn input_dim(&self) -> usize {
        self.inputs.dim()
    }
    fn output_dim(&self) -> usize {
        self.outputs.dim()
    }
    fn reset(&mut self) {
        self.t = 0;
        self.on_track = true;
    }
    fn step(&mut self, input: &[f64], output: &mut [f64]) {
        let t = self.t;
        self.t += 1;
        if self.on_track && t < self.inputs.len() {
            let matches = input
                .iter()
                .zip(self.inputs.at(t))
                .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            self.on_track = matches;
        } else {
            self.on_track = false;
        }
        if self.on_track {
            output.copy_from_slice(self.outputs.at(t));
        } else {
            output.iter_mut().for_each(|o| *o = 0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletenessReport {
    /// Largest deviation between the policy's and the replay's state traces.
    pub max_state_deviation: f64,
    /// Largest deviation between the two input traces.
    pub max_input_deviation: f64,
    pub passed: bool,
}

/// Realizes the policy `C` as a boosting operator by recording its
/// closed-loop response to `(ŵ, x_ref)`, runs the internal-model loop with
/// that operator, and compares the trajectories (tolerance `1e-9`).
pub fn completeness_check<P: Policy + ?Sized>(
    plant: &Plant,
    model: &PlantModel,
    policy: &mut P,
    w: &Signal,
    x_ref: &Signal,
) -> Result<CompletenessReport> {
    let direct = rollout_policy(plant, model, policy, w, x_ref)?;
    let horizon = direct.w_hat.horizon();
    let refs = Signal::from_fn(x_ref.dim(), horizon, |t| x_ref.at(t).to_vec());
    let table_in = direct.w_hat.hstack(&refs)?;
    let mut replay = ReplayOperator::new(table_in, direct.u.clone())?;
    let replayed = rollout_with(plant, model, &mut replay, w, x_ref)?;
    let dev = |a: &Signal, b: &Signal| {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    };
    let max_state_deviation = dev(&direct.eta, &replayed.eta);
    let max_input_deviation = dev(&direct.u, &replayed.u);
    Ok(CompletenessReport {
        max_state_deviation,
        max_input_deviation,
        passed: max_state_deviation <= 1e-9 && max_input_deviation <= 1e-9,
    })
}

/// `C ≡ 0`.
pub struct ZeroPolicy {
    pub control_dim: usize,
}

impl Policy for ZeroPolicy {
    fn reset(&mut self) {}
    fn act(&mut self, _eta: &[f64], _x_ref: &[f64]) -> Vec<f64> {
        vec![0.0; self.control_dim]
    }
}

/// `u_t = K ŵ_t` restricted to positions, with `ŵ` recovered by the policy
/// from its own state history.
pub struct DisturbanceFeedback {
    pub model: PlantModel,
    pub gain: f64,
    prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl DisturbanceFeedback {
    pub fn new(model: PlantModel, gain: f64) -> Self {
        Self { model, gain, prev: None }
    }
}

impl Policy for DisturbanceFeedback {
    fn reset(&mut self) {
        self.prev = None;
    }
    fn act(&mut self, eta: &[f64], x_ref: &[f64]) -> Vec<f64> {
        let m = &self.model;
        let w_hat: Vec<f64> = match &self.prev {
            None => eta.to_vec(),
            Some((e, u, r)) => {
                let pred = m.nominal(e, u, r);
                eta.iter().zip(&pred).map(|(a, b)| a - b).collect()
            }
        };
        let d = m.spatial_dim;
        let mut u = vec![0.0; m.control_dim()];
        for i in 0..m.robots {
            for k in 0..d {
                u[i * d + k] = self.gain * w_hat[m.pos_index(i) + k];
            }
        }
        self.prev = Some((eta.to_vec(), u.clone(), x_ref.to_vec()));
        u
    }
}

/// A fixed offset applied during a single step.
pub struct DelayedImpulse {
    pub at: usize,
    pub value: Vec<f64>,
    t: usize,
}

impl DelayedImpulse {
    pub fn new(at: usize, value: Vec<f64>) -> Self {
        Self { at, value, t: 0 }
    }
}

impl Policy for DelayedImpulse {
    fn reset(&mut self) {
        self.t = 0;
    }
    fn act(&mut self, _eta: &[f64], _x_ref: &[f64]) -> Vec<f64> {
        let t = self.t;
        self.t += 1;
        if t == self.at {
            self.value.clone()
        } else {
            vec![0.0; self.value.len()]
        }
    }
}

/// `u_t = −k λ^t (p_t − p̄)`: position feedback that fades out.
pub struct FadingFeedback {
    pub model: PlantModel,
    pub gain: f64,
    pub fade: f64,
    t: usize,
}

impl FadingFeedback {
    pub fn new(model: PlantModel, gain: f64, fade: f64) -> Self {
        Self { model, gain, fade, t: 0 }
    }
}

impl Policy for FadingFeedback {
    fn reset(&mut self) {
        self.t = 0;
    }
    fn act(&mut self, eta: &[f64], x_ref: &[f64]) -> Vec<f64> {
        let m = &self.model;
        let k = self.gain * libm::pow(self.fade, self.t as f64);
        self.t += 1;
        let d = m.spatial_dim;
        let mut u = vec![0.0; m.control_dim()];
        for i in 0..m.robots {
            for a in 0..d {
                let j = m.pos_index(i) + a;
                u[i * d + a] = -k * (eta[j] - x_ref[j]);
            }
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::BoostConfig;
    use crate::plant::{reference_vector, sample_disturbance, sample_reference, DisturbanceSpec, Layout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(rng: &mut ChaCha8Rng, horizon: usize) -> (PlantModel, Signal, Signal) {
        let model = PlantModel::default();
        let spec = DisturbanceSpec {
            noise_std: 0.05,
            ..Default::default()
        };
        let w = sample_disturbance(&spec, &model, &Layout::Corridor.starts(), horizon, rng).unwrap();
        let r = reference_vector(&model, &sample_reference(Layout::Corridor, 2, rng).unwrap());
        (model, w, Signal::constant(&r, horizon))
    }

    fn random_boost(model: &PlantModel, std: f64, rng: &mut ChaCha8Rng) -> BoostOperator<f64> {
        let cfg = BoostConfig::standard(model.state_dim(), model.ref_dim(), model.control_dim());
        cfg.build(&cfg.init_params(std, rng)).unwrap()
    }

    #[test]
    fn zero_operator_reduces_to_base_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (model, w, x_ref) = instance(&mut rng, 100);
        let plant = Plant::perfect(&model);
        let res = rollout_policy(&plant, &model, &mut ZeroPolicy { control_dim: 4 }, &w, &x_ref).unwrap();
        let cfg = BoostConfig::standard(12, 8, 4);
        let m = cfg.build(&vec![0.0; cfg.n_params()]).unwrap();
        let boosted = rollout(&plant, &model, &m, &w, &x_ref).unwrap();
        assert_eq!(res.eta, boosted.eta);
        assert!(boosted.u.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reconstruction_and_open_loop_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (model, w, x_ref) = instance(&mut rng, 120);
            let plant = Plant::perfect(&model);
            let m = random_boost(&model, 0.3, &mut rng);
            let res = rollout(&plant, &model, &m, &w, &x_ref).unwrap();
            let dw = res.w_hat.sub(&w).unwrap();
            assert!(dw.as_slice().iter().all(|v| v.abs() <= 1e-10));
            let open = m.apply(&w, &x_ref).unwrap();
            let du = res.u.sub(&open).unwrap();
            assert!(du.as_slice().iter().all(|v| v.abs() <= 1e-10));
            for t in 0..=120 {
                for k in 0..8 {
                    assert_eq!(res.e.at(t)[k], res.eta.at(t)[k] - x_ref.at(t)[k]);
                }
            }
        }
    }

    #[test]
    fn generic_rollout_matches_signal_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (model, w, x_ref) = instance(&mut rng, 60);
        let plant = Plant::perfect(&model);
        let m = random_boost(&model, 0.3, &mut rng);
        let res = rollout(&plant, &model, &m, &w, &x_ref).unwrap();
        let (etas, us) = rollout_generic(&plant, &model, &m, &w, &x_ref).unwrap();
        for t in 0..=60 {
            assert_eq!(etas[t].as_slice(), res.eta.at(t));
            assert_eq!(us[t].as_slice(), res.u.at(t));
        }
    }

    #[test]
    fn tracking_tail_vanishes_for_random_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let horizon = 600;
        let (model, mut w, x_ref) = instance(&mut rng, horizon);
        for t in horizon / 5..=horizon {
            w.at_mut(t).iter_mut().for_each(|v| *v = 0.0);
        }
        let plant = Plant::perfect(&model);
        let m = random_boost(&model, 0.5, &mut rng);
        let res = rollout(&plant, &model, &m, &w, &x_ref).unwrap();
        assert!(tail_ratio(&res.e, 480).unwrap() < 1e-2);
        assert!(tail_ratio(&res.u, 480).unwrap() < 1e-2);
    }

    #[test]
    fn replay_reproduces_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (model, w, x_ref) = instance(&mut rng, 150);
        let plant = Plant::perfect(&model);
        let mut policies: Vec<alloc::boxed::Box<dyn Policy>> = vec![
            alloc::boxed::Box::new(ZeroPolicy { control_dim: 4 }),
            alloc::boxed::Box::new(DisturbanceFeedback::new(model.clone(), 0.05)),
            alloc::boxed::Box::new(DelayedImpulse::new(30, vec![0.5, -0.5, 0.2, 0.1])),
            alloc::boxed::Box::new(FadingFeedback::new(model.clone(), 0.3, 0.97)),
        ];
        for p in policies.iter_mut() {
            let rep = completeness_check(&plant, &model, p.as_mut(), &w, &x_ref).unwrap();
            assert!(rep.passed, "{rep:?}");
        }
    }

    #[test]
    fn replay_departs_on_other_inputs() {
        let inputs = Signal::constant(&[1.0], 3);
        let outputs = Signal::constant(&[5.0], 3);
        let mut op = ReplayOperator::new(inputs, outputs).unwrap();
        let mut y = [0.0];
        op.step(&[1.0], &mut y);
        assert_eq!(y, [5.0]);
        op.step(&[2.0], &mut y);
        assert_eq!(y, [0.0]);
        assert!(!op.on_track());
    }
}
