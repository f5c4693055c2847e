//! Incremental-gain estimates, the small-gain admissibility test for boosting
//! under model mismatch, and the resulting closed-loop gain bounds.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::boost::{BoostOperator, BoostRunner};
use crate::closedloop::{self, RolloutResult};
use crate::error::{Error, Result};
use crate::plant::{Plant, PlantModel};
use crate::signals::{self, lp_norm, CausalOperator, Signal};

/// Largest observed `‖y − y'‖_p / ‖x − x'‖_p` over random input pairs.
///
/// Each trial draws a Gaussian input with a random scale and pairs it with
/// an independent one, a small white or sinusoidal perturbation of it, or a
/// copy differing only after a random time. Sinusoidal perturbations probe
/// the peak of the local frequency response, which keeps the estimate stable
/// as the horizon grows. Pairs with identical inputs are skipped.
pub fn estimate_incremental_gain<O, R>(op: &mut O, trials: usize, horizon: usize, p: f64, rng: &mut R) -> Result<f64>
where
    O: CausalOperator + ?Sized,
    R: Rng + ?Sized,
{
    let dim = op.input_dim();
    let mut best: Option<f64> = None;
    for trial in 0..trials {
        let scale = libm::exp(2.0 * rng.random::<f64>() - 1.0);
        let a = gaussian(dim, horizon, scale, rng);
        let b = match trial % 4 {
            0 => gaussian(dim, horizon, scale, rng),
            1 => {
                let eps = 1e-3 * scale;
                a.add(&gaussian(dim, horizon, eps, rng))?
            }
            2 => {
                let omega = core::f64::consts::PI * rng.random::<f64>();
                let phase = 2.0 * core::f64::consts::PI * rng.random::<f64>();
                let dir: Vec<f64> = (0..dim)
                    .map(|_| 1e-3 * scale * Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect();
                let wave = Signal::from_fn(dim, horizon, |t| {
                    let c = libm::cos(omega * t as f64 + phase);
                    dir.iter().map(|d| d * c).collect()
                });
                a.add(&wave)?
            }
            _ => {
                let t0 = rng.random_range(0..=horizon);
                let mut b = a.clone();
                for t in t0..=horizon {
                    for x in b.at_mut(t) {
                        *x += scale * Distribution::<f64>::sample(&StandardNormal, rng);
                    }
                }
                b
            }
        };
        let din = lp_norm(&a.sub(&b)?, p)?;
        if !(din > 0.0) {
            continue;
        }
        let ya = signals::apply(op, &a)?;
        let yb = signals::apply(op, &b)?;
        let dout = lp_norm(&ya.sub(&yb)?, p)?;
        let r = dout / din;
        best = Some(best.map_or(r, |g: f64| g.max(r)));
    }
    best.ok_or(Error::NoAdmissiblePairs)
}

fn gaussian<R: Rng + ?Sized>(dim: usize, horizon: usize, scale: f64, rng: &mut R) -> Signal {
    Signal::from_fn(dim, horizon, |_| {
        (0..dim).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
    })
}

/// Gain of the map `(u, w) ↦ x` of the model, measured against the
/// reference trajectory that sits at a constant target with zero input.
///
/// The ratio is `‖x − x_ref‖_p / (‖u‖_p + ‖w − w_ref‖_p)`, where `w_ref`
/// places the state on the target at time zero and vanishes afterwards.
pub fn estimate_fx_gain<R: Rng + ?Sized>(
    model: &PlantModel,
    trials: usize,
    horizon: usize,
    p: f64,
    rng: &mut R,
) -> Result<f64> {
    let (nx, nu, nq) = (model.x_dim(), model.control_dim(), model.state_dim());
    let mut best: Option<f64> = None;
    for trial in 0..trials {
        let target: Vec<f64> = (0..model.robots)
            .flat_map(|_| (0..model.spatial_dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect::<Vec<_>>())
            .collect::<Vec<f64>>();
        let targets: Vec<Vec<f64>> = target.chunks(model.spatial_dim).map(|c| c.to_vec()).collect();
        let x_ref = model.reference(&targets);
        // input shapes: initial offset only, decaying noise, or persistent bursts
        let amp = libm::exp(2.0 * rng.random::<f64>() - 1.0);
        let decay = 0.8 + 0.19 * rng.random::<f64>();
        let kind = trial % 3;
        let mut w = Signal::zeros(nq, horizon);
        let mut u = Signal::zeros(nu, horizon);
        for t in 0..=horizon {
            let level = amp * libm::pow(decay, t as f64);
            if t == 0 || kind != 0 {
                for x in &mut w.at_mut(t)[..nx] {
                    *x = level * Distribution::<f64>::sample(&StandardNormal, rng);
                }
            }
            if kind == 2 || (kind == 1 && t < horizon / 4) {
                for x in u.at_mut(t) {
                    *x = level * Distribution::<f64>::sample(&StandardNormal, rng);
                }
            }
        }
        let mut eta = model.state_at_rest(&targets);
        let mut dx = Signal::zeros(nx, horizon);
        for k in 0..nx {
            eta[k] += w.at(0)[k];
        }
        for t in 0..=horizon {
            for k in 0..nx {
                dx.at_mut(t)[k] = eta[k] - x_ref[k];
            }
            if t < horizon {
                let mut next = model.nominal(&eta, u.at(t), &x_ref);
                for (n, wv) in next.iter_mut().zip(w.at(t + 1)) {
                    *n += wv;
                }
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(Error::IntegrationBlowup { step: t });
                }
                eta = next;
            }
        }
        let din = lp_norm(&u, p)? + lp_norm(&w, p)?;
        if !(din > 0.0) {
            continue;
        }
        let r = lp_norm(&dx, p)? / din;
        best = Some(best.map_or(r, |g: f64| g.max(r)));
    }
    best.ok_or(Error::NoAdmissiblePairs)
}

/// The mismatch `Δ = f − f̂` as a memoryless operator from `(x, u)` to the
/// state increment, about the origin reference with empty integrators.
pub struct MismatchOperator<'a> {
    pub plant: &'a Plant,
}

impl CausalOperator for MismatchOperator<'_> {
    fn input_dim(&self) -> usize {
        self.plant.model.x_dim() + self.plant.model.control_dim()
    }

    fn output_dim(&self) -> usize {
        self.plant.model.state_dim()
    }

    fn reset(&mut self) {}

    fn step(&mut self, input: &[f64], output: &mut [f64]) {
        let m = &self.plant.model;
        let nx = m.x_dim();
        let mut eta = vec![0.0; m.state_dim()];
        eta[..nx].copy_from_slice(&input[..nx]);
        let u = &input[nx..];
        let x_ref = vec![0.0; m.ref_dim()];
        let truth = self.plant.f(&eta, u, &x_ref);
        let nominal = m.nominal(&eta, u, &x_ref);
        for ((o, a), b) in output.iter_mut().zip(&truth).zip(&nominal) {
            *o = a - b;
        }
    }
}

/// Small-gain admissibility: `α_M < 1 / (α_Δ (α_Fx + 1))`. Returns the
/// verdict and the margin `1 − α_Δ α_M (α_Fx + 1)`.
pub fn small_gain_condition(alpha_delta: f64, alpha_fx: f64, alpha_m: f64) -> (bool, f64) {
    let margin = 1.0 - alpha_delta * alpha_m * (alpha_fx + 1.0);
    (alpha_delta == 0.0 || margin > 0.0, margin)
}

/// Gains from `w` to `u` and to `e` of the boosted loop under mismatch.
pub fn closed_loop_bounds(alpha_delta: f64, alpha_fx: f64, alpha_m: f64) -> Result<(f64, f64)> {
    let (ok, margin) = small_gain_condition(alpha_delta, alpha_fx, alpha_m);
    if !ok || margin <= 0.0 {
        return Err(Error::ConditionViolated { margin });
    }
    let u_gain = alpha_m * (alpha_delta * alpha_fx + 1.0) / margin;
    let e_gain = alpha_fx * (1.0 + alpha_m * (1.0 - alpha_delta)) / margin;
    Ok((u_gain, e_gain))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub alpha_delta: f64,
    pub alpha_fx: f64,
    pub alpha_m: f64,
    pub margin: f64,
    pub admissible: bool,
    pub u_gain: Option<f64>,
    pub e_gain: Option<f64>,
}

impl GainReport {
    pub fn new(alpha_delta: f64, alpha_fx: f64, alpha_m: f64) -> Self {
        let (admissible, margin) = small_gain_condition(alpha_delta, alpha_fx, alpha_m);
        let bounds = closed_loop_bounds(alpha_delta, alpha_fx, alpha_m).ok();
        Self {
            alpha_delta,
            alpha_fx,
            alpha_m,
            margin,
            admissible,
            u_gain: bounds.map(|b| b.0),
            e_gain: bounds.map(|b| b.1),
        }
    }
}

/// Output scaling `β` that puts the margin at `target_margin`, given the
/// gain of `M` at `β = 1`.
pub fn scale_for_margin(alpha_delta: f64, alpha_fx: f64, unit_gain: f64, target_margin: f64) -> f64 {
    if alpha_delta == 0.0 || unit_gain == 0.0 {
        return 1.0;
    }
    (1.0 - target_margin) / (alpha_delta * (alpha_fx + 1.0) * unit_gain)
}

/// Outcome of Monte Carlo validation under mismatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustValidation {
    pub trials: usize,
    /// Trials whose `e` and `u` tails decayed.
    pub decaying: usize,
    pub max_u_ratio: f64,
    pub max_e_ratio: f64,
    pub report: GainReport,
}

impl RobustValidation {
    /// Every tail decayed and every ratio respects its bound.
    pub fn passed(&self) -> bool {
        let within = |r: f64, b: Option<f64>| b.map_or(true, |b| r <= b);
        self.decaying == self.trials
            && within(self.max_u_ratio, self.report.u_gain)
            && within(self.max_e_ratio, self.report.e_gain)
    }
}

/// Runs `trials` rollouts of the mismatched `plant` with the internal model
/// `model` and boosting operator `m`, about the origin (an equilibrium of the
/// true plant with zero input). The disturbance is a random initial offset
/// plus noise that stops at `horizon / 5`.
///
/// Tails count as decaying when the energy after `0.8 · horizon` is below
/// `1e-2` of the total, for both `e` and `u`.
pub fn validate_robust_tracking<R: Rng + ?Sized>(
    plant: &Plant,
    model: &PlantModel,
    m: &BoostOperator<f64>,
    report: GainReport,
    trials: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<RobustValidation> {
    let (nx, nq) = (model.x_dim(), model.state_dim());
    let x_ref = Signal::zeros(model.ref_dim(), horizon);
    let mut out = RobustValidation {
        trials,
        decaying: 0,
        max_u_ratio: 0.0,
        max_e_ratio: 0.0,
        report,
    };
    for _ in 0..trials {
        let amp = 0.2 + rng.random::<f64>();
        let w = Signal::from_fn(nq, horizon, |t| {
            let mut v = vec![0.0; nq];
            if t == 0 || t < horizon / 5 {
                let level = if t == 0 { amp } else { 0.1 * amp };
                for x in &mut v[..nx] {
                    *x = level * Distribution::<f64>::sample(&StandardNormal, rng);
                }
            }
            v
        });
        let mut runner = BoostRunner::new(m);
        let res: RolloutResult = closedloop::rollout_with(plant, model, &mut runner, &w, &x_ref)?;
        let tail_t = horizon * 4 / 5;
        if closedloop::tail_ratio(&res.e, tail_t)? < 1e-2 && closedloop::tail_ratio(&res.u, tail_t)? < 1e-2 {
            out.decaying += 1;
        }
        let wn = lp_norm(&w, 2.0)?;
        out.max_u_ratio = out.max_u_ratio.max(lp_norm(&res.u, 2.0)? / wn);
        out.max_e_ratio = out.max_e_ratio.max(lp_norm(&res.e, 2.0)? / wn);
    }
    Ok(out)
}
