//! The boosting operator `M(ŵ, x_ref) = M1(ŵ) ⊙ M2(ŵ, x_ref)`.
//!
//! `M1` is a contractive REN driven by the reconstructed disturbance, so its
//! output is square-summable whenever `ŵ` is. `M2` is a memoryless MLP with a
//! bounded output layer that also sees the reference. The elementwise product
//! inherits summability from `M1` no matter how the reference behaves.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::ren::{self, RenDims, RenRealization};
use crate::scalar::Scalar;
use crate::signals::{self, CausalOperator, Signal};

/// How the two factors are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    /// `u = y1 ⊙ y2`, with `y2` of control dimension.
    #[default]
    Hadamard,
    /// `u = y1 · g`, with a scalar `g`.
    Scalar,
}

/// Architecture of a boosting operator. The parameter vector is `θ1` (REN)
/// followed by `θ2` (MLP).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub ren: RenDims,
    /// Hidden layer widths of `M2`.
    pub hidden: Vec<usize>,
    /// Dimension of the reference fed to `M2`.
    pub ref_dim: usize,
    /// Output bound `B` of `M2`.
    pub bound: f64,
    /// Output scaling `β` of `M1`.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub gate: Gate,
}

fn one() -> f64 {
    1.0
}

impl BoostConfig {
    /// REN with `state_dim = nonlinear_dim = 12`, MLP widths 15, 20, 14 and
    /// `B = 1`.
    pub fn standard(disturbance_dim: usize, ref_dim: usize, control_dim: usize) -> Self {
        Self {
            ren: RenDims::new(12, 12, disturbance_dim, control_dim),
            hidden: vec![15, 20, 14],
            ref_dim,
            bound: 1.0,
            scale: 1.0,
            gate: Gate::Hadamard,
        }
    }

    pub fn disturbance_dim(&self) -> usize {
        self.ren.input_dim
    }

    pub fn control_dim(&self) -> usize {
        self.ren.output_dim
    }

    pub fn mlp_widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.disturbance_dim() + self.ref_dim);
        w.extend_from_slice(&self.hidden);
        w.push(match self.gate {
            Gate::Hadamard => self.control_dim(),
            Gate::Scalar => 1,
        });
        w
    }

    pub fn n_ren_params(&self) -> usize {
        self.ren.n_params()
    }

    pub fn n_mlp_params(&self) -> usize {
        self.mlp_widths().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_ren_params() + self.n_mlp_params()
    }

    pub fn validate(&self) -> Result<()> {
        self.ren.validate()?;
        if !(self.bound > 0.0) {
            return Err(Error::Config("MLP output bound must be positive".into()));
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::Config("output scaling must be finite and nonnegative".into()));
        }
        if self.hidden.iter().any(|w| *w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Builds the operator for parameters `theta`.
    pub fn build<S: Scalar>(&self, theta: &[S]) -> Result<BoostOperator<S>> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        let split = self.n_ren_params();
        let ren = ren::realize(&theta[..split], &self.ren);
        let mlp = BoundedMlp::from_params(&self.mlp_widths(), self.bound, &theta[split..]);
        Ok(BoostOperator {
            ren,
            mlp,
            scale: self.scale,
            gate: self.gate,
        })
    }

    /// `N(0, std²)` initialization of all parameters.
    pub fn init_params<R: Rng + ?Sized>(&self, std: f64, rng: &mut R) -> Vec<f64> {
        (0..self.n_params())
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>()
    }
}

/// Feedforward network with sigmoid hidden layers and output
/// `B (2σ(z) − 1) ∈ (−B, B)`.
#[derive(Debug, Clone)]
pub struct BoundedMlp<S> {
    pub layers: Vec<(Mat<S>, Vec<S>)>,
    pub bound: f64,
}

impl<S: Scalar> BoundedMlp<S> {
    pub fn from_params(widths: &[usize], bound: f64, theta: &[S]) -> Self {
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wm = Mat::from_slice(fan_out, fan_in, &theta[off..off + fan_in * fan_out]);
            off += fan_in * fan_out;
            let b = theta[off..off + fan_out].to_vec();
            off += fan_out;
            layers.push((wm, b));
        }
        assert_eq!(off, theta.len(), "MLP parameter length");
        Self { layers, bound }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.0.rows).unwrap_or(0)
    }

    /// Output for the concatenated input `(ŵ_t, x_ref,t)`.
    pub fn forward(&self, w_hat: &[S], x_ref: &[S]) -> Result<Vec<S>> {
        if w_hat.len() + x_ref.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: w_hat.len() + x_ref.len(),
            });
        }
        Ok(self.forward_unchecked(w_hat, x_ref))
    }

    pub(crate) fn forward_unchecked(&self, w_hat: &[S], x_ref: &[S]) -> Vec<S> {
        let mut h: Vec<S> = w_hat.iter().chain(x_ref).copied().collect();
        let last = self.layers.len() - 1;
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let z = w.matvec(&h);
            h = z
                .iter()
                .zip(b)
                .map(|(zi, bi)| {
                    let s = (*zi + *bi).sigmoid();
                    if k == last {
                        (s * 2.0 - 1.0) * self.bound
                    } else {
                        s
                    }
                })
                .collect();
        }
        h
    }
}

/// Free-function form of [`BoundedMlp::forward`].
pub fn mlp_forward<S: Scalar>(m2: &BoundedMlp<S>, w_hat: &[S], x_ref: &[S]) -> Result<Vec<S>> {
    m2.forward(w_hat, x_ref)
}

/// `M = (β M1) ⊙ M2`.
#[derive(Debug, Clone)]
pub struct BoostOperator<S> {
    pub ren: RenRealization<S>,
    pub mlp: BoundedMlp<S>,
    pub scale: f64,
    pub gate: Gate,
}

impl<S: Scalar> BoostOperator<S> {
    pub fn disturbance_dim(&self) -> usize {
        self.ren.dims.input_dim
    }

    pub fn ref_dim(&self) -> usize {
        self.mlp.input_dim() - self.disturbance_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.ren.dims.output_dim
    }

    pub fn initial_state(&self) -> Vec<S> {
        vec![S::zero(); self.ren.dims.state_dim]
    }

    /// One step. `state` is the REN state and is advanced in place.
    pub fn step(&self, state: &mut Vec<S>, w_hat: &[S], x_ref: &[S]) -> Result<Vec<S>> {
        if w_hat.len() != self.disturbance_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.disturbance_dim(),
                got: w_hat.len(),
            });
        }
        if x_ref.len() != self.ref_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ref_dim(),
                got: x_ref.len(),
            });
        }
        if state.len() != self.ren.dims.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ren.dims.state_dim,
                got: state.len(),
            });
        }
        Ok(self.step_unchecked(state, w_hat, x_ref))
    }

    pub(crate) fn step_unchecked(&self, state: &mut Vec<S>, w_hat: &[S], x_ref: &[S]) -> Vec<S> {
        let (next, y1) = self.ren.step_unchecked(state, w_hat);
        *state = next;
        let y2 = self.mlp.forward_unchecked(w_hat, x_ref);
        match self.gate {
            Gate::Hadamard => y1
                .iter()
                .zip(&y2)
                .map(|(a, b)| *a * self.scale * *b)
                .collect(),
            Gate::Scalar => y1.iter().map(|a| *a * self.scale * y2[0]).collect(),
        }
    }

    pub fn values(&self) -> BoostOperator<f64> {
        BoostOperator {
            ren: self.ren.values(),
            mlp: BoundedMlp {
                layers: self
                    .mlp
                    .layers
                    .iter()
                    .map(|(w, b)| (w.values(), b.iter().map(|x| x.value()).collect()))
                    .collect(),
                bound: self.mlp.bound,
            },
            scale: self.scale,
            gate: self.gate,
        }
    }
}

/// Free-function form of [`BoostOperator::step`].
pub fn boost_step<S: Scalar>(m: &BoostOperator<S>, state: &mut Vec<S>, w_hat: &[S], x_ref: &[S]) -> Result<Vec<S>> {
    m.step(state, w_hat, x_ref)
}

impl BoostOperator<f64> {
    /// Upper bound on the incremental gain of `ŵ ↦ M1(ŵ)` scaled by `β`,
    /// times `B`. This bounds `‖M(ŵ, x_ref)‖ / ‖ŵ‖`.
    pub fn gain_bound(&self) -> f64 {
        self.scale * self.mlp.bound * ren::incremental_gain_bound(&self.ren)
    }

    /// Runs `M` over whole signals from zero state.
    pub fn apply(&self, w_hat: &Signal, x_ref: &Signal) -> Result<Signal> {
        signals::apply(&mut BoostRunner::new(self), &w_hat.hstack(x_ref)?)
    }
}

/// [`CausalOperator`] view of a boosting operator on the stacked input
/// `(ŵ_t, x_ref,t)`.
pub struct BoostRunner<'a> {
    op: &'a BoostOperator<f64>,
    state: Vec<f64>,
}

impl<'a> BoostRunner<'a> {
    pub fn new(op: &'a BoostOperator<f64>) -> Self {
        Self {
            op,
            state: op.initial_state(),
        }
    }

    pub fn ren_state(&self) -> &[f64] {
        &self.state
    }
}

impl CausalOperator for BoostRunner<'_> {
    fn input_dim(&self) -> usize {
        self.op.disturbance_dim() + self.op.ref_dim()
    }
    fn output_dim(&self) -> usize {
        self.op.control_dim()
    }
    fn reset(&mut self) {
        self.state = self.op.initial_state();
    }
    fn step(&mut self, input: &[f64], output: &mut [f64]) {
        let nw = self.op.disturbance_dim();
        let u = self.op.step_unchecked(&mut self.state, &input[..nw], &input[nw..]);
        output.copy_from_slice(&u);
    }
}

/// Geometric envelope of `‖M1 output‖` after the input stops: with zero input
/// from `t0` on, `|y_t| ≤ c ρ^(t − t0) ‖ξ_t0‖_Q`.
fn output_envelope_factor(r: &RenRealization<f64>) -> f64 {
    let n = r.dims.state_dim;
    let lq = match linalg::cholesky(&r.metric) {
        Some(l) => l,
        None => return f64::INFINITY,
    };
    let r_inv = lq.transpose().solve_no_pivot(&Mat::identity(n));
    let q = r.dims.nonlinear_dim;
    let i_minus = Mat::from_fn(q, q, |i, j| if i == j { 1.0 } else { -libm::fabs(r.d11[(i, j)]) });
    let n_x = i_minus.solve_no_pivot(&r.c1.map(libm::fabs));
    linalg::spectral_norm(&r.c2.matmul(&r_inv))
        + linalg::spectral_norm(&r.d21) * linalg::spectral_norm(&n_x) * linalg::spectral_norm(&r_inv)
}

/// Checks that `u = M(ŵ, x_ref)` has a geometrically vanishing tail when `ŵ`
/// stops at `t0` while `x_ref` keeps going (constant offset plus ramp plus
/// sinusoid).
///
/// The tail must stay below the certified envelope
/// `B β c ‖ξ_{t0}‖_Q ρ^k / sqrt(1 − ρ²)` at every `t0 + k`.
pub fn lp_output_guarantee_test<R: Rng + ?Sized>(m: &BoostOperator<f64>, p: f64, trials: usize, rng: &mut R) -> bool {
    let horizon = 400;
    let t0 = 25;
    let nw = m.disturbance_dim();
    let nr = m.ref_dim();
    let rho = m.ren.rate;
    if rho >= 1.0 {
        return false;
    }
    let c = output_envelope_factor(&m.ren) * m.scale * m.mlp.bound;
    for _ in 0..trials {
        let amp: f64 = 3.0 * Distribution::<f64>::sample(&StandardNormal, rng);
        let w_hat = Signal::from_fn(nw, horizon, |t| {
            if t < t0 {
                (0..nw).map(|_| amp * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
            } else {
                vec![0.0; nw]
            }
        });
        let offset: Vec<f64> = (0..nr).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
        let slope: f64 = 0.05 * Distribution::<f64>::sample(&StandardNormal, rng);
        let x_ref = Signal::from_fn(nr, horizon, |t| {
            offset
                .iter()
                .enumerate()
                .map(|(i, o)| o + slope * t as f64 + libm::sin(0.1 * (t + i) as f64))
                .collect()
        });
        let mut runner = BoostRunner::new(m);
        let input = match w_hat.hstack(&x_ref) {
            Ok(s) => s,
            Err(_) => return false,
        };
        runner.reset();
        let mut u = Signal::zeros(m.control_dim(), horizon);
        let mut xi_t0 = 0.0;
        for t in 0..=horizon {
            if t == t0 {
                xi_t0 = ren::metric_norm(&m.ren.metric, runner.ren_state());
            }
            runner.step(input.at(t), u.at_mut(t));
        }
        if !u.is_finite() {
            return false;
        }
        // tail of a geometric envelope in ℓp, and the per-step p-norm vs 2-norm factor
        let (denom, dim_factor) = if p.is_infinite() {
            (1.0, 1.0)
        } else {
            let m = m.control_dim() as f64;
            (
                libm::pow(1.0 - libm::pow(rho, p), 1.0 / p),
                libm::pow(m, (1.0 / p - 0.5).max(0.0)),
            )
        };
        for k in (0..=horizon - t0).step_by(25) {
            let tail = match signals::tail_energy(&u, t0 + k, p) {
                Ok(v) => v,
                Err(_) => return false,
            };
            let envelope = dim_factor * c * xi_t0 * libm::pow(rho, k as f64) / denom;
            if tail > envelope * (1.0 + 1e-9) + 1e-12 {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::lp_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> BoostConfig {
        BoostConfig {
            ren: RenDims::new(4, 4, 3, 2),
            hidden: vec![5, 6],
            ref_dim: 2,
            bound: 1.0,
            scale: 1.0,
            gate: Gate::Hadamard,
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = small_config();
        let mlp = BoundedMlp::from_params(&cfg.mlp_widths(), 1.0, &vec![0.0; cfg.n_mlp_params()]);
        let y = mlp.forward(&[1.0, -2.0, 3.0], &[4.0, 5.0]).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        assert!(mlp.forward(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn output_stays_inside_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cfg = small_config();
        cfg.bound = 2.5;
        let theta = cfg.init_params(3.0, &mut rng);
        let op = cfg.build(&theta).unwrap();
        let mut max_abs = 0.0f64;
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..3).map(|_| 10.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            let r: Vec<f64> = (0..2).map(|_| 10.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            for v in op.mlp.forward(&w, &r).unwrap() {
                max_abs = max_abs.max(v.abs());
            }
        }
        assert!(max_abs < 2.5);
    }

    #[test]
    fn output_approaches_bound_from_below() {
        let mlp = BoundedMlp {
            layers: vec![(Mat::from_slice(1, 1, &[1.0]), vec![0.0])],
            bound: 1.0,
        };
        let mut prev = 0.0;
        for z in [1.0, 5.0, 10.0, 20.0, 30.0] {
            let y = mlp.forward(&[z], &[]).unwrap()[0];
            assert!(y > prev && y < 1.0);
            prev = y;
        }
        assert!(1.0 - prev < 1e-12);
    }

    #[test]
    fn annihilating_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = small_config();
        let mut theta = cfg.init_params(1.0, &mut rng);
        let split = cfg.n_ren_params();
        // M2 ≡ 0
        let mut t2 = theta.clone();
        t2[split..].iter_mut().for_each(|x| *x = 0.0);
        let op = cfg.build(&t2).unwrap();
        let mut s = op.initial_state();
        for _ in 0..5 {
            let u = op.step(&mut s, &[1.0, 2.0, 3.0], &[0.5, 0.5]).unwrap();
            assert!(u.iter().all(|v| *v == 0.0));
        }
        // M1 output ≡ 0: zero C2, D21, D22
        let lay = cfg.ren.layout();
        theta[lay.c2..lay.d12].iter_mut().for_each(|x| *x = 0.0);
        theta[lay.d21..lay.len].iter_mut().for_each(|x| *x = 0.0);
        let op = cfg.build(&theta).unwrap();
        let mut s = op.initial_state();
        for _ in 0..5 {
            let u = op.step(&mut s, &[1.0, 2.0, 3.0], &[0.5, 0.5]).unwrap();
            assert!(u.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn holder_bound_on_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = small_config();
        for _ in 0..20 {
            let op = cfg.build(&cfg.init_params(1.0, &mut rng)).unwrap();
            let w = Signal::from_fn(3, 50, |_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect());
            let r = Signal::from_fn(2, 50, |_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect());
            let u = op.apply(&w, &r).unwrap();
            let y1 = ren::simulate(&op.ren, &w).unwrap();
            assert!(lp_norm(&u, 2.0).unwrap() <= op.mlp.bound * lp_norm(&y1, 2.0).unwrap() + 1e-12);
        }
    }

    #[test]
    fn zero_disturbance_gives_zero_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cfg = small_config();
        let op = cfg.build(&cfg.init_params(1.0, &mut rng)).unwrap();
        let u = op
            .apply(&Signal::zeros(3, 30), &Signal::constant(&[2.0, -1.0], 30))
            .unwrap();
        assert!(u.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn guarantee_holds_for_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for gate in [Gate::Hadamard, Gate::Scalar] {
            let mut cfg = small_config();
            cfg.gate = gate;
            for _ in 0..10 {
                let op = cfg.build(&cfg.init_params(1.0, &mut rng)).unwrap();
                assert!(lp_output_guarantee_test(&op, 2.0, 3, &mut rng));
            }
        }
    }

    #[test]
    fn gain_bound_scales_with_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut cfg = small_config();
        let theta = cfg.init_params(1.0, &mut rng);
        let g1 = cfg.build(&theta).unwrap().gain_bound();
        cfg.scale = 0.1;
        let g2 = cfg.build(&theta).unwrap().gain_bound();
        assert!((g2 - 0.1 * g1).abs() <= 1e-12 * g1);
    }
}
