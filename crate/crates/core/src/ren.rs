//! Contractive recurrent equilibrium networks (RENs) with a direct, total
//! parametrization.
//!
//! Free parameters `X, Y, B2, C2, D12, D21, D22` are mapped to
//!
//! ```text
//! H = XᵀX + εI = [H11 H12 H13; H21 H22 H23; H31 H32 H33]
//! F = H31   B1 = H32   P = H33   C1 = -H21
//! E = ½(H11 + P/ᾱ² + Y - Yᵀ)   Λ = ½ diag(H22)   D11 = -strict_lower(H22)
//! ```
//!
//! and the implicit model `E ξ⁺ = Fξ + B1 w + B2 u`, `Λ v = C1 ξ + D11 w + D12 u`,
//! `w = tanh(v)` is converted to explicit form. Because `H ≻ 0` for every `X`,
//! the network contracts in the metric `Q = Eᵀ P⁻¹ E` at rate
//! `ρ = sqrt(ᾱ² − ε / λmax(Q)) < ᾱ`. `D11` is strictly lower triangular, so the
//! equilibrium layer is solved exactly by forward substitution.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::scalar::Scalar;
use crate::signals::{self, CausalOperator, Signal};

/// Sizes and certificate constants of a REN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenDims {
    pub state_dim: usize,
    pub nonlinear_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Upper bound `ᾱ ∈ (0, 1]` on the contraction rate.
    #[serde(default = "default_rate")]
    pub rate_bound: f64,
    /// Strict-feasibility margin added to `XᵀX`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_rate() -> f64 {
    0.98
}

fn default_epsilon() -> f64 {
    1e-4
}

impl RenDims {
    pub fn new(state_dim: usize, nonlinear_dim: usize, input_dim: usize, output_dim: usize) -> Self {
        Self {
            state_dim,
            nonlinear_dim,
            input_dim,
            output_dim,
            rate_bound: default_rate(),
            epsilon: default_epsilon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.nonlinear_dim == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("REN dimensions must be positive".into()));
        }
        if !(self.rate_bound > 0.0 && self.rate_bound <= 1.0) {
            return Err(Error::Config("REN rate bound must lie in (0, 1]".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("REN epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> RenLayout {
        RenLayout::new(self)
    }

    pub fn n_params(&self) -> usize {
        self.layout().len
    }
}

/// Offsets of the free matrices inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct RenLayout {
    pub x: usize,
    pub y: usize,
    pub b2: usize,
    pub c2: usize,
    pub d12: usize,
    pub d21: usize,
    pub d22: usize,
    pub len: usize,
}

impl RenLayout {
    fn new(d: &RenDims) -> Self {
        let (n, q, m, p) = (d.state_dim, d.nonlinear_dim, d.input_dim, d.output_dim);
        let h = 2 * n + q;
        let x = 0;
        let y = x + h * h;
        let b2 = y + n * n;
        let c2 = b2 + n * m;
        let d12 = c2 + p * n;
        let d21 = d12 + q * m;
        let d22 = d21 + p * q;
        let len = d22 + p * m;
        Self {
            x,
            y,
            b2,
            c2,
            d12,
            d21,
            d22,
            len,
        }
    }
}

/// Explicit state-space form of a REN plus its contraction certificate.
#[derive(Debug, Clone)]
pub struct RenRealization<S> {
    pub dims: RenDims,
    pub a: Mat<S>,
    pub b1: Mat<S>,
    pub b2: Mat<S>,
    pub c1: Mat<S>,
    pub d11: Mat<S>,
    pub d12: Mat<S>,
    pub c2: Mat<S>,
    pub d21: Mat<S>,
    pub d22: Mat<S>,
    pub bx: Vec<S>,
    pub bv: Vec<S>,
    pub by: Vec<S>,
    /// Diagonal multiplier of the slope-restriction constraint on `tanh`.
    pub multiplier: Vec<f64>,
    /// Contraction metric `Q ≻ 0`.
    pub metric: Mat<f64>,
    /// Certified contraction rate in the metric `Q`.
    pub rate: f64,
}

/// Maps an unconstrained parameter vector to a contractive REN. Total: every
/// finite `theta` yields a valid realization.
pub fn realize<S: Scalar>(theta: &[S], dims: &RenDims) -> RenRealization<S> {
    let lay = dims.layout();
    assert_eq!(theta.len(), lay.len, "REN parameter length");
    let (n, q, m, p) = (dims.state_dim, dims.nonlinear_dim, dims.input_dim, dims.output_dim);
    let hn = 2 * n + q;
    let x = Mat::from_slice(hn, hn, &theta[lay.x..lay.y]);
    let mut h = x.gram();
    for i in 0..hn {
        h[(i, i)] = h[(i, i)] + dims.epsilon;
    }
    let h11 = h.block(0, 0, n, n);
    let h21 = h.block(n, 0, q, n);
    let h22 = h.block(n, n, q, q);
    let f = h.block(n + q, 0, n, n);
    let b1_imp = h.block(n + q, n, n, q);
    let pm = h.block(n + q, n + q, n, n);

    let y = Mat::from_slice(n, n, &theta[lay.y..lay.b2]);
    let inv_a2 = 1.0 / (dims.rate_bound * dims.rate_bound);
    let e = h11
        .add(&pm.scale(inv_a2))
        .add(&y)
        .sub(&y.transpose())
        .scale(0.5);

    let b2_imp = Mat::from_slice(n, m, &theta[lay.b2..lay.c2]);
    let c2 = Mat::from_slice(p, n, &theta[lay.c2..lay.d12]);
    let d12_imp = Mat::from_slice(q, m, &theta[lay.d12..lay.d21]);
    let d21 = Mat::from_slice(p, q, &theta[lay.d21..lay.d22]);
    let d22 = Mat::from_slice(p, m, &theta[lay.d22..lay.len]);

    // [A B1 B2] = E⁻¹ [F B1 B2]
    let rhs = Mat::from_fn(n, n + q + m, |i, j| {
        if j < n {
            f[(i, j)]
        } else if j < n + q {
            b1_imp[(i, j - n)]
        } else {
            b2_imp[(i, j - n - q)]
        }
    });
    let sol = e.solve_no_pivot(&rhs);
    let a = sol.block(0, 0, n, n);
    let b1 = sol.block(0, n, n, q);
    let b2 = sol.block(0, n + q, n, m);

    let lambda: Vec<S> = (0..q).map(|i| h22[(i, i)] * 0.5).collect();
    let c1 = Mat::from_fn(q, n, |i, j| -h21[(i, j)] / lambda[i]);
    let d11 = Mat::from_fn(q, q, |i, j| {
        if j < i {
            -h22[(i, j)] / lambda[i]
        } else {
            S::zero()
        }
    });
    let d12 = Mat::from_fn(q, m, |i, j| d12_imp[(i, j)] / lambda[i]);

    // certificate, on values only
    let ev = e.values();
    let pv = pm.values();
    let pinv_e = pv.solve_no_pivot(&ev);
    let qm = ev.transpose().matmul(&pinv_e);
    let metric = Mat::from_fn(n, n, |i, j| 0.5 * (qm[(i, j)] + qm[(j, i)]));
    let lmax = linalg::symmetric_eigenvalues(&metric)
        .last()
        .copied()
        .unwrap_or(0.0);
    let a2 = dims.rate_bound * dims.rate_bound;
    let rate = libm::sqrt((a2 - dims.epsilon / lmax).max(0.0));

    RenRealization {
        dims: *dims,
        a,
        b1,
        b2,
        c1,
        d11,
        d12,
        c2,
        d21,
        d22,
        bx: vec![S::zero(); n],
        bv: vec![S::zero(); q],
        by: vec![S::zero(); p],
        multiplier: lambda.iter().map(|l| l.value()).collect(),
        metric,
        rate,
    }
}

impl<S: Scalar> RenRealization<S> {
    /// All-zero matrices, identity metric and rate 0. A starting point for
    /// hand-built networks.
    pub fn zeroed(dims: RenDims) -> Self {
        let (n, q, m, p) = (dims.state_dim, dims.nonlinear_dim, dims.input_dim, dims.output_dim);
        Self {
            dims,
            a: Mat::zeros(n, n),
            b1: Mat::zeros(n, q),
            b2: Mat::zeros(n, m),
            c1: Mat::zeros(q, n),
            d11: Mat::zeros(q, q),
            d12: Mat::zeros(q, m),
            c2: Mat::zeros(p, n),
            d21: Mat::zeros(p, q),
            d22: Mat::zeros(p, m),
            bx: vec![S::zero(); n],
            bv: vec![S::zero(); q],
            by: vec![S::zero(); p],
            multiplier: vec![1.0; q],
            metric: Mat::identity(n),
            rate: 0.0,
        }
    }

    /// Equilibrium-layer output `w = tanh(C1 ξ + D11 w + D12 u + bv)` by
    /// forward substitution.
    pub fn equilibrium(&self, state: &[S], input: &[S]) -> Vec<S> {
        let q = self.dims.nonlinear_dim;
        let base_x = self.c1.matvec(state);
        let base_u = self.d12.matvec(input);
        let mut w: Vec<S> = Vec::with_capacity(q);
        for i in 0..q {
            let coupling = S::dot(&self.d11.row(i)[..i], &w[..i]);
            let v = base_x[i] + base_u[i] + self.bv[i] + coupling;
            w.push(v.tanh());
        }
        w
    }

    /// One step: returns `(ξ_{t+1}, y_t)`.
    pub fn step(&self, state: &[S], input: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        if state.len() != self.dims.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.dims.state_dim,
                got: state.len(),
            });
        }
        if input.len() != self.dims.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input_dim,
                got: input.len(),
            });
        }
        Ok(self.step_unchecked(state, input))
    }

    pub(crate) fn step_unchecked(&self, state: &[S], input: &[S]) -> (Vec<S>, Vec<S>) {
        let w = self.equilibrium(state, input);
        let ax = self.a.matvec(state);
        let bw = self.b1.matvec(&w);
        let bu = self.b2.matvec(input);
        let next = (0..self.dims.state_dim)
            .map(|i| ax[i] + bw[i] + bu[i] + self.bx[i])
            .collect();
        let cx = self.c2.matvec(state);
        let dw = self.d21.matvec(&w);
        let du = self.d22.matvec(input);
        let y = (0..self.dims.output_dim)
            .map(|i| cx[i] + dw[i] + du[i] + self.by[i])
            .collect();
        (next, y)
    }

    pub fn values(&self) -> RenRealization<f64> {
        let v = |m: &Mat<S>| m.values();
        let vv = |x: &[S]| x.iter().map(|s| s.value()).collect::<Vec<_>>();
        RenRealization {
            dims: self.dims,
            a: v(&self.a),
            b1: v(&self.b1),
            b2: v(&self.b2),
            c1: v(&self.c1),
            d11: v(&self.d11),
            d12: v(&self.d12),
            c2: v(&self.c2),
            d21: v(&self.d21),
            d22: v(&self.d22),
            bx: vv(&self.bx),
            bv: vv(&self.bv),
            by: vv(&self.by),
            multiplier: self.multiplier.clone(),
            metric: self.metric.clone(),
            rate: self.rate,
        }
    }
}

/// Free-function form of [`RenRealization::step`].
pub fn ren_step<S: Scalar>(r: &RenRealization<S>, state: &[S], input: &[S]) -> Result<(Vec<S>, Vec<S>)> {
    r.step(state, input)
}

/// Stateful runner exposing a realization as a [`CausalOperator`]. The
/// initial state is zero.
pub struct RenRunner<'a> {
    ren: &'a RenRealization<f64>,
    state: Vec<f64>,
}

impl<'a> RenRunner<'a> {
    pub fn new(ren: &'a RenRealization<f64>) -> Self {
        Self {
            ren,
            state: vec![0.0; ren.dims.state_dim],
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, s: &[f64]) {
        self.state.copy_from_slice(s);
    }
}

impl CausalOperator for RenRunner<'_> {
    fn input_dim(&self) -> usize {
        self.ren.dims.input_dim
    }
    fn output_dim(&self) -> usize {
        self.ren.dims.output_dim
    }
    fn reset(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
    }
    fn step(&mut self, input: &[f64], output: &mut [f64]) {
        let (next, y) = self.ren.step_unchecked(&self.state, input);
        self.state = next;
        output.copy_from_slice(&y);
    }
}

/// `‖x‖_Q = sqrt(xᵀ Q x)`.
pub fn metric_norm(q: &Mat<f64>, x: &[f64]) -> f64 {
    let qx = q.matvec(x);
    libm::sqrt(f64::dot(x, &qx).max(0.0))
}

fn gaussian_signal<R: Rng + ?Sized>(dim: usize, horizon: usize, scale: f64, rng: &mut R) -> Signal {
    Signal::from_fn(dim, horizon, |_| {
        (0..dim)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>()
    })
}

/// Largest observed `‖y1 − y2‖_p / ‖u1 − u2‖_p` over random input pairs, a
/// lower bound on the incremental gain. Pairs with identical inputs are
/// skipped.
pub fn empirical_incremental_gain<R: Rng + ?Sized>(
    r: &RenRealization<f64>,
    trials: usize,
    horizon: usize,
    p: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut runner = RenRunner::new(r);
    crate::robust::estimate_incremental_gain(&mut runner, trials, horizon, p, rng)
}

/// Largest per-step ratio `‖Δξ_{t+1}‖_Q / ‖Δξ_t‖_Q` over random input
/// sequences and random pairs of initial states.
pub fn observed_contraction_rate<R: Rng + ?Sized>(
    r: &RenRealization<f64>,
    trials: usize,
    horizon: usize,
    rng: &mut R,
) -> f64 {
    let n = r.dims.state_dim;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let u = gaussian_signal(r.dims.input_dim, horizon, 1.0, rng);
        let mut xa: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let mut xb: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for t in 0..horizon {
            let d0 = metric_norm(&r.metric, &linalg::vec_sub(&xa, &xb));
            let (na, _) = r.step_unchecked(&xa, u.at(t));
            let (nb, _) = r.step_unchecked(&xb, u.at(t));
            xa = na;
            xb = nb;
            if !xa.iter().chain(&xb).all(|v| v.is_finite()) {
                return f64::INFINITY;
            }
            let d1 = metric_norm(&r.metric, &linalg::vec_sub(&xa, &xb));
            if d0 > 1e-9 {
                worst = worst.max(d1 / d0);
            }
        }
    }
    worst
}

/// True iff state discrepancies shrink by at least the certified rate at every
/// observed step (within `1e-6`).
pub fn verify_contraction<R: Rng + ?Sized>(r: &RenRealization<f64>, trials: usize, horizon: usize, rng: &mut R) -> bool {
    observed_contraction_rate(r, trials, horizon, rng) <= r.rate + 1e-6
}

/// Largest eigenvalue of the explicit-form contraction LMI
///
/// ```text
/// [AᵀQA − ρ²Q   AᵀQB1     ]   [0      C1ᵀΛ                 ]
/// [B1ᵀQA        B1ᵀQB1    ] + [ΛC1    ΛD11 + D11ᵀΛ − 2Λ    ]
/// ```
///
/// which must be `≤ 0` for a valid certificate.
pub fn contraction_lmi_residual(r: &RenRealization<f64>) -> f64 {
    let (n, q) = (r.dims.state_dim, r.dims.nonlinear_dim);
    let qm = &r.metric;
    let lam = &r.multiplier;
    let ab = Mat::from_fn(n, n + q, |i, j| if j < n { r.a[(i, j)] } else { r.b1[(i, j - n)] });
    let mut l = ab.transpose().matmul(&qm.matmul(&ab));
    let rho2 = r.rate * r.rate;
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] -= rho2 * qm[(i, j)];
        }
    }
    for i in 0..q {
        for j in 0..n {
            let v = lam[i] * r.c1[(i, j)];
            l[(n + i, j)] += v;
            l[(j, n + i)] += v;
        }
        for j in 0..q {
            let mut v = lam[i] * r.d11[(i, j)] + r.d11[(j, i)] * lam[j];
            if i == j {
                v -= 2.0 * lam[i];
            }
            l[(n + i, n + j)] += v;
        }
    }
    let sym = Mat::from_fn(n + q, n + q, |i, j| 0.5 * (l[(i, j)] + l[(j, i)]));
    linalg::symmetric_eigenvalues(&sym).last().copied().unwrap_or(0.0)
}

/// Certified upper bound on the incremental ℓ2 gain `u ↦ y`.
///
/// Combines the contraction rate with Lipschitz bounds of the acyclic
/// equilibrium layer: `α ≤ c_y γ_x / (1 − ρ) + d_y`. Conservative. Returns
/// `∞` when the metric is not positive definite or `ρ ≥ 1`.
pub fn incremental_gain_bound(r: &RenRealization<f64>) -> f64 {
    let (n, q) = (r.dims.state_dim, r.dims.nonlinear_dim);
    if r.rate >= 1.0 {
        return f64::INFINITY;
    }
    let lq = match linalg::cholesky(&r.metric) {
        Some(l) => l,
        None => return f64::INFINITY,
    };
    // R = Lqᵀ, so ‖x‖_Q = ‖R x‖
    let rq = lq.transpose();
    let r_inv = rq.solve_no_pivot(&Mat::identity(n));
    // (I − |D11|)⁻¹ is nonnegative and unit lower triangular
    let i_minus = Mat::from_fn(q, q, |i, j| {
        if i == j {
            1.0
        } else {
            -libm::fabs(r.d11[(i, j)])
        }
    });
    let abs = |m: &Mat<f64>| m.map(libm::fabs);
    let n_u = i_minus.solve_no_pivot(&abs(&r.d12));
    let n_x = i_minus.solve_no_pivot(&abs(&r.c1));
    let sn = linalg::spectral_norm;
    let gamma_x = sn(&rq.matmul(&r.b1)) * sn(&n_u) + sn(&rq.matmul(&r.b2));
    let c_y = sn(&r.c2.matmul(&r_inv)) + sn(&r.d21) * sn(&n_x) * sn(&r_inv);
    let d_y = sn(&r.d21) * sn(&n_u) + sn(&r.d22);
    c_y * gamma_x / (1.0 - r.rate) + d_y
}

/// Runs a realization from zero state over `input`.
pub fn simulate(r: &RenRealization<f64>, input: &Signal) -> Result<Signal> {
    signals::apply(&mut RenRunner::new(r), input)
}
