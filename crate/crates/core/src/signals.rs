//! Finite-horizon signals, their ℓp norms, and the causal-operator contract.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A sequence `s_0, …, s_T` of `dim`-dimensional real vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    dim: usize,
    data: Vec<f64>,
}

impl Signal {
    /// All-zero signal with `horizon + 1` samples.
    pub fn zeros(dim: usize, horizon: usize) -> Self {
        assert!(dim > 0, "signal dimension must be positive");
        Self {
            dim,
            data: vec![0.0; dim * (horizon + 1)],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidSignal("empty signal".into()))?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(Error::InvalidSignal("zero-dimensional samples".into()));
        }
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    /// Builds a signal from `f(t)` for `t = 0..=horizon`.
    pub fn from_fn(dim: usize, horizon: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Self {
        let mut s = Self::zeros(dim, horizon);
        for t in 0..=horizon {
            s.at_mut(t).copy_from_slice(&f(t));
        }
        s
    }

    /// Constant signal repeating `v`.
    pub fn constant(v: &[f64], horizon: usize) -> Self {
        Self::from_fn(v.len(), horizon, |_| v.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Last time index `T`.
    pub fn horizon(&self) -> usize {
        self.data.len() / self.dim - 1
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn at_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Samples `t0..=T`.
    pub fn suffix(&self, t0: usize) -> Result<Self> {
        if t0 > self.horizon() {
            return Err(Error::IndexOutOfRange {
                index: t0,
                horizon: self.horizon(),
            });
        }
        Ok(Self {
            dim: self.dim,
            data: self.data[t0 * self.dim..].to_vec(),
        })
    }

    /// Keeps the components `range` of every sample.
    pub fn columns(&self, range: core::ops::Range<usize>) -> Self {
        let dim = range.len();
        let mut data = Vec::with_capacity(dim * self.len());
        for r in self.rows() {
            data.extend_from_slice(&r[range.clone()]);
        }
        Self { dim, data }
    }

    /// Stacks two signals of equal horizon sample-by-sample.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::HistoryMismatch {
                needed: self.len(),
                available: other.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for (a, b) in self.rows().zip(other.rows()) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(Self {
            dim: self.dim + other.dim,
            data,
        })
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        if self.data.len() != other.data.len() {
            return Err(Error::HistoryMismatch {
                needed: self.len(),
                available: other.len(),
            });
        }
        Ok(())
    }
}

/// Vector p-norm of one sample; `p = ∞` gives the max-abs entry.
pub fn vector_norm(v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    } else if p == 2.0 {
        libm::sqrt(v.iter().map(|x| x * x).sum())
    } else {
        libm::pow(v.iter().map(|x| libm::pow(x.abs(), p)).sum(), 1.0 / p)
    }
}

fn check_order(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidSignal(format!("norm order {p} < 1")));
    }
    Ok(())
}

/// `(Σ_t |s_t|_p^p)^(1/p)`, or `sup_t |s_t|_∞` for `p = ∞`.
pub fn lp_norm(s: &Signal, p: f64) -> Result<f64> {
    check_order(p)?;
    if !s.is_finite() {
        return Err(Error::InvalidSignal("non-finite entries".into()));
    }
    if p.is_infinite() {
        return Ok(s.rows().map(|r| vector_norm(r, p)).fold(0.0, f64::max));
    }
    if p == 2.0 {
        return Ok(libm::sqrt(s.as_slice().iter().map(|x| x * x).sum()));
    }
    let total: f64 = s.rows().map(|r| libm::pow(vector_norm(r, p), p)).sum();
    Ok(libm::pow(total, 1.0 / p))
}

/// ℓp norm of the suffix `s_{t0..T}`: the finite-horizon stand-in for a
/// vanishing tail.
pub fn tail_energy(s: &Signal, t0: usize, p: f64) -> Result<f64> {
    lp_norm(&s.suffix(t0)?, p)
}

/// A causal map between vector sequences, evaluated one sample at a time.
///
/// `step` receives `x_t` and must write `y_t`, which may depend on
/// `x_0..x_t` only. `reset` restores the initial internal state exactly.
pub trait CausalOperator {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn reset(&mut self);
    fn step(&mut self, input: &[f64], output: &mut [f64]);
}

impl<T: CausalOperator + ?Sized> CausalOperator for &mut T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn reset(&mut self) {
        (**self).reset()
    }
    fn step(&mut self, input: &[f64], output: &mut [f64]) {
        (**self).step(input, output)
    }
}

/// Resets `op` and runs it over the whole input signal.
pub fn apply<O: CausalOperator + ?Sized>(op: &mut O, input: &Signal) -> Result<Signal> {
    if input.dim() != op.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.input_dim(),
            got: input.dim(),
        });
    }
    op.reset();
    let mut out = Signal::zeros(op.output_dim(), input.horizon());
    for t in 0..input.len() {
        op.step(input.at(t), out.at_mut(t));
    }
    Ok(out)
}

/// Prefix-perturbation test: random input pairs that agree on `0..=t` must
/// produce outputs that agree on `0..=t`.
pub fn check_causality<O, R>(op: &mut O, trials: usize, horizon: usize, rng: &mut R) -> bool
where
    O: CausalOperator + ?Sized,
    R: Rng + ?Sized,
{
    let dim = op.input_dim();
    check_prefix_causality(|x| apply(op, x), dim, trials, horizon, rng)
}

/// [`check_causality`] for a map given as a whole-signal evaluation.
pub fn check_prefix_causality<F, R>(
    mut eval: F,
    input_dim: usize,
    trials: usize,
    horizon: usize,
    rng: &mut R,
) -> bool
where
    F: FnMut(&Signal) -> Result<Signal>,
    R: Rng + ?Sized,
{
    for _ in 0..trials {
        let a = Signal::from_fn(input_dim, horizon, |_| {
            (0..input_dim).map(|_| StandardNormal.sample(rng)).collect()
        });
        let t = rng.random_range(0..=horizon);
        let mut b = a.clone();
        for s in t + 1..=horizon {
            for x in b.at_mut(s) {
                *x = StandardNormal.sample(rng);
            }
        }
        let (ya, yb) = match (eval(&a), eval(&b)) {
            (Ok(ya), Ok(yb)) => (ya, yb),
            _ => return false,
        };
        for s in 0..=t {
            let same = ya
                .at(s)
                .iter()
                .zip(yb.at(s))
                .all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            if !same {
                return false;
            }
        }
    }
    true
}

/// Memoryless `y_t = g(x_t)` applied componentwise.
pub struct Memoryless<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64) -> f64> CausalOperator for Memoryless<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn reset(&mut self) {}
    fn step(&mut self, input: &[f64], output: &mut [f64]) {
        for (y, x) in output.iter_mut().zip(input) {
            *y = (self.f)(*x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geometric(t_max: usize) -> Signal {
        Signal::from_fn(1, t_max, |t| vec![libm::pow(2.0, -(t as f64))])
    }

    // independent oracle: plain summation of squares written out term by term
    fn sum_sq_from(t0: usize, t_max: usize) -> f64 {
        let mut acc = 0.0;
        let mut t = t0;
        while t <= t_max {
            let v = 1.0 / (1u64 << t) as f64;
            acc += v * v;
            t += 1;
        }
        libm::sqrt(acc)
    }

    #[test]
    fn zero_and_pythagorean_norms() {
        assert_eq!(lp_norm(&Signal::zeros(3, 10), 2.0).unwrap(), 0.0);
        let s = Signal::from_rows(&[[3.0, 4.0]]).unwrap();
        assert!((lp_norm(&s, 2.0).unwrap() - 5.0).abs() < 1e-15);
        assert_eq!(lp_norm(&s, f64::INFINITY).unwrap(), 4.0);
        assert!((lp_norm(&s, 1.0).unwrap() - 7.0).abs() < 1e-15);
    }

    #[test]
    fn geometric_sequence_norm_matches_summation() {
        let oracle = sum_sq_from(0, 20);
        assert!((oracle - 1.154700).abs() < 1e-6);
        assert!((lp_norm(&geometric(20), 2.0).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn tail_energy_cases() {
        assert_eq!(tail_energy(&Signal::zeros(2, 5), 3, 2.0).unwrap(), 0.0);
        let s = Signal::from_rows(&[[1.0], [1.0], [0.0], [0.0]]).unwrap();
        assert_eq!(tail_energy(&s, 2, 2.0).unwrap(), 0.0);
        let oracle = sum_sq_from(10, 20);
        assert!((oracle - 1.1276e-3).abs() < 1e-7);
        assert!((tail_energy(&geometric(20), 10, 2.0).unwrap() - oracle).abs() < 1e-15);
        assert!(matches!(
            tail_energy(&s, 4, 2.0),
            Err(Error::IndexOutOfRange { index: 4, horizon: 3 })
        ));
    }

    #[test]
    fn non_finite_is_rejected() {
        let s = Signal::from_rows(&[[1.0], [f64::NAN]]).unwrap();
        assert!(matches!(lp_norm(&s, 2.0), Err(Error::InvalidSignal(_))));
        assert!(lp_norm(&Signal::zeros(1, 1), 0.5).is_err());
    }

    #[test]
    fn causality_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sq = Memoryless { dim: 2, f: |x: f64| x * x };
        assert!(check_causality(&mut sq, 20, 15, &mut rng));

        // y_t = x_{t+1}
        let lookahead = |x: &Signal| {
            Ok(Signal::from_fn(1, x.horizon(), |t| {
                vec![if t < x.horizon() { x.at(t + 1)[0] } else { 0.0 }]
            }))
        };
        assert!(!check_prefix_causality(lookahead, 1, 20, 15, &mut rng));
    }

    #[test]
    fn stacking_and_columns() {
        let a = Signal::constant(&[1.0, 2.0], 3);
        let b = Signal::constant(&[3.0], 3);
        let ab = a.hstack(&b).unwrap();
        assert_eq!(ab.at(2), &[1.0, 2.0, 3.0]);
        assert_eq!(ab.columns(1..3).at(0), &[2.0, 3.0]);
    }
}
