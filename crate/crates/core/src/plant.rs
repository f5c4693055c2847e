//! Point-mass robots with nonlinear drag, each under an integral tracking
//! controller whose target can be shifted by the boosting input.
//!
//! The augmented state is `η = (x, v)`: for every robot its position and
//! velocity blocks `(p_i, q_i)`, then one integrator block `v_i` per robot.
//! The control input `u = δref` is an offset added to the targets, so with
//! `u = 0` the loop is the plain base system.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signals::Signal;

/// Physical constants and base-controller gains, shared by all robots. The
/// gains are diagonal with equal entries on every axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotParams {
    pub mass: f64,
    pub drag_linear: f64,
    pub drag_quadratic: f64,
    pub ts: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            drag_linear: 1.0,
            drag_quadratic: 0.1,
            ts: 0.05,
            kp: 4.0,
            ki: 0.1,
            kd: 2.0,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.ts > 0.0
            && self.drag_linear >= 0.0
            && self.drag_quadratic >= 0.0
            && [self.kp, self.ki, self.kd].iter().all(|g| g.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config("robot parameters: mass, Ts > 0 and drag ≥ 0 required".into()))
        }
    }
}

/// `F = Kp (p̄ + δ − p) − Kd q + Ki v` per axis, together with the next
/// integrator value `v + (p̄ + δ − p)`.
pub fn base_force<S: Scalar>(params: &RobotParams, p: &[S], q: &[S], v: &[S], target: &[S], offset: &[S]) -> (Vec<S>, Vec<S>) {
    let mut force = Vec::with_capacity(p.len());
    let mut v_next = Vec::with_capacity(p.len());
    for k in 0..p.len() {
        let err = target[k] + offset[k] - p[k];
        force.push(err * params.kp - q[k] * params.kd + v[k] * params.ki);
        v_next.push(v[k] + err);
    }
    (force, v_next)
}

/// A team of identical robots moving in `spatial_dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub robots: usize,
    pub spatial_dim: usize,
    #[serde(default)]
    pub params: RobotParams,
}

impl Default for PlantModel {
    fn default() -> Self {
        Self::new(2, 2, RobotParams::default())
    }
}

impl PlantModel {
    pub fn new(robots: usize, spatial_dim: usize, params: RobotParams) -> Self {
        Self {
            robots,
            spatial_dim,
            params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.robots == 0 || self.spatial_dim == 0 {
            return Err(Error::Config("need at least one robot and one axis".into()));
        }
        self.params.validate()
    }

    /// Size of the physical state `x`.
    pub fn x_dim(&self) -> usize {
        2 * self.robots * self.spatial_dim
    }

    /// Size of `η = (x, v)`.
    pub fn state_dim(&self) -> usize {
        3 * self.robots * self.spatial_dim
    }

    /// Size of `u = δref`.
    pub fn control_dim(&self) -> usize {
        self.robots * self.spatial_dim
    }

    /// The reference lives in the same space as `x`: target positions and
    /// zero target velocities.
    pub fn ref_dim(&self) -> usize {
        self.x_dim()
    }

    pub fn pos_index(&self, robot: usize) -> usize {
        2 * robot * self.spatial_dim
    }

    pub fn vel_index(&self, robot: usize) -> usize {
        2 * robot * self.spatial_dim + self.spatial_dim
    }

    pub fn int_index(&self, robot: usize) -> usize {
        self.x_dim() + robot * self.spatial_dim
    }

    pub fn position<'a, S>(&self, eta: &'a [S], robot: usize) -> &'a [S] {
        let i = self.pos_index(robot);
        &eta[i..i + self.spatial_dim]
    }

    pub fn velocity<'a, S>(&self, eta: &'a [S], robot: usize) -> &'a [S] {
        let i = self.vel_index(robot);
        &eta[i..i + self.spatial_dim]
    }

    /// Stacks target positions into a reference vector with zero velocities.
    pub fn reference(&self, targets: &[Vec<f64>]) -> Vec<f64> {
        let mut r = vec![0.0; self.ref_dim()];
        for (i, t) in targets.iter().enumerate().take(self.robots) {
            let j = self.pos_index(i);
            r[j..j + self.spatial_dim].copy_from_slice(&t[..self.spatial_dim]);
        }
        r
    }

    /// Augmented state at rest at the given positions.
    pub fn state_at_rest(&self, positions: &[Vec<f64>]) -> Vec<f64> {
        let mut eta = vec![0.0; self.state_dim()];
        for (i, p) in positions.iter().enumerate().take(self.robots) {
            let j = self.pos_index(i);
            eta[j..j + self.spatial_dim].copy_from_slice(&p[..self.spatial_dim]);
        }
        eta
    }

    /// `f(η, u, x_ref)`: the undisturbed successor state.
    pub fn nominal<S: Scalar>(&self, eta: &[S], u: &[S], x_ref: &[S]) -> Vec<S> {
        step_with(&self.params, self, eta, u, x_ref)
    }

    fn check_dims(&self, eta: usize, u: usize, x_ref: usize) -> Result<()> {
        for (expected, got) in [(self.state_dim(), eta), (self.control_dim(), u), (self.ref_dim(), x_ref)] {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        Ok(())
    }
}

fn step_with<S: Scalar>(params: &RobotParams, m: &PlantModel, eta: &[S], u: &[S], x_ref: &[S]) -> Vec<S> {
    let d = m.spatial_dim;
    let mut next = vec![S::zero(); m.state_dim()];
    let h = params.ts / params.mass;
    for i in 0..m.robots {
        let (pi, qi, vi) = (m.pos_index(i), m.vel_index(i), m.int_index(i));
        let (force, v_next) = base_force(
            params,
            &eta[pi..pi + d],
            &eta[qi..qi + d],
            &eta[vi..vi + d],
            &x_ref[pi..pi + d],
            &u[i * d..(i + 1) * d],
        );
        for k in 0..d {
            let q = eta[qi + k];
            let drag = q * params.drag_linear + q.abs() * q * params.drag_quadratic;
            let q_next = q + (force[k] - drag) * h;
            next[qi + k] = q_next;
            next[pi + k] = eta[pi + k] + q_next * params.ts;
            next[vi + k] = v_next[k];
        }
    }
    next
}

/// `η_{t+1} = f(η_t, u_t, x_ref,t) + w_{t+1}` under the model.
pub fn plant_step(model: &PlantModel, eta: &[f64], u: &[f64], x_ref: &[f64], w_next: &[f64]) -> Result<Vec<f64>> {
    model.check_dims(eta.len(), u.len(), x_ref.len())?;
    if w_next.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.state_dim(),
            got: w_next.len(),
        });
    }
    let mut next = model.nominal(eta, u, x_ref);
    for (n, w) in next.iter_mut().zip(w_next) {
        *n += w;
    }
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::IntegrationBlowup { step: 0 })
    }
}

/// `ŵ_t = η_t − f(η_{t−1}, u_{t−1}, x_ref,t−1)`, with `ŵ_0 = η_0`.
pub fn reconstruct_disturbance(model: &PlantModel, eta: &Signal, u: &Signal, x_ref: &Signal, t: usize) -> Result<Vec<f64>> {
    if eta.len() <= t {
        return Err(Error::HistoryMismatch {
            needed: t + 1,
            available: eta.len(),
        });
    }
    if t == 0 {
        return Ok(eta.at(0).to_vec());
    }
    for s in [u, x_ref] {
        if s.len() < t {
            return Err(Error::HistoryMismatch {
                needed: t,
                available: s.len(),
            });
        }
    }
    model.check_dims(eta.dim(), u.dim(), x_ref.dim())?;
    let pred = model.nominal(eta.at(t - 1), u.at(t - 1), x_ref.at(t - 1));
    Ok(eta.at(t).iter().zip(&pred).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchKind {
    #[default]
    None,
    /// Both drag coefficients of the true plant are scaled by `1 + magnitude`.
    DragError,
    /// The true plant adds `δ = c tanh(W (x − x_ref, u))` to the velocities,
    /// with `c = magnitude` and `‖W‖ = 1`.
    BoundedOperator,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MismatchSpec {
    #[serde(default)]
    pub kind: MismatchKind,
    #[serde(default)]
    pub magnitude: f64,
}

impl MismatchSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn bounded(c: f64) -> Self {
        Self {
            kind: MismatchKind::BoundedOperator,
            magnitude: c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() || self.magnitude < 0.0 && self.kind == MismatchKind::BoundedOperator {
            return Err(Error::Config("mismatch magnitude must be finite (and ≥ 0 for bounded operators)".into()));
        }
        if self.kind == MismatchKind::DragError && self.magnitude <= -1.0 {
            return Err(Error::Config("drag error must keep drag nonnegative".into()));
        }
        Ok(())
    }

    /// Incremental gain of the mismatch when it is known in closed form.
    pub fn analytic_gain(&self) -> Option<f64> {
        match self.kind {
            MismatchKind::None => Some(0.0),
            MismatchKind::BoundedOperator => Some(self.magnitude.abs()),
            MismatchKind::DragError => None,
        }
    }
}

/// The true system: the model plus a mismatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub model: PlantModel,
    pub mismatch: MismatchSpec,
    params: RobotParams,
}

/// Builds the true plant `f = f̂ + Δ` from the model `f̂`.
pub fn apply_mismatch(spec: MismatchSpec, nominal: &PlantModel) -> Plant {
    let mut params = nominal.params.clone();
    if spec.kind == MismatchKind::DragError {
        params.drag_linear *= 1.0 + spec.magnitude;
        params.drag_quadratic *= 1.0 + spec.magnitude;
    }
    Plant {
        model: nominal.clone(),
        mismatch: spec,
        params,
    }
}

impl Plant {
    pub fn perfect(model: &PlantModel) -> Self {
        apply_mismatch(MismatchSpec::none(), model)
    }

    /// `f(η, u, x_ref)` of the true system.
    pub fn f<S: Scalar>(&self, eta: &[S], u: &[S], x_ref: &[S]) -> Vec<S> {
        let mut next = step_with(&self.params, &self.model, eta, u, x_ref);
        if self.mismatch.kind == MismatchKind::BoundedOperator {
            let delta = self.mismatch_term(eta, u, x_ref);
            for (n, d) in next.iter_mut().zip(delta) {
                *n = *n + d;
            }
        }
        next
    }

    /// The bounded-operator mismatch `δ`, as a full-length state increment.
    pub fn mismatch_term<S: Scalar>(&self, eta: &[S], u: &[S], x_ref: &[S]) -> Vec<S> {
        let m = &self.model;
        let mut delta = vec![S::zero(); m.state_dim()];
        if self.mismatch.kind != MismatchKind::BoundedOperator {
            return delta;
        }
        let c = self.mismatch.magnitude;
        let d = m.spatial_dim;
        for i in 0..m.robots {
            for k in 0..d {
                let e = eta[m.pos_index(i) + k] - x_ref[m.pos_index(i) + k];
                let z = (e + u[i * d + k]) * core::f64::consts::FRAC_1_SQRT_2;
                delta[m.vel_index(i) + k] = z.tanh() * c;
            }
        }
        delta
    }

    /// `η_{t+1} = f(η_t, u_t, x_ref,t) + w_{t+1}` for the true system.
    pub fn step(&self, eta: &[f64], u: &[f64], x_ref: &[f64], w_next: &[f64]) -> Result<Vec<f64>> {
        self.model.check_dims(eta.len(), u.len(), x_ref.len())?;
        let mut next = self.f(eta, u, x_ref);
        for (n, w) in next.iter_mut().zip(w_next) {
            *n += w;
        }
        if next.iter().all(|v| v.is_finite()) {
            Ok(next)
        } else {
            Err(Error::IntegrationBlowup { step: 0 })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
    pub weight: f64,
}

/// A named planar scene: obstacles, nominal start positions and the band of
/// admissible targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Two discs leaving a narrow passage at the origin.
    #[default]
    Corridor,
    /// A 2×3 array of small discs.
    MountainRange,
    /// No obstacles, corridor starts and targets.
    Open,
}

/// Targets `(x, y)` with `x_min ≤ x ≤ x_max`, fixed `y`, pairwise
/// separation at least `min_separation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetBand {
    pub x_min: f64,
    pub x_max: f64,
    pub y: f64,
    pub min_separation: f64,
}

impl TargetBand {
    pub fn contains(&self, targets: &[[f64; 2]]) -> bool {
        let in_band = targets
            .iter()
            .all(|t| t[0] >= self.x_min && t[0] <= self.x_max && t[1] == self.y);
        let separated = targets.iter().enumerate().all(|(i, a)| {
            targets[i + 1..]
                .iter()
                .all(|b| libm::hypot(a[0] - b[0], a[1] - b[1]) >= self.min_separation)
        });
        in_band && separated
    }
}

impl Layout {
    pub fn obstacles(&self) -> Vec<Obstacle> {
        match self {
            Layout::Corridor => vec![
                Obstacle {
                    center: [-1.75, 0.0],
                    radius: 0.75,
                    weight: 1.0,
                },
                Obstacle {
                    center: [1.75, 0.0],
                    radius: 0.75,
                    weight: 1.0,
                },
            ],
            Layout::MountainRange => {
                let mut v = Vec::with_capacity(6);
                for y in [-0.5, 0.5] {
                    for x in [-1.5, 0.0, 1.5] {
                        v.push(Obstacle {
                            center: [x, y],
                            radius: 0.4,
                            weight: 1.0,
                        });
                    }
                }
                v
            }
            Layout::Open => Vec::new(),
        }
    }

    pub fn starts(&self) -> Vec<[f64; 2]> {
        match self {
            Layout::Corridor | Layout::Open => vec![[-2.0, -2.0], [2.0, -2.0]],
            Layout::MountainRange => vec![[-2.0, -2.5], [2.0, -2.5]],
        }
    }

    pub fn target_band(&self) -> TargetBand {
        let y = match self {
            Layout::Corridor | Layout::Open => 2.0,
            Layout::MountainRange => 2.5,
        };
        TargetBand {
            x_min: -2.0,
            x_max: 2.0,
            y,
            min_separation: 1.0,
        }
    }

    /// The fixed "straight up" target pair.
    pub fn benchmark_targets(&self) -> Vec<[f64; 2]> {
        let b = self.target_band();
        vec![[b.x_min, b.y], [b.x_max, b.y]]
    }

    /// The benchmark pair with the two robots' targets exchanged.
    pub fn swapped_targets(&self) -> Vec<[f64; 2]> {
        let mut t = self.benchmark_targets();
        t.reverse();
        t
    }
}

/// Uniform draw from the layout's target band by rejection sampling.
pub fn sample_reference<R: Rng + ?Sized>(layout: Layout, robots: usize, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    const BUDGET: usize = 10_000;
    let band = layout.target_band();
    for _ in 0..BUDGET {
        let t: Vec<[f64; 2]> = (0..robots)
            .map(|_| [rng.random_range(band.x_min..=band.x_max), band.y])
            .collect();
        if band.contains(&t) {
            return Ok(t);
        }
    }
    Err(Error::RejectionBudget { attempts: BUDGET })
}

/// Distribution of the process noise. Only `w_0` (the initial condition) is
/// random by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisturbanceSpec {
    /// Standard deviation of the initial positions around the nominal starts.
    pub init_std: f64,
    /// Standard deviation of the noise on `x` at `t = 1`; zero disables it.
    pub noise_std: f64,
    /// Geometric decay of the noise level per step.
    pub noise_decay: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            init_std: 0.5,
            noise_std: 0.0,
            noise_decay: 0.9,
        }
    }
}

/// Draws `w_0 = (x_0, 0)` around `starts` and `w_t = (noise, 0)` afterwards.
pub fn sample_disturbance<R: Rng + ?Sized>(
    spec: &DisturbanceSpec,
    model: &PlantModel,
    starts: &[[f64; 2]],
    horizon: usize,
    rng: &mut R,
) -> Result<Signal> {
    if model.spatial_dim != 2 || starts.len() != model.robots {
        return Err(Error::DimensionMismatch {
            expected: model.robots,
            got: starts.len(),
        });
    }
    let init = Normal::new(0.0, spec.init_std.max(0.0)).map_err(|_| Error::Config("initial std".into()))?;
    let mut w = Signal::zeros(model.state_dim(), horizon);
    for (i, s) in starts.iter().enumerate() {
        let j = model.pos_index(i);
        for k in 0..2 {
            w.at_mut(0)[j + k] = s[k] + init.sample(rng);
        }
    }
    if spec.noise_std > 0.0 {
        let mut level = spec.noise_std;
        for t in 1..=horizon {
            for x in &mut w.at_mut(t)[..model.x_dim()] {
                let z: f64 = StandardNormal.sample(rng);
                *x = level * z;
            }
            level *= spec.noise_decay;
        }
    }
    Ok(w)
}

/// Converts planar targets into a reference vector.
pub fn reference_vector(model: &PlantModel, targets: &[[f64; 2]]) -> Vec<f64> {
    let t: Vec<Vec<f64>> = targets.iter().map(|t| t.to_vec()).collect();
    model.reference(&t)
}
