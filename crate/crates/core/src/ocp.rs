//! Deterministic multi-particle optimal control problem solved at each step.
//!
//! The `Ns` most likely filter particles are rolled out under one shared
//! control sequence. The objective is
//!
//! ```text
//! Σ_k [ α‖u_k‖² + β/tr(J_k) ] + Σ_i wᵢ γ‖mask ⊙ (x_T⁽ⁱ⁾ − x_ta)‖² + β/tr(J_T)
//! ```
//!
//! where `J_k` is advanced with the Fisher recursion fed by the weighted
//! rollout states at each step, seeded with the filter's current `J`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{FimMatrix, FimPropagator, SlopeMoments};
use crate::particle_filter::ParticleSet;
use crate::plant::{ControlVec, LinearDynamics, NoiseModel, StateVec};
use crate::solver::{self, BoxBounds, IterationRecord, Objective, SolverOptions, Termination};
use crate::terrain::TerrainMap;

/// Hinge weight on squared distance outside a bounded map.
pub const OFF_MAP_PENALTY: f64 = 1e3;

pub const FD_RELATIVE_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Certainty-equivalent rollouts.
    ZeroNoise,
    /// One set of process-noise draws per solve, reused by every evaluation.
    FrozenSamples,
}

/// How often the terminal term enters the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCounting {
    Once,
    /// Repeated once per remaining stage, as in the nested double sum.
    PerStage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl ControlBounds {
    pub fn contains(&self, u: &ControlVec) -> bool {
        (0..3).all(|i| u[i] >= self.lower[i] && u[i] <= self.upper[i])
    }

    pub fn clamp(&self, u: &ControlVec) -> ControlVec {
        ControlVec::from_fn(|i, _| u[i].clamp(self.lower[i], self.upper[i]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcpConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub target: StateVec,
    /// Final time `T` (number of control steps in the episode).
    pub horizon: usize,
    /// Particles taken from the filter for the rollouts.
    pub ns: usize,
    pub noise_mode: NoiseMode,
    pub bounds: Option<ControlBounds>,
    pub terminal_mask: [f64; 6],
    pub terminal_counting: TerminalCounting,
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha, self.beta, self.gamma];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("alpha, beta, gamma must be finite and nonnegative".into()));
        }
        if self.horizon == 0 || self.ns == 0 {
            return Err(Error::Config("horizon and ns must be at least 1".into()));
        }
        if self.terminal_mask.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Config("terminal mask must be finite and nonnegative".into()));
        }
        if !self.target.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("target must be finite".into()));
        }
        if let Some(b) = &self.bounds {
            if (0..3).any(|i| !(b.lower[i] <= b.upper[i])) {
                return Err(Error::Config("control bounds must satisfy lower <= upper".into()));
            }
        }
        Ok(())
    }
}

/// Controls `u_l .. u_{T-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence {
    start: usize,
    controls: Vec<ControlVec>,
}

impl ControlSequence {
    pub fn new(start: usize, controls: Vec<ControlVec>) -> Self {
        ControlSequence { start, controls }
    }

    pub fn zeros(start: usize, horizon: usize) -> Self {
        ControlSequence {
            start,
            controls: vec![ControlVec::zeros(); horizon.saturating_sub(start)],
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn controls(&self) -> &[ControlVec] {
        &self.controls
    }

    pub fn first(&self) -> Option<&ControlVec> {
        self.controls.first()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.controls.iter().flat_map(|u| u.iter().copied()).collect()
    }

    pub fn from_flat(start: usize, flat: &[f64]) -> Self {
        ControlSequence {
            start,
            controls: flat.chunks(3).map(ControlVec::from_column_slice).collect(),
        }
    }

    /// Warm start for the next step: drop the applied control. The final
    /// time is fixed, so the sequence shrinks by one.
    pub fn shifted(&self) -> ControlSequence {
        ControlSequence {
            start: self.start + 1,
            controls: self.controls.iter().skip(1).copied().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageCost {
    pub control: f64,
    pub fisher: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostBreakdown {
    pub control: f64,
    pub fisher: f64,
    pub terminal: f64,
    pub penalty: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.control + self.fisher + self.terminal + self.penalty
    }
}

/// Trajectories, information matrices and cost terms of one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBundle {
    /// `states[s][i]` is particle `i` at step `l + s`, for `s = 0..=T-l`.
    pub states: Vec<Vec<StateVec>>,
    pub weights: Vec<f64>,
    pub controls: ControlSequence,
    pub fims: Vec<FimMatrix>,
    pub stages: Vec<StageCost>,
    pub terminal_fisher: f64,
    pub terminal_state: f64,
    pub penalty: f64,
    /// Some rollout point left a bounded map.
    pub infeasible: bool,
    counting_factor: f64,
}

impl RolloutBundle {
    pub fn breakdown(&self) -> CostBreakdown {
        let mut control = 0.0;
        let mut fisher = 0.0;
        for s in &self.stages {
            control += s.control;
            fisher += s.fisher;
        }
        CostBreakdown {
            control,
            fisher: fisher + self.counting_factor * self.terminal_fisher,
            terminal: self.counting_factor * self.terminal_state,
            penalty: self.penalty,
        }
    }

    /// Weighted mean of the rollout at each step.
    pub fn mean_path(&self) -> Vec<StateVec> {
        self.states
            .iter()
            .map(|xs| {
                xs.iter()
                    .zip(&self.weights)
                    .fold(StateVec::zeros(), |acc, (x, w)| acc + x * *w)
            })
            .collect()
    }
}

/// Objective assembled from a stored rollout.
///
/// `weights` reweights the terminal state term; pass the bundle's own weights
/// to reproduce the optimizer objective.
pub fn total_cost(bundle: &RolloutBundle, weights: &[f64], cfg: &OcpConfig) -> Result<f64> {
    let mut control = 0.0;
    let mut fisher = 0.0;
    for (s, u) in bundle.controls.controls().iter().enumerate() {
        control += cfg.alpha * u.norm_squared();
        let tr = bundle.fims[s].trace();
        if !(tr > 0.0) {
            return Err(Error::NonPositiveTrace(tr));
        }
        fisher += cfg.beta / tr;
    }
    let last = bundle.fims.last().expect("rollout has a terminal FIM");
    let tr = last.trace();
    if !(tr > 0.0) {
        return Err(Error::NonPositiveTrace(tr));
    }
    let terminal_fisher = cfg.beta / tr;
    let final_states = bundle.states.last().expect("rollout has a terminal state");
    let terminal_state = terminal_state_cost(final_states, weights, cfg);
    let factor = counting_factor(cfg, bundle.controls.len());
    Ok(control + fisher + factor * (terminal_fisher + terminal_state) + bundle.penalty)
}

fn counting_factor(cfg: &OcpConfig, remaining: usize) -> f64 {
    match cfg.terminal_counting {
        TerminalCounting::Once => 1.0,
        TerminalCounting::PerStage => remaining as f64,
    }
}

fn terminal_state_cost(states: &[StateVec], weights: &[f64], cfg: &OcpConfig) -> f64 {
    let mut acc = 0.0;
    for (x, w) in states.iter().zip(weights) {
        let mut d2 = 0.0;
        for c in 0..6 {
            let d = x[c] - cfg.target[c];
            d2 += cfg.terminal_mask[c] * d * d;
        }
        acc += w * cfg.gamma * d2;
    }
    acc
}

// State of a partially evaluated rollout at relative step `s`.
#[derive(Clone, Debug)]
struct Checkpoint {
    states: Vec<StateVec>,
    fim: Option<FimMatrix>,
    fisher: f64,
    penalty: f64,
}

/// One instance of the deterministic problem at step `l`.
pub struct OcpProblem<'a> {
    cfg: &'a OcpConfig,
    dynamics: &'a LinearDynamics,
    map: &'a TerrainMap,
    noise: &'a NoiseModel,
    propagator: FimPropagator,
    start: usize,
    particles: Vec<StateVec>,
    weights: Vec<f64>,
    j_start: FimMatrix,
    frozen: Option<Vec<Vec<StateVec>>>,
}

impl<'a> OcpProblem<'a> {
    /// `init_set` must already be the `Ns`-particle subset (see `top_k`).
    /// `rng` is only read in `FrozenSamples` mode.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        init_set: &ParticleSet,
        start: usize,
        dynamics: &'a LinearDynamics,
        map: &'a TerrainMap,
        noise: &'a NoiseModel,
        cfg: &'a OcpConfig,
        j_start: FimMatrix,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if start >= cfg.horizon {
            return Err(Error::HorizonMismatch {
                expected: cfg.horizon,
                got: start,
            });
        }
        let remaining = cfg.horizon - start;
        let frozen = match cfg.noise_mode {
            NoiseMode::ZeroNoise => None,
            NoiseMode::FrozenSamples => Some(
                (0..remaining)
                    .map(|_| (0..init_set.len()).map(|_| noise.sample_process(rng)).collect())
                    .collect(),
            ),
        };
        Ok(OcpProblem {
            cfg,
            dynamics,
            map,
            noise,
            propagator: FimPropagator::new(dynamics, noise),
            start,
            particles: init_set.particles().to_vec(),
            weights: init_set.weights().to_vec(),
            j_start,
            frozen,
        })
    }

    pub fn remaining(&self) -> usize {
        self.cfg.horizon - self.start
    }

    pub fn dimension(&self) -> usize {
        3 * self.remaining()
    }

    fn needs_fim(&self) -> bool {
        self.cfg.beta != 0.0
    }

    fn check_len(&self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.dimension() {
            return Err(Error::HorizonMismatch {
                expected: self.remaining(),
                got: flat.len() / 3,
            });
        }
        Ok(())
    }

    fn origin(&self) -> Checkpoint {
        Checkpoint {
            states: self.particles.clone(),
            fim: Some(self.j_start),
            fisher: 0.0,
            penalty: 0.0,
        }
    }

    fn control_cost(&self, flat: &[f64]) -> f64 {
        let mut acc = 0.0;
        for u in flat.chunks(3) {
            acc += self.cfg.alpha * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
        }
        acc
    }

    // Advances `cp` from relative step `from` to the horizon end. When
    // `record` is given, the checkpoint at every step is stored.
    fn scan(
        &self,
        flat: &[f64],
        from: usize,
        mut cp: Checkpoint,
        mut record: Option<&mut Vec<Checkpoint>>,
    ) -> Result<f64> {
        let n = self.remaining();
        let fim_on = self.needs_fim();
        let bounded = self.map.is_bounded();
        for s in from..n {
            if let Some(rec) = record.as_deref_mut() {
                rec.push(cp.clone());
            }
            if fim_on {
                let tr = cp.fim.as_ref().expect("fim tracked").trace();
                if !(tr > 0.0) {
                    return Err(Error::NonPositiveTrace(tr));
                }
                cp.fisher += self.cfg.beta / tr;
            }
            let u = ControlVec::from_column_slice(&flat[3 * s..3 * s + 3]);
            let bu = self.dynamics.input() * u;
            let f = self.dynamics.transition();
            let mut moments = SlopeMoments::default();
            for (i, x) in cp.states.iter_mut().enumerate() {
                let mut next = f * *x + bu;
                if let Some(fr) = &self.frozen {
                    next += fr[s][i];
                }
                *x = next;
                let w = self.weights[i];
                if bounded {
                    let (c1, c2, d) = self.map.clamp_to_domain(next[0], next[1]);
                    cp.penalty += w * OFF_MAP_PENALTY * d * d;
                    if fim_on {
                        let (g1, g2) = self.map.gradient_at(c1, c2)?;
                        moments.add(w, g1, g2);
                    }
                } else if fim_on {
                    let (g1, g2) = self.map.gradient_at(next[0], next[1])?;
                    moments.add(w, g1, g2);
                }
            }
            if fim_on {
                let info = moments.information(self.noise.r());
                let j = cp.fim.as_ref().expect("fim tracked");
                cp.fim = Some(self.propagator.advance(j, &info)?);
            }
        }
        if let Some(rec) = record {
            rec.push(cp.clone());
        }
        let mut terminal_fisher = 0.0;
        if fim_on {
            let tr = cp.fim.as_ref().expect("fim tracked").trace();
            if !(tr > 0.0) {
                return Err(Error::NonPositiveTrace(tr));
            }
            terminal_fisher = self.cfg.beta / tr;
        }
        let terminal_state = terminal_state_cost(&cp.states, &self.weights, self.cfg);
        let factor = counting_factor(self.cfg, n);
        Ok(self.control_cost(flat) + cp.fisher + factor * (terminal_fisher + terminal_state) + cp.penalty)
    }

    /// Objective value at the flattened control vector.
    pub fn cost(&self, flat: &[f64]) -> Result<f64> {
        self.check_len(flat)?;
        self.scan(flat, 0, self.origin(), None)
    }

    /// Central finite differences with step `1e-4·max(1, |u|)`.
    ///
    /// A perturbation of `u_s` leaves steps `≤ s` untouched, so each
    /// perturbed evaluation restarts from the base checkpoint at `s`; the
    /// accumulation order matches a full evaluation exactly.
    pub fn gradient_fd(&self, flat: &[f64]) -> Result<Vec<f64>> {
        self.gradient_fd_with_step(flat, FD_RELATIVE_STEP)
    }

    /// [`OcpProblem::gradient_fd`] with step `rel_step·max(1, |u|)`.
    pub fn gradient_fd_with_step(&self, flat: &[f64], rel_step: f64) -> Result<Vec<f64>> {
        self.check_len(flat)?;
        let mut checkpoints = Vec::with_capacity(self.remaining() + 1);
        self.scan(flat, 0, self.origin(), Some(&mut checkpoints))?;
        let mut grad = vec![0.0; flat.len()];
        let mut work = flat.to_vec();
        for (c, g) in grad.iter_mut().enumerate() {
            let s = c / 3;
            let h = rel_step * flat[c].abs().max(1.0);
            work[c] = flat[c] + h;
            let plus = self.scan(&work, s, checkpoints[s].clone(), None)?;
            work[c] = flat[c] - h;
            let minus = self.scan(&work, s, checkpoints[s].clone(), None)?;
            work[c] = flat[c];
            *g = (plus - minus) / (2.0 * h);
        }
        Ok(grad)
    }

    /// Full rollout with trajectories, per-step `J` and cost decomposition.
    /// `J` is tracked even when `β = 0`.
    pub fn rollout(&self, controls: &ControlSequence) -> Result<RolloutBundle> {
        let flat = controls.to_flat();
        self.check_len(&flat)?;
        let n = self.remaining();
        let bounded = self.map.is_bounded();
        let mut states = vec![self.particles.clone()];
        let mut fims = vec![self.j_start];
        let mut stages = Vec::with_capacity(n);
        let mut penalty = 0.0;
        let mut infeasible = false;
        for (s, u) in controls.controls().iter().enumerate() {
            let j = *fims.last().expect("seeded");
            stages.push(StageCost {
                control: self.cfg.alpha * u.norm_squared(),
                fisher: self.cfg.beta / j.trace(),
            });
            let mut moments = SlopeMoments::default();
            let next: Vec<StateVec> = states[s]
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let mut nx = self.dynamics.drift(x, u);
                    if let Some(fr) = &self.frozen {
                        nx += fr[s][i];
                    }
                    nx
                })
                .collect();
            for (x, w) in next.iter().zip(&self.weights) {
                let (c1, c2, d) = self.map.clamp_to_domain(x[0], x[1]);
                if bounded && d > 0.0 {
                    infeasible = true;
                    penalty += w * OFF_MAP_PENALTY * d * d;
                }
                let (g1, g2) = self.map.gradient_at(c1, c2)?;
                moments.add(*w, g1, g2);
            }
            fims.push(self.propagator.advance(&j, &moments.information(self.noise.r()))?);
            states.push(next);
        }
        let j_t = fims.last().expect("seeded");
        let bundle = RolloutBundle {
            terminal_fisher: self.cfg.beta / j_t.trace(),
            terminal_state: terminal_state_cost(states.last().expect("seeded"), &self.weights, self.cfg),
            states,
            weights: self.weights.clone(),
            controls: controls.clone(),
            fims,
            stages,
            penalty,
            infeasible,
            counting_factor: counting_factor(self.cfg, n),
        };
        Ok(bundle)
    }

    fn box_bounds(&self) -> Option<BoxBounds> {
        self.cfg.bounds.map(|b| {
            let n = self.remaining();
            BoxBounds {
                lower: (0..3 * n).map(|c| b.lower[c % 3]).collect(),
                upper: (0..3 * n).map(|c| b.upper[c % 3]).collect(),
            }
        })
    }

    /// Local minimizer from `warm` (zeros when absent).
    pub fn solve(&self, warm: Option<&ControlSequence>, opts: &SolverOptions) -> Result<Solution> {
        let x0 = match warm {
            Some(w) => {
                let flat = w.to_flat();
                self.check_len(&flat)?;
                flat
            }
            None => vec![0.0; self.dimension()],
        };
        let bounds = self.box_bounds();
        let min = solver::minimize(self, &x0, bounds.as_ref(), opts)?;
        Ok(Solution {
            controls: ControlSequence::from_flat(self.start, &min.x),
            cost: min.value,
            iterations: min.iterations,
            termination: min.termination,
            history: min.history,
        })
    }
}

impl Objective for OcpProblem<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.cost(x)
    }

    fn gradient(&self, x: &[f64], _value: f64) -> Result<Vec<f64>> {
        self.gradient_fd(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub controls: ControlSequence,
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub history: Vec<IterationRecord>,
}

impl Solution {
    pub fn line_search_failed(&self) -> bool {
        self.termination == Termination::LineSearchFailure
    }

    /// `iteration,cost,grad_norm,step` rows with header.
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("iteration,cost,grad_norm,step\n");
        for r in &self.history {
            out.push_str(&format!("{},{},{},{}\n", r.iteration, r.cost, r.grad_norm, r.step));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::double_integrator;
    use crate::terrain::{Bump, GaussianFieldMap, PlaneMap};
    use nalgebra::{DMatrix, DVector, Matrix6};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(beta: f64, horizon: usize) -> OcpConfig {
        OcpConfig {
            alpha: 1.0,
            beta,
            gamma: 1.0,
            target: StateVec::new(600.0, 0.0, 100.0, 0.0, 0.0, 0.0),
            horizon,
            ns: 4,
            noise_mode: NoiseMode::ZeroNoise,
            bounds: None,
            terminal_mask: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            terminal_counting: TerminalCounting::Once,
        }
    }

    fn noise() -> NoiseModel {
        NoiseModel::diagonal([1.0, 1.0, 1.0, 0.01, 0.01, 0.01], 4.0).unwrap()
    }

    fn set() -> ParticleSet {
        ParticleSet::new(
            vec![
                StateVec::new(0.0, 0.0, 100.0, 0.0, 0.0, 0.0),
                StateVec::new(12.0, -7.0, 98.0, 0.3, 0.1, 0.0),
                StateVec::new(-5.0, 9.0, 103.0, -0.2, 0.0, 0.05),
                StateVec::new(3.0, 4.0, 101.0, 0.0, -0.4, 0.0),
            ],
            vec![0.4, 0.3, 0.2, 0.1],
            0,
        )
        .unwrap()
    }

    fn j0() -> FimMatrix {
        FimMatrix::new(Matrix6::from_diagonal(&StateVec::new(1e-4, 1e-4, 1e-2, 4.0, 4.0, 100.0))).unwrap()
    }

    fn one_bump(x2: f64) -> TerrainMap {
        GaussianFieldMap::new(vec![Bump {
            center: [300.0, x2],
            amplitude: 40.0,
            width: 120.0,
        }])
        .unwrap()
        .into()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn controls(n: usize) -> Vec<f64> {
        (0..3 * n).map(|c| ((c * 7 % 11) as f64 - 5.0) * 0.05).collect()
    }

    // Adjoint recursion λ_T = 2γ Σ w M (x_T − x_ta), λ_k = Fᵀ λ_{k+1}.
    fn adjoint_gradient(c: &OcpConfig, d: &LinearDynamics, s: &ParticleSet, flat: &[f64]) -> Vec<f64> {
        let n = flat.len() / 3;
        let mut lambda = StateVec::zeros();
        for (x0, w) in s.iter() {
            let mut x = *x0;
            for k in 0..n {
                x = d.drift(&x, &ControlVec::from_column_slice(&flat[3 * k..3 * k + 3]));
            }
            let r = (x - c.target).component_mul(&StateVec::from(c.terminal_mask));
            lambda += r * (2.0 * c.gamma * w);
        }
        let mut grad = vec![0.0; flat.len()];
        for k in (0..n).rev() {
            let g = d.input().transpose() * lambda;
            for i in 0..3 {
                grad[3 * k + i] = 2.0 * c.alpha * flat[3 * k + i] + g[i];
            }
            lambda = d.transition().transpose() * lambda;
        }
        grad
    }

    #[test]
    fn fd_gradient_matches_quadratic_oracle() {
        let d = double_integrator(10.0).unwrap();
        let map: TerrainMap = PlaneMap::flat(0.0).into();
        let nm = noise();
        let c = cfg(0.0, 6);
        let s = set();
        let p = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
        let flat = controls(6);
        let fd = p.gradient_fd(&flat).unwrap();
        let exact = adjoint_gradient(&c, &d, &s, &flat);
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in fd.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-6 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn richardson_halving_is_consistent() {
        let d = double_integrator(10.0).unwrap();
        let map = crate::scenario::default_terrain();
        let nm = noise();
        let c = OcpConfig {
            target: StateVec::new(2000.0, 0.0, 100.0, 0.0, 0.0, 0.0),
            ..cfg(1e4, 8)
        };
        let mut s = set();
        s = ParticleSet::new(
            s.particles().iter().map(|x| x + StateVec::new(600.0, 450.0, 0.0, 0.0, 0.0, 0.0)).collect(),
            s.weights().to_vec(),
            0,
        )
        .unwrap();
        let p = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
        let flat = controls(8);
        let g1 = p.gradient_fd_with_step(&flat, 1e-4).unwrap();
        let g2 = p.gradient_fd_with_step(&flat, 5e-5).unwrap();
        let scale = g2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dev = g1.iter().zip(&g2).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dev < 1e-4 * scale, "{dev} vs {scale}");
    }

    #[test]
    fn checkpointed_fd_equals_naive_fd_bitwise() {
        let d = double_integrator(10.0).unwrap();
        let map = one_bump(150.0);
        let nm = noise();
        let c = cfg(5e3, 5);
        let s = set();
        let p = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
        let flat = controls(5);
        let fast = p.gradient_fd(&flat).unwrap();
        for (i, g) in fast.iter().enumerate() {
            let h = FD_RELATIVE_STEP * flat[i].abs().max(1.0);
            let mut x = flat.clone();
            x[i] = flat[i] + h;
            let plus = p.cost(&x).unwrap();
            x[i] = flat[i] - h;
            let minus = p.cost(&x).unwrap();
            assert_eq!(g.to_bits(), ((plus - minus) / (2.0 * h)).to_bits(), "component {i}");
        }
    }

    #[test]
    fn lq_solution_matches_normal_equations() {
        let d = double_integrator(10.0).unwrap();
        let map: TerrainMap = PlaneMap::flat(0.0).into();
        let nm = noise();
        let n = 8;
        let c = cfg(0.0, n);
        let s = set();
        let p = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();

        // x_T = F^n x_i + G u with G = [F^{n-1}B .. B]
        let mut g = DMatrix::<f64>::zeros(6, 3 * n);
        let mut block = *d.input();
        for k in (0..n).rev() {
            g.view_mut((0, 3 * k), (6, 3)).copy_from(&block);
            block = d.transition() * block;
        }
        let f_n = (0..n).fold(Matrix6::identity(), |acc, _| d.transition() * acc);
        let mut c_bar = DVector::<f64>::zeros(6);
        for (x, w) in s.iter() {
            let r = f_n * x - c.target;
            for i in 0..6 {
                c_bar[i] += w * r[i];
            }
        }
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&c.terminal_mask));
        let gm = &m * &g;
        let lhs = DMatrix::<f64>::identity(3 * n, 3 * n) * c.alpha + gm.transpose() * &gm * c.gamma;
        let rhs = -(gm.transpose() * (&m * c_bar)) * c.gamma;
        let u_star = lhs.cholesky().unwrap().solve(&rhs);
        let oracle_cost = p.cost(u_star.as_slice()).unwrap();

        let sol = p.solve(None, &SolverOptions::default()).unwrap();
        assert!((sol.cost - oracle_cost).abs() < 1e-4 * oracle_cost.abs(), "{} vs {}", sol.cost, oracle_cost);
        assert!(sol.cost >= oracle_cost * (1.0 - 1e-12));

        let warm = p.solve(Some(&sol.controls), &SolverOptions::default()).unwrap();
        assert!(warm.iterations <= 2, "{}", warm.iterations);
    }

    #[test]
    fn large_beta_detours_toward_the_bump() {
        let d = double_integrator(10.0).unwrap();
        let map = one_bump(180.0);
        let nm = noise();
        let s = set();
        let closest = |beta: f64| {
            let c = cfg(beta, 6);
            let p = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
            let sol = p.solve(None, &SolverOptions::default()).unwrap();
            let bundle = p.rollout(&sol.controls).unwrap();
            bundle
                .mean_path()
                .iter()
                .map(|x| (x[0] - 300.0).hypot(x[1] - 180.0))
                .fold(f64::MAX, f64::min)
        };
        let straight = closest(0.0);
        let fisher = closest(1e4);
        assert!(fisher < straight, "{fisher} vs {straight}");
    }

    #[test]
    fn mirrored_controls_mirror_the_gradient() {
        let d = double_integrator(10.0).unwrap();
        let map = one_bump(0.0);
        let nm = noise();
        let mirror = |x: &StateVec| StateVec::new(x[0], -x[1], x[2], x[3], -x[4], x[5]);
        let half = set();
        let mut pts: Vec<StateVec> = half.particles().to_vec();
        pts.extend(half.particles().iter().map(mirror));
        let mut ws = half.weights().to_vec();
        ws.extend_from_slice(half.weights());
        let s = ParticleSet::new(pts, ws, 0).unwrap();
        let c = cfg(1e4, 4);
        let p = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
        let flat = controls(4);
        let mirrored: Vec<f64> = flat.iter().enumerate().map(|(i, v)| if i % 3 == 1 { -v } else { *v }).collect();
        let g = p.gradient_fd(&flat).unwrap();
        let gm = p.gradient_fd(&mirrored).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..g.len() {
            let expect = if i % 3 == 1 { -g[i] } else { g[i] };
            assert!((gm[i] - expect).abs() < 1e-6 * scale, "component {i}");
        }
        // zero lateral control on a symmetric problem has zero lateral gradient
        let straight: Vec<f64> = flat.iter().enumerate().map(|(i, v)| if i % 3 == 1 { 0.0 } else { *v }).collect();
        let g0 = p.gradient_fd(&straight).unwrap();
        for k in 0..4 {
            assert!(g0[3 * k + 1].abs() < 1e-6 * scale);
        }
    }

    #[test]
    fn rollout_reproduces_objective() {
        let d = double_integrator(10.0).unwrap();
        let map = one_bump(100.0);
        let nm = noise();
        for counting in [TerminalCounting::Once, TerminalCounting::PerStage] {
            let c = OcpConfig {
                terminal_counting: counting,
                ..cfg(3e3, 5)
            };
            let s = set();
            let p = OcpProblem::new(&s, 2, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
            let seq = ControlSequence::from_flat(2, &controls(3));
            let bundle = p.rollout(&seq).unwrap();
            let direct = p.cost(&seq.to_flat()).unwrap();
            let rebuilt = total_cost(&bundle, &bundle.weights, &c).unwrap();
            assert!((direct - rebuilt).abs() < 1e-12 * direct.abs());
            assert!((bundle.breakdown().total() - direct).abs() < 1e-9 * direct.abs());
            assert_eq!(bundle.states.len(), 4);
            assert_eq!(bundle.fims.len(), 4);
        }
        let once = cfg(3e3, 5);
        let per = OcpConfig {
            terminal_counting: TerminalCounting::PerStage,
            ..once.clone()
        };
        let s = set();
        let a = OcpProblem::new(&s, 2, &d, &map, &nm, &once, j0(), &mut rng()).unwrap();
        let b = OcpProblem::new(&s, 2, &d, &map, &nm, &per, j0(), &mut rng()).unwrap();
        let seq = ControlSequence::from_flat(2, &controls(3));
        let ba = a.rollout(&seq).unwrap().breakdown();
        let bb = b.rollout(&seq).unwrap().breakdown();
        assert!((bb.terminal - 3.0 * ba.terminal).abs() < 1e-9 * bb.terminal);
        assert_eq!(ba.control, bb.control);
    }

    #[test]
    fn zero_beta_skips_fisher_term() {
        let d = double_integrator(10.0).unwrap();
        let map = one_bump(50.0);
        let nm = noise();
        let c = cfg(0.0, 4);
        let s = set();
        let p = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
        let seq = ControlSequence::from_flat(0, &controls(4));
        let b = p.rollout(&seq).unwrap();
        assert_eq!(b.breakdown().fisher, 0.0);
        assert!(b.fims.iter().all(|j| j.trace() > 0.0));
    }

    #[test]
    fn solves_are_deterministic() {
        let d = double_integrator(10.0).unwrap();
        let map = one_bump(150.0);
        let nm = noise();
        let c = OcpConfig {
            noise_mode: NoiseMode::FrozenSamples,
            ..cfg(1e4, 4)
        };
        let s = set();
        let a = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
        let b = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
        let opts = SolverOptions {
            max_iterations: 15,
            ..Default::default()
        };
        assert_eq!(a.solve(None, &opts).unwrap(), b.solve(None, &opts).unwrap());
        let plain = cfg(1e4, 4);
        let zero = OcpProblem::new(&s, 0, &d, &map, &nm, &plain, j0(), &mut rng()).unwrap();
        let flat = controls(4);
        assert_ne!(a.cost(&flat).unwrap(), zero.cost(&flat).unwrap());
    }

    #[test]
    fn bounds_hold_and_length_is_checked() {
        let d = double_integrator(10.0).unwrap();
        let map: TerrainMap = PlaneMap::flat(0.0).into();
        let nm = noise();
        let bounds = ControlBounds {
            lower: [-0.05; 3],
            upper: [0.05; 3],
        };
        let c = OcpConfig {
            bounds: Some(bounds),
            ..cfg(0.0, 4)
        };
        let s = set();
        let p = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
        let sol = p.solve(None, &SolverOptions::default()).unwrap();
        assert!(sol.controls.controls().iter().all(|u| bounds.contains(u)));
        // the target is out of reach, so u1 saturates
        assert_eq!(sol.controls.controls()[0][0], 0.05);
        assert!(matches!(p.cost(&[0.0; 6]), Err(Error::HorizonMismatch { .. })));
        assert!(matches!(
            OcpProblem::new(&s, 4, &d, &map, &nm, &c, j0(), &mut rng()),
            Err(Error::HorizonMismatch { .. })
        ));
    }

    #[test]
    fn off_grid_rollouts_are_penalised() {
        let d = double_integrator(10.0).unwrap();
        let heights = vec![0.0; 16];
        let grid = crate::terrain::GridMap::new([-50.0, -50.0], 50.0, 4, 4, heights).unwrap();
        let map: TerrainMap = grid.into();
        let nm = noise();
        let c = cfg(1e3, 3);
        let s = set();
        let p = OcpProblem::new(&s, 0, &d, &map, &nm, &c, j0(), &mut rng()).unwrap();
        let inside = p.rollout(&ControlSequence::zeros(0, 3)).unwrap();
        assert!(!inside.infeasible && inside.penalty == 0.0);
        let away = p.rollout(&ControlSequence::new(0, vec![ControlVec::new(1.0, 0.0, 0.0); 3])).unwrap();
        assert!(away.infeasible && away.penalty > 0.0);
    }

    #[test]
    fn shifted_sequence_drops_first_control() {
        let seq = ControlSequence::from_flat(3, &controls(4));
        let next = seq.shifted();
        assert_eq!(next.start(), 4);
        assert_eq!(next.controls(), &seq.controls()[1..]);
        assert_eq!(ControlSequence::from_flat(3, &seq.to_flat()), seq);
    }
}
