//! Oracle validation suites: particle filter against the Kalman filter,
//! finite-difference gradients, the two Fisher recursion forms, and the
//! Cramér-Rao bound.

use std::fmt;

use nalgebra::{Cholesky, Matrix6, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::controller::{straight_baseline_episode, ControllerConfig, EpisodeLog};
use crate::error::{Error, Result};
use crate::fisher::{fim_init, observation_information, FimMatrix, FimPropagator};
use crate::harness::campaign::run_seed;
use crate::harness::kalman::{kalman_oracle, KalmanOracle};
use crate::ocp::{NoiseMode, OcpConfig, OcpProblem, TerminalCounting, FD_RELATIVE_STEP};
use crate::particle_filter::ParticleSet;
use crate::plant::{double_integrator, NoiseModel, StateVec};
use crate::scenario::{default_controller, default_scenario, plane_presets, plane_scenario, Scenario, DEFAULT_BETA};
use crate::terrain::{Bump, GaussianFieldMap, PlaneMap, TerrainMap};

pub const TOL_SCALE_VAR: &str = "DUALNAV_TOL_SCALE";

pub const KF_COV_TOL: f64 = 1e-8;
pub const PF_BIAS_TOL: f64 = 0.2;
pub const FIM_FORMS_TOL: f64 = 1e-9;
pub const QUADRATIC_GRAD_TOL: f64 = 1e-6;
pub const RICHARDSON_TOL: f64 = 1e-4;
pub const ANTISYMMETRY_TOL: f64 = 1e-6;

/// Reads the tolerance multiplier; unset means 1.
pub fn tolerance_scale() -> Result<f64> {
    parse_tolerance_scale(std::env::var(TOL_SCALE_VAR).ok().as_deref())
}

pub fn parse_tolerance_scale(value: Option<&str>) -> Result<f64> {
    match value {
        None => Ok(1.0),
        Some(s) => match s.trim().parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
            _ => Err(Error::Config(format!("{TOL_SCALE_VAR} must be a positive number, got {s:?}"))),
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured < tolerance`.
    pub fn below(name: impl Into<String>, measured: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            measured,
            tolerance,
            passed: measured < tolerance,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e}, tolerance {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Kf,
    Grad,
    Fim,
    All,
}

pub fn run_suite(suite: Suite) -> Result<Report> {
    let scale = tolerance_scale()?;
    let mut report = Report::default();
    if matches!(suite, Suite::Kf | Suite::All) {
        report.extend(validate_kf(scale)?);
    }
    if matches!(suite, Suite::Grad | Suite::All) {
        report.extend(validate_gradients(scale)?);
    }
    if matches!(suite, Suite::Fim | Suite::All) {
        report.extend(validate_fim_forms(scale)?);
    }
    Ok(report)
}

fn oracle_for(log: &EpisodeLog, scenario: &Scenario) -> Result<KalmanOracle> {
    let observations: Vec<f64> = log.steps.iter().map(|s| s.observation).collect();
    kalman_oracle(
        &scenario.dynamics,
        &scenario.terrain,
        &scenario.noise,
        &scenario.belief,
        &log.controls(),
        &observations,
    )
}

/// `J_k⁻¹` from `fim_step` against the Kalman covariance along `steps` steps.
/// Returns the largest absolute entry difference.
pub fn kf_covariance_deviation(scenario: &Scenario, steps: usize) -> Result<f64> {
    let plane = scenario.terrain.as_plane().ok_or(Error::NonPlaneMap)?;
    let dummy_z = vec![plane.c + scenario.belief.mean()[2]; steps + 1];
    let controls = vec![Default::default(); steps];
    let kf = kalman_oracle(
        &scenario.dynamics,
        &scenario.terrain,
        &scenario.noise,
        &scenario.belief,
        &controls,
        &dummy_z,
    )?;
    let cloud = ParticleSet::uniform(vec![*scenario.belief.mean()], 0)?;
    let mut j = fim_init(&scenario.belief, &cloud, &scenario.terrain, &scenario.noise, true)?;
    let mut worst: f64 = (j.inverse()? - kf.covs[0]).amax();
    for k in 1..=steps {
        j = crate::fisher::fim_step(&j, &scenario.dynamics, &scenario.noise, &cloud, &scenario.terrain)?;
        worst = worst.max((j.inverse()? - kf.covs[k]).amax());
    }
    Ok(worst)
}

/// Largest `|mean over runs of (PF mean − KF mean) / KF std|` over steps and
/// coordinates, for `runs` straight-arm episodes with `particles` particles.
pub fn validate_pf_against_kf(scenario: &Scenario, particles: usize, runs: usize, master_seed: u64) -> Result<f64> {
    scenario.terrain.as_plane().ok_or(Error::NonPlaneMap)?;
    let cfg = default_controller(0.0, particles);
    let mut sums: Option<Vec<StateVec>> = None;
    for r in 0..runs {
        let log = straight_baseline_episode(&cfg, scenario, run_seed(master_seed, r))?;
        let kf = oracle_for(&log, scenario)?;
        let acc = sums.get_or_insert_with(|| vec![StateVec::zeros(); log.steps.len()]);
        for (k, s) in log.steps.iter().enumerate() {
            let std = kf.std_at(k);
            acc[k] += (s.estimate - kf.means[k]).component_div(&std);
        }
    }
    let sums = sums.unwrap_or_default();
    Ok(sums
        .iter()
        .flat_map(|v| v.iter().map(|b| (b / runs as f64).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max))
}

/// Kalman-filter suite over the flat, tilted and steep plane presets.
pub fn validate_kf(scale: f64) -> Result<Report> {
    let mut report = Report::default();
    for (name, plane) in plane_presets() {
        let scenario = plane_scenario(plane);
        let dev = kf_covariance_deviation(&scenario, 20)?;
        report
            .checks
            .push(Check::below(format!("kf-covariance-{name}"), dev, KF_COV_TOL * scale));
        let bias = validate_pf_against_kf(&scenario, 10_000, 20, 0x5eed)?;
        report
            .checks
            .push(Check::below(format!("pf-kf-bias-{name}"), bias, PF_BIAS_TOL * scale));
    }
    Ok(report)
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, center: [f64; 2], spread: f64) -> ParticleSet {
    let particles = (0..n)
        .map(|_| {
            StateVec::new(
                center[0] + spread * rng.sample::<f64, _>(StandardNormal),
                center[1] + spread * rng.sample::<f64, _>(StandardNormal),
                100.0 + 5.0 * rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                0.1 * rng.sample::<f64, _>(StandardNormal),
            )
        })
        .collect();
    let weights = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    ParticleSet::new(particles, weights, 0).expect("valid cloud")
}

fn random_controls(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn short_ocp(beta: f64, horizon: usize) -> OcpConfig {
    OcpConfig {
        alpha: 1.0,
        beta,
        gamma: 1.0,
        target: StateVec::new(2000.0, 0.0, 100.0, 0.0, 0.0, 0.0),
        horizon,
        ns: 20,
        noise_mode: NoiseMode::ZeroNoise,
        bounds: None,
        terminal_mask: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        terminal_counting: TerminalCounting::Once,
    }
}

/// Closed-form gradient of the `β = 0` objective: linear rollouts, quadratic cost.
pub fn quadratic_gradient(problem_set: &ParticleSet, cfg: &OcpConfig, dt: f64, flat: &[f64]) -> Vec<f64> {
    let d = double_integrator(dt).expect("positive dt");
    let f = d.transition();
    let b = d.input();
    let n = flat.len() / 3;
    // input-to-final-state maps G_s = F^{n-1-s} B
    let mut g_maps = vec![*b; n];
    for s in (0..n.saturating_sub(1)).rev() {
        g_maps[s] = f * g_maps[s + 1];
    }
    let mut drive = StateVec::zeros();
    for s in 0..n {
        drive += g_maps[s] * nalgebra::Vector3::from_column_slice(&flat[3 * s..3 * s + 3]);
    }
    let fn_ = (0..n).fold(Matrix6::identity(), |acc, _| f * acc);
    let mut weighted_residual = StateVec::zeros();
    for (x, w) in problem_set.iter() {
        let x_t = fn_ * x + drive;
        let r = (x_t - cfg.target).component_mul(&StateVec::from(cfg.terminal_mask));
        weighted_residual += r * (2.0 * cfg.gamma * w);
    }
    let mut grad = Vec::with_capacity(flat.len());
    for s in 0..n {
        let gu = g_maps[s].transpose() * weighted_residual;
        for c in 0..3 {
            grad.push(2.0 * cfg.alpha * flat[3 * s + c] + gu[c]);
        }
    }
    grad
}

/// Gradient suite: quadratic oracle, Richardson consistency on the default
/// map, and mirror antisymmetry across a symmetric bump.
pub fn validate_gradients(scale: f64) -> Result<Report> {
    let trials = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a4d);
    let dyn_ = double_integrator(10.0)?;
    let nm = NoiseModel::diagonal([1.0, 1.0, 1.0, 0.01, 0.01, 0.01], 4.0)?;
    let flat_map: TerrainMap = PlaneMap::flat(0.0).into();
    let default_map = default_scenario().terrain;
    let j0 = FimMatrix::new(Matrix6::from_diagonal(&StateVec::new(1e-4, 1e-4, 1e-2, 4.0, 4.0, 100.0)))?;

    let mut quad_worst: f64 = 0.0;
    let mut rich_worst: f64 = 0.0;
    let mut mirror_worst: f64 = 0.0;
    let bump: TerrainMap = GaussianFieldMap::new(vec![Bump {
        center: [600.0, 0.0],
        amplitude: 40.0,
        width: 150.0,
    }])?
    .into();

    for _ in 0..trials {
        let horizon = rng.random_range(2..=6);
        let set = random_cloud(&mut rng, 10, [0.0, 0.0], 50.0);
        let flat = random_controls(&mut rng, 3 * horizon, 0.5);

        let cfg = short_ocp(0.0, horizon);
        let p = OcpProblem::new(&set, 0, &dyn_, &flat_map, &nm, &cfg, j0, &mut rng)?;
        let fd = p.gradient_fd(&flat)?;
        let exact = quadratic_gradient(&set, &cfg, dyn_.dt(), &flat);
        let diff: Vec<f64> = fd.iter().zip(&exact).map(|(a, b)| a - b).collect();
        quad_worst = quad_worst.max(inf_norm(&diff) / inf_norm(&exact).max(1e-300));

        let cfg = short_ocp(DEFAULT_BETA, horizon);
        let center = [rng.random_range(200.0..1600.0), rng.random_range(0.0..700.0)];
        let set_b = random_cloud(&mut rng, 10, center, 80.0);
        let p = OcpProblem::new(&set_b, 0, &dyn_, &default_map, &nm, &cfg, j0, &mut rng)?;
        let g_h = p.gradient_fd_with_step(&flat, FD_RELATIVE_STEP)?;
        let g_h2 = p.gradient_fd_with_step(&flat, FD_RELATIVE_STEP / 2.0)?;
        let diff: Vec<f64> = g_h.iter().zip(&g_h2).map(|(a, b)| a - b).collect();
        rich_worst = rich_worst.max(inf_norm(&diff) / inf_norm(&g_h2).max(1e-300));

        let mirror_state = |x: &StateVec| StateVec::new(x[0], -x[1], x[2], x[3], -x[4], x[5]);
        let half = random_cloud(&mut rng, 5, [300.0, 60.0], 40.0);
        let mut pts: Vec<StateVec> = half.particles().to_vec();
        pts.extend(half.particles().iter().map(mirror_state));
        let mut ws: Vec<f64> = half.weights().to_vec();
        ws.extend_from_slice(half.weights());
        let sym = ParticleSet::new(pts, ws, 0)?;
        let cfg = short_ocp(DEFAULT_BETA, horizon);
        let p = OcpProblem::new(&sym, 0, &dyn_, &bump, &nm, &cfg, j0, &mut rng)?;
        let mirrored: Vec<f64> = flat
            .iter()
            .enumerate()
            .map(|(c, v)| if c % 3 == 1 { -v } else { *v })
            .collect();
        let g = p.gradient_fd(&flat)?;
        let gm = p.gradient_fd(&mirrored)?;
        let dev: Vec<f64> = g
            .iter()
            .zip(&gm)
            .enumerate()
            .map(|(c, (a, b))| if c % 3 == 1 { a + b } else { a - b })
            .collect();
        mirror_worst = mirror_worst.max(inf_norm(&dev) / inf_norm(&g).max(1e-300));
    }
    Ok(Report {
        checks: vec![
            Check::below("grad-quadratic-oracle", quad_worst, QUADRATIC_GRAD_TOL * scale),
            Check::below("grad-richardson-default-map", rich_worst, RICHARDSON_TOL * scale),
            Check::below("grad-mirror-antisymmetry", mirror_worst, ANTISYMMETRY_TOL * scale),
        ],
    })
}

fn random_pd(rng: &mut ChaCha8Rng) -> Matrix6<f64> {
    let a = Matrix6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let d = Matrix6::from_diagonal(&StateVec::from_fn(|_, _| 10f64.powf(rng.random_range(-2.0..2.0))));
    a * a.transpose() * 0.1 + d
}

/// Largest relative deviation between the block and information forms over
/// `trials` random PD inputs.
pub fn fim_forms_deviation(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dyn_ = double_integrator(10.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let q = random_pd(&mut rng);
        let nm = NoiseModel::new(q, rng.random_range(0.5..10.0))?;
        let prop = FimPropagator::new(&dyn_, &nm);
        let j = FimMatrix::new(random_pd(&mut rng))?;
        let cloud = random_cloud(&mut rng, 8, [0.0, 0.0], 300.0);
        let map: TerrainMap = GaussianFieldMap::new(vec![Bump {
            center: [0.0, 0.0],
            amplitude: 40.0,
            width: 150.0,
        }])?
        .into();
        let info = observation_information(cloud.iter(), &map, &nm)?;
        let a = prop.step_block(&j, &info)?;
        let b = prop.step_information_form(&j, &info)?;
        let dev = (a.matrix() - b.matrix()).amax() / b.matrix().amax().max(1.0);
        worst = worst.max(dev);
    }
    Ok(worst)
}

pub fn validate_fim_forms(scale: f64) -> Result<Report> {
    Ok(Report {
        checks: vec![Check::below(
            "fim-two-forms",
            fim_forms_deviation(100, 0xf1f0)?,
            FIM_FORMS_TOL * scale,
        )],
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Matrix6<f64>) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}

/// Lower `quantile` of `eigmin(S − I)` where `S` is the second-moment matrix
/// of `runs` standard-normal 6-vectors, from `replicates` parametric draws.
pub fn whitened_eigmin_quantile(runs: usize, quantile: f64, replicates: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mins: Vec<f64> = (0..replicates)
        .map(|_| {
            let mut s = Matrix6::zeros();
            for _ in 0..runs {
                let v = StateVec::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                s += v * v.transpose();
            }
            min_eigenvalue(&(s / runs as f64 - Matrix6::identity()))
        })
        .collect();
    mins.sort_by(f64::total_cmp);
    let idx = ((quantile * replicates as f64).floor() as usize).min(replicates - 1);
    mins[idx]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrlbCheck {
    pub k: usize,
    /// `eigmin(Lᵀ Ĉ L − I)` with `J = L Lᵀ`.
    pub whitened_eigmin: f64,
    /// Raw `eigmin(Ĉ − J⁻¹)`.
    pub raw_eigmin: f64,
    /// Lower edge of the acceptance band (negative).
    pub band: f64,
    pub passed: bool,
}

/// Error second-moment matrix of the filter mean over `runs` episodes,
/// compared with `J_k⁻¹` at each of `steps`.
pub fn crlb_sanity(
    scenario: &Scenario,
    cfg: &ControllerConfig,
    runs: usize,
    steps: &[usize],
    master_seed: u64,
) -> Result<Vec<CrlbCheck>> {
    scenario.terrain.as_plane().ok_or(Error::NonPlaneMap)?;
    let horizon = cfg.ocp.horizon;
    let mut moments = vec![Matrix6::zeros(); horizon + 1];
    for r in 0..runs {
        let log = straight_baseline_episode(cfg, scenario, run_seed(master_seed, r))?;
        for (k, s) in log.steps.iter().enumerate() {
            let e = s.estimate - s.truth;
            moments[k] += e * e.transpose();
        }
    }
    let cloud = ParticleSet::uniform(vec![*scenario.belief.mean()], 0)?;
    let prop = FimPropagator::new(&scenario.dynamics, &scenario.noise);
    let info = observation_information(cloud.iter(), &scenario.terrain, &scenario.noise)?;
    let mut fims = vec![fim_init(&scenario.belief, &cloud, &scenario.terrain, &scenario.noise, cfg.update_at_init)?];
    for _ in 0..horizon {
        let next = prop.advance(fims.last().expect("seeded"), &info)?;
        fims.push(next);
    }
    let band = whitened_eigmin_quantile(runs, 0.01, 4000, 0xb007);
    steps
        .iter()
        .map(|&k| {
            let c_hat = moments[k] / runs as f64;
            let j = fims[k].matrix();
            let l = Cholesky::new(*j).ok_or(Error::SingularInner { condition: f64::INFINITY })?.l();
            let whitened = l.transpose() * c_hat * l - Matrix6::identity();
            let w = min_eigenvalue(&whitened);
            Ok(CrlbCheck {
                k,
                whitened_eigmin: w,
                raw_eigmin: min_eigenvalue(&(c_hat - fims[k].inverse()?)),
                band,
                passed: w >= band,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_scale_parsing() {
        assert_eq!(parse_tolerance_scale(None).unwrap(), 1.0);
        assert_eq!(parse_tolerance_scale(Some(" 2.5 ")).unwrap(), 2.5);
        for bad in ["abc", "0", "-1", "inf", ""] {
            assert!(parse_tolerance_scale(Some(bad)).is_err(), "{bad}");
        }
    }

    #[test]
    fn check_display_lists_measurement() {
        let c = Check::below("demo", 0.5, 1.0);
        assert!(c.passed);
        assert_eq!(c.to_string(), "PASS demo: measured 5.000e-1, tolerance 1.000e0");
        assert!(!Check::below("x", 1.0, 1.0).passed);
    }

    #[test]
    fn fim_forms_agree() {
        assert!(fim_forms_deviation(100, 1).unwrap() < FIM_FORMS_TOL);
    }

    #[test]
    fn quadratic_oracle_matches_fd() {
        let r = validate_gradients(1.0).unwrap();
        for c in &r.checks {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn eigmin_band_is_negative_and_shrinks_with_runs() {
        let small = whitened_eigmin_quantile(50, 0.01, 500, 3);
        let large = whitened_eigmin_quantile(800, 0.01, 500, 3);
        assert!(small < large && large < 0.0, "{small} {large}");
    }

    #[test]
    fn kf_covariance_identity_on_presets() {
        for (name, plane) in plane_presets() {
            let dev = kf_covariance_deviation(&plane_scenario(plane), 20).unwrap();
            assert!(dev < KF_COV_TOL, "{name}: {dev}");
        }
    }

    #[test]
    fn few_particles_are_detected() {
        let scenario = plane_scenario(plane_presets()[1].1);
        let bias = validate_pf_against_kf(&scenario, 10, 20, 11).unwrap();
        assert!(bias > PF_BIAS_TOL, "{bias}");
    }
}
