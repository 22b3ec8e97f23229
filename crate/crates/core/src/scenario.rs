//! Plant, terrain, noise and prior bundled as one experiment setup, plus the
//! calibrated presets used by the examples and the acceptance suite.
//!
//! None of the numeric defaults here are published values except the run
//! sizes `T = 20`, `dt = 10 s`, `Ns = 100`, `N = 10000`; everything else was
//! calibrated for this implementation.

use crate::controller::ControllerConfig;
use crate::error::Result;
use crate::ocp::{NoiseMode, OcpConfig, TerminalCounting};
use crate::plant::{double_integrator, InitialBelief, LinearDynamics, NoiseModel, StateVec};
use crate::solver::SolverOptions;
use crate::terrain::{Bump, GaussianFieldMap, PlaneMap, TerrainMap};

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub dynamics: LinearDynamics,
    pub terrain: TerrainMap,
    pub noise: NoiseModel,
    pub belief: InitialBelief,
}

pub const DEFAULT_DT: f64 = 10.0;
pub const DEFAULT_HORIZON: usize = 20;
pub const DEFAULT_PARTICLES: usize = 10_000;
pub const DEFAULT_OCP_PARTICLES: usize = 100;

pub const DEFAULT_START: [f64; 6] = [0.0, 0.0, 100.0, 0.0, 0.0, 0.0];
pub const DEFAULT_TARGET: [f64; 6] = [2000.0, 0.0, 100.0, 0.0, 0.0, 0.0];
pub const DEFAULT_PRIOR_VAR: [f64; 6] = [1e4, 1e4, 100.0, 0.25, 0.25, 0.01];
pub const DEFAULT_PROCESS_VAR: [f64; 6] = [1.0, 1.0, 1.0, 0.01, 0.01, 0.01];
pub const DEFAULT_OBS_VAR: f64 = 4.0;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 1e4;
/// Per-step solver budget inside the closed loop; warm starts carry the rest.
pub const DEFAULT_STEP_ITERATIONS: usize = 40;

/// Rough bump field north of the straight start-to-target corridor.
pub fn default_bumps() -> Vec<Bump> {
    // (x1, x2, amplitude, width); irregular so the field is not periodic
    const FIELD: [(f64, f64, f64, f64); 12] = [
        (350.0, 420.0, 40.0, 140.0),
        (560.0, 610.0, 32.0, 120.0),
        (700.0, 380.0, 45.0, 150.0),
        (880.0, 560.0, 28.0, 110.0),
        (1010.0, 400.0, 38.0, 160.0),
        (1180.0, 640.0, 42.0, 130.0),
        (1300.0, 420.0, 30.0, 120.0),
        (1460.0, 560.0, 44.0, 150.0),
        (1600.0, 390.0, 35.0, 140.0),
        (450.0, 800.0, 36.0, 150.0),
        (950.0, 850.0, 40.0, 140.0),
        (1400.0, 820.0, 33.0, 130.0),
    ];
    FIELD
        .iter()
        .map(|&(x, y, a, w)| Bump {
            center: [x, y],
            amplitude: a,
            width: w,
        })
        .collect()
}

pub fn default_terrain() -> TerrainMap {
    GaussianFieldMap::new(default_bumps())
        .expect("static bump field is valid")
        .into()
}

pub fn default_noise() -> NoiseModel {
    NoiseModel::diagonal(DEFAULT_PROCESS_VAR, DEFAULT_OBS_VAR).expect("static noise is valid")
}

pub fn default_belief() -> InitialBelief {
    InitialBelief::diagonal(DEFAULT_START, DEFAULT_PRIOR_VAR).expect("static prior is valid")
}

/// Corridor-and-bumps experiment.
pub fn default_scenario() -> Scenario {
    Scenario {
        dynamics: double_integrator(DEFAULT_DT).expect("positive dt"),
        terrain: default_terrain(),
        noise: default_noise(),
        belief: default_belief(),
    }
}

/// Same vehicle, prior and noise over a plane, where the problem is linear-Gaussian.
pub fn plane_scenario(plane: PlaneMap) -> Scenario {
    Scenario {
        terrain: plane.into(),
        ..default_scenario()
    }
}

/// Flat, tilted and steep plane presets.
pub fn plane_presets() -> [(&'static str, PlaneMap); 3] {
    [
        ("flat", PlaneMap { a: 0.0, b: 0.0, c: 0.0 }),
        ("tilted", PlaneMap { a: 0.05, b: 0.02, c: 10.0 }),
        ("steep", PlaneMap { a: 0.5, b: -0.3, c: -20.0 }),
    ]
}

pub fn default_ocp(beta: f64) -> OcpConfig {
    OcpConfig {
        alpha: DEFAULT_ALPHA,
        beta,
        gamma: DEFAULT_GAMMA,
        target: StateVec::from(DEFAULT_TARGET),
        horizon: DEFAULT_HORIZON,
        ns: DEFAULT_OCP_PARTICLES,
        noise_mode: NoiseMode::ZeroNoise,
        bounds: None,
        terminal_mask: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        terminal_counting: TerminalCounting::Once,
    }
}

pub fn default_controller(beta: f64, particles: usize) -> ControllerConfig {
    ControllerConfig {
        ocp: default_ocp(beta),
        particles,
        update_at_init: true,
        solver: SolverOptions {
            max_iterations: DEFAULT_STEP_ITERATIONS,
            ..SolverOptions::default()
        },
    }
}

/// Observation and prior variance of the deterministic limit.
pub const DETERMINISTIC_EPS: f64 = 1e-14;

/// Near-deterministic variant: no process noise, tiny `R` and `P0`.
pub fn deterministic_limit(terrain: TerrainMap) -> Result<Scenario> {
    Ok(Scenario {
        dynamics: double_integrator(DEFAULT_DT)?,
        terrain,
        noise: NoiseModel::diagonal([0.0; 6], DETERMINISTIC_EPS)?,
        belief: InitialBelief::diagonal(DEFAULT_START, [DETERMINISTIC_EPS; 6])?,
    })
}
