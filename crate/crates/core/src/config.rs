//! JSON run configuration.
//!
//! Every command is reproducible from one of these files plus a seed. SI
//! units throughout; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::ocp::{ControlBounds, NoiseMode, OcpConfig, TerminalCounting};
use crate::plant::{double_integrator, InitialBelief, NoiseModel, StateVec};
use crate::scenario::{self, Scenario};
use crate::solver::SolverOptions;
use crate::terrain::{load_grid, Bump, GaussianFieldMap, PlaneMap, TerrainMap};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerrainSpec {
    /// The calibrated bump field.
    Default,
    Plane { a: f64, b: f64, c: f64 },
    GaussianField { bumps: Vec<Bump> },
    /// Grid CSV; relative paths resolve against the config file's directory.
    Grid { path: PathBuf },
}

fn default_counting() -> TerminalCounting {
    TerminalCounting::Once
}

fn default_step_iterations() -> usize {
    scenario::DEFAULT_STEP_ITERATIONS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub target: [f64; 6],
    pub horizon: usize,
    pub dt: f64,
    pub ns: usize,
    pub noise_mode: NoiseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<ControlBounds>,
    pub terminal_mask: [f64; 6],
    #[serde(default = "default_counting")]
    pub terminal_counting: TerminalCounting,
    /// Diagonal of `Q`.
    pub process_noise: [f64; 6],
    /// `R`, in m².
    pub observation_variance: f64,
    pub prior_mean: [f64; 6],
    /// Diagonal of `P0`.
    pub prior_variance: [f64; 6],
    pub terrain: TerrainSpec,
    pub particles: usize,
    pub runs: usize,
    pub seed: u64,
    pub update_at_init: bool,
    #[serde(default = "default_step_iterations")]
    pub solver_iterations: usize,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// The calibrated bump-field experiment.
    pub fn default_experiment() -> RunConfig {
        RunConfig {
            schema: SCHEMA_VERSION,
            alpha: scenario::DEFAULT_ALPHA,
            beta: scenario::DEFAULT_BETA,
            gamma: scenario::DEFAULT_GAMMA,
            target: scenario::DEFAULT_TARGET,
            horizon: scenario::DEFAULT_HORIZON,
            dt: scenario::DEFAULT_DT,
            ns: scenario::DEFAULT_OCP_PARTICLES,
            noise_mode: NoiseMode::ZeroNoise,
            bounds: None,
            terminal_mask: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            terminal_counting: TerminalCounting::Once,
            process_noise: scenario::DEFAULT_PROCESS_VAR,
            observation_variance: scenario::DEFAULT_OBS_VAR,
            prior_mean: scenario::DEFAULT_START,
            prior_variance: scenario::DEFAULT_PRIOR_VAR,
            terrain: TerrainSpec::Default,
            particles: scenario::DEFAULT_PARTICLES,
            runs: 50,
            seed: 1,
            update_at_init: true,
            solver_iterations: scenario::DEFAULT_STEP_ITERATIONS,
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        if self.particles == 0 || self.runs == 0 {
            return Err(Error::Config("particles and runs must be at least 1".into()));
        }
        if self.ns > self.particles {
            return Err(Error::Config(format!(
                "ns = {} exceeds particles = {}",
                self.ns, self.particles
            )));
        }
        self.ocp().validate()
    }

    pub fn ocp(&self) -> OcpConfig {
        OcpConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            target: StateVec::from(self.target),
            horizon: self.horizon,
            ns: self.ns,
            noise_mode: self.noise_mode,
            bounds: self.bounds,
            terminal_mask: self.terminal_mask,
            terminal_counting: self.terminal_counting,
        }
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            ocp: self.ocp(),
            particles: self.particles,
            update_at_init: self.update_at_init,
            solver: SolverOptions {
                max_iterations: self.solver_iterations,
                ..SolverOptions::default()
            },
        }
    }

    /// `base` is the directory relative grid paths are resolved against.
    pub fn terrain_map(&self, base: &Path) -> Result<TerrainMap> {
        Ok(match &self.terrain {
            TerrainSpec::Default => scenario::default_terrain(),
            TerrainSpec::Plane { a, b, c } => PlaneMap { a: *a, b: *b, c: *c }.into(),
            TerrainSpec::GaussianField { bumps } => GaussianFieldMap::new(bumps.clone())?.into(),
            TerrainSpec::Grid { path } => load_grid(base.join(path))?.into(),
        })
    }

    pub fn scenario(&self, base: &Path) -> Result<Scenario> {
        Ok(Scenario {
            dynamics: double_integrator(self.dt)?,
            terrain: self.terrain_map(base)?,
            noise: NoiseModel::diagonal(self.process_noise, self.observation_variance)?,
            belief: InitialBelief::diagonal(self.prior_mean, self.prior_variance)?,
        })
    }
}
