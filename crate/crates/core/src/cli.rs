//! `dualnav` command line: simulate, montecarlo, validate, terrain.
//!
//! Exit codes: 0 success, 1 failed validation check, 2 configuration error,
//! 3 numerical failure while running.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TerrainSpec};
use crate::controller::{run_episode, EpisodeOptions};
use crate::error::{Error, Result};
use crate::harness::campaign::{monte_carlo, Campaign};
use crate::harness::validate::{run_suite, Suite};
use crate::particle_filter::SNAPSHOT_HEADER;
use crate::rng::SeedStreams;
use crate::terrain::{export_grid, format_grid, sample_grid, Bounds};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dualnav", version, about = "Terrain-aided navigation with Fisher feedback control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArmArg {
    Fisher,
    Straight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Kf,
    Grad,
    Fim,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and write its log.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "fisher")]
        arm: ArmArg,
        /// Also write the weighted particle set of every step.
        #[arg(long)]
        dump_particles: bool,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired fisher/straight campaign with per-step RMSE.
    Montecarlo {
        /// Run config, or a manifest from an earlier campaign to replay.
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Oracle validation suites.
    Validate {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
    },
    /// Export the configured terrain as a grid CSV.
    Terrain {
        /// Config whose terrain is exported.
        #[arg(long)]
        export: PathBuf,
        /// `x_min,x_max,y_min,y_max`
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        bounds: Vec<f64>,
        #[arg(long)]
        resolution: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcludedRun {
    pub run: usize,
    pub seed: u64,
    pub reason: String,
}

/// Everything needed to replay a campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub kept: Vec<usize>,
    pub excluded: Vec<ExcludedRun>,
    pub fingerprint: String,
    pub rmse_csv: String,
}

enum Failure {
    Config(Error),
    Numerical(Error),
    Check,
}

fn config_err(e: Error) -> Failure {
    Failure::Config(e)
}

fn run_err(e: Error) -> Failure {
    Failure::Numerical(e)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Check) => EXIT_CHECK_FAILED,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e}");
            EXIT_CONFIG
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("run failed: {e}");
            EXIT_NUMERICAL
        }
    }
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Simulate {
            config,
            seed,
            arm,
            dump_particles,
            out,
        } => simulate(&config, seed, arm, dump_particles, out),
        Command::Montecarlo {
            config,
            runs,
            jobs,
            seed,
            out,
        } => montecarlo(&config, runs, jobs, seed, out),
        Command::Validate { suite } => validate(suite),
        Command::Terrain {
            export,
            bounds,
            resolution,
            out,
        } => terrain(&export, &bounds, resolution, out),
    }
}

fn simulate(
    config_path: &Path,
    seed: Option<u64>,
    arm: ArmArg,
    dump_particles: bool,
    out: Option<PathBuf>,
) -> std::result::Result<(), Failure> {
    let cfg = RunConfig::load(config_path).map_err(config_err)?;
    let scenario = cfg.scenario(&base_dir(config_path)).map_err(config_err)?;
    let seed = seed.unwrap_or(cfg.seed);
    let mut controller = cfg.controller();
    let name = match arm {
        ArmArg::Fisher => "fisher",
        ArmArg::Straight => {
            controller.ocp.beta = 0.0;
            "straight"
        }
    };
    let options = EpisodeOptions {
        record_particles: dump_particles,
    };
    let log = run_episode(&controller, &scenario, seed, &SeedStreams::new(seed), options).map_err(run_err)?;
    let dir = out.unwrap_or(cfg.output_dir);
    let episode_path = dir.join(format!("episode_{name}_{seed}.csv"));
    write_file(&episode_path, &log.to_csv()).map_err(run_err)?;
    if let Some(snaps) = &log.snapshots {
        let mut buf = Vec::new();
        writeln!(buf, "{SNAPSHOT_HEADER}").expect("in-memory write");
        for s in snaps {
            s.write_snapshot(&mut buf).expect("in-memory write");
        }
        let text = String::from_utf8(buf).expect("ascii output");
        write_file(&dir.join(format!("particles_{name}_{seed}.csv")), &text).map_err(run_err)?;
    }
    for k in &log.degenerate_steps {
        eprintln!("warning: degenerate weights at step {k}, reset to uniform");
    }
    println!("{}", episode_path.display());
    Ok(())
}

// A manifest carries its config; anything else is read as a plain config.
fn load_campaign_config(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(m) = serde_json::from_str::<Manifest>(&text) {
        m.config.validate()?;
        return Ok((m.config, base_dir(path)));
    }
    Ok((RunConfig::from_json(&text)?, base_dir(path)))
}

fn montecarlo(
    config_path: &Path,
    runs: Option<usize>,
    jobs: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> std::result::Result<(), Failure> {
    let (mut cfg, base) = load_campaign_config(config_path).map_err(config_err)?;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(config_err)?;
    if let TerrainSpec::Grid { path } = &cfg.terrain {
        let resolved = base.join(path);
        let absolute = fs::canonicalize(&resolved).map_err(|e| config_err(Error::io(&resolved, e)))?;
        cfg.terrain = TerrainSpec::Grid { path: absolute };
    }
    let scenario = cfg.scenario(&base).map_err(config_err)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let text = cfg.to_json();
    let campaign = monte_carlo(&cfg.controller(), &scenario, cfg.runs, cfg.seed, jobs, &text).map_err(run_err)?;
    write_campaign(&dir, &cfg, &campaign).map_err(run_err)?;
    for e in &campaign.excluded {
        eprintln!("excluded run {} (seed {}): {}", e.run, e.seed, e.reason);
    }
    println!("{}", dir.join("rmse.csv").display());
    Ok(())
}

fn write_campaign(dir: &Path, cfg: &RunConfig, campaign: &Campaign) -> Result<()> {
    write_file(&dir.join("rmse.csv"), &campaign.report.to_csv())?;
    for ((run, f), s) in campaign.kept.iter().zip(&campaign.fisher).zip(&campaign.straight) {
        write_file(&dir.join("episodes").join(format!("fisher_{run:03}.csv")), &f.to_csv())?;
        write_file(&dir.join("episodes").join(format!("straight_{run:03}.csv")), &s.to_csv())?;
    }
    let manifest = Manifest {
        config: cfg.clone(),
        seeds: campaign.seeds.clone(),
        kept: campaign.kept.clone(),
        excluded: campaign
            .excluded
            .iter()
            .map(|e| ExcludedRun {
                run: e.run,
                seed: e.seed,
                reason: e.reason.clone(),
            })
            .collect(),
        fingerprint: campaign.report.fingerprint.clone(),
        rmse_csv: "rmse.csv".into(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    write_file(&dir.join("manifest.json"), &(json + "\n"))
}

fn validate(suite: SuiteArg) -> std::result::Result<(), Failure> {
    let suite = match suite {
        SuiteArg::Kf => Suite::Kf,
        SuiteArg::Grad => Suite::Grad,
        SuiteArg::Fim => Suite::Fim,
        SuiteArg::All => Suite::All,
    };
    let report = run_suite(suite).map_err(|e| match e {
        Error::Config(_) => config_err(e),
        other => run_err(other),
    })?;
    print!("{report}");
    let _ = io::stdout().flush();
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn terrain(config_path: &Path, bounds: &[f64], resolution: f64, out: Option<PathBuf>) -> std::result::Result<(), Failure> {
    let cfg = RunConfig::load(config_path).map_err(config_err)?;
    let map = cfg.terrain_map(&base_dir(config_path)).map_err(config_err)?;
    let [x_min, x_max, y_min, y_max] = bounds else {
        return Err(config_err(Error::Config("bounds needs x_min,x_max,y_min,y_max".into())));
    };
    let b = Bounds::new(*x_min, *x_max, *y_min, *y_max);
    match out {
        Some(path) => {
            export_grid(&map, b, resolution, &path).map_err(config_err)?;
        }
        None => {
            let grid = sample_grid(&map, b, resolution).map_err(config_err)?;
            print!("{}", format_grid(&grid));
        }
    }
    Ok(())
}
